#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diddml/data_model.hpp"
#include "diddml/estimator.hpp"

namespace diddml {

// Benjamini-Hochberg step-up adjusted p-values, in input order.
std::vector<double> bh_adjust(std::span<const double> p);

// Percent change of the outcome over the percent change of the price.
double elasticity(double effect_pct, double price_change_pct);

// Estimated price response over the mechanical tax-induced price change, in percent.
double pass_through(double estimated_price_effect, double mechanical_price_change);

// 100 * effect / baseline
double percent_of_baseline(double effect, double baseline);

// Mean outcome of the treated group before treatment, ybar(1,0).
double treated_baseline(const RepeatedCrossSection& data);

enum class PlaceboPooling { t_test, influence };

struct PlaceboConfig {
  EstimatorConfig estimator;
  std::string period_covariate = "analysis_period";  // unit = cluster x this column
  PlaceboPooling pooling = PlaceboPooling::t_test;
  int histogram_bins = 10;
  int threads = 1;  // across units
};

struct PlaceboUnit {
  std::string cluster;
  std::string period;
  std::size_t n_rows = 0;
  EstimateSummary estimate;
};

struct PlaceboResult {
  std::vector<PlaceboUnit> units;
  std::vector<std::string> skipped;  // "cluster/period: reason"
  double mean = 0.0;
  PlaceboPooling pooling = PlaceboPooling::t_test;
  double se = 0.0;       // of the selected pooling
  double p_value = 1.0;  // of the selected pooling
  double se_t_test = 0.0, p_t_test = 1.0;        // sd / sqrt(m), Student t with m - 1 df
  double se_influence = 0.0, p_influence = 1.0;  // averaged per-row influence, normal
  std::vector<double> bin_edges;
  std::vector<std::size_t> histogram;
};

// Each control unit in turn is relabelled d = 1 and estimated against all
// other control rows. Every unit run uses the same estimator seed.
PlaceboResult placebo_test(const EncodingSchema& schema, const std::vector<Observation>& controls,
                           const PlaceboConfig& config, bool binary_outcome = true);
// Uses the d = 0 rows of `data`.
PlaceboResult placebo_test(const RepeatedCrossSection& data, const PlaceboConfig& config);

// Rows whose `column` value is one of `levels` (categorical) or lies in
// [lo, hi) (continuous; either bound optional).
struct SubgroupFilter {
  std::string name;
  std::string column;
  std::vector<std::string> levels;
  std::optional<double> lo, hi;

  bool matches(const Observation& row, const EncodingSchema& schema) const;
};

// gender {men, women}, age 15-24 / 25-44 / 45-64 / 65+, age at end of
// education <=15 / 16-19 / 20+.
std::vector<SubgroupFilter> sociodemographic_grid(const std::string& gender_column = "gender",
                                                  const std::string& men = "man", const std::string& women = "woman",
                                                  const std::string& age_column = "age",
                                                  const std::string& education_column = "education_age");

struct SubgroupCell {
  std::string name;
  bool feasible = false;
  std::string error;
  std::size_t n_rows = 0;
  EstimateSummary estimate;
  double p_adjusted = 1.0;
};

struct SubgroupGrid {
  std::string family;
  std::vector<SubgroupCell> cells;
};

// One estimate per filter; BH across the feasible cells of the family.
// Filters see the full schema; a non-empty `covariates` restricts the
// estimation covariates afterwards.
SubgroupGrid subgroup_run(const RepeatedCrossSection& data, std::span<const SubgroupFilter> filters,
                          const EstimatorConfig& config, const std::string& family = "", int threads = 1,
                          std::span<const std::string> covariates = {});

struct CovariateSet {
  std::string name;
  std::vector<std::string> columns;
};

struct RobustnessRow {
  std::string name;
  std::vector<std::string> columns;
  EstimateSummary estimate;
};

std::vector<RobustnessRow> covariate_robustness(const RepeatedCrossSection& data, std::span<const CovariateSet> sets,
                                                const EstimatorConfig& config);

}  // namespace diddml
