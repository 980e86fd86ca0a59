#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diddml/data_model.hpp"
#include "diddml/forest.hpp"

namespace diddml {

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fold assignment, stratified by (d, t) cell and keyed to Observation::id.
struct CrossFitPlan {
  int folds = 10;
  std::uint64_t seed = 0;
  std::vector<int> fold_of;  // per row position of the dataset

  std::vector<std::size_t> fold_rows(int k) const;
  std::vector<std::size_t> fold_sizes() const;
};

// Throws EstimationError when a cell holds fewer than `folds` rows.
CrossFitPlan make_folds(const RepeatedCrossSection& data, int folds, std::uint64_t seed);

struct LearnerConfig {
  ForestConfig outcome;     // four regression forests, one per cell
  ForestConfig propensity;  // one 4-class probability forest
};

// Out-of-fold nuisance values; columns are indexed by Cell (2*d + t).
struct NuisancePredictions {
  Eigen::MatrixXd mu;   // n x 4, mu(i, c) = mu_d(t, x_i)
  Eigen::MatrixXd rho;  // n x 4, rho(i, c) = Pr(D=d, T=t | x_i)
  double pi = 0.0;      // share of rows in cell (1,1)
};

NuisancePredictions cross_fit_nuisances(const RepeatedCrossSection& data, const CrossFitPlan& plan,
                                        const LearnerConfig& learners, int threads = 1);

struct TrimResult {
  std::vector<bool> used;
  std::size_t n_trimmed = 0;
};

// Drops comparison-cell rows whose own-cell propensity is below threshold.
// Rows of the (1,1) reference cell are always kept.
TrimResult trim(std::span<const int> cells, const Eigen::MatrixXd& rho, double threshold = 0.01);

// Doubly robust score of one observation (the integrand whose mean is the ATET).
double score(double y, int d, int t, const std::array<double, 4>& mu, const std::array<double, 4>& rho, double pi);

struct CellSupportSummary {
  std::size_t count = 0;
  std::vector<double> quantiles;         // rho_11 quantiles within the cell
  std::vector<std::size_t> histogram;    // rho_11 counts per bin
};

struct SupportReport {
  std::vector<double> quantile_levels;
  std::vector<double> bin_edges;
  std::array<CellSupportSummary, 4> cells;
  // Share of (1,1) rows whose rho_11 lies outside the [min, max] range of
  // each comparison cell, indexed by Cell (entry 3 unused).
  std::array<double, 4> uncovered_mass{};
  double tolerance = 0.01;
  bool violation = false;
};

SupportReport common_support_report(std::span<const int> cells, const Eigen::MatrixXd& rho, double tolerance = 0.01,
                                    int bins = 20);

struct EstimatorConfig {
  int folds = 10;
  std::uint64_t seed = 20240101;
  LearnerConfig learners;
  double trim_threshold = 0.01;
  bool cluster = true;
  // Pi from the full sample before trimming; otherwise from the kept rows.
  bool pi_before_trim = true;
  double support_tolerance = 0.01;
  int threads = 1;

  void validate() const;
};

struct AtetEstimate {
  double atet = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  std::array<double, 2> ci95{};
  std::size_t n = 0;
  std::size_t n_used = 0;
  std::size_t n_trimmed = 0;
  std::size_t n_clusters = 0;
  bool clustered = false;
  double pi = 0.0;
  std::array<std::size_t, 4> cell_counts{};
  std::vector<double> score;      // psi_i (0 for trimmed rows)
  std::vector<double> influence;  // centred psi_i - atet * d_i t_i / pi (0 for trimmed rows)
  std::vector<bool> used;
  SupportReport support;
  std::vector<std::string> warnings;
};

// The headline numbers of an estimate, without per-row vectors.
struct EstimateSummary {
  double atet = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  std::array<double, 2> ci95{};
  std::size_t n = 0;
  std::size_t n_trimmed = 0;
};

EstimateSummary summarize(const AtetEstimate& e);

struct InfluenceInference {
  double se = 0.0;
  std::size_t n_clusters = 0;
};

// Standard error of a mean from per-row influence values. Unclustered:
// population sd / sqrt(n). Clustered: sqrt(G/(G-1) * sum_g (sum_i psi)^2) / n.
InfluenceInference influence_se(std::span<const double> influence, const std::vector<bool>& used,
                                std::span<const std::string> clusters, bool cluster);

// Full pipeline: folds, cross-fitted forests, trimming, score averaging,
// inference. Learner seeds are derived from config.seed.
AtetEstimate estimate_atet(const RepeatedCrossSection& data, const EstimatorConfig& config);

// Same estimator with externally supplied nuisances (no cross-fitting).
AtetEstimate estimate_atet_from_nuisances(const RepeatedCrossSection& data, const NuisancePredictions& nuisances,
                                          const EstimatorConfig& config);

// Row positions sorted by Observation::id (ties by position).
std::vector<std::size_t> canonical_order(const RepeatedCrossSection& data);

}  // namespace diddml
