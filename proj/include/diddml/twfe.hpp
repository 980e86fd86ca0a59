#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diddml/data_model.hpp"

namespace diddml {

enum class TreatmentMode { binary, continuous };

// Two-way fixed-effects DiD regression
//   y = a + theta * D + X b + country FE + time FE + e
// where D is d*t (binary) or a policy-level covariate (continuous).
struct TwfeSpec {
  TreatmentMode mode = TreatmentMode::binary;
  std::vector<std::string> covariates;  // drop-first encoded
  bool country_fe = false;              // dummies of Observation::cluster
  bool year_fe = false;                 // dummies of (period_covariate, t)
  std::string period_covariate;         // optional stacking dummy
  std::string policy_column;            // continuous mode: policy level
  std::string history_column;           // optional pre-treatment policy level
  bool include_history = true;
  bool cluster = true;
};

struct OlsFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  std::vector<std::string> names;
  Eigen::MatrixXd xtx_inv;
  Eigen::MatrixXd design;
  std::size_t n = 0;
  std::size_t rank = 0;

  std::size_t index_of(const std::string& name) const;
};

class RankDeficientError : public std::runtime_error {
 public:
  RankDeficientError(const std::string& msg, std::vector<std::string> columns)
      : std::runtime_error(msg), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const { return columns_; }

 private:
  std::vector<std::string> columns_;
};

// Least squares through column-pivoted Householder QR. Throws
// RankDeficientError naming the columns pivoted past the numerical rank.
OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names);

// Heteroskedasticity-robust (HC0) sandwich.
Eigen::MatrixXd robust_vcov(const OlsFit& fit);

// G/(G-1) * (n-1)/(n-k)
double cr1_factor(std::size_t n, std::size_t k, std::size_t clusters);

// Cluster-robust sandwich with the CR1 small-sample factor.
Eigen::MatrixXd cluster_robust_vcov(const OlsFit& fit, std::span<const std::string> clusters);

struct TwfeResult {
  OlsFit fit;
  Eigen::MatrixXd vcov;
  std::size_t theta_index = 1;
  double theta = 0.0;
  double se = 0.0;
  double p_value = 1.0;
  std::array<double, 2> ci95{};
  std::size_t n_clusters = 0;
  bool clustered = false;
};

struct TwfeDesign {
  Eigen::MatrixXd x;
  std::vector<std::string> names;
  std::size_t theta_index = 1;
};

TwfeDesign twfe_design(const RepeatedCrossSection& data, const TwfeSpec& spec);
TwfeResult fit_twfe(const RepeatedCrossSection& data, const TwfeSpec& spec);

// theta from the within (demeaning) transformation with alternating
// projections over the fixed-effect groups; independent of the dummy path.
double twfe_theta_within(const RepeatedCrossSection& data, const TwfeSpec& spec);

// Effect implied by a change of `delta_units` in the continuous treatment.
inline double rescale_continuous(double theta, double delta_units) { return theta * delta_units; }

// A percent change of a baseline level, in the level's units.
inline double percent_to_units(double pct, double baseline) { return pct / 100.0 * baseline; }

}  // namespace diddml
