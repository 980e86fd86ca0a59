#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diddml/data_model.hpp"
#include "diddml/estimator.hpp"

namespace diddml {

enum class Surface { linear, nonlinear };
enum class EffectMode { constant, heterogeneous };

// Binary-outcome DGP. Covariates: p_continuous uniform columns with unit
// variance (x0, x1, ...) and p_categorical columns (g0, ...) with uniform
// levels. Cell probabilities are a softmax of additive d and t indices mixed
// with the uniform law so that every cell keeps at least propensity_floor.
// Untreated outcome probability: base_rate + f(x) + t * g(x) + cluster terms;
// the treated (1,1) probability adds tau(x) on top (probability shift), and
// both potential outcomes share one uniform draw.
struct DgpSpec {
  std::size_t n = 5000;
  std::size_t n_clusters = 0;  // 0: every row is its own cluster
  int p_continuous = 3;
  int p_categorical = 1;
  int categorical_levels = 3;
  double assignment_strength = 0.7;
  double propensity_floor = 0.02;
  Surface surface = Surface::linear;
  double base_rate = 0.4;
  double trend = -0.02;  // constant part of the common trend g(x)
  double tau = -0.03;
  EffectMode effect = EffectMode::constant;
  double tau_slope = 0.02;  // heterogeneous: tau(x) = tau + tau_slope * x0
  double cluster_sd = 0.0;          // cluster level shift of the outcome
  double cluster_trend_sd = 0.0;    // cluster-specific shift in t = 1
  double cluster_assignment = 0.0;  // loading of the cluster effect in the d index
  double max_clamp_fraction = 0.01;
  bool controls_only = false;  // every row d = 0 (placebo data)
  int periods = 1;             // stacked analysis periods; > 1 adds analysis_period
  std::uint64_t seed = 1;

  void validate() const;
};

Surface parse_surface(const std::string& s);
EffectMode parse_effect(const std::string& s);
std::string to_string(Surface s);
std::string to_string(EffectMode e);

struct GeneratedData {
  EncodingSchema schema;
  std::vector<Observation> rows;
  // Potential outcomes of each row in its own period; y1 == y0 when t = 0.
  std::vector<double> y0, y1;
  std::vector<double> p0, p1;  // their success probabilities
  std::vector<double> tau_x;   // tau(x_i) before clamping
  Eigen::MatrixXd mu_true;     // n x 4 cell regressions (no cluster terms, unclamped)
  Eigen::MatrixXd rho_true;    // n x 4 cell probabilities
  double tau = 0.0;
  std::size_t n_clamped = 0;

  // Throws DataError when a (d, t) cell is empty (e.g. controls-only data).
  RepeatedCrossSection dataset() const;
  NuisancePredictions true_nuisances() const;
};

// Throws std::invalid_argument for an infeasible spec: more than
// max_clamp_fraction of outcome probabilities fell outside [0.01, 0.99].
GeneratedData generate(const DgpSpec& spec);

enum class OracleMode { realized, probability };

// Mean of Y1(1) - Y1(0) over (1,1) rows, or of p1 - p0 in probability mode.
double oracle_atet(const GeneratedData& g, OracleMode mode = OracleMode::realized);

void write_generated_csv(std::ostream& out, const GeneratedData& g);
// The LoadConfig matching write_generated_csv's columns.
LoadConfig generated_load_config(const DgpSpec& spec);

enum class SimEstimator { diddml, twfe_binary };

struct SimulationConfig {
  DgpSpec dgp;
  std::size_t replications = 100;
  EstimatorConfig estimator;
  SimEstimator method = SimEstimator::diddml;
  int threads = 1;  // across replications
};

struct SimulationSummary {
  std::size_t replications = 0;
  double target = 0.0;  // mean estimand across replications
  double mean_estimate = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;
  std::vector<double> estimates, ses, targets;
  std::vector<bool> covered;
};

// Replication r uses dgp seed derive_seed(dgp.seed, {r}) and estimator seed
// derive_seed(estimator.seed, {r}). The estimand is tau for a constant effect
// and the probability-mode oracle otherwise.
SimulationSummary simulate(const SimulationConfig& config);

}  // namespace diddml
