#pragma once

#include <array>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diddml/data_model.hpp"
#include "diddml/estimator.hpp"

namespace fixtures {

struct Row {
  double y;
  int d;
  int t;
  std::array<double, 4> mu;   // cells 00, 01, 10, 11
  std::array<double, 4> rho;
};

// Eight rows, two per cell, with hand-picked nuisances. The expected values
// below were worked out separately in exact rational arithmetic.
inline const std::vector<Row>& score_rows() {
  static const std::vector<Row> rows = {
      {1, 0, 0, {.30, .25, .40, .33}, {.40, .30, .20, .10}},
      {0, 0, 0, {.22, .20, .35, .28}, {.35, .25, .25, .15}},
      {0, 0, 1, {.31, .27, .38, .30}, {.30, .30, .20, .20}},
      {1, 0, 1, {.45, .41, .52, .44}, {.20, .35, .15, .30}},
      {1, 1, 0, {.26, .24, .50, .40}, {.15, .25, .35, .25}},
      {0, 1, 0, {.18, .15, .29, .21}, {.25, .20, .30, .25}},
      {1, 1, 1, {.36, .30, .47, .37}, {.10, .20, .30, .40}},
      {0, 1, 1, {.28, .26, .44, .35}, {.20, .15, .30, .35}},
  };
  return rows;
}

// psi_i, exact fractions 7/10, -66/175, 18/25, -354/175, -10/7, 29/30, 59/25, -42/25
inline const std::array<double, 8> kScores = {7.0 / 10, -66.0 / 175, 18.0 / 25, -354.0 / 175,
                                               -10.0 / 7, 29.0 / 30,  59.0 / 25, -42.0 / 25};
inline constexpr double kScoreAtet = -2.0 / 21;
inline constexpr double kScoreSe = 0.5216888619737658;           // unclustered
inline constexpr double kScoreSeClustered = 0.6830952380952381;  // clusters A,B,A,B,...

inline diddml::RepeatedCrossSection score_data() {
  using namespace diddml;
  EncodingSchema schema({CovariateColumn{"x", CovariateKind::continuous, {}}});
  std::vector<Observation> obs;
  const auto& rows = score_rows();
  for (std::size_t i = 0; i < rows.size(); ++i)
    obs.push_back({rows[i].y, rows[i].d, rows[i].t, i % 2 == 0 ? "A" : "B", {RawValue{double(i)}}, i});
  return RepeatedCrossSection(schema, obs, true);
}

inline diddml::NuisancePredictions score_nuisances() {
  diddml::NuisancePredictions np;
  const auto& rows = score_rows();
  np.mu.resize(rows.size(), 4);
  np.rho.resize(rows.size(), 4);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int c = 0; c < 4; ++c) {
      np.mu(i, c) = rows[i].mu[c];
      np.rho(i, c) = rows[i].rho[c];
    }
  np.pi = 0.25;
  return np;
}

// (y, d, t, x); an empty cluster gives the row its own cluster.
struct SimpleRow {
  double y;
  int d;
  int t;
  double x = 0.0;
  std::string cluster = "";
};

inline diddml::RepeatedCrossSection simple_data(const std::vector<SimpleRow>& rows, bool binary = false) {
  using namespace diddml;
  EncodingSchema schema({CovariateColumn{"x", CovariateKind::continuous, {}}});
  std::vector<Observation> obs;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::string c = rows[i].cluster.empty() ? "r" + std::to_string(i) : rows[i].cluster;
    obs.push_back({rows[i].y, rows[i].d, rows[i].t, c, {RawValue{rows[i].x}}, i});
  }
  return RepeatedCrossSection(schema, obs, binary);
}

inline std::string data_path(const std::string& name) { return std::string(DIDDML_TEST_DATA) + "/" + name; }

}  // namespace fixtures
