#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "diddml/synthetic_dgp.hpp"

using namespace diddml;

TEST_CASE("dgp: same seed gives identical data, different seed differs") {
  DgpSpec s;
  s.n = 500;
  s.seed = 3;
  std::ostringstream a, b, c;
  write_generated_csv(a, generate(s));
  write_generated_csv(b, generate(s));
  s.seed = 4;
  write_generated_csv(c, generate(s));
  CHECK(a.str() == b.str());
  CHECK(a.str() != c.str());
}

TEST_CASE("dgp: tau = 0 makes potential outcomes identical") {
  DgpSpec s;
  s.n = 3000;
  s.tau = 0.0;
  s.seed = 5;
  auto g = generate(s);
  CHECK(g.y0 == g.y1);
  CHECK(oracle_atet(g, OracleMode::realized) == 0.0);
  CHECK(oracle_atet(g, OracleMode::probability) == 0.0);
}

TEST_CASE("dgp: oracle modes with a constant effect") {
  DgpSpec s;
  s.n = 20000;
  s.seed = 6;
  auto g = generate(s);
  CHECK(g.n_clamped == 0);
  CHECK(oracle_atet(g, OracleMode::probability) == doctest::Approx(s.tau).epsilon(1e-12));
  // realized effects are in {-1, 0}, their mean is close to tau
  CHECK(std::fabs(oracle_atet(g, OracleMode::realized) - s.tau) < 0.01);
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    CHECK(r.y == (r.d == 1 ? g.y1[i] : g.y0[i]));
    if (r.t == 0) CHECK(g.y0[i] == g.y1[i]);
  }
}

TEST_CASE("dgp: heterogeneous effect oracle is the treated mean of tau(x)") {
  DgpSpec s;
  s.n = 5000;
  s.effect = EffectMode::heterogeneous;
  s.seed = 7;
  auto g = generate(s);
  double sum = 0;
  int n = 0;
  for (std::size_t i = 0; i < g.rows.size(); ++i)
    if (g.rows[i].d == 1 && g.rows[i].t == 1) {
      sum += g.tau_x[i];
      ++n;
    }
  CHECK(oracle_atet(g, OracleMode::probability) == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("dgp: true propensities lie on the simplex above the floor") {
  DgpSpec s;
  s.n = 2000;
  s.seed = 8;
  auto g = generate(s);
  for (Eigen::Index i = 0; i < g.rho_true.rows(); ++i) {
    CHECK(g.rho_true.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.rho_true.row(i).minCoeff() >= s.propensity_floor - 1e-15);
  }
  auto np = g.true_nuisances();
  auto cc = g.dataset().cell_counts();
  CHECK(np.pi == doctest::Approx(double(cc[3]) / s.n));
}

TEST_CASE("dgp: infeasible outcome probabilities are rejected") {
  DgpSpec s;
  s.n = 1000;
  s.base_rate = 0.97;
  s.seed = 9;
  CHECK_THROWS_AS(generate(s), std::invalid_argument);
}

TEST_CASE("dgp: clusters, periods and controls-only data") {
  DgpSpec s;
  s.n = 1200;
  s.n_clusters = 6;
  s.periods = 3;
  s.controls_only = true;
  s.seed = 10;
  auto g = generate(s);
  for (const auto& r : g.rows) CHECK(r.d == 0);
  CHECK_THROWS_AS(g.dataset(), DataError);
  CHECK(g.schema.index_of("analysis_period").has_value());
  std::set<std::string> clusters;
  for (const auto& r : g.rows) clusters.insert(r.cluster);
  CHECK(clusters.size() == 6);
}

TEST_CASE("dgp: generated csv round-trips through the loader config") {
  DgpSpec s;
  s.n = 300;
  s.seed = 11;
  auto g = generate(s);
  auto cfg = generated_load_config(s);
  CHECK(cfg.outcome == "y");
  CHECK(cfg.id == "id");
  std::ostringstream out;
  write_generated_csv(out, g);
  auto header = out.str().substr(0, out.str().find('\n'));
  CHECK(header == "id,y,d,t,cluster,x0,x1,x2,g0,y0,y1");
}

TEST_CASE("simulate: replications are reproducible") {
  SimulationConfig c;
  c.dgp.n = 2000;
  c.replications = 3;
  c.method = SimEstimator::twfe_binary;
  auto a = simulate(c);
  auto b = simulate(c);
  CHECK(a.estimates == b.estimates);
  CHECK(a.replications == 3);
  CHECK(a.target == c.dgp.tau);
  CHECK(a.bias == doctest::Approx(a.mean_estimate - a.target));
}
