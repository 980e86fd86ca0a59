#include <doctest.h>

#include <cmath>
#include <random>

#include "diddml/analysis.hpp"
#include "diddml/synthetic_dgp.hpp"
#include "fixtures.hpp"

using namespace diddml;

namespace {

EstimatorConfig fast_config() {
  EstimatorConfig c;
  c.folds = 5;
  c.learners.outcome.n_trees = 30;
  c.learners.outcome.min_leaf = 20;
  c.learners.propensity.n_trees = 30;
  c.learners.propensity.min_leaf = 20;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("BH: equal step-up values collapse to the largest") {
  std::vector<double> p{0.01, 0.02, 0.03, 0.04};
  auto q = bh_adjust(p);
  for (double v : q) CHECK(v == doctest::Approx(0.04).epsilon(1e-15));
}

TEST_CASE("BH: three p-values") {
  std::vector<double> p{0.005, 0.05, 0.5};
  auto q = bh_adjust(p);
  CHECK(q[0] == doctest::Approx(0.015).epsilon(1e-15));
  CHECK(q[1] == doctest::Approx(0.075).epsilon(1e-15));
  CHECK(q[2] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("BH: order of input is preserved and values are capped at one") {
  std::vector<double> p{0.9, 0.001, 0.6, 0.02};
  auto q = bh_adjust(p);
  CHECK(q[1] == doctest::Approx(0.004));
  CHECK(q[3] == doctest::Approx(0.04));
  CHECK(q[2] == doctest::Approx(0.8));
  CHECK(q[0] == doctest::Approx(0.9));
  std::vector<double> big{0.99, 0.98};
  for (double v : bh_adjust(big)) CHECK(v <= 1.0);
  CHECK(bh_adjust(std::vector<double>{}).empty());
}

TEST_CASE("elasticity and pass-through arithmetic") {
  CHECK(elasticity(-15.0, 2.61) == doctest::Approx(-5.747126).epsilon(1e-6));
  CHECK(pass_through(0.22, 0.29) == doctest::Approx(75.862069).epsilon(1e-6));
  CHECK(percent_of_baseline(-0.0344, 0.26) == doctest::Approx(-13.230769).epsilon(1e-6));
}

TEST_CASE("treated baseline is the (1,0) cell mean") {
  auto data = fixtures::simple_data({{1, 0, 0}, {0, 0, 1}, {1, 1, 0}, {0, 1, 0}, {1, 1, 0}, {1, 1, 1}});
  CHECK(treated_baseline(data) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("subgroup filters: categorical levels and half-open ranges") {
  EncodingSchema schema({CovariateColumn{"age", CovariateKind::continuous, {}},
                         CovariateColumn{"gender", CovariateKind::categorical, {"man", "woman"}},
                         CovariateColumn{"education_age", CovariateKind::continuous, {}}});
  auto grid = sociodemographic_grid();
  REQUIRE(grid.size() == 9);
  auto row = [](double age, const char* g, double edu) {
    return Observation{0.0, 0, 0, "c", {RawValue{age}, RawValue{std::string(g)}, RawValue{edu}}, 0};
  };
  auto names_matching = [&](const Observation& r) {
    std::vector<std::string> out;
    for (const auto& f : grid)
      if (f.matches(r, schema)) out.push_back(f.name);
    return out;
  };
  CHECK(names_matching(row(25, "woman", 16)) == std::vector<std::string>{"women", "age 25-44", "education 16-19"});
  CHECK(names_matching(row(24.9, "man", 15)) == std::vector<std::string>{"men", "age 15-24", "education <=15"});
  CHECK(names_matching(row(65, "man", 20)) == std::vector<std::string>{"men", "age 65+", "education 20+"});
  CHECK(names_matching(row(14, "man", 20)).size() == 2);  // below the first age band
  SubgroupFilter bad{"b", "gender", {}, 1.0, 2.0};
  CHECK_THROWS_AS(bad.matches(row(30, "man", 18), schema), DataError);
}

TEST_CASE("subgroup run: BH across feasible cells only") {
  DgpSpec s;
  s.n = 6000;
  s.seed = 12;
  auto data = generate(s).dataset();
  std::vector<SubgroupFilter> filters{{"low x0", "x0", {}, std::nullopt, 0.0},
                                      {"high x0", "x0", {}, 0.0, std::nullopt},
                                      {"tiny", "x0", {}, 1.7, std::nullopt},
                                      {"level L1", "g0", {"L1"}, {}, {}}};
  auto cfg = fast_config();
  cfg.cluster = false;
  auto grid = subgroup_run(data, filters, cfg, "test");
  REQUIRE(grid.cells.size() == 4);
  CHECK(grid.cells[0].feasible);
  CHECK(grid.cells[1].feasible);
  CHECK_FALSE(grid.cells[2].feasible);
  CHECK_FALSE(grid.cells[2].error.empty());
  CHECK(grid.cells[3].feasible);
  std::vector<double> p{grid.cells[0].estimate.p_value, grid.cells[1].estimate.p_value, grid.cells[3].estimate.p_value};
  auto q = bh_adjust(p);
  CHECK(grid.cells[0].p_adjusted == q[0]);
  CHECK(grid.cells[1].p_adjusted == q[1]);
  CHECK(grid.cells[3].p_adjusted == q[2]);
  CHECK(grid.cells[0].n_rows + grid.cells[1].n_rows == data.size());
}

TEST_CASE("placebo test on control-only data: units, pooling and histogram") {
  DgpSpec s;
  s.n = 4000;
  s.n_clusters = 4;
  s.periods = 2;
  s.controls_only = true;
  s.seed = 3;
  auto g = generate(s);
  PlaceboConfig pc;
  pc.estimator = fast_config();
  pc.histogram_bins = 4;
  auto r = placebo_test(g.schema, g.rows, pc, true);
  CHECK(r.units.size() == 8);
  CHECK(r.skipped.empty());
  double m = 0;
  for (const auto& u : r.units) m += u.estimate.atet;
  CHECK(r.mean == doctest::Approx(m / 8).epsilon(1e-12));
  CHECK(r.se == r.se_t_test);
  CHECK(r.p_value == r.p_t_test);
  CHECK(r.se_influence > 0.0);
  std::size_t total = 0;
  for (auto c : r.histogram) total += c;
  CHECK(total == 8);
  CHECK(r.bin_edges.size() == 5);
  CHECK(std::fabs(r.mean) < 0.05);

  pc.pooling = PlaceboPooling::influence;
  auto ri = placebo_test(g.schema, g.rows, pc, true);
  CHECK(ri.mean == r.mean);
  CHECK(ri.se == ri.se_influence);
}

TEST_CASE("placebo test rejects treated rows and too few units") {
  DgpSpec s;
  s.n = 400;
  s.n_clusters = 2;
  s.controls_only = true;
  s.seed = 4;
  auto g = generate(s);
  PlaceboConfig pc;
  pc.estimator = fast_config();
  pc.period_covariate = "";
  CHECK_THROWS_AS(placebo_test(g.schema, g.rows, pc, true), EstimationError);
  auto rows = g.rows;
  rows[0].d = 1;
  CHECK_THROWS_AS(placebo_test(g.schema, rows, pc, true), DataError);
}

TEST_CASE("covariate robustness runs one estimate per set") {
  DgpSpec s;
  s.n = 3000;
  s.seed = 14;
  auto data = generate(s).dataset();
  std::vector<CovariateSet> sets{{"x only", {"x0", "x1"}}, {"all", {"x0", "x1", "x2", "g0"}}};
  auto cfg = fast_config();
  cfg.cluster = false;
  auto rows = covariate_robustness(data, sets, cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "x only");
  CHECK(rows[1].columns.size() == 4);
  CHECK(rows[0].estimate.atet != rows[1].estimate.atet);
}
