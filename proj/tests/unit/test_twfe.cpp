#include <doctest.h>

#include <cmath>
#include <random>

#include "diddml/synthetic_dgp.hpp"
#include "diddml/twfe.hpp"
#include "fixtures.hpp"

using namespace diddml;

namespace {

// Random panel-like data: clusters c0..c5, two stacking periods, one continuous
// covariate and one categorical covariate.
RepeatedCrossSection random_panel(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EncodingSchema schema({CovariateColumn{"x", CovariateKind::continuous, {}},
                         CovariateColumn{"g", CovariateKind::categorical, {"a", "b", "c"}},
                         CovariateColumn{"period", CovariateKind::categorical, {"P1", "P2"}},
                         CovariateColumn{"level", CovariateKind::continuous, {}}});
  std::vector<Observation> rows;
  for (std::size_t i = 0; i < n; ++i) {
    int c = static_cast<int>(u(rng) * 6);
    int d = c < 3 ? 1 : 0;
    int t = u(rng) < 0.5 ? 1 : 0;
    int per = u(rng) < 0.5 ? 0 : 1;
    double x = u(rng) * 2 - 1;
    std::string g = u(rng) < 0.3 ? "a" : (u(rng) < 0.5 ? "b" : "c");
    double level = 5.0 + c + 0.7 * t * d + 0.1 * per + 0.05 * u(rng);
    double y = 0.3 + 0.2 * x + 0.1 * c - 0.05 * t + 0.08 * per - 0.04 * d * t + 0.1 * (u(rng) - 0.5);
    rows.push_back({y, d, t, "c" + std::to_string(c),
                    {RawValue{x}, RawValue{g}, RawValue{std::string(per ? "P2" : "P1")}, RawValue{level}}, i});
  }
  return RepeatedCrossSection(schema, rows, false);
}

}  // namespace

TEST_CASE("saturated binary TWFE equals the raw 2x2 DiD") {
  auto data = random_panel(400, 1);
  TwfeSpec spec;
  spec.cluster = false;
  auto r = fit_twfe(data, spec);
  auto t = two_by_two_table(data);
  CHECK(r.theta == doctest::Approx(t.did).epsilon(1e-12));
  CHECK(r.fit.names == std::vector<std::string>{"(Intercept)", "treated_post", "treated", "post"});
}

TEST_CASE("ols recovers an exact linear relation") {
  Eigen::MatrixXd x(5, 2);
  Eigen::VectorXd y(5);
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    y(i) = 2.0 * i;
  }
  auto f = ols(x, y, {"one", "x"});
  CHECK(std::fabs(f.coef(0)) < 1e-12);
  CHECK(f.coef(1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(f.residuals.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("rank deficiency names the offending column") {
  Eigen::MatrixXd x(6, 3);
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    x(i, 2) = 3.0 * i;  // collinear with x
    y(i) = i * i;
  }
  try {
    ols(x, y, {"one", "x", "x3"});
    FAIL("expected RankDeficientError");
  } catch (const RankDeficientError& e) {
    REQUIRE(e.columns().size() == 1);
    CHECK((e.columns()[0] == "x" || e.columns()[0] == "x3"));
  }
}

TEST_CASE("country FE alongside the treated dummy is rank deficient") {
  auto data = random_panel(300, 2);
  TwfeSpec spec;
  spec.country_fe = true;
  auto d = twfe_design(data, spec);
  // the design drops "treated" itself when country FE are on
  CHECK(std::find(d.names.begin(), d.names.end(), "treated") == d.names.end());
  Eigen::MatrixXd x = d.x;
  x.conservativeResize(Eigen::NoChange, x.cols() + 1);
  Eigen::VectorXd dcol(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) dcol(i) = data[static_cast<std::size_t>(i)].d;
  x.col(x.cols() - 1) = dcol;
  auto names = d.names;
  names.push_back("treated");
  CHECK_THROWS_AS(ols(x, data.outcome(), names), RankDeficientError);
}

TEST_CASE("cluster-robust with singleton clusters equals HC0 times the CR1 factor") {
  auto data = random_panel(200, 3);
  TwfeSpec spec;
  spec.covariates = {"x", "g"};
  auto d = twfe_design(data, spec);
  auto f = ols(d.x, data.outcome(), d.names);
  std::vector<std::string> single;
  for (std::size_t i = 0; i < data.size(); ++i) single.push_back("s" + std::to_string(i));
  Eigen::MatrixXd v = cluster_robust_vcov(f, single);
  Eigen::MatrixXd expected = robust_vcov(f) * cr1_factor(f.n, f.rank, f.n);
  CHECK((v - expected).cwiseAbs().maxCoeff() < 1e-14 * expected.cwiseAbs().maxCoeff() + 1e-18);
  CHECK(cr1_factor(200, 7, 200) == doctest::Approx(200.0 / 193.0));
}

TEST_CASE("cluster-robust sandwich matches a brute-force computation with three clusters") {
  // y = a + b x on nine rows in three clusters
  std::vector<double> xs{0.1, 0.5, 0.9, 1.3, 1.7, 2.2, 2.5, 3.1, 3.3};
  std::vector<double> ys{1.0, 1.4, 1.1, 2.0, 2.6, 2.1, 3.5, 3.0, 3.9};
  std::vector<std::string> cl{"A", "A", "A", "B", "B", "B", "C", "C", "C"};
  Eigen::MatrixXd x(9, 2);
  Eigen::VectorXd y(9);
  for (int i = 0; i < 9; ++i) {
    x(i, 0) = 1;
    x(i, 1) = xs[i];
    y(i) = ys[i];
  }
  auto f = ols(x, y, {"a", "b"});
  // brute force: explicit normal equations and per-cluster score sums
  double sx = 0, sxx = 0, sy = 0, sxy = 0;
  for (int i = 0; i < 9; ++i) {
    sx += xs[i];
    sxx += xs[i] * xs[i];
    sy += ys[i];
    sxy += xs[i] * ys[i];
  }
  double det = 9 * sxx - sx * sx;
  double b = (9 * sxy - sx * sy) / det;
  double a = (sy - b * sx) / 9;
  double inv[2][2] = {{sxx / det, -sx / det}, {-sx / det, 9 / det}};
  double meat[2][2] = {{0, 0}, {0, 0}};
  for (const char* g : {"A", "B", "C"}) {
    double s0 = 0, s1 = 0;
    for (int i = 0; i < 9; ++i)
      if (cl[i] == g) {
        double e = ys[i] - a - b * xs[i];
        s0 += e;
        s1 += e * xs[i];
      }
    meat[0][0] += s0 * s0;
    meat[0][1] += s0 * s1;
    meat[1][0] += s1 * s0;
    meat[1][1] += s1 * s1;
  }
  double v[2][2] = {{0, 0}, {0, 0}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l) v[i][j] += inv[i][k] * meat[k][l] * inv[l][j];
  double factor = 3.0 / 2.0 * 8.0 / 7.0;
  Eigen::MatrixXd got = cluster_robust_vcov(f, cl);
  CHECK(f.coef(1) == doctest::Approx(b).epsilon(1e-12));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(got(i, j) == doctest::Approx(factor * v[i][j]).epsilon(1e-10));
}

TEST_CASE("cluster-robust needs two clusters") {
  Eigen::MatrixXd x(4, 1);
  x << 1, 1, 1, 1;
  Eigen::VectorXd y(4);
  y << 1, 2, 3, 4;
  auto f = ols(x, y, {"one"});
  std::vector<std::string> one(4, "only");
  CHECK_THROWS(cluster_robust_vcov(f, one));
}

TEST_CASE("within transformation matches the dummy regression") {
  auto data = random_panel(600, 4);
  for (int variant = 0; variant < 4; ++variant) {
    TwfeSpec spec;
    spec.covariates = {"x", "g"};
    spec.country_fe = variant & 1;
    spec.year_fe = variant & 2;
    spec.period_covariate = "period";
    spec.cluster = false;
    auto r = fit_twfe(data, spec);
    CHECK(twfe_theta_within(data, spec) == doctest::Approx(r.theta).epsilon(1e-8));
  }
  TwfeSpec cont;
  cont.mode = TreatmentMode::continuous;
  cont.policy_column = "level";
  cont.country_fe = true;
  cont.year_fe = true;
  cont.period_covariate = "period";
  auto r = fit_twfe(data, cont);
  CHECK(r.fit.names[1] == "level");
  CHECK(twfe_theta_within(data, cont) == doctest::Approx(r.theta).epsilon(1e-8));
}

TEST_CASE("duplicating every row leaves theta unchanged") {
  auto data = random_panel(300, 5);
  std::vector<Observation> rows = data.rows();
  std::vector<Observation> doubled = rows;
  for (auto r : rows) {
    r.id += 100000;
    doubled.push_back(r);
  }
  RepeatedCrossSection dd(data.schema(), doubled, false);
  TwfeSpec spec;
  spec.covariates = {"x"};
  spec.country_fe = true;
  CHECK(fit_twfe(dd, spec).theta == doctest::Approx(fit_twfe(data, spec).theta).epsilon(1e-10));
}

TEST_CASE("shifting the outcome moves only the intercept") {
  auto data = random_panel(300, 6);
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = data[i].y + 3.0;
  TwfeSpec spec;
  spec.covariates = {"x", "g"};
  auto a = fit_twfe(data, spec);
  auto b = fit_twfe(data.with_outcome(y, false), spec);
  CHECK(b.fit.coef(0) == doctest::Approx(a.fit.coef(0) + 3.0).epsilon(1e-10));
  CHECK(b.theta == doctest::Approx(a.theta).epsilon(1e-10));
  CHECK(b.se == doctest::Approx(a.se).epsilon(1e-10));
}

TEST_CASE("history column joins the design when requested") {
  auto data = random_panel(300, 7);
  TwfeSpec spec;
  spec.history_column = "level";
  auto d = twfe_design(data, spec);
  CHECK(d.names.back() == "level");
  spec.include_history = false;
  CHECK(twfe_design(data, spec).names.back() == "post");
}

TEST_CASE("continuous rescaling: 4.13% of a 0.77 share at -0.3977 per unit") {
  double delta = percent_to_units(4.13, 0.77);
  CHECK(delta == doctest::Approx(0.031801).epsilon(1e-9));
  double eff = rescale_continuous(-0.3977, delta);
  CHECK(eff == doctest::Approx(-0.0126473).epsilon(1e-5));
}

TEST_CASE("TWFE on the linear DGP lands near tau") {
  DgpSpec s;
  s.n = 20000;
  s.seed = 31;
  auto g = generate(s);
  auto data = g.dataset();
  TwfeSpec spec;
  for (const auto& c : data.schema().columns()) spec.covariates.push_back(c.name);
  spec.cluster = false;
  auto r = fit_twfe(data, spec);
  CHECK(std::fabs(r.theta - s.tau) < 4 * r.se);
}
