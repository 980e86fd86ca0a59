#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <map>
#include <set>

#include "diddml/estimator.hpp"
#include "diddml/synthetic_dgp.hpp"
#include "fixtures.hpp"

using namespace diddml;

namespace {

EstimatorConfig exact_config(bool cluster) {
  EstimatorConfig c;
  c.trim_threshold = 0.0;
  c.cluster = cluster;
  return c;
}

EstimatorConfig fast_config() {
  EstimatorConfig c;
  c.folds = 5;
  c.learners.outcome.n_trees = 30;
  c.learners.outcome.min_leaf = 20;
  c.learners.propensity.n_trees = 30;
  c.learners.propensity.min_leaf = 20;
  c.cluster = false;
  c.seed = 99;
  return c;
}

}  // namespace

TEST_CASE("score: per-row values on the hand fixture") {
  const auto& rows = fixtures::score_rows();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = score(rows[i].y, rows[i].d, rows[i].t, rows[i].mu, rows[i].rho, 0.25);
    CHECK(std::fabs(s - fixtures::kScores[i]) < 1e-12);
  }
}

TEST_CASE("score: plug-in mean and standard errors on the hand fixture") {
  auto data = fixtures::score_data();
  auto np = fixtures::score_nuisances();
  auto e = estimate_atet_from_nuisances(data, np, exact_config(false));
  CHECK(std::fabs(e.atet - fixtures::kScoreAtet) < 1e-12);
  CHECK(std::fabs(e.se - fixtures::kScoreSe) < 1e-12);
  CHECK(e.n_trimmed == 0);
  CHECK_FALSE(e.clustered);
  auto ec = estimate_atet_from_nuisances(data, np, exact_config(true));
  CHECK(std::fabs(ec.atet - fixtures::kScoreAtet) < 1e-12);
  CHECK(std::fabs(ec.se - fixtures::kScoreSeClustered) < 1e-12);
  CHECK(ec.n_clusters == 2);
}

TEST_CASE("influence_se: singleton clusters reduce to the unclustered formula times sqrt(n/(n-1))") {
  std::vector<double> psi{0.3, -1.2, 0.8, 2.0, -0.4, 0.1};
  std::vector<bool> used(6, true);
  std::vector<std::string> cl{"a", "b", "c", "d", "e", "f"};
  double m = std::accumulate(psi.begin(), psi.end(), 0.0) / 6;
  std::vector<double> centred;
  for (double v : psi) centred.push_back(v - m);
  auto plain = influence_se(centred, used, cl, false);
  auto clus = influence_se(centred, used, cl, true);
  CHECK(clus.n_clusters == 6);
  CHECK(clus.se == doctest::Approx(plain.se * std::sqrt(6.0 / 5.0)).epsilon(1e-13));
}

TEST_CASE("trim drops comparison rows below the threshold, never (1,1) rows") {
  std::vector<int> cells{0, 1, 2, 3, 3, 0};
  Eigen::MatrixXd rho(6, 4);
  rho << 0.005, 0.3, 0.3, 0.395,  //
      0.3, 0.009, 0.3, 0.391,     //
      0.3, 0.3, 0.01, 0.39,       //
      0.3, 0.3, 0.395, 0.005,     //
      0.3, 0.3, 0.3, 0.1,         //
      0.5, 0.2, 0.2, 0.1;
  auto t = trim(cells, rho, 0.01);
  CHECK(t.n_trimmed == 2);
  CHECK(t.used == std::vector<bool>{false, false, true, true, true, true});
}

TEST_CASE("folds partition the rows, are stratified by cell and keyed to ids") {
  DgpSpec s;
  s.n = 997;
  s.seed = 5;
  auto g = generate(s);
  auto data = g.dataset();
  for (int k : {2, 5, 10}) {
    auto plan = make_folds(data, k, 42);
    std::vector<std::size_t> all;
    for (int f = 0; f < k; ++f) {
      auto r = plan.fold_rows(f);
      all.insert(all.end(), r.begin(), r.end());
      // each cell spread within one row of even
      std::array<std::size_t, 4> per{};
      for (auto i : r) per[cell_index(data[i].d, data[i].t)]++;
      auto cc = data.cell_counts();
      for (int c = 0; c < 4; ++c) {
        CHECK(per[c] >= cc[c] / k);
        CHECK(per[c] <= cc[c] / k + 1);
      }
    }
    std::sort(all.begin(), all.end());
    CHECK(all.size() == data.size());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  }
  // shuffling row order does not change any row's fold
  std::vector<Observation> rows = data.rows();
  std::mt19937_64 rng(3);
  std::shuffle(rows.begin(), rows.end(), rng);
  RepeatedCrossSection shuffled(data.schema(), rows, true);
  auto a = make_folds(data, 5, 42), b = make_folds(shuffled, 5, 42);
  std::map<std::uint64_t, int> fold_by_id;
  for (std::size_t i = 0; i < data.size(); ++i) fold_by_id[data[i].id] = a.fold_of[i];
  for (std::size_t i = 0; i < shuffled.size(); ++i) CHECK(b.fold_of[i] == fold_by_id[shuffled[i].id]);
}

TEST_CASE("make_folds refuses cells smaller than the fold count") {
  auto data = fixtures::score_data();
  CHECK_THROWS_AS(make_folds(data, 3, 1), EstimationError);
  CHECK_NOTHROW(make_folds(data, 2, 1));
}

TEST_CASE("estimate_atet is invariant to row permutation") {
  DgpSpec s;
  s.n = 1500;
  s.seed = 8;
  auto data = generate(s).dataset();
  auto cfg = fast_config();
  auto e1 = estimate_atet(data, cfg);
  std::vector<Observation> rows = data.rows();
  std::reverse(rows.begin(), rows.end());
  auto e2 = estimate_atet(RepeatedCrossSection(data.schema(), rows, true), cfg);
  CHECK(e1.atet == doctest::Approx(e2.atet).epsilon(1e-12));
  CHECK(e1.se == doctest::Approx(e2.se).epsilon(1e-12));
  // and to the thread count
  cfg.threads = 3;
  auto e3 = estimate_atet(data, cfg);
  CHECK(e3.atet == e1.atet);
  CHECK(e3.se == e1.se);
}

TEST_CASE("out-of-fold nuisances do not depend on a row's own outcome") {
  DgpSpec s;
  s.n = 800;
  s.seed = 9;
  auto data = generate(s).dataset();
  auto plan = make_folds(data, 4, 1);
  LearnerConfig lc = fast_config().learners;
  auto base = cross_fit_nuisances(data, plan, lc);
  // flip the outcomes of fold 0 only; predictions for fold 0 rows must stay put
  std::vector<double> y(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) y[i] = plan.fold_of[i] == 0 ? 1.0 - data[i].y : data[i].y;
  auto flipped = cross_fit_nuisances(data.with_outcome(y, true), plan, lc);
  bool others_moved = false;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto r = static_cast<Eigen::Index>(i);
    if (plan.fold_of[i] == 0) {
      CHECK((flipped.mu.row(r) - base.mu.row(r)).cwiseAbs().maxCoeff() == 0.0);
    } else if ((flipped.mu.row(r) - base.mu.row(r)).cwiseAbs().maxCoeff() > 0.0) {
      others_moved = true;
    }
    CHECK((flipped.rho.row(r) - base.rho.row(r)).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(others_moved);
}

TEST_CASE("support report flags treated rows outside a comparison cell's range") {
  std::vector<int> cells{0, 0, 1, 1, 2, 2, 3, 3};
  Eigen::MatrixXd rho(8, 4);
  for (int i = 0; i < 8; ++i) rho.row(i) << 0.25, 0.25, 0.25, 0.25;
  rho(0, 3) = 0.1;
  rho(1, 3) = 0.2;  // cell 0 covers [0.1, 0.2]
  rho(2, 3) = rho(4, 3) = 0.1;
  rho(3, 3) = rho(5, 3) = 0.6;  // cells 1 and 2 cover [0.1, 0.6]
  rho(6, 3) = 0.5;
  rho(7, 3) = 0.15;
  auto rep = common_support_report(cells, rho, 0.01);
  CHECK(rep.uncovered_mass[0] == doctest::Approx(0.5));
  CHECK(rep.uncovered_mass[1] == 0.0);
  CHECK(rep.uncovered_mass[2] == 0.0);
  CHECK(rep.violation);
  auto ok = common_support_report(cells, rho, 0.6);
  CHECK_FALSE(ok.violation);
}

TEST_CASE("estimate_atet with true nuisances recovers tau on a large sample") {
  DgpSpec s;
  s.n = 40000;
  s.seed = 21;
  auto g = generate(s);
  auto e = estimate_atet_from_nuisances(g.dataset(), g.true_nuisances(), exact_config(false));
  CHECK(std::fabs(e.atet - s.tau) < 4 * e.se);
  CHECK(e.se > 0.005);
  CHECK(e.se < 0.03);
}

TEST_CASE("estimator config validation") {
  EstimatorConfig c;
  c.folds = 1;
  CHECK_THROWS(c.validate());
  c = EstimatorConfig{};
  c.trim_threshold = 0.5;
  CHECK_THROWS(c.validate());
}
