#include "diddml/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "diddml/parallel.hpp"
#include "diddml/random.hpp"
#include "diddml/stats.hpp"

namespace diddml {

std::vector<std::size_t> CrossFitPlan::fold_rows(int k) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    if (fold_of[i] == k) out.push_back(i);
  return out;
}

std::vector<std::size_t> CrossFitPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(static_cast<std::size_t>(folds), 0);
  for (int f : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

std::vector<std::size_t> canonical_order(const RepeatedCrossSection& data) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data[a].id < data[b].id; });
  return order;
}

CrossFitPlan make_folds(const RepeatedCrossSection& data, int folds, std::uint64_t seed) {
  if (folds < 2) throw EstimationError("cross-fitting needs at least 2 folds");
  auto counts = data.cell_counts();
  for (int c = 0; c < 4; ++c) {
    if (counts[c] < static_cast<std::size_t>(folds)) {
      throw EstimationError("cell (" + std::to_string(cell_d(c)) + "," + std::to_string(cell_t(c)) + ") has " +
                            std::to_string(counts[c]) + " rows, fewer than " + std::to_string(folds) + " folds");
    }
  }
  CrossFitPlan plan;
  plan.folds = folds;
  plan.seed = seed;
  plan.fold_of.assign(data.size(), -1);

  // Within each cell rows are shuffled by a hash of (seed, id) and dealt
  // round-robin; the dealing offset carries across cells so that total fold
  // sizes differ by at most one.
  std::array<std::vector<std::pair<std::uint64_t, std::size_t>>, 4> by_cell;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data[i];
    by_cell[static_cast<std::size_t>(cell_index(r.d, r.t))].push_back({derive_seed(seed, {r.id}), i});
  }
  std::size_t offset = 0;
  for (auto& rows : by_cell) {
    std::sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return data[a.second].id < data[b.second].id;
    });
    for (std::size_t j = 0; j < rows.size(); ++j)
      plan.fold_of[rows[j].second] = static_cast<int>((offset + j) % static_cast<std::size_t>(folds));
    offset = (offset + rows.size()) % static_cast<std::size_t>(folds);
  }
  return plan;
}

NuisancePredictions cross_fit_nuisances(const RepeatedCrossSection& data, const CrossFitPlan& plan,
                                        const LearnerConfig& learners, int threads) {
  if (plan.fold_of.size() != data.size()) throw EstimationError("cross-fit plan does not match the data");
  const Eigen::MatrixXd x = data.design(EncodingVariant::full_dummies);
  const std::vector<int> cells = data.cells();
  const std::vector<std::size_t> order = canonical_order(data);
  const auto n = static_cast<Eigen::Index>(data.size());

  NuisancePredictions out;
  out.mu = Eigen::MatrixXd::Zero(n, 4);
  out.rho = Eigen::MatrixXd::Zero(n, 4);
  out.pi = static_cast<double>(data.cell_counts()[kTreatedPost]) / static_cast<double>(data.size());

  const int fold_threads = std::max(1, threads);
  parallel_for(static_cast<std::size_t>(plan.folds), fold_threads, [&](std::size_t fk) {
    const int k = static_cast<int>(fk);
    std::vector<Eigen::Index> train, test;
    std::array<std::vector<Eigen::Index>, 4> train_cell;
    for (std::size_t pos : order) {
      auto i = static_cast<Eigen::Index>(pos);
      if (plan.fold_of[pos] == k) {
        test.push_back(i);
      } else {
        train.push_back(i);
        train_cell[static_cast<std::size_t>(cells[pos])].push_back(i);
      }
    }
    if (test.empty()) return;
    for (int c = 0; c < 4; ++c) {
      if (train_cell[static_cast<std::size_t>(c)].empty())
        throw EstimationError("fold " + std::to_string(k) + ": empty training cell");
    }
    const Eigen::MatrixXd x_test = x(test, Eigen::all);

    ForestConfig pcfg = learners.propensity;
    pcfg.seed = derive_seed(learners.propensity.seed, {static_cast<std::uint64_t>(k), 4});
    pcfg.threads = 1;
    std::vector<int> labels(train.size());
    for (std::size_t j = 0; j < train.size(); ++j) labels[j] = cells[static_cast<std::size_t>(train[j])];
    const ProbabilityForest prop = ProbabilityForest::fit(x(train, Eigen::all), labels, pcfg);
    const Eigen::MatrixXd rho = prop.predict(x_test);

    for (int c = 0; c < 4; ++c) {
      const auto& rows = train_cell[static_cast<std::size_t>(c)];
      std::vector<double> y(rows.size());
      for (std::size_t j = 0; j < rows.size(); ++j) y[j] = data[static_cast<std::size_t>(rows[j])].y;
      ForestConfig ocfg = learners.outcome;
      ocfg.seed = derive_seed(learners.outcome.seed, {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(c)});
      ocfg.threads = 1;
      const RegressionForest reg = RegressionForest::fit(x(rows, Eigen::all), y, ocfg);
      const Eigen::VectorXd mu = reg.predict(x_test);
      for (std::size_t j = 0; j < test.size(); ++j) out.mu(test[j], c) = mu(static_cast<Eigen::Index>(j));
    }
    for (std::size_t j = 0; j < test.size(); ++j) out.rho.row(test[j]) = rho.row(static_cast<Eigen::Index>(j));
  });
  return out;
}

TrimResult trim(std::span<const int> cells, const Eigen::MatrixXd& rho, double threshold) {
  if (!(threshold >= 0.0 && threshold < 0.5)) throw std::invalid_argument("trim threshold must be in [0, 0.5)");
  if (static_cast<std::size_t>(rho.rows()) != cells.size()) throw std::invalid_argument("trim: size mismatch");
  TrimResult out;
  out.used.assign(cells.size(), true);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    int c = cells[i];
    if (c == kTreatedPost) continue;
    if (rho(static_cast<Eigen::Index>(i), c) < threshold) {
      out.used[i] = false;
      ++out.n_trimmed;
    }
  }
  return out;
}

double score(double y, int d, int t, const std::array<double, 4>& mu, const std::array<double, 4>& rho, double pi) {
  if (!(pi > 0.0)) throw EstimationError("score: Pi must be positive");
  const int c = cell_index(d, t);
  if (c != kTreatedPost && !(rho[static_cast<std::size_t>(c)] > 0.0))
    throw EstimationError("score: zero propensity for the observation's own cell");
  double weight = 0.0;
  switch (c) {
    case kTreatedPost:
      weight = 1.0 / pi;
      break;
    case kTreatedPre:
      weight = -rho[kTreatedPost] / (rho[kTreatedPre] * pi);
      break;
    case kControlPost:
      weight = -rho[kTreatedPost] / (rho[kControlPost] * pi);
      break;
    case kControlPre:
      weight = rho[kTreatedPost] / (rho[kControlPre] * pi);
      break;
    default:
      throw EstimationError("score: invalid cell");
  }
  double psi = weight * (y - mu[static_cast<std::size_t>(c)]);
  if (c == kTreatedPost) {
    psi += ((mu[kTreatedPost] - mu[kTreatedPre]) - (mu[kControlPost] - mu[kControlPre])) / pi;
  }
  return psi;
}

SupportReport common_support_report(std::span<const int> cells, const Eigen::MatrixXd& rho, double tolerance,
                                    int bins) {
  if (bins < 1) throw std::invalid_argument("support report: bins must be >= 1");
  SupportReport rep;
  rep.tolerance = tolerance;
  rep.quantile_levels = {0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0};
  for (int b = 0; b <= bins; ++b) rep.bin_edges.push_back(static_cast<double>(b) / bins);
  std::array<std::vector<double>, 4> values;
  for (std::size_t i = 0; i < cells.size(); ++i)
    values[static_cast<std::size_t>(cells[i])].push_back(rho(static_cast<Eigen::Index>(i), kTreatedPost));
  for (int c = 0; c < 4; ++c) {
    auto& v = values[static_cast<std::size_t>(c)];
    auto& s = rep.cells[static_cast<std::size_t>(c)];
    s.count = v.size();
    s.histogram.assign(static_cast<std::size_t>(bins), 0);
    for (double q : rep.quantile_levels) s.quantiles.push_back(v.empty() ? std::nan("") : stats::quantile(v, q));
    for (double r : v) {
      auto b = static_cast<std::size_t>(std::clamp(static_cast<int>(std::floor(r * bins)), 0, bins - 1));
      ++s.histogram[b];
    }
  }
  const auto& treated = values[kTreatedPost];
  for (int c = 0; c < 3; ++c) {
    const auto& v = values[static_cast<std::size_t>(c)];
    if (treated.empty()) break;
    if (v.empty()) {
      rep.uncovered_mass[static_cast<std::size_t>(c)] = 1.0;
    } else {
      auto [lo, hi] = std::minmax_element(v.begin(), v.end());
      std::size_t outside = 0;
      for (double r : treated)
        if (r < *lo || r > *hi) ++outside;
      rep.uncovered_mass[static_cast<std::size_t>(c)] = static_cast<double>(outside) / static_cast<double>(treated.size());
    }
    if (rep.uncovered_mass[static_cast<std::size_t>(c)] > tolerance) rep.violation = true;
  }
  return rep;
}

void EstimatorConfig::validate() const {
  if (folds < 2) throw std::invalid_argument("folds must be >= 2");
  if (!(trim_threshold >= 0.0 && trim_threshold < 0.5)) throw std::invalid_argument("trim threshold must be in [0, 0.5)");
  learners.outcome.validate();
  learners.propensity.validate();
}

InfluenceInference influence_se(std::span<const double> influence, const std::vector<bool>& used,
                                std::span<const std::string> clusters, bool cluster) {
  InfluenceInference out;
  std::size_t n = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < influence.size(); ++i) {
    if (!used[i]) continue;
    ++n;
    sum += influence[i];
  }
  if (n < 2) throw EstimationError("too few observations for inference");
  const double nd = static_cast<double>(n);
  if (!cluster) {
    const double mean = sum / nd;
    double ss = 0.0;
    for (std::size_t i = 0; i < influence.size(); ++i)
      if (used[i]) ss += (influence[i] - mean) * (influence[i] - mean);
    out.se = std::sqrt(ss / nd) / std::sqrt(nd);
    out.n_clusters = n;
    return out;
  }
  std::map<std::string_view, double> totals;
  for (std::size_t i = 0; i < influence.size(); ++i)
    if (used[i]) totals[clusters[i]] += influence[i];
  const double g = static_cast<double>(totals.size());
  if (totals.size() < 2) throw EstimationError("clustered inference needs at least 2 clusters");
  double ss = 0.0;
  for (const auto& [label, total] : totals) ss += total * total;
  out.se = std::sqrt(g / (g - 1.0) * ss) / nd;
  out.n_clusters = totals.size();
  return out;
}

AtetEstimate estimate_atet_from_nuisances(const RepeatedCrossSection& data, const NuisancePredictions& nuis,
                                          const EstimatorConfig& config) {
  config.validate();
  const auto n = data.size();
  if (static_cast<std::size_t>(nuis.mu.rows()) != n || static_cast<std::size_t>(nuis.rho.rows()) != n ||
      nuis.mu.cols() != 4 || nuis.rho.cols() != 4)
    throw EstimationError("nuisance predictions do not match the data");
  if (!(nuis.pi > 0.0 && nuis.pi < 1.0)) throw EstimationError("Pi must lie in (0,1)");

  AtetEstimate est;
  est.n = n;
  est.cell_counts = data.cell_counts();
  est.clustered = config.cluster;
  const std::vector<int> cells = data.cells();
  TrimResult tr = trim(cells, nuis.rho, config.trim_threshold);
  est.used = tr.used;
  est.n_trimmed = tr.n_trimmed;
  est.n_used = n - tr.n_trimmed;

  double pi = nuis.pi;
  if (!config.pi_before_trim) {
    pi = static_cast<double>(est.cell_counts[kTreatedPost]) / static_cast<double>(est.n_used);
  }
  est.pi = pi;

  const std::vector<std::size_t> order = canonical_order(data);
  est.score.assign(n, 0.0);
  double total = 0.0;
  for (std::size_t pos : order) {
    if (!est.used[pos]) continue;
    const auto i = static_cast<Eigen::Index>(pos);
    std::array<double, 4> mu{}, rho{};
    for (int c = 0; c < 4; ++c) {
      mu[static_cast<std::size_t>(c)] = nuis.mu(i, c);
      rho[static_cast<std::size_t>(c)] = nuis.rho(i, c);
    }
    const auto& r = data[pos];
    est.score[pos] = score(r.y, r.d, r.t, mu, rho, pi);
    total += est.score[pos];
  }
  est.atet = total / static_cast<double>(est.n_used);

  est.influence.assign(n, 0.0);
  std::vector<double> infl_sorted;
  std::vector<bool> used_sorted;
  std::vector<std::string> clusters_sorted;
  infl_sorted.reserve(n);
  used_sorted.reserve(n);
  clusters_sorted.reserve(n);
  for (std::size_t pos : order) {
    const auto& r = data[pos];
    if (est.used[pos]) est.influence[pos] = est.score[pos] - est.atet * (r.d * r.t) / pi;
    infl_sorted.push_back(est.influence[pos]);
    used_sorted.push_back(est.used[pos]);
    clusters_sorted.push_back(r.cluster);
  }
  InfluenceInference inf = influence_se(infl_sorted, used_sorted, clusters_sorted, config.cluster);
  est.se = inf.se;
  est.n_clusters = config.cluster ? inf.n_clusters : data.cluster_count();
  if (!(est.se > 0.0)) {
    est.warnings.push_back("degenerate standard error");
    est.p_value = est.atet == 0.0 ? 1.0 : 0.0;
  } else {
    est.p_value = stats::normal_p_value(est.atet / est.se);
  }
  est.ci95 = {est.atet - stats::z975 * est.se, est.atet + stats::z975 * est.se};

  est.support = common_support_report(cells, nuis.rho, config.support_tolerance);
  if (est.support.violation) est.warnings.push_back("common support violation: treated-post propensities not covered");
  return est;
}

AtetEstimate estimate_atet(const RepeatedCrossSection& data, const EstimatorConfig& config) {
  config.validate();
  if (config.cluster && data.cluster_count() < 2)
    throw EstimationError("clustered inference needs at least 2 clusters");
  CrossFitPlan plan = make_folds(data, config.folds, config.seed);
  LearnerConfig learners = config.learners;
  learners.outcome.seed = derive_seed(config.seed, {1});
  learners.propensity.seed = derive_seed(config.seed, {2});
  NuisancePredictions nuis = cross_fit_nuisances(data, plan, learners, config.threads);
  return estimate_atet_from_nuisances(data, nuis, config);
}

EstimateSummary summarize(const AtetEstimate& e) { return {e.atet, e.se, e.p_value, e.ci95, e.n, e.n_trimmed}; }

}  // namespace diddml
