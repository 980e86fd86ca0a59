#include "diddml/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

#include "diddml/parallel.hpp"
#include "diddml/stats.hpp"

namespace diddml {

std::vector<double> bh_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("p-value outside [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double v = std::min(1.0, p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1));
    running = std::min(running, v);
    out[order[r]] = running;
  }
  return out;
}

double elasticity(double effect_pct, double price_change_pct) {
  if (price_change_pct == 0.0) throw std::invalid_argument("elasticity: zero price change");
  return effect_pct / price_change_pct;
}

double pass_through(double estimated_price_effect, double mechanical_price_change) {
  if (!(mechanical_price_change > 0.0)) throw std::invalid_argument("pass_through: mechanical change must be > 0");
  return 100.0 * estimated_price_effect / mechanical_price_change;
}

double percent_of_baseline(double effect, double baseline) {
  if (baseline == 0.0) throw std::invalid_argument("percent_of_baseline: zero baseline");
  return 100.0 * effect / baseline;
}

double treated_baseline(const RepeatedCrossSection& data) { return two_by_two_table(data).mean[kTreatedPre]; }

namespace {

std::string period_of(const Observation& r, std::optional<std::size_t> col) {
  return col ? format_raw(r.covariates[*col]) : std::string();
}

void fill_histogram(PlaceboResult& res, int bins) {
  if (res.units.empty() || bins < 1) return;
  double lo = res.units.front().estimate.atet, hi = lo;
  for (const auto& u : res.units) {
    lo = std::min(lo, u.estimate.atet);
    hi = std::max(hi, u.estimate.atet);
  }
  if (hi == lo) {
    lo -= 0.5e-3;
    hi += 0.5e-3;
  }
  const double w = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) res.bin_edges.push_back(lo + b * w);
  res.bin_edges.back() = hi;
  res.histogram.assign(static_cast<std::size_t>(bins), 0);
  for (const auto& u : res.units) {
    auto b = static_cast<int>((u.estimate.atet - lo) / w);
    ++res.histogram[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))];
  }
}

}  // namespace

PlaceboResult placebo_test(const EncodingSchema& schema, const std::vector<Observation>& controls,
                           const PlaceboConfig& config, bool binary_outcome) {
  config.estimator.validate();
  for (const auto& r : controls)
    if (r.d != 0) throw DataError("placebo input must contain control rows only");
  std::optional<std::size_t> period_col;
  if (!config.period_covariate.empty()) {
    period_col = schema.index_of(config.period_covariate);
    if (!period_col) throw DataError("unknown period covariate: " + config.period_covariate);
  }

  // units keyed by (cluster, period), sorted so the result does not depend on row order
  std::map<std::pair<std::string, std::string>, std::array<std::size_t, 2>> units;
  for (const auto& r : controls) ++units[{r.cluster, period_of(r, period_col)}][static_cast<std::size_t>(r.t)];
  if (units.size() < 3) throw EstimationError("placebo test needs at least 3 control units");

  PlaceboResult res;
  res.pooling = config.pooling;
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& [key, counts] : units) {
    if (counts[0] == 0 || counts[1] == 0) {
      res.skipped.push_back(key.first + "/" + key.second + ": unit lacks both periods");
      continue;
    }
    keys.push_back(key);
  }

  std::vector<std::optional<AtetEstimate>> runs(keys.size());
  std::vector<std::string> errors(keys.size());
  parallel_for(keys.size(), config.threads, [&](std::size_t u) {
    std::vector<Observation> rows = controls;
    for (auto& r : rows)
      if (r.cluster == keys[u].first && period_of(r, period_col) == keys[u].second) r.d = 1;
    try {
      EstimatorConfig ec = config.estimator;
      if (config.threads > 1) ec.threads = 1;
      runs[u] = estimate_atet(RepeatedCrossSection(schema, std::move(rows), binary_outcome), ec);
    } catch (const std::exception& e) {
      errors[u] = e.what();
    }
  });

  std::vector<double> pooled_influence(controls.size(), 0.0);
  std::vector<bool> any_used(controls.size(), false);
  for (std::size_t u = 0; u < keys.size(); ++u) {
    if (!runs[u]) {
      res.skipped.push_back(keys[u].first + "/" + keys[u].second + ": " + errors[u]);
      continue;
    }
    PlaceboUnit pu;
    pu.cluster = keys[u].first;
    pu.period = keys[u].second;
    pu.n_rows = units[keys[u]][0] + units[keys[u]][1];
    pu.estimate = summarize(*runs[u]);
    res.units.push_back(pu);
  }
  const std::size_t m = res.units.size();
  if (m < 2) throw EstimationError("placebo test: fewer than 2 successful unit estimates");
  for (std::size_t u = 0; u < keys.size(); ++u) {
    if (!runs[u]) continue;
    for (std::size_t i = 0; i < controls.size(); ++i) {
      if (!runs[u]->used[i]) continue;
      pooled_influence[i] += runs[u]->influence[i] / static_cast<double>(m);
      any_used[i] = true;
    }
  }

  std::vector<double> est;
  for (const auto& u : res.units) est.push_back(u.estimate.atet);
  res.mean = stats::mean(est);
  res.se_t_test = stats::sample_sd(est) / std::sqrt(static_cast<double>(m));
  res.p_t_test = res.se_t_test > 0 ? stats::student_t_p_value(res.mean / res.se_t_test, static_cast<double>(m - 1)) : 1.0;

  std::vector<std::string> clusters;
  for (const auto& r : controls) clusters.push_back(r.cluster);
  std::set<std::string> distinct(clusters.begin(), clusters.end());
  const bool cluster = config.estimator.cluster && distinct.size() >= 2;
  res.se_influence = influence_se(pooled_influence, any_used, clusters, cluster).se;
  res.p_influence = res.se_influence > 0 ? stats::normal_p_value(res.mean / res.se_influence) : 1.0;

  res.se = config.pooling == PlaceboPooling::t_test ? res.se_t_test : res.se_influence;
  res.p_value = config.pooling == PlaceboPooling::t_test ? res.p_t_test : res.p_influence;
  fill_histogram(res, config.histogram_bins);
  return res;
}

PlaceboResult placebo_test(const RepeatedCrossSection& data, const PlaceboConfig& config) {
  std::vector<Observation> controls;
  for (const auto& r : data.rows())
    if (r.d == 0) controls.push_back(r);
  return placebo_test(data.schema(), controls, config, data.binary_outcome());
}

bool SubgroupFilter::matches(const Observation& row, const EncodingSchema& schema) const {
  auto idx = schema.index_of(column);
  if (!idx) throw DataError("subgroup " + name + ": unknown column " + column);
  const RawValue& v = row.covariates[*idx];
  if (!levels.empty()) {
    const std::string s = format_raw(v);
    return std::find(levels.begin(), levels.end(), s) != levels.end();
  }
  const double* x = std::get_if<double>(&v);
  if (!x) throw DataError("subgroup " + name + ": range filter on categorical column " + column);
  return (!lo || *x >= *lo) && (!hi || *x < *hi);
}

std::vector<SubgroupFilter> sociodemographic_grid(const std::string& gender_column, const std::string& men,
                                                  const std::string& women, const std::string& age_column,
                                                  const std::string& education_column) {
  std::vector<SubgroupFilter> g;
  g.push_back({"men", gender_column, {men}, {}, {}});
  g.push_back({"women", gender_column, {women}, {}, {}});
  g.push_back({"age 15-24", age_column, {}, 15.0, 25.0});
  g.push_back({"age 25-44", age_column, {}, 25.0, 45.0});
  g.push_back({"age 45-64", age_column, {}, 45.0, 65.0});
  g.push_back({"age 65+", age_column, {}, 65.0, std::nullopt});
  g.push_back({"education <=15", education_column, {}, std::nullopt, 16.0});
  g.push_back({"education 16-19", education_column, {}, 16.0, 20.0});
  g.push_back({"education 20+", education_column, {}, 20.0, std::nullopt});
  return g;
}

SubgroupGrid subgroup_run(const RepeatedCrossSection& data, std::span<const SubgroupFilter> filters,
                          const EstimatorConfig& config, const std::string& family, int threads,
                          std::span<const std::string> covariates) {
  config.validate();
  SubgroupGrid grid;
  grid.family = family;
  grid.cells.resize(filters.size());
  parallel_for(filters.size(), threads, [&](std::size_t k) {
    SubgroupCell& cell = grid.cells[k];
    cell.name = filters[k].name;
    try {
      RepeatedCrossSection sub = data.filter([&](const Observation& r) { return filters[k].matches(r, data.schema()); });
      if (!covariates.empty()) sub = sub.with_covariates(covariates);
      cell.n_rows = sub.size();
      EstimatorConfig ec = config;
      if (threads > 1) ec.threads = 1;
      cell.estimate = summarize(estimate_atet(sub, ec));
      cell.feasible = true;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  std::vector<double> raw;
  for (const auto& c : grid.cells)
    if (c.feasible) raw.push_back(c.estimate.p_value);
  std::vector<double> adj = bh_adjust(raw);
  std::size_t j = 0;
  for (auto& c : grid.cells)
    if (c.feasible) c.p_adjusted = adj[j++];
  return grid;
}

std::vector<RobustnessRow> covariate_robustness(const RepeatedCrossSection& data, std::span<const CovariateSet> sets,
                                                const EstimatorConfig& config) {
  std::vector<RobustnessRow> out;
  for (const auto& s : sets) {
    RobustnessRow row;
    row.name = s.name;
    row.columns = s.columns;
    row.estimate = summarize(estimate_atet(data.with_covariates(s.columns), config));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace diddml
