#include "diddml/synthetic_dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

#include "diddml/parallel.hpp"
#include "diddml/random.hpp"
#include "diddml/stats.hpp"
#include "diddml/twfe.hpp"

namespace diddml {

void DgpSpec::validate() const {
  if (n < 8) throw std::invalid_argument("dgp: n must be at least 8");
  if (p_continuous < 1) throw std::invalid_argument("dgp: need at least one continuous covariate");
  if (p_categorical < 0) throw std::invalid_argument("dgp: p_categorical must be >= 0");
  if (p_categorical > 0 && categorical_levels < 2) throw std::invalid_argument("dgp: categorical_levels must be >= 2");
  if (!(propensity_floor >= 0.0 && propensity_floor < 0.25)) throw std::invalid_argument("dgp: propensity_floor must be in [0, 0.25)");
  if (!(base_rate > 0.0 && base_rate < 1.0)) throw std::invalid_argument("dgp: base_rate must be in (0, 1)");
  if (cluster_sd < 0 || cluster_trend_sd < 0) throw std::invalid_argument("dgp: negative cluster scale");
  if (!(max_clamp_fraction >= 0.0 && max_clamp_fraction <= 1.0)) throw std::invalid_argument("dgp: max_clamp_fraction must be in [0, 1]");
  if (periods < 1) throw std::invalid_argument("dgp: periods must be >= 1");
}

Surface parse_surface(const std::string& s) {
  if (s == "linear") return Surface::linear;
  if (s == "nonlinear") return Surface::nonlinear;
  throw std::invalid_argument("unknown surface: " + s);
}

EffectMode parse_effect(const std::string& s) {
  if (s == "constant") return EffectMode::constant;
  if (s == "heterogeneous") return EffectMode::heterogeneous;
  throw std::invalid_argument("unknown effect mode: " + s);
}

std::string to_string(Surface s) { return s == Surface::linear ? "linear" : "nonlinear"; }
std::string to_string(EffectMode e) { return e == EffectMode::constant ? "constant" : "heterogeneous"; }

namespace {

constexpr double kClampLo = 0.01;
constexpr double kClampHi = 0.99;

struct Features {
  double x0 = 0, x1 = 0, x2 = 0, rest = 0;
  double cat = 0;  // first categorical level mapped to [-1, 1]
};

double surface_f(const DgpSpec& s, const Features& z) {
  if (s.surface == Surface::linear) return 0.10 * z.x0 + 0.04 * z.x1 - 0.03 * z.x2 + 0.01 * z.rest + 0.02 * z.cat;
  return 0.10 * (z.x0 > 0.3 && z.x1 > 0.0) + 0.05 * z.x0 * z.x2 + 0.04 * std::sin(2.0 * z.x1) +
         0.04 * (z.cat > 0.0) - 0.05 * (z.x2 < -0.8) + 0.01 * z.rest;
}

double trend_g(const DgpSpec& s, const Features& z) {
  if (s.surface == Surface::linear) return s.trend;
  return s.trend + 0.10 * (z.x0 > 0.5) - 0.06 * (z.x1 < -0.5 && z.x0 < 0.0) + 0.03 * z.x0 * z.x1;
}

double effect(const DgpSpec& s, const Features& z) {
  return s.effect == EffectMode::constant ? s.tau : s.tau + s.tau_slope * z.x0;
}

}  // namespace

GeneratedData generate(const DgpSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(derive_seed(spec.seed, {0xd9}));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double half_width = std::sqrt(3.0);  // uniform with unit variance

  std::vector<double> cluster_z, cluster_v;
  for (std::size_t g = 0; g < spec.n_clusters; ++g) {
    cluster_z.push_back(normal(rng));
    cluster_v.push_back(normal(rng));
  }

  std::vector<CovariateColumn> columns;
  for (int j = 0; j < spec.p_continuous; ++j) columns.push_back({"x" + std::to_string(j), CovariateKind::continuous, {}});
  for (int k = 0; k < spec.p_categorical; ++k) {
    CovariateColumn c{"g" + std::to_string(k), CovariateKind::categorical, {}};
    for (int l = 0; l < spec.categorical_levels; ++l) c.levels.push_back("L" + std::to_string(l));
    columns.push_back(std::move(c));
  }
  if (spec.periods > 1) {
    CovariateColumn c{"analysis_period", CovariateKind::categorical, {}};
    for (int q = 0; q < spec.periods; ++q) c.levels.push_back("P" + std::to_string(q + 1));
    columns.push_back(std::move(c));
  }

  GeneratedData g;
  g.schema = EncodingSchema(std::move(columns));
  g.tau = spec.tau;
  const auto n = spec.n;
  g.rows.reserve(n);
  g.y0.resize(n);
  g.y1.resize(n);
  g.p0.resize(n);
  g.p1.resize(n);
  g.tau_x.resize(n);
  g.mu_true.resize(static_cast<Eigen::Index>(n), 4);
  g.rho_true.resize(static_cast<Eigen::Index>(n), 4);

  const int width = spec.n_clusters > 0 ? static_cast<int>(std::to_string(spec.n_clusters).size()) : 0;
  std::size_t escaped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Observation obs;
    obs.id = i;
    Features z;
    for (int j = 0; j < spec.p_continuous; ++j) {
      const double x = (2.0 * unif(rng) - 1.0) * half_width;
      obs.covariates.emplace_back(x);
      if (j == 0) z.x0 = x;
      else if (j == 1) z.x1 = x;
      else if (j == 2) z.x2 = x;
      else z.rest += x;
    }
    for (int k = 0; k < spec.p_categorical; ++k) {
      const int l = std::min(spec.categorical_levels - 1, static_cast<int>(unif(rng) * spec.categorical_levels));
      obs.covariates.emplace_back("L" + std::to_string(l));
      if (k == 0) z.cat = 2.0 * l / (spec.categorical_levels - 1) - 1.0;
    }
    int period = 0;
    if (spec.periods > 1) {
      period = std::min(spec.periods - 1, static_cast<int>(unif(rng) * spec.periods));
      obs.covariates.emplace_back("P" + std::to_string(period + 1));
    }
    double cz = 0.0, cv = 0.0;
    if (spec.n_clusters > 0) {
      const auto c = std::min(spec.n_clusters - 1, static_cast<std::size_t>(unif(rng) * static_cast<double>(spec.n_clusters)));
      cz = cluster_z[c];
      cv = cluster_v[c];
      char buf[32];
      std::snprintf(buf, sizeof buf, "C%0*zu", width, c + 1);
      obs.cluster = buf;
    } else {
      obs.cluster = "r" + std::to_string(i);
    }

    // cell probabilities
    const double s = spec.assignment_strength;
    const double eta_d = s * (0.8 * z.x0 + 0.4 * z.cat) + spec.cluster_assignment * cz;
    const double eta_t = s * (0.5 * z.x1 - 0.4 * z.x2);
    // composition of the treated group drifts between periods
    const double eta_dt = s * (0.8 * z.x0 - 0.4 * z.x1);
    std::array<double, 4> rho{};
    if (spec.controls_only) {
      const double pt = 1.0 / (1.0 + std::exp(-eta_t));
      const double f = spec.propensity_floor;
      rho = {f + (1.0 - 2.0 * f) * (1.0 - pt), f + (1.0 - 2.0 * f) * pt, 0.0, 0.0};
    } else {
      std::array<double, 4> e{1.0, std::exp(eta_t), std::exp(eta_d), std::exp(eta_d + eta_t + eta_dt)};
      const double tot = e[0] + e[1] + e[2] + e[3];
      const double f = spec.propensity_floor;
      for (int c = 0; c < 4; ++c) rho[c] = f + (1.0 - 4.0 * f) * e[c] / tot;
    }
    const double u_cell = unif(rng);
    int cell = 0;
    for (double acc = rho[0]; cell < 3 && u_cell >= acc; acc += rho[++cell]) {
    }
    obs.d = cell_d(cell);
    obs.t = cell_t(cell);

    const double f = surface_f(spec, z);
    const double gx = trend_g(spec, z);
    const double tx = effect(spec, z);
    const double shift = 0.01 * period;
    for (int c = 0; c < 4; ++c) {
      g.rho_true(static_cast<Eigen::Index>(i), c) = rho[c];
      g.mu_true(static_cast<Eigen::Index>(i), c) = spec.base_rate + shift + f + cell_t(c) * gx + (c == kTreatedPost ? tx : 0.0);
    }

    double p0 = spec.base_rate + shift + f + obs.t * gx + spec.cluster_sd * cz + obs.t * spec.cluster_trend_sd * cv;
    double p1 = obs.t == 1 ? p0 + tx : p0;
    if (p0 < kClampLo || p0 > kClampHi || p1 < kClampLo || p1 > kClampHi) ++escaped;
    p0 = std::clamp(p0, kClampLo, kClampHi);
    p1 = std::clamp(p1, kClampLo, kClampHi);
    const double u = unif(rng);
    g.p0[i] = p0;
    g.p1[i] = p1;
    g.y0[i] = u < p0 ? 1.0 : 0.0;
    g.y1[i] = u < p1 ? 1.0 : 0.0;
    g.tau_x[i] = tx;
    obs.y = obs.d == 1 ? g.y1[i] : g.y0[i];
    g.rows.push_back(std::move(obs));
  }
  g.n_clamped = escaped;
  if (static_cast<double>(escaped) > spec.max_clamp_fraction * static_cast<double>(n))
    throw std::invalid_argument("infeasible dgp: " + std::to_string(escaped) + " of " + std::to_string(n) +
                                " outcome probabilities escaped [0.01, 0.99]");
  return g;
}

RepeatedCrossSection GeneratedData::dataset() const { return RepeatedCrossSection(schema, rows, true); }

NuisancePredictions GeneratedData::true_nuisances() const {
  NuisancePredictions np;
  np.mu = mu_true;
  np.rho = rho_true;
  std::size_t n11 = 0;
  for (const auto& r : rows) n11 += (r.d == 1 && r.t == 1);
  np.pi = static_cast<double>(n11) / static_cast<double>(rows.size());
  return np;
}

double oracle_atet(const GeneratedData& g, OracleMode mode) {
  if (g.y0.size() != g.rows.size() || g.y1.size() != g.rows.size())
    throw std::invalid_argument("potential outcomes missing");
  double s = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    if (g.rows[i].d != 1 || g.rows[i].t != 1) continue;
    s += mode == OracleMode::realized ? g.y1[i] - g.y0[i] : g.p1[i] - g.p0[i];
    ++m;
  }
  if (m == 0) throw std::invalid_argument("no (1,1) rows");
  return s / static_cast<double>(m);
}

void write_generated_csv(std::ostream& out, const GeneratedData& g) {
  out << "id,y,d,t,cluster";
  for (const auto& c : g.schema.columns()) out << ',' << c.name;
  out << ",y0,y1\n";
  char buf[64];
  for (std::size_t i = 0; i < g.rows.size(); ++i) {
    const auto& r = g.rows[i];
    out << r.id << ',' << r.y << ',' << r.d << ',' << r.t << ',' << r.cluster;
    for (const auto& v : r.covariates) {
      if (const double* x = std::get_if<double>(&v)) {
        std::snprintf(buf, sizeof buf, "%.17g", *x);
        out << ',' << buf;
      } else {
        out << ',' << std::get<std::string>(v);
      }
    }
    out << ',' << g.y0[i] << ',' << g.y1[i] << '\n';
  }
}

LoadConfig generated_load_config(const DgpSpec& spec) {
  LoadConfig c;
  c.outcome = "y";
  c.treatment = "d";
  c.period = "t";
  c.cluster = "cluster";
  c.id = "id";
  c.binary_outcome = true;
  for (int j = 0; j < spec.p_continuous; ++j) c.continuous.push_back("x" + std::to_string(j));
  for (int k = 0; k < spec.p_categorical; ++k) c.categorical.push_back("g" + std::to_string(k));
  if (spec.periods > 1) c.categorical.push_back("analysis_period");
  return c;
}

SimulationSummary simulate(const SimulationConfig& config) {
  if (config.replications < 2) throw std::invalid_argument("simulate: need at least 2 replications");
  if (config.dgp.controls_only) throw std::invalid_argument("simulate: controls-only data has no treated cell");
  config.estimator.validate();
  const std::size_t reps = config.replications;
  SimulationSummary s;
  s.replications = reps;
  s.estimates.resize(reps);
  s.ses.resize(reps);
  s.targets.resize(reps);
  std::vector<char> covered(reps);
  parallel_for(reps, config.threads, [&](std::size_t r) {
    DgpSpec dgp = config.dgp;
    dgp.seed = derive_seed(config.dgp.seed, {r});
    GeneratedData g = generate(dgp);
    RepeatedCrossSection data = g.dataset();
    const double target =
        dgp.effect == EffectMode::constant ? dgp.tau : oracle_atet(g, OracleMode::probability);
    double est = 0.0, se = 0.0;
    std::array<double, 2> ci{};
    if (config.method == SimEstimator::diddml) {
      EstimatorConfig ec = config.estimator;
      ec.seed = derive_seed(config.estimator.seed, {r});
      ec.threads = 1;
      AtetEstimate a = estimate_atet(data, ec);
      est = a.atet;
      se = a.se;
      ci = a.ci95;
    } else {
      TwfeSpec ts;
      for (const auto& c : data.schema().columns()) ts.covariates.push_back(c.name);
      ts.cluster = config.estimator.cluster;
      TwfeResult t = fit_twfe(data, ts);
      est = t.theta;
      se = t.se;
      ci = t.ci95;
    }
    s.estimates[r] = est;
    s.ses[r] = se;
    s.targets[r] = target;
    covered[r] = ci[0] <= target && target <= ci[1];
  });
  s.covered.assign(covered.begin(), covered.end());
  s.target = stats::mean(s.targets);
  s.mean_estimate = stats::mean(s.estimates);
  s.bias = s.mean_estimate - s.target;
  s.sd = stats::sample_sd(s.estimates);
  s.mean_se = stats::mean(s.ses);
  s.coverage = static_cast<double>(std::count(covered.begin(), covered.end(), 1)) / static_cast<double>(reps);
  return s;
}

}  // namespace diddml
