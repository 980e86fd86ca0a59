#include "diddml/twfe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "diddml/estimator.hpp"
#include "diddml/stats.hpp"

namespace diddml {

std::size_t OlsFit::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("no coefficient named " + name);
  return static_cast<std::size_t>(it - names.begin());
}

OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::vector<std::string> names) {
  if (x.rows() != y.size()) throw std::invalid_argument("ols: X and y lengths differ");
  if (static_cast<std::size_t>(x.cols()) != names.size()) throw std::invalid_argument("ols: names do not match columns");
  if (x.rows() <= x.cols()) throw RankDeficientError("ols: more columns than rows", {});
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  qr.setThreshold(1e-10);
  const auto k = x.cols();
  if (qr.rank() < k) {
    std::vector<std::string> bad;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index j = qr.rank(); j < k; ++j) bad.push_back(names[static_cast<std::size_t>(perm(j))]);
    std::string msg = "rank-deficient design; collinear columns:";
    for (const auto& b : bad) msg += " " + b;
    throw RankDeficientError(msg, bad);
  }
  OlsFit fit;
  fit.coef = qr.solve(y);
  fit.residuals = y - x * fit.coef;
  fit.names = std::move(names);
  fit.design = x;
  fit.n = static_cast<std::size_t>(x.rows());
  fit.rank = static_cast<std::size_t>(qr.rank());
  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd inner = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  fit.xtx_inv = perm * inner * perm.transpose();
  return fit;
}

Eigen::MatrixXd robust_vcov(const OlsFit& fit) {
  const Eigen::MatrixXd scores = fit.design.array().colwise() * fit.residuals.array();
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  return fit.xtx_inv * meat * fit.xtx_inv;
}

double cr1_factor(std::size_t n, std::size_t k, std::size_t clusters) {
  const double g = static_cast<double>(clusters);
  return g / (g - 1.0) * (static_cast<double>(n) - 1.0) / (static_cast<double>(n) - static_cast<double>(k));
}

Eigen::MatrixXd cluster_robust_vcov(const OlsFit& fit, std::span<const std::string> clusters) {
  if (clusters.size() != fit.n) throw std::invalid_argument("cluster ids do not match the fit");
  std::map<std::string_view, Eigen::Index> id;
  for (const auto& c : clusters) id.emplace(c, 0);
  if (id.size() < 2) throw EstimationError("cluster-robust variance needs at least 2 clusters");
  Eigen::Index next = 0;
  for (auto& [label, idx] : id) idx = next++;
  const auto k = fit.design.cols();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(id.size()), k);
  for (std::size_t i = 0; i < fit.n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    sums.row(id[clusters[i]]) += fit.design.row(row) * fit.residuals(row);
  }
  const Eigen::MatrixXd meat = sums.transpose() * sums;
  if (!fit.xtx_inv.allFinite()) throw EstimationError("singular bread matrix");
  return cr1_factor(fit.n, static_cast<std::size_t>(k), id.size()) * (fit.xtx_inv * meat * fit.xtx_inv);
}

namespace {

double continuous_value(const Observation& r, const EncodingSchema& schema, const std::string& column) {
  auto idx = schema.index_of(column);
  if (!idx) throw DataError("unknown covariate: " + column);
  const double* v = std::get_if<double>(&r.covariates[*idx]);
  if (!v) throw DataError("covariate " + column + " is not continuous");
  return *v;
}

// Time cell label: t, or (period, t) when a stacking covariate is named.
std::string time_label(const Observation& r, const EncodingSchema& schema, const std::string& period_covariate) {
  std::string label = "t=" + std::to_string(r.t);
  if (!period_covariate.empty()) {
    auto idx = schema.index_of(period_covariate);
    if (!idx) throw DataError("unknown period covariate: " + period_covariate);
    label = format_raw(r.covariates[*idx]) + "/" + label;
  }
  return label;
}

std::vector<std::string> effective_covariates(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  std::vector<std::string> cov = spec.covariates;
  if (spec.include_history && !spec.history_column.empty() &&
      std::find(cov.begin(), cov.end(), spec.history_column) == cov.end()) {
    if (!data.schema().index_of(spec.history_column)) throw DataError("unknown history covariate: " + spec.history_column);
    cov.push_back(spec.history_column);
  }
  return cov;
}

struct Regressors {
  Eigen::MatrixXd x;  // without intercept and fixed effects
  std::vector<std::string> names;
};

Regressors core_regressors(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  if (spec.mode == TreatmentMode::continuous && spec.policy_column.empty())
    throw std::invalid_argument("continuous treatment needs a policy-level column");
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<std::string> names;
  std::vector<Eigen::VectorXd> cols;
  Eigen::VectorXd col(n);
  if (spec.mode == TreatmentMode::binary) {
    for (Eigen::Index i = 0; i < n; ++i) col(i) = data[static_cast<std::size_t>(i)].d * data[static_cast<std::size_t>(i)].t;
    names.push_back("treated_post");
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      col(i) = continuous_value(data[static_cast<std::size_t>(i)], data.schema(), spec.policy_column);
    names.push_back(spec.policy_column);
  }
  cols.push_back(col);
  if (spec.mode == TreatmentMode::binary && !spec.country_fe) {
    for (Eigen::Index i = 0; i < n; ++i) col(i) = data[static_cast<std::size_t>(i)].d;
    names.push_back("treated");
    cols.push_back(col);
  }
  if (!spec.year_fe) {
    for (Eigen::Index i = 0; i < n; ++i) col(i) = data[static_cast<std::size_t>(i)].t;
    names.push_back("post");
    cols.push_back(col);
  }
  std::vector<std::string> cov = effective_covariates(data, spec);
  Eigen::MatrixXd xc;
  std::vector<std::string> cov_names;
  if (!cov.empty()) {
    RepeatedCrossSection sub = data.with_covariates(cov);
    xc = sub.design(EncodingVariant::drop_first);
    cov_names = sub.schema().column_names(EncodingVariant::drop_first);
  }
  Regressors out;
  out.x.resize(n, static_cast<Eigen::Index>(cols.size()) + xc.cols());
  for (std::size_t j = 0; j < cols.size(); ++j) out.x.col(static_cast<Eigen::Index>(j)) = cols[j];
  if (xc.cols() > 0) out.x.rightCols(xc.cols()) = xc;
  out.names = names;
  out.names.insert(out.names.end(), cov_names.begin(), cov_names.end());
  return out;
}

std::vector<int> group_codes(const std::vector<std::string>& labels, std::vector<std::string>* levels) {
  std::set<std::string> s(labels.begin(), labels.end());
  std::vector<std::string> lv(s.begin(), s.end());
  std::vector<int> codes(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    codes[i] = static_cast<int>(std::lower_bound(lv.begin(), lv.end(), labels[i]) - lv.begin());
  if (levels) *levels = lv;
  return codes;
}

std::vector<std::string> country_labels(const RepeatedCrossSection& data) {
  std::vector<std::string> out;
  for (const auto& r : data.rows()) out.push_back(r.cluster);
  return out;
}

std::vector<std::string> time_labels(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  std::vector<std::string> out;
  for (const auto& r : data.rows()) out.push_back(time_label(r, data.schema(), spec.period_covariate));
  return out;
}

void demean_by(Eigen::MatrixXd& m, const std::vector<int>& codes, int groups) {
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(groups, m.cols());
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(groups);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    sums.row(codes[i]) += m.row(static_cast<Eigen::Index>(i));
    counts(codes[i]) += 1.0;
  }
  for (int g = 0; g < groups; ++g) sums.row(g) /= counts(g);
  for (std::size_t i = 0; i < codes.size(); ++i) m.row(static_cast<Eigen::Index>(i)) -= sums.row(codes[i]);
}

}  // namespace

TwfeDesign twfe_design(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  Regressors core = core_regressors(data, spec);
  const auto n = static_cast<Eigen::Index>(data.size());
  std::vector<std::string> names{"(Intercept)"};
  names.insert(names.end(), core.names.begin(), core.names.end());
  std::vector<Eigen::VectorXd> fe_cols;
  auto add_fe = [&](const std::vector<std::string>& labels, const std::string& prefix) {
    std::vector<std::string> levels;
    std::vector<int> codes = group_codes(labels, &levels);
    for (std::size_t l = 1; l < levels.size(); ++l) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(n);
      for (std::size_t i = 0; i < codes.size(); ++i)
        if (codes[i] == static_cast<int>(l)) c(static_cast<Eigen::Index>(i)) = 1.0;
      fe_cols.push_back(c);
      names.push_back(prefix + levels[l]);
    }
  };
  if (spec.country_fe) add_fe(country_labels(data), "country=");
  if (spec.year_fe) add_fe(time_labels(data, spec), "time=");

  TwfeDesign d;
  d.x.resize(n, 1 + core.x.cols() + static_cast<Eigen::Index>(fe_cols.size()));
  d.x.col(0).setOnes();
  d.x.middleCols(1, core.x.cols()) = core.x;
  for (std::size_t j = 0; j < fe_cols.size(); ++j) d.x.col(1 + core.x.cols() + static_cast<Eigen::Index>(j)) = fe_cols[j];
  d.names = std::move(names);
  d.theta_index = 1;
  return d;
}

TwfeResult fit_twfe(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  TwfeDesign design = twfe_design(data, spec);
  TwfeResult res;
  res.fit = ols(design.x, data.outcome(), design.names);
  res.theta_index = design.theta_index;
  res.theta = res.fit.coef(static_cast<Eigen::Index>(res.theta_index));
  std::vector<std::string> clusters = country_labels(data);
  res.clustered = spec.cluster;
  res.n_clusters = data.cluster_count();
  if (spec.cluster) {
    if (res.n_clusters < 2) throw EstimationError("clustered inference needs at least 2 clusters");
    res.vcov = cluster_robust_vcov(res.fit, clusters);
  } else {
    const double n = static_cast<double>(res.fit.n);
    const double k = static_cast<double>(res.fit.rank);
    res.vcov = robust_vcov(res.fit) * (n / (n - k));
  }
  const auto t = static_cast<Eigen::Index>(res.theta_index);
  res.se = std::sqrt(res.vcov(t, t));
  res.p_value = res.se > 0 ? stats::normal_p_value(res.theta / res.se) : 1.0;
  res.ci95 = {res.theta - stats::z975 * res.se, res.theta + stats::z975 * res.se};
  return res;
}

double twfe_theta_within(const RepeatedCrossSection& data, const TwfeSpec& spec) {
  Regressors core = core_regressors(data, spec);
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd m(n, core.x.cols() + 1);
  m.leftCols(core.x.cols()) = core.x;
  m.col(core.x.cols()) = data.outcome();

  std::vector<std::vector<int>> groupings;
  std::vector<int> sizes;
  auto add = [&](const std::vector<std::string>& labels) {
    std::vector<std::string> levels;
    groupings.push_back(group_codes(labels, &levels));
    sizes.push_back(static_cast<int>(levels.size()));
  };
  if (spec.country_fe) add(country_labels(data));
  if (spec.year_fe) add(time_labels(data, spec));
  if (groupings.empty()) {
    groupings.emplace_back(static_cast<std::size_t>(n), 0);
    sizes.push_back(1);
  }

  if (groupings.size() == 1) {
    demean_by(m, groupings[0], sizes[0]);
  } else {
    for (int iter = 0; iter < 100000; ++iter) {
      Eigen::MatrixXd before = m;
      for (std::size_t g = 0; g < groupings.size(); ++g) demean_by(m, groupings[g], sizes[g]);
      if ((m - before).cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + m.cwiseAbs().maxCoeff())) break;
    }
  }
  const Eigen::MatrixXd xr = m.leftCols(core.x.cols());
  const Eigen::VectorXd yr = m.col(core.x.cols());
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xr);
  qr.setThreshold(1e-10);
  if (qr.rank() < xr.cols()) throw RankDeficientError("within design is rank-deficient", {});
  const Eigen::VectorXd b = qr.solve(yr);
  return b(0);
}

}  // namespace diddml
