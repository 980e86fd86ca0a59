#include "diddml/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "diddml/csv.hpp"

namespace diddml {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; }))
      throw std::invalid_argument(where + ": unknown key " + k);
  }
}

json ci_json(const std::array<double, 2>& ci) { return json::array({ci[0], ci[1]}); }

}  // namespace

json to_json(const ForestConfig& c) {
  json j{{"n_trees", c.n_trees},   {"mtry", c.mtry},         {"min_leaf", c.min_leaf},
         {"subsample_fraction", c.subsample_fraction}, {"max_bins", c.max_bins}};
  j["max_depth"] = c.max_depth ? json(*c.max_depth) : json(nullptr);
  return j;
}

ForestConfig forest_config_from_json(const json& j, const ForestConfig& defaults) {
  reject_unknown(j, {"n_trees", "mtry", "min_leaf", "subsample_fraction", "max_depth", "max_bins"}, "forest");
  ForestConfig c = defaults;
  read_opt(j, "n_trees", c.n_trees);
  read_opt(j, "mtry", c.mtry);
  read_opt(j, "min_leaf", c.min_leaf);
  read_opt(j, "subsample_fraction", c.subsample_fraction);
  read_opt(j, "max_bins", c.max_bins);
  if (j.contains("max_depth")) {
    if (j["max_depth"].is_null()) c.max_depth.reset();
    else c.max_depth = j["max_depth"].get<int>();
  }
  c.validate();
  return c;
}

json to_json(const EstimatorConfig& c) {
  return json{{"folds", c.folds},
              {"seed", c.seed},
              {"trim_threshold", c.trim_threshold},
              {"cluster", c.cluster},
              {"pi_before_trim", c.pi_before_trim},
              {"support_tolerance", c.support_tolerance},
              {"outcome_forest", to_json(c.learners.outcome)},
              {"propensity_forest", to_json(c.learners.propensity)}};
}

EstimatorConfig estimator_config_from_json(const json& j, const EstimatorConfig& defaults) {
  reject_unknown(j,
                 {"folds", "seed", "trim_threshold", "cluster", "pi_before_trim", "support_tolerance", "outcome_forest",
                  "propensity_forest"},
                 "diddml");
  EstimatorConfig c = defaults;
  read_opt(j, "folds", c.folds);
  read_opt(j, "seed", c.seed);
  read_opt(j, "trim_threshold", c.trim_threshold);
  read_opt(j, "cluster", c.cluster);
  read_opt(j, "pi_before_trim", c.pi_before_trim);
  read_opt(j, "support_tolerance", c.support_tolerance);
  if (j.contains("outcome_forest")) c.learners.outcome = forest_config_from_json(j["outcome_forest"], c.learners.outcome);
  if (j.contains("propensity_forest"))
    c.learners.propensity = forest_config_from_json(j["propensity_forest"], c.learners.propensity);
  c.validate();
  return c;
}

json to_json(const DgpSpec& s) {
  return json{{"n", s.n},
              {"n_clusters", s.n_clusters},
              {"p_continuous", s.p_continuous},
              {"p_categorical", s.p_categorical},
              {"categorical_levels", s.categorical_levels},
              {"assignment_strength", s.assignment_strength},
              {"propensity_floor", s.propensity_floor},
              {"surface", to_string(s.surface)},
              {"base_rate", s.base_rate},
              {"trend", s.trend},
              {"tau", s.tau},
              {"effect", to_string(s.effect)},
              {"tau_slope", s.tau_slope},
              {"cluster_sd", s.cluster_sd},
              {"cluster_trend_sd", s.cluster_trend_sd},
              {"cluster_assignment", s.cluster_assignment},
              {"max_clamp_fraction", s.max_clamp_fraction},
              {"controls_only", s.controls_only},
              {"periods", s.periods},
              {"seed", s.seed}};
}

DgpSpec dgp_spec_from_json(const json& j, const DgpSpec& defaults) {
  reject_unknown(j,
                 {"n", "n_clusters", "p_continuous", "p_categorical", "categorical_levels", "assignment_strength",
                  "propensity_floor", "surface", "base_rate", "trend", "tau", "effect", "tau_slope", "cluster_sd",
                  "cluster_trend_sd", "cluster_assignment", "max_clamp_fraction", "controls_only", "periods", "seed"},
                 "dgp");
  DgpSpec s = defaults;
  read_opt(j, "n", s.n);
  read_opt(j, "n_clusters", s.n_clusters);
  read_opt(j, "p_continuous", s.p_continuous);
  read_opt(j, "p_categorical", s.p_categorical);
  read_opt(j, "categorical_levels", s.categorical_levels);
  read_opt(j, "assignment_strength", s.assignment_strength);
  read_opt(j, "propensity_floor", s.propensity_floor);
  if (j.contains("surface")) s.surface = parse_surface(j["surface"].get<std::string>());
  read_opt(j, "base_rate", s.base_rate);
  read_opt(j, "trend", s.trend);
  read_opt(j, "tau", s.tau);
  if (j.contains("effect")) s.effect = parse_effect(j["effect"].get<std::string>());
  read_opt(j, "tau_slope", s.tau_slope);
  read_opt(j, "cluster_sd", s.cluster_sd);
  read_opt(j, "cluster_trend_sd", s.cluster_trend_sd);
  read_opt(j, "cluster_assignment", s.cluster_assignment);
  read_opt(j, "max_clamp_fraction", s.max_clamp_fraction);
  read_opt(j, "controls_only", s.controls_only);
  read_opt(j, "periods", s.periods);
  read_opt(j, "seed", s.seed);
  s.validate();
  return s;
}

json to_json(const SupportReport& s) {
  static const char* names[4] = {"control_pre", "control_post", "treated_pre", "treated_post"};
  json cells = json::object();
  for (int c = 0; c < 4; ++c) {
    const auto& cs = s.cells[static_cast<std::size_t>(c)];
    json q = json::array();
    for (double v : cs.quantiles) q.push_back(std::isnan(v) ? json(nullptr) : json(v));
    cells[names[c]] = {{"count", cs.count}, {"quantiles", q}, {"histogram", cs.histogram}};
  }
  return json{{"quantile_levels", s.quantile_levels},
              {"bin_edges", s.bin_edges},
              {"cells", cells},
              {"uncovered_mass", {{"control_pre", s.uncovered_mass[0]},
                                  {"control_post", s.uncovered_mass[1]},
                                  {"treated_pre", s.uncovered_mass[2]}}},
              {"tolerance", s.tolerance},
              {"violation", s.violation}};
}

json estimate_record(const std::string& label, const AtetEstimate& e, const EstimatorConfig& config) {
  return json{{"schema_version", kSchemaVersion},
              {"kind", "estimate"},
              {"label", label},
              {"estimator", "diddml"},
              {"atet", e.atet},
              {"se", e.se},
              {"p_value", e.p_value},
              {"ci95", ci_json(e.ci95)},
              {"n", e.n},
              {"n_used", e.n_used},
              {"n_trimmed", e.n_trimmed},
              {"n_clusters", e.n_clusters},
              {"clustered", e.clustered},
              {"pi", e.pi},
              {"cell_counts", e.cell_counts},
              {"folds", config.folds},
              {"seed", config.seed},
              {"config", to_json(config)},
              {"diagnostics", {{"support", to_json(e.support)}, {"warnings", e.warnings}}}};
}

json estimate_record(const std::string& label, const TwfeResult& r, const TwfeSpec& spec) {
  json coefs = json::array();
  for (std::size_t k = 0; k < r.fit.names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    coefs.push_back({{"name", r.fit.names[k]}, {"coef", r.fit.coef(i)}, {"se", std::sqrt(r.vcov(i, i))}});
  }
  return json{{"schema_version", kSchemaVersion},
              {"kind", "estimate"},
              {"label", label},
              {"estimator", spec.mode == TreatmentMode::binary ? "twfe_binary" : "twfe_continuous"},
              {"atet", r.theta},
              {"se", r.se},
              {"p_value", r.p_value},
              {"ci95", ci_json(r.ci95)},
              {"n", r.fit.n},
              {"n_used", r.fit.n},
              {"n_trimmed", 0},
              {"n_clusters", r.n_clusters},
              {"clustered", r.clustered},
              {"treatment_column", r.fit.names[r.theta_index]},
              {"country_fe", spec.country_fe},
              {"year_fe", spec.year_fe},
              {"covariates", spec.covariates},
              {"coefficients", coefs}};
}

json to_json(const PlaceboResult& r) {
  json units = json::array();
  for (const auto& u : r.units)
    units.push_back({{"cluster", u.cluster},
                     {"period", u.period},
                     {"n_rows", u.n_rows},
                     {"atet", u.estimate.atet},
                     {"se", u.estimate.se},
                     {"p_value", u.estimate.p_value}});
  return json{{"schema_version", kSchemaVersion},
              {"kind", "placebo"},
              {"units", units},
              {"skipped", r.skipped},
              {"mean", r.mean},
              {"pooling", r.pooling == PlaceboPooling::t_test ? "t_test" : "influence"},
              {"se", r.se},
              {"p_value", r.p_value},
              {"t_test", {{"se", r.se_t_test}, {"p_value", r.p_t_test}}},
              {"influence", {{"se", r.se_influence}, {"p_value", r.p_influence}}},
              {"histogram", {{"bin_edges", r.bin_edges}, {"counts", r.histogram}}}};
}

json to_json(const SubgroupGrid& g) {
  json cells = json::array();
  for (const auto& c : g.cells) {
    json j{{"name", c.name}, {"feasible", c.feasible}, {"n_rows", c.n_rows}};
    if (c.feasible) {
      j["atet"] = c.estimate.atet;
      j["se"] = c.estimate.se;
      j["p_value"] = c.estimate.p_value;
      j["p_adjusted"] = c.p_adjusted;
      j["ci95"] = ci_json(c.estimate.ci95);
      j["n_trimmed"] = c.estimate.n_trimmed;
    } else {
      j["error"] = c.error;
    }
    cells.push_back(std::move(j));
  }
  return json{{"family", g.family}, {"cells", cells}};
}

json to_json(const SimulationSummary& s) {
  return json{{"schema_version", kSchemaVersion},
              {"kind", "simulation"},
              {"replications", s.replications},
              {"target", s.target},
              {"mean_estimate", s.mean_estimate},
              {"bias", s.bias},
              {"sd", s.sd},
              {"mean_se", s.mean_se},
              {"coverage", s.coverage},
              {"estimates", s.estimates},
              {"ses", s.ses}};
}

void write_estimates_csv(std::ostream& out, const std::vector<json>& records) {
  out << "label,estimator,atet,se,p_value,ci_low,ci_high,n,n_trimmed\n";
  for (const auto& r : records) {
    out << csv::escape(r.at("label").get<std::string>()) << ',' << r.value("estimator", "") << ','
        << format_double(r.at("atet").get<double>()) << ',' << format_double(r.at("se").get<double>()) << ','
        << format_double(r.at("p_value").get<double>()) << ',' << format_double(r.at("ci95")[0].get<double>()) << ','
        << format_double(r.at("ci95")[1].get<double>()) << ',' << r.at("n").get<std::size_t>() << ','
        << r.at("n_trimmed").get<std::size_t>() << '\n';
  }
}

void write_placebo_histogram_csv(std::ostream& out, const PlaceboResult& r) {
  out << "bin_low,bin_high,count\n";
  for (std::size_t b = 0; b < r.histogram.size(); ++b)
    out << format_double(r.bin_edges[b]) << ',' << format_double(r.bin_edges[b + 1]) << ',' << r.histogram[b] << '\n';
}

void write_subgroups_csv(std::ostream& out, const std::vector<SubgroupGrid>& grids) {
  out << "family,subgroup,feasible,atet,se,p_value,p_adjusted,n\n";
  for (const auto& g : grids)
    for (const auto& c : g.cells) {
      out << csv::escape(g.family) << ',' << csv::escape(c.name) << ',' << (c.feasible ? 1 : 0) << ',';
      if (c.feasible)
        out << format_double(c.estimate.atet) << ',' << format_double(c.estimate.se) << ','
            << format_double(c.estimate.p_value) << ',' << format_double(c.p_adjusted) << ',' << c.n_rows << '\n';
      else
        out << ",,,," << c.n_rows << '\n';
    }
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace

std::string render_error_bars_svg(const std::vector<PlotPoint>& points, const std::string& title) {
  const double left = 180, right = 30, top = 50, row_h = 36, bottom = 50, plot_w = 420;
  const double height = top + bottom + row_h * static_cast<double>(std::max<std::size_t>(points.size(), 1));
  const double width = left + plot_w + right;
  double lo = 0.0, hi = 0.0;
  for (const auto& p : points) {
    lo = std::min({lo, p.lo, p.estimate});
    hi = std::max({hi, p.hi, p.estimate});
  }
  if (hi - lo < 1e-12) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  auto sx = [&](double v) { return left + (v - lo) / (hi - lo) * plot_w; };

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" data-x-min=\"" << format_double(lo) << "\" data-x-max=\"" << format_double(hi) << "\" data-plot-left=\""
    << left << "\" data-plot-width=\"" << plot_w << "\">\n";
  o << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
    << xml_escape(title) << "</text>\n";
  const double axis_y = height - bottom + 10;
  o << "<line x1=\"" << sx(0.0) << "\" y1=\"" << top - 10 << "\" x2=\"" << sx(0.0) << "\" y2=\"" << axis_y
    << "\" stroke=\"#999\" stroke-dasharray=\"4,3\"/>\n";
  o << "<line x1=\"" << left << "\" y1=\"" << axis_y << "\" x2=\"" << left + plot_w << "\" y2=\"" << axis_y
    << "\" stroke=\"#333\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    o << "<text x=\"" << sx(v) << "\" y=\"" << axis_y + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << format_double(std::round(v * 1e4) / 1e4)
      << "</text>\n";
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const double y = top + row_h * (static_cast<double>(i) + 0.5);
    o << "<g class=\"estimate\" data-label=\"" << xml_escape(p.label) << "\" data-estimate=\"" << format_double(p.estimate)
      << "\" data-lo=\"" << format_double(p.lo) << "\" data-hi=\"" << format_double(p.hi) << "\">\n";
    o << "  <text x=\"" << left - 8 << "\" y=\"" << y + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(p.label) << "</text>\n";
    o << "  <line x1=\"" << sx(p.lo) << "\" y1=\"" << y << "\" x2=\"" << sx(p.hi) << "\" y2=\"" << y
      << "\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n";
    o << "  <line x1=\"" << sx(p.lo) << "\" y1=\"" << y - 6 << "\" x2=\"" << sx(p.lo) << "\" y2=\"" << y + 6
      << "\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n";
    o << "  <line x1=\"" << sx(p.hi) << "\" y1=\"" << y - 6 << "\" x2=\"" << sx(p.hi) << "\" y2=\"" << y + 6
      << "\" stroke=\"#1f4e79\" stroke-width=\"2\"/>\n";
    o << "  <circle cx=\"" << sx(p.estimate) << "\" cy=\"" << y << "\" r=\"4\" fill=\"#1f4e79\"/>\n";
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::vector<json> collect_estimate_records(const json& doc) {
  std::vector<json> out;
  if (!doc.is_object()) return out;
  const std::string kind = doc.value("kind", "");
  if (kind == "estimate") out.push_back(doc);
  if (kind == "estimate_table" && doc.contains("estimates"))
    for (const auto& r : doc["estimates"])
      if (r.is_object() && r.value("kind", "") == "estimate") out.push_back(r);
  return out;
}

}  // namespace diddml
