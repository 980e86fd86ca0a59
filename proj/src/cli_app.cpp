#include "diddml/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "diddml/parallel.hpp"
#include "diddml/report.hpp"

namespace diddml {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* s) { return k == s; }))
      throw std::invalid_argument(where + ": unknown key " + k);
}

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return fs::absolute(path).lexically_normal().string();
}

char delimiter_from(const json& j) {
  if (!j.contains("delimiter")) return ',';
  const auto s = j["delimiter"].get<std::string>();
  if (s.size() != 1) throw std::invalid_argument("delimiter must be a single character");
  return s[0];
}

AssignmentRule rule_from_json(const json& j, AssignmentRule r) {
  check_keys(j, {"treat_threshold_pct", "control_lo_pct", "control_hi_pct", "round_decimals"}, "assignment rule");
  read_opt(j, "treat_threshold_pct", r.treat_threshold_pct);
  read_opt(j, "control_lo_pct", r.control_lo_pct);
  read_opt(j, "control_hi_pct", r.control_hi_pct);
  if (j.contains("round_decimals")) {
    if (j["round_decimals"].is_null()) r.round_decimals.reset();
    else r.round_decimals = j["round_decimals"].get<int>();
  }
  r.validate();
  return r;
}

json rule_to_json(const AssignmentRule& r) {
  return json{{"treat_threshold_pct", r.treat_threshold_pct},
              {"control_lo_pct", r.control_lo_pct},
              {"control_hi_pct", r.control_hi_pct},
              {"round_decimals", r.round_decimals ? json(*r.round_decimals) : json(nullptr)}};
}

SubgroupFilter filter_from_json(const json& j) {
  check_keys(j, {"name", "column", "levels", "lo", "hi"}, "subgroup filter");
  SubgroupFilter f;
  f.name = j.at("name").get<std::string>();
  f.column = j.at("column").get<std::string>();
  read_opt(j, "levels", f.levels);
  if (j.contains("lo") && !j["lo"].is_null()) f.lo = j["lo"].get<double>();
  if (j.contains("hi") && !j["hi"].is_null()) f.hi = j["hi"].get<double>();
  if (f.levels.empty() && !f.lo && !f.hi) throw std::invalid_argument("subgroup " + f.name + ": no levels or bounds");
  return f;
}

json filter_to_json(const SubgroupFilter& f) {
  json j{{"name", f.name}, {"column", f.column}};
  if (!f.levels.empty()) j["levels"] = f.levels;
  j["lo"] = f.lo ? json(*f.lo) : json(nullptr);
  j["hi"] = f.hi ? json(*f.hi) : json(nullptr);
  return j;
}

}  // namespace

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"seed", "threads", "output", "input", "data", "survey", "assignment", "estimator", "diddml", "twfe",
              "covariates", "placebo", "heterogeneity", "simulate"},
             "config");
  RunConfig c;
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
  read_opt(j, "threads", c.threads);
  if (j.contains("output")) c.output = resolve_path(j["output"].get<std::string>(), base_dir);

  if (j.contains("input")) {
    const auto& in = j["input"];
    check_keys(in, {"micro", "policy", "survey"}, "input");
    if (in.contains("micro")) c.micro_path = resolve_path(in["micro"].get<std::string>(), base_dir);
    if (in.contains("policy")) c.policy_path = resolve_path(in["policy"].get<std::string>(), base_dir);
    if (in.contains("survey")) {
      c.survey.emplace();
      c.survey->path = resolve_path(in["survey"].get<std::string>(), base_dir);
    }
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"outcome", "treatment", "period", "cluster", "id", "continuous", "categorical", "delimiter",
                   "binary_outcome"},
               "data");
    read_opt(d, "outcome", c.data.outcome);
    read_opt(d, "treatment", c.data.treatment);
    read_opt(d, "period", c.data.period);
    read_opt(d, "cluster", c.data.cluster);
    read_opt(d, "id", c.data.id);
    read_opt(d, "continuous", c.data.continuous);
    read_opt(d, "categorical", c.data.categorical);
    read_opt(d, "binary_outcome", c.data.binary_outcome);
    c.data.delimiter = delimiter_from(d);
  }
  if (j.contains("survey")) {
    if (!c.survey) throw std::invalid_argument("survey section given without input.survey");
    const auto& s = j["survey"];
    check_keys(s, {"outcome", "country", "year", "continuous", "categorical", "delimiter", "binary_outcome",
                   "period_map", "measure"},
               "survey");
    auto& sc = c.survey->config;
    read_opt(s, "outcome", sc.outcome);
    read_opt(s, "country", sc.country);
    read_opt(s, "year", sc.year);
    read_opt(s, "continuous", sc.continuous);
    read_opt(s, "categorical", sc.categorical);
    read_opt(s, "binary_outcome", sc.binary_outcome);
    sc.delimiter = delimiter_from(s);
    if (s.contains("measure")) c.survey->measure = parse_measure(s["measure"].get<std::string>());
    if (s.contains("period_map"))
      for (const auto& [year, slot] : s["period_map"].items())
        c.survey->period_map[std::stoi(year)] = {slot.at("period").get<std::string>(), slot.at("t").get<int>()};
  } else if (c.survey) {
    throw std::invalid_argument("input.survey needs a survey section");
  }
  if (j.contains("assignment")) {
    const auto& a = j["assignment"];
    check_keys(a, {"price_ppp", "tax_share"}, "assignment");
    if (a.contains("price_ppp")) c.price_rule = rule_from_json(a["price_ppp"], c.price_rule);
    if (a.contains("tax_share")) c.tax_rule = rule_from_json(a["tax_share"], c.tax_rule);
  }
  read_opt(j, "estimator", c.estimator);
  if (c.estimator != "diddml" && c.estimator != "twfe_binary" && c.estimator != "twfe_continuous")
    throw std::invalid_argument("unknown estimator: " + c.estimator);
  if (j.contains("diddml")) c.diddml = estimator_config_from_json(j["diddml"], c.diddml);

  c.twfe.country_fe = true;
  c.twfe.year_fe = true;
  c.twfe.period_covariate = "analysis_period";
  c.twfe.policy_column = "policy_level";
  c.twfe.history_column = "pre_policy_level";
  if (j.contains("twfe")) {
    const auto& t = j["twfe"];
    check_keys(t, {"country_fe", "year_fe", "period_covariate", "policy_column", "history_column", "include_history",
                   "cluster", "rescale_delta"},
               "twfe");
    read_opt(t, "country_fe", c.twfe.country_fe);
    read_opt(t, "year_fe", c.twfe.year_fe);
    read_opt(t, "period_covariate", c.twfe.period_covariate);
    read_opt(t, "policy_column", c.twfe.policy_column);
    read_opt(t, "history_column", c.twfe.history_column);
    read_opt(t, "include_history", c.twfe.include_history);
    read_opt(t, "cluster", c.twfe.cluster);
    if (t.contains("rescale_delta") && !t["rescale_delta"].is_null()) c.rescale_delta = t["rescale_delta"].get<double>();
  }
  c.twfe.mode = c.estimator == "twfe_continuous" ? TreatmentMode::continuous : TreatmentMode::binary;

  if (j.contains("covariates")) {
    const auto& cv = j["covariates"];
    check_keys(cv, {"set", "sets", "robustness"}, "covariates");
    read_opt(cv, "set", c.covariate_set);
    read_opt(cv, "sets", c.covariate_sets);
    read_opt(cv, "robustness", c.robustness_sets);
  }
  if (j.contains("placebo")) {
    const auto& p = j["placebo"];
    check_keys(p, {"pooling", "bins", "period_covariate"}, "placebo");
    if (p.contains("pooling")) {
      const auto s = p["pooling"].get<std::string>();
      if (s == "t_test") c.placebo_pooling = PlaceboPooling::t_test;
      else if (s == "influence") c.placebo_pooling = PlaceboPooling::influence;
      else throw std::invalid_argument("unknown placebo pooling: " + s);
    }
    read_opt(p, "bins", c.placebo_bins);
    read_opt(p, "period_covariate", c.placebo_period_covariate);
  }
  if (j.contains("heterogeneity")) {
    const auto& h = j["heterogeneity"];
    check_keys(h, {"family", "grid", "gender_column", "men", "women", "age_column", "education_column", "filters"},
               "heterogeneity");
    read_opt(h, "family", c.subgroup_family);
    if (h.contains("grid")) {
      if (h["grid"].get<std::string>() != "sociodemographic")
        throw std::invalid_argument("unknown subgroup grid: " + h["grid"].get<std::string>());
      c.subgroups = sociodemographic_grid(h.value("gender_column", "gender"), h.value("men", "man"),
                                          h.value("women", "woman"), h.value("age_column", "age"),
                                          h.value("education_column", "education_age"));
    }
    if (h.contains("filters"))
      for (const auto& f : h["filters"]) c.subgroups.push_back(filter_from_json(f));
  }
  if (j.contains("simulate")) {
    const auto& s = j["simulate"];
    check_keys(s, {"dgp", "replications", "method", "write_data"}, "simulate");
    if (s.contains("dgp")) c.dgp = dgp_spec_from_json(s["dgp"], c.dgp);
    read_opt(s, "replications", c.replications);
    read_opt(s, "write_data", c.write_synthetic_data);
    if (s.contains("method")) {
      const auto m = s["method"].get<std::string>();
      if (m == "diddml") c.sim_method = SimEstimator::diddml;
      else if (m == "twfe_binary") c.sim_method = SimEstimator::twfe_binary;
      else throw std::invalid_argument("unknown simulation method: " + m);
    }
  }
  if (c.seed) {
    c.diddml.seed = *c.seed;
    c.dgp.seed = *c.seed;
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["threads"] = c.threads;
  j["output"] = c.output;
  json in = json::object();
  if (!c.micro_path.empty()) in["micro"] = c.micro_path;
  if (!c.policy_path.empty()) in["policy"] = c.policy_path;
  if (c.survey) in["survey"] = c.survey->path;
  j["input"] = in;
  j["data"] = {{"outcome", c.data.outcome},
               {"treatment", c.data.treatment},
               {"period", c.data.period},
               {"cluster", c.data.cluster},
               {"id", c.data.id},
               {"continuous", c.data.continuous},
               {"categorical", c.data.categorical},
               {"delimiter", std::string(1, c.data.delimiter)},
               {"binary_outcome", c.data.binary_outcome}};
  if (c.survey) {
    const auto& sc = c.survey->config;
    json pm = json::object();
    for (const auto& [year, slot] : c.survey->period_map) pm[std::to_string(year)] = {{"period", slot.period}, {"t", slot.t}};
    j["survey"] = {{"outcome", sc.outcome},
                   {"country", sc.country},
                   {"year", sc.year},
                   {"continuous", sc.continuous},
                   {"categorical", sc.categorical},
                   {"delimiter", std::string(1, sc.delimiter)},
                   {"binary_outcome", sc.binary_outcome},
                   {"period_map", pm},
                   {"measure", to_string(c.survey->measure)}};
  }
  j["assignment"] = {{"price_ppp", rule_to_json(c.price_rule)}, {"tax_share", rule_to_json(c.tax_rule)}};
  j["estimator"] = c.estimator;
  j["diddml"] = to_json(c.diddml);
  j["twfe"] = {{"country_fe", c.twfe.country_fe},
               {"year_fe", c.twfe.year_fe},
               {"period_covariate", c.twfe.period_covariate},
               {"policy_column", c.twfe.policy_column},
               {"history_column", c.twfe.history_column},
               {"include_history", c.twfe.include_history},
               {"cluster", c.twfe.cluster},
               {"rescale_delta", c.rescale_delta ? json(*c.rescale_delta) : json(nullptr)}};
  j["covariates"] = {{"set", c.covariate_set}, {"sets", c.covariate_sets}, {"robustness", c.robustness_sets}};
  j["placebo"] = {{"pooling", c.placebo_pooling == PlaceboPooling::t_test ? "t_test" : "influence"},
                  {"bins", c.placebo_bins},
                  {"period_covariate", c.placebo_period_covariate}};
  json filters = json::array();
  for (const auto& f : c.subgroups) filters.push_back(filter_to_json(f));
  j["heterogeneity"] = {{"family", c.subgroup_family}, {"filters", filters}};
  j["simulate"] = {{"dgp", to_json(c.dgp)},
                   {"replications", c.replications},
                   {"method", c.sim_method == SimEstimator::diddml ? "diddml" : "twfe_binary"},
                   {"write_data", c.write_synthetic_data}};
  return j;
}

RepeatedCrossSection load_dataset(const RunConfig& c, std::ostream& log) {
  if (c.survey) {
    if (c.policy_path.empty()) throw DataError("survey input needs input.policy");
    SurveyTable survey = load_survey_csv(c.survey->path, c.survey->config);
    PolicyPanel panel = load_policy_csv(c.policy_path).only(c.survey->measure);
    const AssignmentRule& rule = c.survey->measure == PolicyMeasure::price_ppp ? c.price_rule : c.tax_rule;
    TreatmentAssignment a = assign(panel, rule);
    JoinResult jr = join(a, survey, c.survey->period_map);
    log << "join: kept " << jr.data.size() << " rows, dropped " << jr.dropped_excluded << " (excluded) and "
        << jr.dropped_unassigned << " (unassigned)\n";
    return std::move(jr.data);
  }
  if (c.micro_path.empty()) throw DataError("no input data: set input.micro or input.survey");
  return load_csv(c.micro_path, c.data);
}

std::vector<std::string> resolve_covariates(const RunConfig& c, const EncodingSchema& schema, const std::string& set) {
  auto it = c.covariate_sets.find(set);
  if (it != c.covariate_sets.end()) {
    for (const auto& n : it->second)
      if (!schema.index_of(n)) throw DataError("covariate set " + set + ": unknown column " + n);
    return it->second;
  }
  if (set != "all") throw DataError("unknown covariate set: " + set);
  std::vector<std::string> out;
  const std::string level = JoinOptions{}.level_covariate;
  for (const auto& col : schema.columns())
    if (!(c.survey && col.name == level)) out.push_back(col.name);
  return out;
}

namespace {

struct Context {
  RunConfig config;
  fs::path out_dir;
  std::ostream& out;
  std::ostream& err;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json two_by_two_json(const RepeatedCrossSection& data) {
  TwoByTwoTable t = two_by_two_table(data);
  return json{{"mean", t.mean},
              {"count", t.count},
              {"treated_change", t.treated_change},
              {"control_change", t.control_change},
              {"raw_did", t.did}};
}

json run_estimate(const RunConfig& c, const RepeatedCrossSection& data, const std::string& set, std::ostream& log) {
  std::vector<std::string> cov = resolve_covariates(c, data.schema(), set);
  const std::string label = c.estimator + " [" + set + "]";
  if (c.estimator == "diddml") {
    if (cov.empty()) throw DataError("the ML estimator needs at least one covariate");
    EstimatorConfig ec = c.diddml;
    ec.threads = c.threads;
    AtetEstimate e = estimate_atet(data.with_covariates(cov), ec);
    for (const auto& w : e.warnings) log << "warning: " << w << "\n";
    json rec = estimate_record(label, e, ec);
    rec["covariates"] = cov;
    rec["baseline_treated_pre"] = treated_baseline(data);
    rec["percent_of_baseline"] = percent_of_baseline(e.atet, treated_baseline(data));
    return rec;
  }
  TwfeSpec spec = c.twfe;
  if (!spec.period_covariate.empty() && !data.schema().index_of(spec.period_covariate)) {
    log << "note: period covariate " << spec.period_covariate << " not in data; time effects use t only\n";
    spec.period_covariate.clear();
  }
  if (spec.include_history && !spec.history_column.empty() && !data.schema().index_of(spec.history_column)) {
    log << "note: history column " << spec.history_column << " not in data; skipped\n";
    spec.history_column.clear();
  }
  for (const auto& n : cov)
    if (n != spec.policy_column && n != spec.history_column && n != spec.period_covariate) spec.covariates.push_back(n);
  // the stacking dummy enters through the time effects when they are on
  if (!spec.year_fe && !spec.period_covariate.empty() &&
      std::find(cov.begin(), cov.end(), spec.period_covariate) != cov.end())
    spec.covariates.push_back(spec.period_covariate);
  TwfeResult r = fit_twfe(data, spec);
  json rec = estimate_record(label, r, spec);
  if (spec.mode == TreatmentMode::binary) {
    rec["baseline_treated_pre"] = treated_baseline(data);
    rec["percent_of_baseline"] = percent_of_baseline(r.theta, treated_baseline(data));
  }
  if (c.rescale_delta) rec["implied_effect"] = rescale_continuous(r.theta, *c.rescale_delta);
  return rec;
}

void cmd_validate(Context& ctx) {
  json report{{"schema_version", kSchemaVersion}, {"kind", "validation"}};
  const RunConfig& c = ctx.config;
  if (!c.policy_path.empty()) {
    PolicyPanel panel = load_policy_csv(c.policy_path);
    report["policy_records"] = panel.size();
    ctx.out << "policy panel: " << panel.size() << " records\n";
  }
  if (!c.micro_path.empty() || c.survey) {
    RepeatedCrossSection data = load_dataset(c, ctx.out);
    auto counts = data.cell_counts();
    report["n"] = data.size();
    report["cell_counts"] = counts;
    report["clusters"] = data.cluster_count();
    report["columns"] = data.schema().column_names(EncodingVariant::full_dummies);
    report["two_by_two"] = two_by_two_json(data);
    ctx.out << "data: n=" << data.size() << " cells (0,0)=" << counts[0] << " (0,1)=" << counts[1]
            << " (1,0)=" << counts[2] << " (1,1)=" << counts[3] << " clusters=" << data.cluster_count() << "\n";
  }
  report["ok"] = true;
  write_json(ctx.out_dir / "validation.json", report);
  ctx.out << "ok\n";
}

void cmd_assign(Context& ctx) {
  const RunConfig& c = ctx.config;
  if (c.policy_path.empty()) throw DataError("assign needs input.policy");
  PolicyPanel panel = load_policy_csv(c.policy_path);
  for (PolicyMeasure m : {PolicyMeasure::price_ppp, PolicyMeasure::tax_share}) {
    PolicyPanel sub = panel.only(m);
    if (sub.size() == 0) continue;
    TreatmentAssignment a = assign(sub, m == PolicyMeasure::price_ppp ? c.price_rule : c.tax_rule);
    std::ostringstream s;
    write_assignment_csv(s, a);
    const fs::path p = ctx.out_dir / ("assignment_" + to_string(m) + ".csv");
    write_text(p, s.str());
    ctx.out << to_string(m) << ": treated=" << a.count(Assignment::treated)
            << " control=" << a.count(Assignment::control) << " excluded=" << a.count(Assignment::excluded) << " -> "
            << p.string() << "\n";
  }
}

void cmd_estimate(Context& ctx) {
  const RunConfig& c = ctx.config;
  RepeatedCrossSection data = load_dataset(c, ctx.out);
  json rec = run_estimate(c, data, c.covariate_set, ctx.out);
  rec["descriptive"] = two_by_two_json(data);
  write_json(ctx.out_dir / "result.json", rec);
  std::vector<json> rows{rec};
  if (!c.robustness_sets.empty()) {
    json table{{"schema_version", kSchemaVersion}, {"kind", "estimate_table"}, {"estimates", json::array()}};
    for (const auto& set : c.robustness_sets) {
      json r = run_estimate(c, data, set, ctx.out);
      table["estimates"].push_back(r);
      rows.push_back(r);
    }
    write_json(ctx.out_dir / "robustness.json", table);
  }
  std::ostringstream s;
  write_estimates_csv(s, rows);
  write_text(ctx.out_dir / "result.csv", s.str());
  ctx.out << rec["label"].get<std::string>() << ": atet=" << format_double(rec["atet"].get<double>())
          << " se=" << format_double(rec["se"].get<double>()) << " p=" << format_double(rec["p_value"].get<double>())
          << "\n";
}

void cmd_placebo(Context& ctx) {
  const RunConfig& c = ctx.config;
  EncodingSchema schema;
  std::vector<Observation> controls;
  bool binary = false;
  if (c.survey) {
    RepeatedCrossSection data = load_dataset(c, ctx.out);
    schema = data.schema();
    binary = data.binary_outcome();
    for (const auto& r : data.rows())
      if (r.d == 0) controls.push_back(r);
  } else {
    if (c.micro_path.empty()) throw DataError("no input data: set input.micro or input.survey");
    LoadedRows l = load_csv_rows(c.micro_path, c.data);
    schema = l.schema;
    binary = l.binary_outcome;
    for (auto& r : l.rows)
      if (r.d == 0) controls.push_back(std::move(r));
  }
  std::vector<std::string> cov = resolve_covariates(c, schema, c.covariate_set);
  if (!c.placebo_period_covariate.empty() && !schema.index_of(c.placebo_period_covariate))
    throw DataError("unknown period covariate: " + c.placebo_period_covariate);
  if (!c.placebo_period_covariate.empty() &&
      std::find(cov.begin(), cov.end(), c.placebo_period_covariate) == cov.end())
    cov.push_back(c.placebo_period_covariate);
  EncodingSchema sub = schema.select(cov);
  std::vector<std::size_t> idx;
  for (const auto& n : cov) idx.push_back(*schema.index_of(n));
  for (auto& r : controls) {
    std::vector<RawValue> v;
    for (auto k : idx) v.push_back(r.covariates[k]);
    r.covariates = std::move(v);
  }
  PlaceboConfig pc;
  pc.estimator = c.diddml;
  pc.estimator.threads = 1;
  pc.period_covariate = c.placebo_period_covariate;
  pc.pooling = c.placebo_pooling;
  pc.histogram_bins = c.placebo_bins;
  pc.threads = c.threads;
  PlaceboResult r = placebo_test(sub, controls, pc, binary);
  for (const auto& s : r.skipped) ctx.out << "skipped " << s << "\n";
  write_json(ctx.out_dir / "placebo.json", to_json(r));
  std::ostringstream s;
  write_placebo_histogram_csv(s, r);
  write_text(ctx.out_dir / "placebo_histogram.csv", s.str());
  ctx.out << "placebo: units=" << r.units.size() << " mean=" << format_double(r.mean)
          << " p=" << format_double(r.p_value) << "\n";
}

void cmd_heterogeneity(Context& ctx) {
  const RunConfig& c = ctx.config;
  if (c.subgroups.empty()) throw DataError("heterogeneity needs subgroup filters (heterogeneity.grid or .filters)");
  RepeatedCrossSection data = load_dataset(c, ctx.out);
  std::vector<std::string> cov = resolve_covariates(c, data.schema(), c.covariate_set);
  for (const auto& f : c.subgroups)
    if (std::find(cov.begin(), cov.end(), f.column) == cov.end() && !data.schema().index_of(f.column))
      throw DataError("subgroup " + f.name + ": unknown column " + f.column);
  EstimatorConfig ec = c.diddml;
  ec.threads = 1;
  SubgroupGrid grid = subgroup_run(data, c.subgroups, ec, c.subgroup_family, c.threads, cov);
  json doc{{"schema_version", kSchemaVersion}, {"kind", "subgroups"}, {"families", json::array({to_json(grid)})}};
  write_json(ctx.out_dir / "subgroups.json", doc);
  std::ostringstream s;
  write_subgroups_csv(s, {grid});
  write_text(ctx.out_dir / "subgroups.csv", s.str());
  for (const auto& cell : grid.cells) {
    ctx.out << cell.name << ": ";
    if (cell.feasible)
      ctx.out << "atet=" << format_double(cell.estimate.atet) << " p=" << format_double(cell.estimate.p_value)
              << " p_bh=" << format_double(cell.p_adjusted) << "\n";
    else
      ctx.out << "infeasible (" << cell.error << ")\n";
  }
}

void cmd_simulate(Context& ctx) {
  const RunConfig& c = ctx.config;
  SimulationConfig sc;
  sc.dgp = c.dgp;
  sc.replications = c.replications;
  sc.estimator = c.diddml;
  sc.method = c.sim_method;
  sc.threads = c.threads;
  SimulationSummary s = simulate(sc);
  json doc = to_json(s);
  doc["dgp"] = to_json(c.dgp);
  doc["method"] = c.sim_method == SimEstimator::diddml ? "diddml" : "twfe_binary";
  write_json(ctx.out_dir / "simulation.json", doc);
  if (c.write_synthetic_data) {
    std::ostringstream o;
    write_generated_csv(o, generate(c.dgp));
    write_text(ctx.out_dir / "synthetic.csv", o.str());
  }
  ctx.out << "simulate: reps=" << s.replications << " bias=" << format_double(s.bias) << " sd=" << format_double(s.sd)
          << " coverage=" << format_double(s.coverage) << "\n";
}

void cmd_plot(Context& ctx, const fs::path& results) {
  if (!fs::is_directory(results)) throw DataError("results directory not found: " + results.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(results))
    if (e.is_regular_file() && e.path().extension() == ".json" && e.path().filename() != "resolved_config.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<PlotPoint> points;
  for (const auto& f : files) {
    std::ifstream in(f);
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) continue;
    for (const auto& r : collect_estimate_records(doc))
      points.push_back({r.value("label", f.stem().string()), r.at("atet").get<double>(), r.at("ci95")[0].get<double>(),
                        r.at("ci95")[1].get<double>()});
  }
  if (points.empty()) throw DataError("no estimate records in " + results.string());
  write_text(ctx.out_dir / "effects.svg", render_error_bars_svg(points, "Estimated effects with 95% confidence intervals"));
  ctx.out << "plot: " << points.size() << " estimates -> " << (ctx.out_dir / "effects.svg").string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Difference-in-differences with double machine learning"};
  app.require_subcommand(1);
  std::string config_path, out_dir, results_dir;
  std::uint64_t seed = 0;
  int threads = 0;
  struct Sub {
    CLI::App* app;
    CLI::Option* seed;
    CLI::Option* threads;
  };
  std::vector<std::pair<std::string, Sub>> subs;
  for (const char* name : {"validate", "assign", "estimate", "placebo", "heterogeneity", "simulate", "plot"}) {
    CLI::App* sc = app.add_subcommand(name);
    sc->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    Sub s{sc, sc->add_option("--seed", seed, "seed (overrides the config)"),
          sc->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber)};
    sc->add_option("--out", out_dir, "output directory");
    if (std::string(name) == "plot") sc->add_option("--results,results", results_dir, "directory of result JSON files");
    subs.emplace_back(name, s);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  std::string command;
  const Sub* sub = nullptr;
  for (const auto& [name, s] : subs)
    if (s.app->parsed()) {
      command = name;
      sub = &s;
    }

  try {
    json raw = json::object();
    fs::path base = fs::current_path();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::runtime_error("cannot read config " + config_path);
      raw = json::parse(in);
      base = fs::absolute(fs::path(config_path)).parent_path();
    } else if (command != "plot") {
      throw std::invalid_argument(command + " needs --config");
    }
    RunConfig cfg = run_config_from_json(raw, base);
    if (sub->seed->count() > 0) {
      cfg.seed = seed;
      cfg.diddml.seed = seed;
      cfg.dgp.seed = seed;
    }
    if (sub->threads->count() > 0) cfg.threads = threads;
    else if (!raw.contains("threads")) cfg.threads = default_thread_count();
    if (cfg.threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (!out_dir.empty()) cfg.output = fs::absolute(out_dir).lexically_normal().string();
    else if (command == "plot" && !raw.contains("output") && !results_dir.empty()) cfg.output = results_dir;
    else if (!raw.contains("output")) cfg.output = fs::absolute(cfg.output).lexically_normal().string();

    Context ctx{cfg, fs::path(cfg.output), out, err};
    fs::create_directories(ctx.out_dir);
    write_json(ctx.out_dir / "resolved_config.json", to_json(cfg));

    if (command == "validate") cmd_validate(ctx);
    else if (command == "assign") cmd_assign(ctx);
    else if (command == "estimate") cmd_estimate(ctx);
    else if (command == "placebo") cmd_placebo(ctx);
    else if (command == "heterogeneity") cmd_heterogeneity(ctx);
    else if (command == "simulate") cmd_simulate(ctx);
    else if (command == "plot") cmd_plot(ctx, results_dir.empty() ? ctx.out_dir : fs::path(results_dir));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace diddml
