#include "diddml/policy_assignment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "diddml/csv.hpp"

namespace diddml {

std::string to_string(PolicyMeasure m) { return m == PolicyMeasure::price_ppp ? "price_ppp" : "tax_share"; }

PolicyMeasure parse_measure(const std::string& s) {
  if (s == "price_ppp" || s == "price") return PolicyMeasure::price_ppp;
  if (s == "tax_share" || s == "tax") return PolicyMeasure::tax_share;
  throw DataError("unknown policy measure: " + s);
}

PolicyPanel::PolicyPanel(std::vector<PolicyRecord> records) : records_(std::move(records)) {
  std::set<std::tuple<std::string, std::string, int>> keys;
  for (const auto& r : records_) {
    if (!(r.pre_value > 0.0)) throw DataError("policy record " + r.country + " " + r.period + ": pre_value must be > 0");
    if (!(r.post_value >= 0.0)) throw DataError("policy record " + r.country + " " + r.period + ": post_value must be >= 0");
    if (r.measure == PolicyMeasure::tax_share) {
      if (!(r.pre_value < 1.0) || !(r.post_value > 0.0 && r.post_value < 1.0))
        throw DataError("policy record " + r.country + " " + r.period + ": tax share outside (0,1)");
    }
    if (!keys.insert({r.country, r.period, static_cast<int>(r.measure)}).second)
      throw DataError("duplicate policy record " + r.country + " " + r.period);
  }
}

PolicyPanel PolicyPanel::only(PolicyMeasure m) const {
  std::vector<PolicyRecord> out;
  for (const auto& r : records_)
    if (r.measure == m) out.push_back(r);
  return PolicyPanel(std::move(out));
}

PolicyPanel load_policy_csv(const std::string& path, char delimiter) {
  csv::Table table = csv::Table::read(path, delimiter);
  auto c_country = table.require_column("country");
  auto c_period = table.require_column("period");
  auto c_pre = table.require_column("pre_value");
  auto c_post = table.require_column("post_value");
  auto c_measure = table.require_column("measure");
  std::vector<PolicyRecord> records;
  for (const auto& f : table.rows()) {
    PolicyRecord r;
    r.country = f[c_country];
    r.period = f[c_period];
    auto pre = csv::parse_double(f[c_pre]);
    auto post = csv::parse_double(f[c_post]);
    if (!pre || !post) throw DataError("non-numeric policy value for " + r.country + " " + r.period);
    r.pre_value = *pre;
    r.post_value = *post;
    r.measure = parse_measure(f[c_measure]);
    records.push_back(std::move(r));
  }
  return PolicyPanel(std::move(records));
}

AssignmentRule AssignmentRule::price_default() { return {PolicyMeasure::price_ppp, 15.0, -5.0, 5.0, std::nullopt}; }

AssignmentRule AssignmentRule::tax_default() { return {PolicyMeasure::tax_share, 2.0, 0.0, 0.0, 2}; }

void AssignmentRule::validate() const {
  if (!(control_lo_pct <= control_hi_pct)) throw std::invalid_argument("control band lower bound above upper bound");
  if (!(treat_threshold_pct > control_hi_pct))
    throw std::invalid_argument("treatment threshold must lie strictly above the control band");
  if (round_decimals && (*round_decimals < 0 || *round_decimals > 12))
    throw std::invalid_argument("round_decimals out of range");
}

double pct_change(double pre, double post) {
  if (!(pre > 0.0)) throw std::invalid_argument("pct_change: pre must be > 0");
  return 100.0 * (post - pre) / pre;
}

Assignment classify(double change_pct, const AssignmentRule& rule) {
  double c = change_pct;
  if (rule.round_decimals) {
    double scale = std::pow(10.0, *rule.round_decimals);
    c = std::round(c * scale) / scale;
    if (c == 0.0) c = 0.0;  // -0.0
  }
  if (c > rule.treat_threshold_pct) return Assignment::treated;
  if (c >= rule.control_lo_pct && c <= rule.control_hi_pct) return Assignment::control;
  return Assignment::excluded;
}

TreatmentAssignment assign(const PolicyPanel& panel, const AssignmentRule& rule) {
  rule.validate();
  TreatmentAssignment out;
  out.measure = rule.measure;
  for (const auto& r : panel.records()) {
    if (r.measure != rule.measure) continue;
    AssignmentRow row{r.country, r.period, r.pre_value, r.post_value, pct_change(r.pre_value, r.post_value),
                      Assignment::excluded};
    row.label = classify(row.change_pct, rule);
    out.rows.push_back(std::move(row));
  }
  return out;
}

const AssignmentRow* TreatmentAssignment::find(const std::string& country, const std::string& period) const {
  for (const auto& r : rows)
    if (r.country == country && r.period == period) return &r;
  return nullptr;
}

std::size_t TreatmentAssignment::count(Assignment label) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.label == label; }));
}

void write_assignment_csv(std::ostream& out, const TreatmentAssignment& a) {
  out << "country,period,measure,pre_value,post_value,change_pct,D\n";
  char buf[64];
  for (const auto& r : a.rows) {
    out << csv::escape(r.country) << ',' << csv::escape(r.period) << ',' << to_string(a.measure) << ',';
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.2f,", r.pre_value, r.post_value, r.change_pct);
    out << buf;
    if (r.label == Assignment::treated) out << '1';
    if (r.label == Assignment::control) out << '0';
    out << '\n';
  }
}

SurveyTable load_survey_csv(const std::string& path, const SurveyConfig& config) {
  csv::Table table = csv::Table::read(path, config.delimiter);
  auto y_col = table.require_column(config.outcome);
  auto c_col = table.require_column(config.country);
  auto yr_col = table.require_column(config.year);
  std::vector<std::size_t> cont, cat;
  for (const auto& n : config.continuous) cont.push_back(table.require_column(n));
  for (const auto& n : config.categorical) cat.push_back(table.require_column(n));

  std::vector<CovariateColumn> columns;
  for (const auto& n : config.continuous) columns.push_back({n, CovariateKind::continuous, {}});
  for (std::size_t k = 0; k < cat.size(); ++k) {
    std::set<std::string> levels;
    bool missing = false;
    for (const auto& row : table.rows()) {
      if (csv::is_blank(row[cat[k]]) || row[cat[k]] == kMissingLevel)
        missing = true;
      else
        levels.insert(row[cat[k]]);
    }
    CovariateColumn col{config.categorical[k], CovariateKind::categorical, {levels.begin(), levels.end()}};
    if (missing) col.levels.emplace_back(kMissingLevel);
    columns.push_back(std::move(col));
  }

  SurveyTable out;
  out.schema = EncodingSchema(std::move(columns));
  out.binary_outcome = config.binary_outcome;
  std::uint64_t id = 0;
  for (const auto& f : table.rows()) {
    SurveyRecord r;
    r.id = id++;
    auto y = csv::parse_double(f[y_col]);
    if (!y) throw DataError("missing or non-numeric outcome in row " + std::to_string(r.id + 1));
    if (config.binary_outcome && *y != 0.0 && *y != 1.0) throw DataError("non-binary outcome");
    r.y = *y;
    if (csv::is_blank(f[c_col])) throw DataError("missing country in row " + std::to_string(r.id + 1));
    r.country = f[c_col];
    auto yr = csv::parse_double(f[yr_col]);
    if (!yr || *yr != std::floor(*yr)) throw DataError("invalid year in row " + std::to_string(r.id + 1));
    r.year = static_cast<int>(*yr);
    for (std::size_t k = 0; k < cont.size(); ++k) {
      auto v = csv::parse_double(f[cont[k]]);
      if (!v) throw DataError("missing continuous covariate " + config.continuous[k]);
      r.covariates.emplace_back(*v);
    }
    for (auto c : cat) r.covariates.emplace_back(csv::is_blank(f[c]) ? std::string(kMissingLevel) : f[c]);
    out.rows.push_back(std::move(r));
  }
  return out;
}

JoinResult join(const TreatmentAssignment& assignment, const SurveyTable& survey,
                const std::map<int, PeriodSlot>& period_map, const JoinOptions& options) {
  std::set<std::string> periods;
  for (const auto& [year, slot] : period_map) {
    if (slot.t != 0 && slot.t != 1) throw DataError("period map: t must be 0 or 1");
    periods.insert(slot.period);
  }
  if (survey.schema.index_of(options.period_covariate) || survey.schema.index_of(options.history_covariate) ||
      (!options.level_covariate.empty() && survey.schema.index_of(options.level_covariate)))
    throw DataError("survey already has a column named like a generated covariate");

  std::vector<CovariateColumn> columns = survey.schema.columns();
  columns.push_back({options.period_covariate, CovariateKind::categorical, {periods.begin(), periods.end()}});
  columns.push_back({options.history_covariate, CovariateKind::continuous, {}});
  if (!options.level_covariate.empty()) columns.push_back({options.level_covariate, CovariateKind::continuous, {}});

  std::vector<Observation> rows;
  std::size_t excluded = 0, unassigned = 0;
  for (const auto& r : survey.rows) {
    auto slot = period_map.find(r.year);
    if (slot == period_map.end()) throw DataError("year " + std::to_string(r.year) + " not in period map");
    const AssignmentRow* a = assignment.find(r.country, slot->second.period);
    if (!a) {
      ++unassigned;
      continue;
    }
    if (a->label == Assignment::excluded) {
      ++excluded;
      continue;
    }
    Observation obs;
    obs.id = r.id;
    obs.y = r.y;
    obs.d = a->label == Assignment::treated ? 1 : 0;
    obs.t = slot->second.t;
    obs.cluster = r.country;
    obs.covariates = r.covariates;
    obs.covariates.emplace_back(slot->second.period);
    obs.covariates.emplace_back(a->pre_value);
    if (!options.level_covariate.empty()) obs.covariates.emplace_back(obs.t == 0 ? a->pre_value : a->post_value);
    rows.push_back(std::move(obs));
  }
  return {RepeatedCrossSection(EncodingSchema(std::move(columns)), std::move(rows), survey.binary_outcome), excluded,
          unassigned};
}

}  // namespace diddml
