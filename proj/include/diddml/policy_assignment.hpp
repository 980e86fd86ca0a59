#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "diddml/data_model.hpp"

namespace diddml {

enum class PolicyMeasure { price_ppp, tax_share };

std::string to_string(PolicyMeasure m);
PolicyMeasure parse_measure(const std::string& s);

struct PolicyRecord {
  std::string country;
  std::string period;  // analysis period label, e.g. "2012-2014"
  double pre_value = 0.0;
  double post_value = 0.0;
  PolicyMeasure measure = PolicyMeasure::price_ppp;
};

class PolicyPanel {
 public:
  PolicyPanel() = default;
  explicit PolicyPanel(std::vector<PolicyRecord> records);

  const std::vector<PolicyRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  PolicyPanel only(PolicyMeasure m) const;

 private:
  std::vector<PolicyRecord> records_;
};

// Columns: country, period, pre_value, post_value, measure. Extra columns are ignored.
PolicyPanel load_policy_csv(const std::string& path, char delimiter = ',');

struct AssignmentRule {
  PolicyMeasure measure = PolicyMeasure::price_ppp;
  double treat_threshold_pct = 15.0;  // Treated iff change > threshold
  double control_lo_pct = -5.0;       // Control iff change in [lo, hi]
  double control_hi_pct = 5.0;
  // Percent changes are rounded to this many decimals before comparison.
  std::optional<int> round_decimals;

  static AssignmentRule price_default();
  static AssignmentRule tax_default();
  void validate() const;
};

enum class Assignment { treated, control, excluded };

struct AssignmentRow {
  std::string country;
  std::string period;
  double pre_value = 0.0;
  double post_value = 0.0;
  double change_pct = 0.0;
  Assignment label = Assignment::excluded;
};

struct TreatmentAssignment {
  PolicyMeasure measure = PolicyMeasure::price_ppp;
  std::vector<AssignmentRow> rows;

  const AssignmentRow* find(const std::string& country, const std::string& period) const;
  std::size_t count(Assignment label) const;
};

// 100 * (post - pre) / pre. Throws std::invalid_argument when pre <= 0.
double pct_change(double pre, double post);

Assignment classify(double change_pct, const AssignmentRule& rule);
TreatmentAssignment assign(const PolicyPanel& panel, const AssignmentRule& rule);

// Tables A1/A2 layout: country, period, pre_value, post_value, change_pct, D
// (D blank for excluded).
void write_assignment_csv(std::ostream& out, const TreatmentAssignment& a);

// Survey microdata before treatment labels exist.
struct SurveyRecord {
  double y = 0.0;
  std::string country;
  int year = 0;
  std::vector<RawValue> covariates;
  std::uint64_t id = 0;
};

struct SurveyTable {
  EncodingSchema schema;
  std::vector<SurveyRecord> rows;
  bool binary_outcome = false;
};

struct SurveyConfig {
  std::string outcome;
  std::string country;
  std::string year;
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  char delimiter = ',';
  bool binary_outcome = false;
};

SurveyTable load_survey_csv(const std::string& path, const SurveyConfig& config);

struct PeriodSlot {
  std::string period;  // analysis period label
  int t = 0;
};

struct JoinOptions {
  std::string period_covariate = "analysis_period";
  std::string history_covariate = "pre_policy_level";
  // Current policy level (pre value at t=0, post value at t=1); the
  // treatment of the continuous TWFE. Empty to skip.
  std::string level_covariate = "policy_level";
};

struct JoinResult {
  RepeatedCrossSection data;
  std::size_t dropped_excluded = 0;
  std::size_t dropped_unassigned = 0;  // country/period missing from the assignment
};

// Labels survey rows with d (from the assignment) and t (from the year map),
// drops Excluded countries and appends the stacking dummy and the
// pre-treatment policy level as covariates. Throws DataError for a year
// absent from period_map.
JoinResult join(const TreatmentAssignment& assignment, const SurveyTable& survey,
                const std::map<int, PeriodSlot>& period_map, const JoinOptions& options = {});

}  // namespace diddml
