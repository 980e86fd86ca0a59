#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "diddml/analysis.hpp"
#include "diddml/estimator.hpp"
#include "diddml/synthetic_dgp.hpp"
#include "diddml/twfe.hpp"

namespace diddml {

inline constexpr int kSchemaVersion = 1;

nlohmann::json to_json(const ForestConfig& c);
ForestConfig forest_config_from_json(const nlohmann::json& j, const ForestConfig& defaults = {});
nlohmann::json to_json(const EstimatorConfig& c);
EstimatorConfig estimator_config_from_json(const nlohmann::json& j, const EstimatorConfig& defaults = {});
nlohmann::json to_json(const DgpSpec& s);
DgpSpec dgp_spec_from_json(const nlohmann::json& j, const DgpSpec& defaults = {});

nlohmann::json to_json(const SupportReport& s);

// One estimate record; the fields mirror a column of a results table
// (ATET, std. error, p-value, N, trimmed) plus run metadata.
nlohmann::json estimate_record(const std::string& label, const AtetEstimate& e, const EstimatorConfig& config);
nlohmann::json estimate_record(const std::string& label, const TwfeResult& r, const TwfeSpec& spec);

nlohmann::json to_json(const PlaceboResult& r);
nlohmann::json to_json(const SubgroupGrid& g);
nlohmann::json to_json(const SimulationSummary& s);

// label,atet,se,p_value,ci_low,ci_high,n,n_trimmed; one row per record.
void write_estimates_csv(std::ostream& out, const std::vector<nlohmann::json>& records);
void write_placebo_histogram_csv(std::ostream& out, const PlaceboResult& r);
void write_subgroups_csv(std::ostream& out, const std::vector<SubgroupGrid>& grids);

struct PlotPoint {
  std::string label;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Horizontal error-bar chart. Each bar is a <g class="estimate"> carrying
// data-label, data-estimate, data-lo and data-hi attributes.
std::string render_error_bars_svg(const std::vector<PlotPoint>& points, const std::string& title);

// Estimate records found in a JSON document (a single record or a table of them).
std::vector<nlohmann::json> collect_estimate_records(const nlohmann::json& doc);

std::string format_double(double v);

}  // namespace diddml
