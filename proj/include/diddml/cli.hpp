#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diddml/analysis.hpp"
#include "diddml/data_model.hpp"
#include "diddml/estimator.hpp"
#include "diddml/policy_assignment.hpp"
#include "diddml/synthetic_dgp.hpp"
#include "diddml/twfe.hpp"

namespace diddml {

struct SurveyInput {
  std::string path;
  SurveyConfig config;
  std::map<int, PeriodSlot> period_map;
  PolicyMeasure measure = PolicyMeasure::price_ppp;
};

// Everything a command needs; serializes back to JSON with every default
// filled in (the resolved config written next to each command's outputs).
struct RunConfig {
  std::string micro_path;  // prepared microdata with d and t columns
  LoadConfig data;
  std::optional<SurveyInput> survey;  // raw survey + policy join instead
  std::string policy_path;
  AssignmentRule price_rule = AssignmentRule::price_default();
  AssignmentRule tax_rule = AssignmentRule::tax_default();

  std::string estimator = "diddml";  // diddml | twfe_binary | twfe_continuous
  EstimatorConfig diddml;
  TwfeSpec twfe;
  std::optional<double> rescale_delta;  // continuous TWFE: policy change in units

  std::string covariate_set = "all";
  std::map<std::string, std::vector<std::string>> covariate_sets;
  std::vector<std::string> robustness_sets;

  PlaceboPooling placebo_pooling = PlaceboPooling::t_test;
  int placebo_bins = 10;
  std::string placebo_period_covariate = "analysis_period";

  std::string subgroup_family = "subgroups";
  std::vector<SubgroupFilter> subgroups;

  DgpSpec dgp;
  std::size_t replications = 100;
  SimEstimator sim_method = SimEstimator::diddml;
  bool write_synthetic_data = false;

  std::optional<std::uint64_t> seed;  // overrides the estimator and dgp seeds
  std::string output = "diddml_out";
  int threads = 1;
};

// Relative paths are resolved against base_dir.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
nlohmann::json to_json(const RunConfig& c);

// Reads the prepared microdata, or joins survey rows with the policy assignment.
RepeatedCrossSection load_dataset(const RunConfig& c, std::ostream& log);

// Covariate names of the chosen set ("all": every schema column except the
// current policy level produced by the survey join).
std::vector<std::string> resolve_covariates(const RunConfig& c, const EncodingSchema& schema, const std::string& set);

// Entry point of the command-line tool; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace diddml
