#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace diddml {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The four (d, t) cells, indexed 2*d + t.
enum Cell : int { kControlPre = 0, kControlPost = 1, kTreatedPre = 2, kTreatedPost = 3 };

constexpr int cell_index(int d, int t) { return 2 * d + t; }
constexpr int cell_d(int cell) { return cell / 2; }
constexpr int cell_t(int cell) { return cell % 2; }

inline constexpr std::string_view kMissingLevel = "(missing)";

enum class CovariateKind { continuous, categorical };

struct CovariateColumn {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  // Categorical only. "(missing)" is always the last level when present.
  std::vector<std::string> levels;
};

using RawValue = std::variant<double, std::string>;

enum class EncodingVariant {
  full_dummies,  // one column per level, for tree learners
  drop_first,    // reference level dropped, for least-squares designs
};

class EncodingSchema {
 public:
  EncodingSchema() = default;
  explicit EncodingSchema(std::vector<CovariateColumn> columns);

  const std::vector<CovariateColumn>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;

  std::size_t width(EncodingVariant variant) const;
  std::vector<std::string> column_names(EncodingVariant variant) const;

  // Throws DataError on an unknown categorical level or a type mismatch.
  void encode_row(std::span<const RawValue> raw, EncodingVariant variant, std::span<double> out) const;
  std::vector<RawValue> decode_row(std::span<const double> encoded, EncodingVariant variant) const;

  EncodingSchema select(std::span<const std::string> names) const;

 private:
  std::vector<CovariateColumn> columns_;
};

struct Observation {
  double y = 0.0;
  int d = 0;
  int t = 0;
  std::string cluster;
  // Aligned with the schema's column order.
  std::vector<RawValue> covariates;
  // Stable row identifier; fold assignment is keyed to it.
  std::uint64_t id = 0;
};

// Immutable repeated cross-section. Construction validates every row and
// requires all four (d, t) cells to be non-empty.
class RepeatedCrossSection {
 public:
  RepeatedCrossSection(EncodingSchema schema, std::vector<Observation> rows, bool binary_outcome = false);

  std::size_t size() const { return rows_.size(); }
  const std::vector<Observation>& rows() const { return rows_; }
  const Observation& operator[](std::size_t i) const { return rows_[i]; }
  const EncodingSchema& schema() const { return schema_; }
  bool binary_outcome() const { return binary_outcome_; }

  std::array<std::size_t, 4> cell_counts() const;
  std::vector<std::string> cluster_labels() const;  // distinct, sorted
  std::size_t cluster_count() const { return cluster_labels().size(); }

  Eigen::MatrixXd design(EncodingVariant variant) const;
  Eigen::VectorXd outcome() const;
  std::vector<int> cells() const;

  RepeatedCrossSection filter(const std::function<bool(const Observation&)>& keep) const;
  RepeatedCrossSection with_covariates(std::span<const std::string> names) const;
  RepeatedCrossSection with_outcome(std::span<const double> y, bool binary_outcome) const;

 private:
  EncodingSchema schema_;
  std::vector<Observation> rows_;
  bool binary_outcome_ = false;
};

// Checks the row-level invariants without the non-empty-cell requirement.
void validate_observation(const Observation& row, const EncodingSchema& schema, bool binary_outcome);

struct LoadConfig {
  std::string outcome;
  std::string treatment;
  std::string period;
  std::string cluster;
  std::string id;  // optional stable row id column; row order otherwise
  std::vector<std::string> continuous;
  std::vector<std::string> categorical;
  char delimiter = ',';
  bool binary_outcome = false;
};

RepeatedCrossSection load_csv(const std::string& path, const LoadConfig& config);

// Validated rows without the non-empty-cell requirement (e.g. controls-only data).
struct LoadedRows {
  EncodingSchema schema;
  std::vector<Observation> rows;
  bool binary_outcome = false;
};
LoadedRows load_csv_rows(const std::string& path, const LoadConfig& config);

struct Encoding {
  Eigen::MatrixXd full;      // full dummy sets
  Eigen::MatrixXd drop_one;  // reference level dropped
  std::vector<std::string> full_names;
  std::vector<std::string> drop_one_names;
  EncodingSchema schema;
};

Encoding encode(const RepeatedCrossSection& data);

struct TwoByTwoTable {
  std::array<double, 4> mean{};
  std::array<std::size_t, 4> count{};
  double treated_change = 0.0;  // ybar(1,1) - ybar(1,0)
  double control_change = 0.0;  // ybar(0,1) - ybar(0,0)
  double did = 0.0;
};

TwoByTwoTable two_by_two_table(const RepeatedCrossSection& data);
// Same arithmetic on bare cell means.
TwoByTwoTable two_by_two_from_means(const std::array<double, 4>& means);

std::string format_raw(const RawValue& v);

}  // namespace diddml
