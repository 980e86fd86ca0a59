#include "diddml/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "diddml/csv.hpp"

namespace diddml {

EncodingSchema::EncodingSchema(std::vector<CovariateColumn> columns) : columns_(std::move(columns)) {
  std::set<std::string> seen;
  for (const auto& c : columns_) {
    if (c.name.empty()) throw DataError("covariate with empty name");
    if (!seen.insert(c.name).second) throw DataError("duplicate covariate: " + c.name);
    if (c.kind == CovariateKind::categorical) {
      if (c.levels.empty()) throw DataError("categorical covariate without levels: " + c.name);
      std::set<std::string> lv(c.levels.begin(), c.levels.end());
      if (lv.size() != c.levels.size()) throw DataError("duplicate level in covariate: " + c.name);
      auto missing = std::find(c.levels.begin(), c.levels.end(), kMissingLevel);
      if (missing != c.levels.end() && missing != c.levels.end() - 1)
        throw DataError("\"(missing)\" must be the last level of " + c.name);
    }
  }
}

std::optional<std::size_t> EncodingSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i)
    if (columns_[i].name == name) return i;
  return std::nullopt;
}

std::size_t EncodingSchema::width(EncodingVariant variant) const {
  std::size_t w = 0;
  for (const auto& c : columns_) {
    if (c.kind == CovariateKind::continuous)
      w += 1;
    else
      w += c.levels.size() - (variant == EncodingVariant::drop_first ? 1 : 0);
  }
  return w;
}

std::vector<std::string> EncodingSchema::column_names(EncodingVariant variant) const {
  std::vector<std::string> names;
  for (const auto& c : columns_) {
    if (c.kind == CovariateKind::continuous) {
      names.push_back(c.name);
      continue;
    }
    std::size_t first = variant == EncodingVariant::drop_first ? 1 : 0;
    for (std::size_t l = first; l < c.levels.size(); ++l) names.push_back(c.name + "=" + c.levels[l]);
  }
  return names;
}

void EncodingSchema::encode_row(std::span<const RawValue> raw, EncodingVariant variant, std::span<double> out) const {
  if (raw.size() != columns_.size()) throw DataError("row has wrong number of covariates");
  if (out.size() != width(variant)) throw DataError("encode_row: output width mismatch");
  std::size_t pos = 0;
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto& c = columns_[j];
    if (c.kind == CovariateKind::continuous) {
      const double* v = std::get_if<double>(&raw[j]);
      if (!v) throw DataError("covariate " + c.name + " expects a number");
      out[pos++] = *v;
      continue;
    }
    const std::string* s = std::get_if<std::string>(&raw[j]);
    if (!s) throw DataError("covariate " + c.name + " expects a category label");
    auto it = std::find(c.levels.begin(), c.levels.end(), *s);
    if (it == c.levels.end()) throw DataError("unknown level '" + *s + "' for covariate " + c.name);
    auto level = static_cast<std::size_t>(it - c.levels.begin());
    std::size_t first = variant == EncodingVariant::drop_first ? 1 : 0;
    for (std::size_t l = first; l < c.levels.size(); ++l) out[pos++] = l == level ? 1.0 : 0.0;
  }
}

std::vector<RawValue> EncodingSchema::decode_row(std::span<const double> encoded, EncodingVariant variant) const {
  if (encoded.size() != width(variant)) throw DataError("decode_row: width mismatch");
  std::vector<RawValue> raw;
  raw.reserve(columns_.size());
  std::size_t pos = 0;
  for (const auto& c : columns_) {
    if (c.kind == CovariateKind::continuous) {
      raw.emplace_back(encoded[pos++]);
      continue;
    }
    std::size_t first = variant == EncodingVariant::drop_first ? 1 : 0;
    std::size_t level = 0;
    int hits = 0;
    for (std::size_t l = first; l < c.levels.size(); ++l) {
      if (encoded[pos++] == 1.0) {
        level = l;
        ++hits;
      }
    }
    if (hits > 1) throw DataError("decode_row: several active levels for " + c.name);
    raw.emplace_back(c.levels[level]);
  }
  return raw;
}

EncodingSchema EncodingSchema::select(std::span<const std::string> names) const {
  std::vector<CovariateColumn> cols;
  for (const auto& n : names) {
    auto idx = index_of(n);
    if (!idx) throw DataError("unknown covariate: " + n);
    cols.push_back(columns_[*idx]);
  }
  return EncodingSchema(std::move(cols));
}

void validate_observation(const Observation& row, const EncodingSchema& schema, bool binary_outcome) {
  if (row.d != 0 && row.d != 1) throw DataError("non-binary treatment");
  if (row.t != 0 && row.t != 1) throw DataError("non-binary period");
  if (!std::isfinite(row.y)) throw DataError("non-finite outcome");
  if (binary_outcome && row.y != 0.0 && row.y != 1.0) throw DataError("non-binary outcome");
  if (row.cluster.empty()) throw DataError("missing cluster id");
  if (row.covariates.size() != schema.size()) throw DataError("row has wrong number of covariates");
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& c = schema.columns()[j];
    if (c.kind == CovariateKind::continuous) {
      const double* v = std::get_if<double>(&row.covariates[j]);
      if (!v || !std::isfinite(*v)) throw DataError("invalid value for continuous covariate " + c.name);
    } else {
      const std::string* s = std::get_if<std::string>(&row.covariates[j]);
      if (!s || std::find(c.levels.begin(), c.levels.end(), *s) == c.levels.end())
        throw DataError("invalid level for categorical covariate " + c.name);
    }
  }
}

RepeatedCrossSection::RepeatedCrossSection(EncodingSchema schema, std::vector<Observation> rows, bool binary_outcome)
    : schema_(std::move(schema)), rows_(std::move(rows)), binary_outcome_(binary_outcome) {
  for (const auto& r : rows_) validate_observation(r, schema_, binary_outcome_);
  auto counts = cell_counts();
  for (int c = 0; c < 4; ++c) {
    if (counts[c] == 0) {
      throw DataError("empty (d,t) cell (" + std::to_string(cell_d(c)) + "," + std::to_string(cell_t(c)) + ")");
    }
  }
}

std::array<std::size_t, 4> RepeatedCrossSection::cell_counts() const {
  std::array<std::size_t, 4> counts{};
  for (const auto& r : rows_) ++counts[cell_index(r.d, r.t)];
  return counts;
}

std::vector<std::string> RepeatedCrossSection::cluster_labels() const {
  std::set<std::string> s;
  for (const auto& r : rows_) s.insert(r.cluster);
  return {s.begin(), s.end()};
}

Eigen::MatrixXd RepeatedCrossSection::design(EncodingVariant variant) const {
  const auto w = static_cast<Eigen::Index>(schema_.width(variant));
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows_.size()), w);
  std::vector<double> buf(static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    schema_.encode_row(rows_[i].covariates, variant, buf);
    for (Eigen::Index j = 0; j < w; ++j) x(static_cast<Eigen::Index>(i), j) = buf[static_cast<std::size_t>(j)];
  }
  return x;
}

Eigen::VectorXd RepeatedCrossSection::outcome() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows_.size()));
  for (std::size_t i = 0; i < rows_.size(); ++i) y(static_cast<Eigen::Index>(i)) = rows_[i].y;
  return y;
}

std::vector<int> RepeatedCrossSection::cells() const {
  std::vector<int> c(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) c[i] = cell_index(rows_[i].d, rows_[i].t);
  return c;
}

RepeatedCrossSection RepeatedCrossSection::filter(const std::function<bool(const Observation&)>& keep) const {
  std::vector<Observation> out;
  for (const auto& r : rows_)
    if (keep(r)) out.push_back(r);
  return RepeatedCrossSection(schema_, std::move(out), binary_outcome_);
}

RepeatedCrossSection RepeatedCrossSection::with_covariates(std::span<const std::string> names) const {
  EncodingSchema sub = schema_.select(names);
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(*schema_.index_of(n));
  std::vector<Observation> out = rows_;
  for (auto& r : out) {
    std::vector<RawValue> cov;
    cov.reserve(idx.size());
    for (auto j : idx) cov.push_back(r.covariates[j]);
    r.covariates = std::move(cov);
  }
  return RepeatedCrossSection(std::move(sub), std::move(out), binary_outcome_);
}

RepeatedCrossSection RepeatedCrossSection::with_outcome(std::span<const double> y, bool binary_outcome) const {
  if (y.size() != rows_.size()) throw DataError("with_outcome: length mismatch");
  std::vector<Observation> out = rows_;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].y = y[i];
  return RepeatedCrossSection(schema_, std::move(out), binary_outcome);
}

namespace {

int parse_binary(const std::string& s, const char* what) {
  auto v = csv::parse_double(s);
  if (!v) throw DataError(std::string("missing or non-numeric ") + what);
  if (*v != 0.0 && *v != 1.0) throw DataError(std::string("non-binary ") + what);
  return static_cast<int>(*v);
}

}  // namespace

LoadedRows load_csv_rows(const std::string& path, const LoadConfig& config) {
  csv::Table table = csv::Table::read(path, config.delimiter);
  const auto y_col = table.require_column(config.outcome);
  const auto d_col = table.require_column(config.treatment);
  const auto t_col = table.require_column(config.period);
  const auto c_col = table.require_column(config.cluster);
  std::vector<std::size_t> cont_cols, cat_cols;
  for (const auto& n : config.continuous) cont_cols.push_back(table.require_column(n));
  for (const auto& n : config.categorical) cat_cols.push_back(table.require_column(n));

  // Levels are sorted so the encoding does not depend on row order.
  std::vector<CovariateColumn> columns;
  for (const auto& n : config.continuous) columns.push_back({n, CovariateKind::continuous, {}});
  for (std::size_t k = 0; k < cat_cols.size(); ++k) {
    std::set<std::string> levels;
    bool missing = false;
    for (const auto& row : table.rows()) {
      if (csv::is_blank(row[cat_cols[k]]))
        missing = true;
      else
        levels.insert(row[cat_cols[k]]);
    }
    levels.erase(std::string(kMissingLevel));
    CovariateColumn col{config.categorical[k], CovariateKind::categorical, {levels.begin(), levels.end()}};
    if (missing || std::any_of(table.rows().begin(), table.rows().end(),
                               [&](const auto& r) { return r[cat_cols[k]] == kMissingLevel; }))
      col.levels.emplace_back(kMissingLevel);
    columns.push_back(std::move(col));
  }
  EncodingSchema schema(std::move(columns));

  std::vector<Observation> rows;
  rows.reserve(table.rows().size());
  std::optional<std::size_t> id_col;
  if (!config.id.empty()) id_col = table.require_column(config.id);
  std::set<std::uint64_t> seen_ids;
  std::uint64_t id = 0;
  for (const auto& fields : table.rows()) {
    Observation obs;
    obs.id = id++;
    if (id_col) {
      auto v = csv::parse_double(fields[*id_col]);
      if (!v || *v < 0 || *v != std::floor(*v)) throw DataError("bad row id in row " + std::to_string(id));
      obs.id = static_cast<std::uint64_t>(*v);
      if (!seen_ids.insert(obs.id).second) throw DataError("duplicate row id " + fields[*id_col]);
    }
    auto y = csv::parse_double(fields[y_col]);
    if (!y) throw DataError("missing or non-numeric outcome in row " + std::to_string(obs.id + 1));
    obs.y = *y;
    obs.d = parse_binary(fields[d_col], "treatment");
    obs.t = parse_binary(fields[t_col], "period");
    if (csv::is_blank(fields[c_col])) throw DataError("missing cluster id in row " + std::to_string(obs.id + 1));
    obs.cluster = fields[c_col];
    for (std::size_t k = 0; k < cont_cols.size(); ++k) {
      auto v = csv::parse_double(fields[cont_cols[k]]);
      if (!v) throw DataError("missing continuous covariate " + config.continuous[k] + " in row " +
                              std::to_string(obs.id + 1));
      obs.covariates.emplace_back(*v);
    }
    for (auto c : cat_cols) {
      const auto& s = fields[c];
      obs.covariates.emplace_back(csv::is_blank(s) ? std::string(kMissingLevel) : s);
    }
    validate_observation(obs, schema, config.binary_outcome);
    rows.push_back(std::move(obs));
  }
  return {std::move(schema), std::move(rows), config.binary_outcome};
}

RepeatedCrossSection load_csv(const std::string& path, const LoadConfig& config) {
  LoadedRows l = load_csv_rows(path, config);
  return RepeatedCrossSection(std::move(l.schema), std::move(l.rows), l.binary_outcome);
}

Encoding encode(const RepeatedCrossSection& data) {
  Encoding e;
  e.schema = data.schema();
  e.full = data.design(EncodingVariant::full_dummies);
  e.drop_one = data.design(EncodingVariant::drop_first);
  e.full_names = e.schema.column_names(EncodingVariant::full_dummies);
  e.drop_one_names = e.schema.column_names(EncodingVariant::drop_first);
  return e;
}

TwoByTwoTable two_by_two_from_means(const std::array<double, 4>& means) {
  TwoByTwoTable tab;
  tab.mean = means;
  tab.treated_change = means[kTreatedPost] - means[kTreatedPre];
  tab.control_change = means[kControlPost] - means[kControlPre];
  tab.did = tab.treated_change - tab.control_change;
  return tab;
}

TwoByTwoTable two_by_two_table(const RepeatedCrossSection& data) {
  std::array<double, 4> sum{};
  std::array<std::size_t, 4> count{};
  for (const auto& r : data.rows()) {
    int c = cell_index(r.d, r.t);
    sum[c] += r.y;
    ++count[c];
  }
  std::array<double, 4> means{};
  for (int c = 0; c < 4; ++c) {
    if (count[c] == 0) throw DataError("empty (d,t) cell");
    means[c] = sum[c] / static_cast<double>(count[c]);
  }
  TwoByTwoTable tab = two_by_two_from_means(means);
  tab.count = count;
  return tab;
}

std::string format_raw(const RawValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  std::ostringstream os;
  os.precision(17);
  os << std::get<double>(v);
  return os.str();
}

}  // namespace diddml
