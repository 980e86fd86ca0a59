#include "diddml/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "diddml/parallel.hpp"
#include "diddml/random.hpp"

namespace diddml {

void ForestConfig::validate() const {
  if (n_trees < 1) throw std::invalid_argument("forest: n_trees must be >= 1");
  if (mtry < 0) throw std::invalid_argument("forest: mtry must be >= 0");
  if (min_leaf < 0) throw std::invalid_argument("forest: min_leaf must be >= 0");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
    throw std::invalid_argument("forest: subsample_fraction must be in (0,1]");
  if (max_depth && *max_depth < 0) throw std::invalid_argument("forest: max_depth must be >= 0");
  if (max_bins < 2 || max_bins > 65535) throw std::invalid_argument("forest: max_bins must be in [2, 65535]");
}

int default_mtry_regression(std::size_t p) { return std::max(1, static_cast<int>((p + 2) / 3)); }

int default_mtry_classification(std::size_t p) {
  return std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p)) - 1e-12)));
}

namespace {

// Training matrix quantized to per-feature bins. Bin b of feature j holds
// values in (cuts[b-1], cuts[b]]; splitting after bin b uses threshold cuts[b].
class BinnedMatrix {
 public:
  BinnedMatrix(const Eigen::MatrixXd& x, int max_bins) : n_(static_cast<std::size_t>(x.rows())), p_(static_cast<std::size_t>(x.cols())) {
    cuts_.resize(p_);
    codes_.resize(n_ * p_);
    std::vector<double> col(n_);
    for (std::size_t j = 0; j < p_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) col[i] = x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      std::vector<double> sorted = col;
      std::sort(sorted.begin(), sorted.end());
      std::vector<double> uniq;
      uniq.reserve(sorted.size());
      for (double v : sorted)
        if (uniq.empty() || v != uniq.back()) uniq.push_back(v);
      auto& cuts = cuts_[j];
      if (uniq.size() <= static_cast<std::size_t>(max_bins)) {
        for (std::size_t k = 0; k + 1 < uniq.size(); ++k) cuts.push_back(uniq[k] + (uniq[k + 1] - uniq[k]) / 2.0);
      } else {
        for (int b = 1; b < max_bins; ++b) {
          double v = sorted[(static_cast<std::size_t>(b) * n_) / static_cast<std::size_t>(max_bins)];
          if (v < uniq.back() && (cuts.empty() || v > cuts.back())) cuts.push_back(v);
        }
      }
      for (std::size_t i = 0; i < n_; ++i) {
        auto it = std::lower_bound(cuts.begin(), cuts.end(), col[i]);
        codes_[j * n_ + i] = static_cast<std::uint16_t>(it - cuts.begin());
      }
    }
  }

  std::size_t rows() const { return n_; }
  std::size_t cols() const { return p_; }
  std::size_t bins(std::size_t j) const { return cuts_[j].size() + 1; }
  double cut(std::size_t j, std::size_t b) const { return cuts_[j][b]; }
  const std::uint16_t* codes(std::size_t j) const { return codes_.data() + j * n_; }
  std::size_t max_bins() const {
    std::size_t m = 1;
    for (std::size_t j = 0; j < p_; ++j) m = std::max(m, bins(j));
    return m;
  }

 private:
  std::size_t n_, p_;
  std::vector<std::vector<double>> cuts_;
  std::vector<std::uint16_t> codes_;
};

// Squared-error criterion. Stats per bin: {sum, count}.
struct VarianceCriterion {
  static constexpr int stat_width = 2;
  std::span<const double> y;

  void add(double* s, std::size_t row) const {
    s[0] += y[row];
    s[1] += 1.0;
  }
  static double count(const double* s) { return s[1]; }
  // Proxy whose difference across a split equals the SSE reduction.
  static double score(const double* s) { return s[1] > 0 ? s[0] * s[0] / s[1] : 0.0; }
  bool pure(std::span<const std::size_t> rows) const {
    double sum = 0.0, sq = 0.0;
    for (auto r : rows) {
      sum += y[r];
      sq += y[r] * y[r];
    }
    double sse = sq - sum * sum / static_cast<double>(rows.size());
    return sse <= 1e-12 * (sq + 1e-300);
  }
  void leaf(std::span<const std::size_t> rows, std::vector<double>& out) const {
    double sum = 0.0;
    for (auto r : rows) sum += y[r];
    out.push_back(sum / static_cast<double>(rows.size()));
  }
};

// Gini criterion over k classes. Stats per bin: {n_0..n_{k-1}, count}.
template <int K>
struct GiniCriterion {
  static constexpr int stat_width = K + 1;
  std::span<const int> labels;

  void add(double* s, std::size_t row) const {
    s[labels[row]] += 1.0;
    s[K] += 1.0;
  }
  static double count(const double* s) { return s[K]; }
  static double score(const double* s) {
    if (s[K] <= 0) return 0.0;
    double acc = 0.0;
    for (int c = 0; c < K; ++c) acc += s[c] * s[c];
    return acc / s[K];
  }
  bool pure(std::span<const std::size_t> rows) const {
    for (auto r : rows)
      if (labels[r] != labels[rows[0]]) return false;
    return true;
  }
  void leaf(std::span<const std::size_t> rows, std::vector<double>& out) const {
    std::array<double, K> freq{};
    for (auto r : rows) freq[static_cast<std::size_t>(labels[r])] += 1.0;
    for (int c = 0; c < K; ++c) out.push_back(freq[static_cast<std::size_t>(c)] / static_cast<double>(rows.size()));
  }
};

struct GrowParams {
  int mtry;
  int min_leaf;
  int max_depth;  // < 0: unlimited
  std::size_t sample_size;
};

template <class Criterion>
class TreeGrower {
 public:
  TreeGrower(const BinnedMatrix& bx, const Criterion& crit, const GrowParams& params)
      : bx_(bx), crit_(crit), params_(params) {
    hist_.assign(bx.max_bins() * Criterion::stat_width, 0.0);
    features_.resize(bx.cols());
  }

  Tree grow(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = bx_.rows();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t m = params_.sample_size;
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());

    Tree tree;
    struct Pending {
      int node;
      std::size_t begin, end;
      int depth;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, 0, m, 0});
    while (!stack.empty()) {
      Pending cur = stack.back();
      stack.pop_back();
      std::span<std::size_t> rows(idx.data() + cur.begin, cur.end - cur.begin);
      Split split = best_split(rows, cur.depth, rng);
      if (split.feature < 0) {
        tree.nodes[static_cast<std::size_t>(cur.node)].leaf = static_cast<int>(tree.leaf_values.size());
        crit_.leaf(rows, tree.leaf_values);
        continue;
      }
      const std::uint16_t* codes = bx_.codes(static_cast<std::size_t>(split.feature));
      auto mid = std::partition(rows.begin(), rows.end(), [&](std::size_t r) { return codes[r] <= split.bin; });
      std::size_t cut = cur.begin + static_cast<std::size_t>(mid - rows.begin());
      int left = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      int right = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      TreeNode& node = tree.nodes[static_cast<std::size_t>(cur.node)];
      node.feature = split.feature;
      node.threshold = bx_.cut(static_cast<std::size_t>(split.feature), split.bin);
      node.left = left;
      node.right = right;
      stack.push_back({right, cut, cur.end, cur.depth + 1});
      stack.push_back({left, cur.begin, cut, cur.depth + 1});
    }
    return tree;
  }

 private:
  struct Split {
    int feature = -1;
    std::size_t bin = 0;
  };

  Split best_split(std::span<const std::size_t> rows, int depth, std::mt19937_64& rng) {
    Split best;
    const std::size_t size = rows.size();
    const auto min_leaf = static_cast<std::size_t>(params_.min_leaf);
    if (size < 2 * min_leaf || size < 2) return best;
    if (params_.max_depth >= 0 && depth >= params_.max_depth) return best;
    if (crit_.pure(rows)) return best;

    // mtry candidate features, visited in ascending index order so that gain
    // ties resolve to the lowest feature, then the lowest threshold.
    const std::size_t p = bx_.cols();
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    const auto mtry = std::min<std::size_t>(static_cast<std::size_t>(params_.mtry), p);
    for (std::size_t i = 0; i < mtry; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, p - 1);
      std::swap(features_[i], features_[pick(rng)]);
    }
    std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry));

    constexpr int w = Criterion::stat_width;
    std::array<double, w> total{}, left{}, right{};
    for (auto r : rows) crit_.add(total.data(), r);
    const double parent = Criterion::score(total.data());
    double best_gain = 0.0;

    for (std::size_t fi = 0; fi < mtry; ++fi) {
      const std::size_t j = features_[fi];
      const std::uint16_t* codes = bx_.codes(j);
      touched_.clear();
      for (auto r : rows) {
        double* s = hist_.data() + static_cast<std::size_t>(codes[r]) * w;
        if (Criterion::count(s) == 0.0) touched_.push_back(codes[r]);
        crit_.add(s, r);
      }
      if (touched_.size() > 1) {
        std::sort(touched_.begin(), touched_.end());
        left.fill(0.0);
        for (std::size_t k = 0; k + 1 < touched_.size(); ++k) {
          const double* s = hist_.data() + static_cast<std::size_t>(touched_[k]) * w;
          for (int c = 0; c < w; ++c) left[static_cast<std::size_t>(c)] += s[c];
          const double nl = Criterion::count(left.data());
          const double nr = static_cast<double>(size) - nl;
          if (nl < static_cast<double>(min_leaf)) continue;
          if (nr < static_cast<double>(min_leaf)) break;
          for (int c = 0; c < w; ++c) right[static_cast<std::size_t>(c)] = total[static_cast<std::size_t>(c)] - left[static_cast<std::size_t>(c)];
          double gain = Criterion::score(left.data()) + Criterion::score(right.data()) - parent;
          if (gain > best_gain) {
            best_gain = gain;
            best.feature = static_cast<int>(j);
            best.bin = touched_[k];
          }
        }
      }
      for (auto b : touched_) std::fill_n(hist_.data() + static_cast<std::size_t>(b) * w, w, 0.0);
    }
    // Relative floor against accumulated rounding on near-constant nodes.
    if (best.feature >= 0 && best_gain <= 1e-12 * std::fabs(parent)) best.feature = -1;
    return best;
  }

  const BinnedMatrix& bx_;
  const Criterion& crit_;
  GrowParams params_;
  std::vector<double> hist_;
  std::vector<std::uint16_t> touched_;
  std::vector<std::size_t> features_;
};

GrowParams make_params(const ForestConfig& cfg, std::size_t n, std::size_t p, bool classification) {
  GrowParams g{};
  g.mtry = cfg.mtry > 0 ? cfg.mtry : (classification ? default_mtry_classification(p) : default_mtry_regression(p));
  g.min_leaf = cfg.min_leaf > 0 ? cfg.min_leaf : (classification ? 10 : 5);
  g.max_depth = cfg.max_depth ? *cfg.max_depth : -1;
  auto m = static_cast<std::size_t>(std::llround(cfg.subsample_fraction * static_cast<double>(n)));
  g.sample_size = std::clamp<std::size_t>(m, 1, n);
  return g;
}

template <class Criterion>
std::vector<Tree> grow_forest(const BinnedMatrix& bx, const Criterion& crit, const GrowParams& params,
                              const ForestConfig& cfg) {
  std::vector<Tree> trees(static_cast<std::size_t>(cfg.n_trees));
  const int threads = std::max(1, cfg.threads);
  // One grower (scratch buffers) per task chunk; trees seeded by index.
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), trees.size());
  parallel_for(chunks, threads, [&](std::size_t c) {
    TreeGrower<Criterion> grower(bx, crit, params);
    for (std::size_t t = c; t < trees.size(); t += chunks) trees[t] = grower.grow(derive_seed(cfg.seed, {t}));
  });
  return trees;
}

const double* traverse(const Tree& tree, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const TreeNode* node = &tree.nodes[0];
  while (node->feature >= 0) {
    node = row(node->feature) <= node->threshold ? &tree.nodes[static_cast<std::size_t>(node->left)]
                                                 : &tree.nodes[static_cast<std::size_t>(node->right)];
  }
  return tree.leaf_values.data() + node->leaf;
}

void check_inputs(const Eigen::MatrixXd& x, std::size_t n) {
  if (x.rows() == 0 || n == 0) throw std::invalid_argument("forest: empty training data");
  if (x.cols() == 0) throw std::invalid_argument("forest: no features");
  if (static_cast<std::size_t>(x.rows()) != n) throw std::invalid_argument("forest: X and response lengths differ");
  if (!x.allFinite()) throw std::invalid_argument("forest: non-finite feature value");
}

void dump_trees(std::ostream& out, const char* kind, const std::vector<Tree>& trees, std::size_t p, int outputs) {
  out.precision(17);
  out << "forest " << kind << " trees=" << trees.size() << " features=" << p << " outputs=" << outputs << '\n';
  for (std::size_t t = 0; t < trees.size(); ++t) {
    out << "tree " << t << " nodes=" << trees[t].nodes.size() << '\n';
    for (std::size_t k = 0; k < trees[t].nodes.size(); ++k) {
      const auto& nd = trees[t].nodes[k];
      if (nd.feature >= 0) {
        out << k << " split " << nd.feature << ' ' << nd.threshold << ' ' << nd.left << ' ' << nd.right << '\n';
      } else {
        out << k << " leaf";
        for (int o = 0; o < outputs; ++o) out << ' ' << trees[t].leaf_values[static_cast<std::size_t>(nd.leaf + o)];
        out << '\n';
      }
    }
  }
}

}  // namespace

RegressionForest RegressionForest::fit(const Eigen::MatrixXd& x, std::span<const double> y, const ForestConfig& cfg) {
  cfg.validate();
  check_inputs(x, y.size());
  for (double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("forest: non-finite response");
  GrowParams params = make_params(cfg, y.size(), static_cast<std::size_t>(x.cols()), false);
  if (y.size() < static_cast<std::size_t>(params.min_leaf))
    throw std::invalid_argument("forest: fewer rows than min_leaf");
  BinnedMatrix bx(x, cfg.max_bins);
  VarianceCriterion crit{y};
  RegressionForest f;
  f.n_features_ = static_cast<std::size_t>(x.cols());
  f.trees_ = grow_forest(bx, crit, params, cfg);
  return f;
}

double RegressionForest::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (static_cast<std::size_t>(row.size()) != n_features_) throw std::invalid_argument("forest: feature count mismatch");
  double acc = 0.0;
  for (const auto& tree : trees_) acc += *traverse(tree, row);
  return acc / static_cast<double>(trees_.size());
}

Eigen::VectorXd RegressionForest::predict(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict_row(x.row(i));
  return out;
}

void RegressionForest::dump(std::ostream& out) const { dump_trees(out, "regression", trees_, n_features_, 1); }

ProbabilityForest ProbabilityForest::fit(const Eigen::MatrixXd& x, std::span<const int> labels, const ForestConfig& cfg,
                                         int n_classes) {
  cfg.validate();
  check_inputs(x, labels.size());
  if (n_classes != 4) throw std::invalid_argument("probability forest: only 4-class problems are supported");
  GrowParams params = make_params(cfg, labels.size(), static_cast<std::size_t>(x.cols()), true);
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes) throw std::invalid_argument("probability forest: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c = 0; c < n_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < static_cast<std::size_t>(std::max(1, params.min_leaf)))
      throw std::invalid_argument("probability forest: missing class " + std::to_string(c) + " (fewer than min_leaf rows)");
  }
  BinnedMatrix bx(x, cfg.max_bins);
  GiniCriterion<4> crit{labels};
  ProbabilityForest f;
  f.n_classes_ = n_classes;
  f.n_features_ = static_cast<std::size_t>(x.cols());
  f.trees_ = grow_forest(bx, crit, params, cfg);
  return f;
}

Eigen::VectorXd ProbabilityForest::predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (static_cast<std::size_t>(row.size()) != n_features_) throw std::invalid_argument("forest: feature count mismatch");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n_classes_);
  for (const auto& tree : trees_) {
    const double* v = traverse(tree, row);
    for (int c = 0; c < n_classes_; ++c) acc(c) += v[c];
  }
  return acc / static_cast<double>(trees_.size());
}

Eigen::MatrixXd ProbabilityForest::predict(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd out(x.rows(), n_classes_);
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = predict_row(x.row(i)).transpose();
  return out;
}

void ProbabilityForest::dump(std::ostream& out) const { dump_trees(out, "probability", trees_, n_features_, n_classes_); }

}  // namespace diddml
