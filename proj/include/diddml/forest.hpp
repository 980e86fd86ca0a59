#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace diddml {

// Random-forest hyperparameters. Zero for mtry/min_leaf selects the task
// default: ceil(p/3) and 5 for regression, ceil(sqrt(p)) and 10 for
// class-probability forests.
struct ForestConfig {
  int n_trees = 500;
  int mtry = 0;
  int min_leaf = 0;
  double subsample_fraction = 0.5;  // drawn without replacement
  std::optional<int> max_depth;
  std::uint64_t seed = 1;
  // Candidate thresholds per feature. Features with at most this many
  // distinct training values are split exactly at midpoints.
  int max_bins = 256;
  int threads = 1;

  void validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int leaf = -1;  // offset / outputs into the tree's leaf values
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<double> leaf_values;  // outputs values per leaf
};

class RegressionForest {
 public:
  static RegressionForest fit(const Eigen::MatrixXd& x, std::span<const double> y, const ForestConfig& cfg);

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;

  std::size_t n_trees() const { return trees_.size(); }
  std::size_t n_features() const { return n_features_; }
  const std::vector<Tree>& trees() const { return trees_; }
  void dump(std::ostream& out) const;

 private:
  std::vector<Tree> trees_;
  std::size_t n_features_ = 0;
};

class ProbabilityForest {
 public:
  // labels in [0, n_classes); every class must appear at least min_leaf times.
  static ProbabilityForest fit(const Eigen::MatrixXd& x, std::span<const int> labels, const ForestConfig& cfg,
                               int n_classes = 4);

  // Rows lie on the probability simplex.
  Eigen::MatrixXd predict(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;

  int n_classes() const { return n_classes_; }
  std::size_t n_trees() const { return trees_.size(); }
  std::size_t n_features() const { return n_features_; }
  const std::vector<Tree>& trees() const { return trees_; }
  void dump(std::ostream& out) const;

 private:
  std::vector<Tree> trees_;
  std::size_t n_features_ = 0;
  int n_classes_ = 4;
};

int default_mtry_regression(std::size_t p);
int default_mtry_classification(std::size_t p);

}  // namespace diddml
