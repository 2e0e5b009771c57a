#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "segmil/bagging.hpp"

namespace segmil {

enum class EmbeddingPool { kMax, kAvg };

struct PooledEmbedding {
  std::string utterance_id;
  std::vector<double> vector;
  int label = -1;
};

// Per-dimension max or mean over the unmasked rows of a bag.
PooledEmbedding PoolEmbeddings(const Bag& bag, EmbeddingPool mode);

struct ForestConfig {
  int n_trees = 200;
  int max_depth = 16;
  int max_features = 0;  // 0: floor(sqrt(M))
  int min_samples_split = 2;
  int threads = 1;
  std::uint64_t seed = 1;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;     // x[feature] <= threshold goes left
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t leaf = 0;     // index into the tree's leaf table
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;        // nodes[0] is the root
  std::vector<double> distributions;  // leaves x K
  bool operator==(const DecisionTree&) const = default;

  std::span<const double> Leaf(const std::vector<double>& x, int num_classes) const;
};

class RandomForest {
 public:
  static constexpr std::uint32_t kVersion = 1;

  RandomForest() = default;
  RandomForest(int num_classes, std::size_t dim, ForestConfig cfg, std::vector<DecisionTree> trees)
      : num_classes_(num_classes), dim_(dim), cfg_(cfg), trees_(std::move(trees)) {}

  // Mean of the per-tree leaf distributions.
  std::vector<double> Predict(const std::vector<double>& x) const;

  int num_classes() const { return num_classes_; }
  std::size_t dim() const { return dim_; }
  const ForestConfig& config() const { return cfg_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  bool operator==(const RandomForest& other) const {
    return num_classes_ == other.num_classes_ && dim_ == other.dim_ && cfg_.n_trees == other.cfg_.n_trees &&
           cfg_.max_depth == other.cfg_.max_depth && cfg_.seed == other.cfg_.seed && trees_ == other.trees_;
  }

 private:
  int num_classes_ = 0;
  std::size_t dim_ = 0;
  ForestConfig cfg_;
  std::vector<DecisionTree> trees_;
};

// Bootstrap + random feature subsets + Gini splits. Deterministic under
// cfg.seed regardless of thread count. kDegenerateData with < 2 classes.
RandomForest TrainForest(std::span<const PooledEmbedding> data, int num_classes, const ForestConfig& cfg);

// "MILR" | u32 version | i32 K | u64 M | i32 n_trees | i32 max_depth | u64 seed |
// per tree: u32 nodes, nodes x (i32 feature, f64 threshold, u32 left, u32 right, u32 leaf),
// u32 leaves, leaves x K f64.
void WriteForest(std::ostream& os, const RandomForest& forest);
RandomForest ReadForest(std::istream& is);
void SaveForest(const std::filesystem::path& path, const RandomForest& forest);
RandomForest LoadForest(const std::filesystem::path& path);

}  // namespace segmil
