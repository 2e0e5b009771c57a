#include "segmil/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <thread>

#include "segmil/binary_io.hpp"
#include "segmil/rng.hpp"

namespace segmil {

PooledEmbedding PoolEmbeddings(const Bag& bag, EmbeddingPool mode) {
  PooledEmbedding out{bag.utterance_id, {}, bag.label};
  const bool is_max = mode == EmbeddingPool::kMax;
  out.vector.assign(bag.dim, is_max ? -std::numeric_limits<double>::infinity() : 0.0);
  std::size_t n = 0;
  for (std::size_t t = 0; t < bag.max_len; ++t) {
    if (!bag.mask[t]) continue;
    ++n;
    const auto row = bag.row(t);
    for (std::size_t m = 0; m < bag.dim; ++m) {
      out.vector[m] = is_max ? std::max(out.vector[m], static_cast<double>(row[m])) : out.vector[m] + row[m];
    }
  }
  if (n == 0) throw Error(ErrorCode::kEmptyBag, "bag " + bag.utterance_id + " has no unmasked rows");
  if (!is_max) {
    for (double& v : out.vector) v /= static_cast<double>(n);
  }
  return out;
}

std::span<const double> DecisionTree::Leaf(const std::vector<double>& x, int num_classes) const {
  std::uint32_t i = 0;
  while (nodes[i].feature >= 0) {
    i = x[static_cast<std::size_t>(nodes[i].feature)] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  const std::size_t k = static_cast<std::size_t>(num_classes);
  return {distributions.data() + nodes[i].leaf * k, k};
}

std::vector<double> RandomForest::Predict(const std::vector<double>& x) const {
  if (x.size() != dim_) {
    throw Error(ErrorCode::kShapeMismatch,
                "forest expects dimension " + std::to_string(dim_) + ", got " + std::to_string(x.size()));
  }
  std::vector<double> out(static_cast<std::size_t>(num_classes_), 0.0);
  for (const auto& tree : trees_) {
    const auto leaf = tree.Leaf(x, num_classes_);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += leaf[k];
  }
  for (double& v : out) v /= static_cast<double>(trees_.size());
  return out;
}

namespace {

struct TreeBuilder {
  std::span<const PooledEmbedding> data;
  std::size_t k;
  std::size_t dim;
  const ForestConfig& cfg;
  std::size_t n_features;
  Rng rng;
  DecisionTree tree;

  double Gini(const std::vector<double>& counts, double n) const {
    if (n <= 0) return 0.0;
    double s = 0.0;
    for (double c : counts) s += c * c;
    return 1.0 - s / (n * n);
  }

  std::uint32_t MakeLeaf(const std::vector<std::size_t>& idx) {
    std::vector<double> counts(k, 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(data[i].label)] += 1.0;
    TreeNode node;
    node.leaf = static_cast<std::uint32_t>(tree.distributions.size() / k);
    for (double c : counts) tree.distributions.push_back(c / static_cast<double>(idx.size()));
    tree.nodes.push_back(node);
    return static_cast<std::uint32_t>(tree.nodes.size() - 1);
  }

  std::uint32_t Build(std::vector<std::size_t> idx, int depth) {
    std::vector<double> counts(k, 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(data[i].label)] += 1.0;
    const double n = static_cast<double>(idx.size());
    const double parent = Gini(counts, n);
    if (depth >= cfg.max_depth || parent <= 0.0 || idx.size() < static_cast<std::size_t>(cfg.min_samples_split)) {
      return MakeLeaf(idx);
    }

    // Random feature subset by partial Fisher-Yates.
    std::vector<std::size_t> features(dim);
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = 0; i < n_features; ++i) std::swap(features[i], features[i + rng.below(dim - i)]);

    double best_score = parent * n - 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> order = idx;
    for (std::size_t fi = 0; fi < n_features; ++fi) {
      const std::size_t f = features[fi];
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double va = data[a].vector[f], vb = data[b].vector[f];
        return va < vb || (va == vb && a < b);
      });
      std::vector<double> left(k, 0.0), right = counts;
      for (std::size_t j = 0; j + 1 < order.size(); ++j) {
        const auto lab = static_cast<std::size_t>(data[order[j]].label);
        left[lab] += 1.0;
        right[lab] -= 1.0;
        const double lo = data[order[j]].vector[f], hi = data[order[j + 1]].vector[f];
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(j + 1), nr = n - nl;
        const double score = nl * Gini(left, nl) + nr * Gini(right, nr);
        if (score < best_score) {
          best_score = score;
          best_feature = static_cast<int>(f);
          double mid = lo + (hi - lo) / 2.0;
          if (!(mid < hi)) mid = lo;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return MakeLeaf(idx);

    std::vector<std::size_t> li, ri;
    for (std::size_t i : idx) {
      (data[i].vector[static_cast<std::size_t>(best_feature)] <= best_threshold ? li : ri).push_back(i);
    }
    const auto self = static_cast<std::uint32_t>(tree.nodes.size());
    TreeNode node;
    node.feature = best_feature;
    node.threshold = best_threshold;
    tree.nodes.push_back(node);
    const auto l = Build(std::move(li), depth + 1);
    const auto r = Build(std::move(ri), depth + 1);
    tree.nodes[self].left = l;
    tree.nodes[self].right = r;
    return self;
  }
};

DecisionTree TrainTree(std::span<const PooledEmbedding> data, std::size_t k, std::size_t dim, std::size_t n_features,
                       const ForestConfig& cfg, int index) {
  TreeBuilder b{data, k, dim, cfg, n_features, Rng(DeriveSeed(cfg.seed, static_cast<std::uint64_t>(index))), {}};
  std::vector<std::size_t> boot(data.size());
  for (auto& i : boot) i = b.rng.below(data.size());
  std::sort(boot.begin(), boot.end());
  b.Build(std::move(boot), 0);
  return std::move(b.tree);
}

}  // namespace

RandomForest TrainForest(std::span<const PooledEmbedding> data, int num_classes, const ForestConfig& cfg) {
  if (cfg.n_trees < 1 || cfg.max_depth < 0 || cfg.min_samples_split < 2 || cfg.threads < 1) {
    throw Error(ErrorCode::kInvalidConfig, "forest configuration out of range");
  }
  if (data.empty()) throw Error(ErrorCode::kDegenerateData, "no training vectors");
  const std::size_t dim = data.front().vector.size();
  std::set<int> classes;
  for (const auto& p : data) {
    if (p.vector.size() != dim) throw Error(ErrorCode::kShapeMismatch, "ragged pooled embeddings");
    if (p.label < 0 || p.label >= num_classes) throw Error(ErrorCode::kShapeMismatch, "label out of range");
    classes.insert(p.label);
  }
  if (classes.size() < 2) throw Error(ErrorCode::kDegenerateData, "random forest needs at least 2 classes");
  std::size_t n_features = cfg.max_features > 0 ? static_cast<std::size_t>(cfg.max_features)
                                                : static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(dim))));
  n_features = std::clamp<std::size_t>(n_features, 1, dim);

  std::vector<DecisionTree> trees(static_cast<std::size_t>(cfg.n_trees));
  const auto k = static_cast<std::size_t>(num_classes);
  auto work = [&](int first, int step) {
    for (int t = first; t < cfg.n_trees; t += step) trees[static_cast<std::size_t>(t)] = TrainTree(data, k, dim, n_features, cfg, t);
  };
  if (cfg.threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < cfg.threads; ++i) pool.emplace_back(work, i, cfg.threads);
  }
  return RandomForest(num_classes, dim, cfg, std::move(trees));
}

void WriteForest(std::ostream& os, const RandomForest& forest) {
  os.write("MILR", 4);
  io::WriteLE<std::uint32_t>(os, RandomForest::kVersion);
  io::WriteLE<std::int32_t>(os, forest.num_classes());
  io::WriteLE<std::uint64_t>(os, forest.dim());
  io::WriteLE<std::int32_t>(os, forest.config().n_trees);
  io::WriteLE<std::int32_t>(os, forest.config().max_depth);
  io::WriteLE<std::uint64_t>(os, forest.config().seed);
  io::WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(forest.trees().size()));
  for (const auto& tree : forest.trees()) {
    io::WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(tree.nodes.size()));
    for (const auto& n : tree.nodes) {
      io::WriteLE<std::int32_t>(os, n.feature);
      io::WriteLE<double>(os, n.threshold);
      io::WriteLE<std::uint32_t>(os, n.left);
      io::WriteLE<std::uint32_t>(os, n.right);
      io::WriteLE<std::uint32_t>(os, n.leaf);
    }
    io::WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(tree.distributions.size()));
    for (double d : tree.distributions) io::WriteLE<double>(os, d);
  }
  if (!os) throw Error(ErrorCode::kIoError, "failed writing forest");
}

RandomForest ReadForest(std::istream& is) {
  io::ExpectMagic(is, "MILR", "forest");
  const auto version = io::ReadLE<std::uint32_t>(is);
  if (version != RandomForest::kVersion) {
    throw Error(ErrorCode::kCorruptStore, "unsupported forest version " + std::to_string(version));
  }
  const auto k = io::ReadLE<std::int32_t>(is);
  const auto dim = io::ReadLE<std::uint64_t>(is);
  ForestConfig cfg;
  cfg.n_trees = io::ReadLE<std::int32_t>(is);
  cfg.max_depth = io::ReadLE<std::int32_t>(is);
  cfg.seed = io::ReadLE<std::uint64_t>(is);
  const auto n_trees = io::ReadLE<std::uint32_t>(is);
  if (k < 1 || n_trees > (1u << 20)) throw Error(ErrorCode::kCorruptStore, "forest header out of range");
  std::vector<DecisionTree> trees(n_trees);
  for (auto& tree : trees) {
    const auto nodes = io::ReadLE<std::uint32_t>(is);
    if (nodes > (1u << 26)) throw Error(ErrorCode::kCorruptStore, "node count out of range");
    tree.nodes.resize(nodes);
    for (auto& n : tree.nodes) {
      n.feature = io::ReadLE<std::int32_t>(is);
      n.threshold = io::ReadLE<double>(is);
      n.left = io::ReadLE<std::uint32_t>(is);
      n.right = io::ReadLE<std::uint32_t>(is);
      n.leaf = io::ReadLE<std::uint32_t>(is);
    }
    const auto nd = io::ReadLE<std::uint32_t>(is);
    if (nd > (1u << 28)) throw Error(ErrorCode::kCorruptStore, "leaf table out of range");
    tree.distributions.resize(nd);
    for (double& d : tree.distributions) d = io::ReadLE<double>(is);
    for (const auto& n : tree.nodes) {
      const bool bad = n.feature >= 0 ? (n.left >= nodes || n.right >= nodes || static_cast<std::uint64_t>(n.feature) >= dim)
                                      : (static_cast<std::size_t>(n.leaf + 1) * static_cast<std::size_t>(k) > nd);
      if (bad) throw Error(ErrorCode::kCorruptStore, "forest node references out of range");
    }
  }
  return RandomForest(k, dim, cfg, std::move(trees));
}

void SaveForest(const std::filesystem::path& path, const RandomForest& forest) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  WriteForest(os, forest);
}

RandomForest LoadForest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  return ReadForest(is);
}

}  // namespace segmil
