#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "segmil/rng.hpp"
#include "segmil/tensor.hpp"

namespace segmil {

// Layers are stateless apart from their parameters: the owning network keeps
// every activation and hands the layer its own input and output on the way
// back, so one layer object can be shared by forward and backward passes
// without caching.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  // Short token used in architecture strings, e.g. "conv3x3:16".
  virtual std::string Describe() const = 0;
  virtual std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const = 0;
  virtual void Forward(const Tensor<T>& in, Tensor<T>& out) const = 0;
  // Accumulates parameter gradients; writes dL/d(in) when grad_in is non-null.
  virtual void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                        Tensor<T>* grad_in) = 0;
  virtual std::vector<Param<T>*> Params() { return {}; }
};

// y = x W + b over the trailing dimensions flattened; W is in x out.
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in, std::size_t out, const std::string& name);
  void Init(Rng& rng);  // He-uniform on fan-in, zero bias
  std::string Describe() const override { return "dense:" + std::to_string(out_); }
  std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const override;
  void Forward(const Tensor<T>& in, Tensor<T>& out) const override;
  void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                Tensor<T>* grad_in) override;
  std::vector<Param<T>*> Params() override { return {&weight_, &bias_}; }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }

 private:
  std::size_t in_, out_;
  Param<T> weight_, bias_;
};

// Stride-1 "same" convolution over [B, C, H, W] with odd kernel sizes.
template <typename T>
class Conv2D final : public Layer<T> {
 public:
  Conv2D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
         const std::string& name);
  void Init(Rng& rng);
  std::string Describe() const override;
  std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const override;
  void Forward(const Tensor<T>& in, Tensor<T>& out) const override;
  void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                Tensor<T>* grad_in) override;
  std::vector<Param<T>*> Params() override { return {&weight_, &bias_}; }

 private:
  std::size_t in_c_, out_c_, kh_, kw_;
  Param<T> weight_, bias_;  // weight: out_c x (in_c * kh * kw)
};

enum class PoolMode { kMax, kAvg };

// Non-overlapping pooling (stride = window) over [B, C, H, W]; trailing rows
// and columns that do not fill a window are dropped.
template <typename T>
class Pool2D final : public Layer<T> {
 public:
  Pool2D(PoolMode mode, std::size_t ph, std::size_t pw) : mode_(mode), ph_(ph), pw_(pw) {}
  std::string Describe() const override;
  std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const override;
  void Forward(const Tensor<T>& in, Tensor<T>& out) const override;
  void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                Tensor<T>* grad_in) override;

 private:
  PoolMode mode_;
  std::size_t ph_, pw_;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  std::string Describe() const override { return "relu"; }
  std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const override { return in; }
  void Forward(const Tensor<T>& in, Tensor<T>& out) const override;
  void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                Tensor<T>* grad_in) override;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string Describe() const override { return "flatten"; }
  std::vector<std::size_t> OutputShape(const std::vector<std::size_t>& in) const override;
  void Forward(const Tensor<T>& in, Tensor<T>& out) const override;
  void Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out,
                Tensor<T>* grad_in) override;
};

template <typename T>
class Sequential {
 public:
  void Add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }

  const Tensor<T>& Forward(const Tensor<T>& input);
  // Inference without touching the network's own activation buffers; safe to
  // call concurrently on a shared network. acts[i + 1] is the output of layer i.
  void Infer(const Tensor<T>& input, std::vector<Tensor<T>>& acts) const;
  // Activation after layer i (i = -1 style access via Input()).
  const Tensor<T>& Output(std::size_t i) const { return acts_.at(i + 1); }
  const Tensor<T>& Input() const { return acts_.at(0); }
  // Backpropagates from the last forward pass. Returns dL/d(input) when requested.
  void Backward(const Tensor<T>& grad_out, Tensor<T>* grad_input = nullptr);

  std::vector<Param<T>*> Params();
  std::vector<std::size_t> OutputShape(std::vector<std::size_t> in) const;

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<Tensor<T>> acts_;
  std::vector<Tensor<T>> grads_;
};

// Row-wise softmax over a [B, K] tensor.
template <typename T>
void SoftmaxRows(const Tensor<T>& logits, Tensor<T>& probs);

// Mean categorical cross-entropy of softmax(logits) against labels. When
// grad_logits is non-null it receives (softmax - onehot) / B.
template <typename T>
T SoftmaxCrossEntropy(const Tensor<T>& logits, std::span<const int> labels, std::type_identity_t<Tensor<T>>* grad_logits);

void ZeroGrads(const std::vector<Param<float>*>& params);
void ZeroGrads(const std::vector<Param<double>*>& params);

}  // namespace segmil
