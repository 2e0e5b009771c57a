#include "segmil/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace segmil {

std::string ShapeString(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void HeUniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : w.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

void RequireRank(const std::vector<std::size_t>& shape, std::size_t rank, const char* layer) {
  if (shape.size() != rank) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(layer) + " expects rank " + std::to_string(rank) + " input, got " + ShapeString(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense

template <typename T>
Dense<T>::Dense(std::size_t in, std::size_t out, const std::string& name)
    : in_(in), out_(out), weight_(name + ".weight", {in, out}), bias_(name + ".bias", {out}) {}

template <typename T>
void Dense<T>::Init(Rng& rng) {
  HeUniform(weight_.value, in_, rng);
  bias_.value.Fill(T(0));
}

template <typename T>
std::vector<std::size_t> Dense<T>::OutputShape(const std::vector<std::size_t>& in) const {
  if (in.empty() || ShapeSize(in) / in[0] != in_) {
    throw Error(ErrorCode::kShapeMismatch, "dense layer expects " + std::to_string(in_) + " features, got " +
                                               ShapeString(in));
  }
  return {in[0], out_};
}

template <typename T>
void Dense<T>::Forward(const Tensor<T>& in, Tensor<T>& out) const {
  const auto shape = OutputShape(in.shape());
  const std::size_t rows = shape[0];
  out.Resize(shape);
  auto x = in.Matrix(rows);
  auto w = weight_.value.Matrix(in_);
  auto y = out.Matrix(rows);
  y.noalias() = x * w;
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(),
                                                                        static_cast<Eigen::Index>(out_));
}

template <typename T>
void Dense<T>::Backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  const std::size_t rows = in.dim(0);
  auto x = in.Matrix(rows);
  auto dy = grad_out.Matrix(rows);
  weight_.grad.Matrix(in_).noalias() += x.transpose() * dy;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), static_cast<Eigen::Index>(out_)) +=
      dy.colwise().sum();
  if (grad_in != nullptr) {
    grad_in->Resize(in.shape());
    grad_in->Matrix(rows).noalias() = dy * weight_.value.Matrix(in_).transpose();
  }
}

// ---------------------------------------------------------------------------
// Conv2D via im2col: col is (C*kh*kw) x (H*W), so out_b = W * col.

template <typename T>
Conv2D<T>::Conv2D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w,
                  const std::string& name)
    : in_c_(in_channels),
      out_c_(out_channels),
      kh_(kernel_h),
      kw_(kernel_w),
      weight_(name + ".weight", {out_channels, in_channels * kernel_h * kernel_w}),
      bias_(name + ".bias", {out_channels}) {
  if (kh_ % 2 == 0 || kw_ % 2 == 0) throw Error(ErrorCode::kInvalidConfig, "conv kernels must have odd size");
}

template <typename T>
void Conv2D<T>::Init(Rng& rng) {
  HeUniform(weight_.value, in_c_ * kh_ * kw_, rng);
  bias_.value.Fill(T(0));
}

template <typename T>
std::string Conv2D<T>::Describe() const {
  return "conv" + std::to_string(kh_) + "x" + std::to_string(kw_) + ":" + std::to_string(out_c_);
}

template <typename T>
std::vector<std::size_t> Conv2D<T>::OutputShape(const std::vector<std::size_t>& in) const {
  RequireRank(in, 4, "conv");
  if (in[1] != in_c_) throw Error(ErrorCode::kShapeMismatch, "conv channel mismatch: " + ShapeString(in));
  return {in[0], out_c_, in[2], in[3]};
}

namespace {

template <typename T>
void Im2Col(const T* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, T* col) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t hw = h * w;
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = img + ch * hw;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
        T* dst = col + row * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          T* out_row = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out_row, out_row + w, T(0));
            continue;
          }
          const T* src_row = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            out_row[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T(0) : src_row[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void Col2ImAdd(const T* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw, T* img) {
  const auto ph = static_cast<std::ptrdiff_t>(kh / 2);
  const auto pw = static_cast<std::ptrdiff_t>(kw / 2);
  const std::size_t hw = h * w;
  std::size_t row = 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    T* plane = img + ch * hw;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
        const T* src = col + row * hw;
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - ph;
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst_row = plane + static_cast<std::size_t>(sy) * w;
          const T* src_row = src + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + dx;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst_row[sx] += src_row[x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void Conv2D<T>::Forward(const Tensor<T>& in, Tensor<T>& out) const {
  const auto shape = OutputShape(in.shape());
  out.Resize(shape);
  const std::size_t batch = shape[0], h = shape[2], w = shape[3], hw = h * w;
  const std::size_t k = in_c_ * kh_ * kw_;
  std::vector<T> col(k * hw);
  ConstMatMap<T> weight(weight_.value.data(), static_cast<Eigen::Index>(out_c_), static_cast<Eigen::Index>(k));
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(bias_.value.data(), static_cast<Eigen::Index>(out_c_));
  for (std::size_t b = 0; b < batch; ++b) {
    Im2Col(in.data() + b * in_c_ * hw, in_c_, h, w, kh_, kw_, col.data());
    MatMap<T> y(out.data() + b * out_c_ * hw, static_cast<Eigen::Index>(out_c_), static_cast<Eigen::Index>(hw));
    y.noalias() = weight * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    y.colwise() += bias;
  }
}

template <typename T>
void Conv2D<T>::Backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  const std::size_t batch = in.dim(0), h = in.dim(2), w = in.dim(3), hw = h * w;
  const std::size_t k = in_c_ * kh_ * kw_;
  std::vector<T> col(k * hw);
  std::vector<T> dcol(k * hw);
  MatMap<T> dweight(weight_.grad.data(), static_cast<Eigen::Index>(out_c_), static_cast<Eigen::Index>(k));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dbias(bias_.grad.data(), static_cast<Eigen::Index>(out_c_));
  ConstMatMap<T> weight(weight_.value.data(), static_cast<Eigen::Index>(out_c_), static_cast<Eigen::Index>(k));
  if (grad_in != nullptr) {
    grad_in->Resize(in.shape());
    grad_in->Fill(T(0));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    Im2Col(in.data() + b * in_c_ * hw, in_c_, h, w, kh_, kw_, col.data());
    ConstMatMap<T> dy(grad_out.data() + b * out_c_ * hw, static_cast<Eigen::Index>(out_c_),
                      static_cast<Eigen::Index>(hw));
    ConstMatMap<T> cols(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw));
    dweight.noalias() += dy * cols.transpose();
    dbias += dy.rowwise().sum();
    if (grad_in != nullptr) {
      MatMap<T>(dcol.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(hw)).noalias() =
          weight.transpose() * dy;
      Col2ImAdd(dcol.data(), in_c_, h, w, kh_, kw_, grad_in->data() + b * in_c_ * hw);
    }
  }
}

// ---------------------------------------------------------------------------
// Pooling

template <typename T>
std::string Pool2D<T>::Describe() const {
  return std::string(mode_ == PoolMode::kMax ? "maxpool" : "avgpool") + std::to_string(ph_) + "x" +
         std::to_string(pw_);
}

template <typename T>
std::vector<std::size_t> Pool2D<T>::OutputShape(const std::vector<std::size_t>& in) const {
  RequireRank(in, 4, "pool");
  if (in[2] < ph_ || in[3] < pw_) throw Error(ErrorCode::kShapeMismatch, "pool window larger than input");
  return {in[0], in[1], in[2] / ph_, in[3] / pw_};
}

template <typename T>
void Pool2D<T>::Forward(const Tensor<T>& in, Tensor<T>& out) const {
  const auto shape = OutputShape(in.shape());
  out.Resize(shape);
  const std::size_t planes = shape[0] * shape[1];
  const std::size_t ih = in.dim(2), iw = in.dim(3), oh = shape[2], ow = shape[3];
  const bool is_max = mode_ == PoolMode::kMax;
  const T inv = T(1) / static_cast<T>(ph_ * pw_);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * ih * iw;
    T* dst = out.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      T* acc = dst + y * ow;
      std::fill(acc, acc + ow, is_max ? -std::numeric_limits<T>::infinity() : T(0));
      for (std::size_t dy = 0; dy < ph_; ++dy) {
        const T* row = src + (y * ph_ + dy) * iw;
        for (std::size_t dx = 0; dx < pw_; ++dx) {
          if (is_max) {
            for (std::size_t x = 0; x < ow; ++x) acc[x] = std::max(acc[x], row[x * pw_ + dx]);
          } else {
            for (std::size_t x = 0; x < ow; ++x) acc[x] += row[x * pw_ + dx];
          }
        }
      }
      if (!is_max) {
        for (std::size_t x = 0; x < ow; ++x) acc[x] *= inv;
      }
    }
  }
}

template <typename T>
void Pool2D<T>::Backward(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (grad_in == nullptr) return;
  grad_in->Resize(in.shape());
  grad_in->Fill(T(0));
  const std::size_t planes = in.dim(0) * in.dim(1);
  const std::size_t ih = in.dim(2), iw = in.dim(3), oh = out.dim(2), ow = out.dim(3);
  const T inv = T(1) / static_cast<T>(ph_ * pw_);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = in.data() + p * ih * iw;
    const T* pooled = out.data() + p * oh * ow;
    const T* g = grad_out.data() + p * oh * ow;
    T* dst = grad_in->data() + p * ih * iw;
    for (std::size_t y = 0; y < oh; ++y) {
      if (mode_ == PoolMode::kAvg) {
        for (std::size_t dy = 0; dy < ph_; ++dy) {
          T* row = dst + (y * ph_ + dy) * iw;
          for (std::size_t dx = 0; dx < pw_; ++dx) {
            for (std::size_t x = 0; x < ow; ++x) row[x * pw_ + dx] += g[y * ow + x] * inv;
          }
        }
        continue;
      }
      for (std::size_t x = 0; x < ow; ++x) {
        // Ties route to the first maximum in scan order.
        const T target = pooled[y * ow + x];
        bool routed = false;
        for (std::size_t dy = 0; dy < ph_ && !routed; ++dy) {
          const std::size_t base = (y * ph_ + dy) * iw + x * pw_;
          for (std::size_t dx = 0; dx < pw_; ++dx) {
            if (src[base + dx] == target) {
              dst[base + dx] += g[y * ow + x];
              routed = true;
              break;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU / Flatten

template <typename T>
void ReLU<T>::Forward(const Tensor<T>& in, Tensor<T>& out) const {
  out.Resize(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
}

template <typename T>
void ReLU<T>::Backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (grad_in == nullptr) return;
  grad_in->Resize(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) (*grad_in)[i] = in[i] > T(0) ? grad_out[i] : T(0);
}

template <typename T>
std::vector<std::size_t> Flatten<T>::OutputShape(const std::vector<std::size_t>& in) const {
  if (in.empty()) throw Error(ErrorCode::kShapeMismatch, "flatten needs a batch dimension");
  return {in[0], ShapeSize(in) / in[0]};
}

template <typename T>
void Flatten<T>::Forward(const Tensor<T>& in, Tensor<T>& out) const {
  out = in;
  out.Reshape(OutputShape(in.shape()));
}

template <typename T>
void Flatten<T>::Backward(const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& grad_out, Tensor<T>* grad_in) {
  if (grad_in == nullptr) return;
  *grad_in = grad_out;
  grad_in->Reshape(in.shape());
}

// ---------------------------------------------------------------------------
// Sequential

template <typename T>
void Sequential<T>::Infer(const Tensor<T>& input, std::vector<Tensor<T>>& acts) const {
  acts.resize(layers_.size() + 1);
  acts[0] = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->Forward(acts[i], acts[i + 1]);
}

template <typename T>
const Tensor<T>& Sequential<T>::Forward(const Tensor<T>& input) {
  Infer(input, acts_);
  return acts_.back();
}

template <typename T>
void Sequential<T>::Backward(const Tensor<T>& grad_out, Tensor<T>* grad_input) {
  if (acts_.size() != layers_.size() + 1) throw Error(ErrorCode::kInvalidConfig, "backward before forward");
  grads_.resize(layers_.size() + 1);
  grads_.back() = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const bool need_input_grad = i > 0 || grad_input != nullptr;
    layers_[i]->Backward(acts_[i], acts_[i + 1], grads_[i + 1], need_input_grad ? &grads_[i] : nullptr);
  }
  if (grad_input != nullptr) *grad_input = grads_[0];
}

template <typename T>
std::vector<Param<T>*> Sequential<T>::Params() {
  std::vector<Param<T>*> out;
  for (auto& layer : layers_) {
    for (auto* p : layer->Params()) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<std::size_t> Sequential<T>::OutputShape(std::vector<std::size_t> in) const {
  for (const auto& layer : layers_) in = layer->OutputShape(in);
  return in;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

template <typename T>
void SoftmaxRows(const Tensor<T>& logits, Tensor<T>& probs) {
  if (logits.rank() != 2) throw Error(ErrorCode::kShapeMismatch, "softmax expects [B, K]");
  probs.Resize(logits.shape());
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * k;
    T* p = probs.data() + r * k;
    const T mx = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += (p[j] = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
}

template <typename T>
T SoftmaxCrossEntropy(const Tensor<T>& logits, std::span<const int> labels, std::type_identity_t<Tensor<T>>* grad_logits) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "logits " + ShapeString(logits.shape()) + " vs " +
                                               std::to_string(labels.size()) + " labels");
  }
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  if (grad_logits != nullptr) grad_logits->Resize(logits.shape());
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw Error(ErrorCode::kShapeMismatch, "label out of range");
    const T* z = logits.data() + r * k;
    const T mx = *std::max_element(z, z + k);
    T sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    total += lse - z[y];
    if (grad_logits != nullptr) {
      T* g = grad_logits->data() + r * k;
      for (std::size_t j = 0; j < k; ++j) {
        g[j] = (std::exp(z[j] - lse) - (static_cast<int>(j) == y ? T(1) : T(0))) / static_cast<T>(rows);
      }
    }
  }
  return total / static_cast<T>(rows);
}

void ZeroGrads(const std::vector<Param<float>*>& params) {
  for (auto* p : params) p->grad.Fill(0.0f);
}
void ZeroGrads(const std::vector<Param<double>*>& params) {
  for (auto* p : params) p->grad.Fill(0.0);
}

template class Dense<float>;
template class Dense<double>;
template class Conv2D<float>;
template class Conv2D<double>;
template class Pool2D<float>;
template class Pool2D<double>;
template class ReLU<float>;
template class ReLU<double>;
template class Flatten<float>;
template class Flatten<double>;
template class Sequential<float>;
template class Sequential<double>;
template void SoftmaxRows(const Tensor<float>&, Tensor<float>&);
template void SoftmaxRows(const Tensor<double>&, Tensor<double>&);
template float SoftmaxCrossEntropy(const Tensor<float>&, std::span<const int>, Tensor<float>*);
template double SoftmaxCrossEntropy(const Tensor<double>&, std::span<const int>, Tensor<double>*);

}  // namespace segmil
