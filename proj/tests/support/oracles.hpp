#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "segmil/attention.hpp"
#include "segmil/bagging.hpp"
#include "segmil/layers.hpp"
#include "segmil/rng.hpp"
#include "segmil/tensor.hpp"

namespace segmil::testing {

// |X_k|^2 by the O(N^2) definition, k = 0..nfft/2, input zero-padded to nfft.
inline std::vector<double> NaiveDftPower(std::span<const double> x, std::size_t nfft) {
  std::vector<double> out(nfft / 2 + 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < x.size() && n < nfft; ++n) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * n % nfft) / static_cast<double>(nfft);
      acc += x[n] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = std::norm(acc);
  }
  return out;
}

// Relative error with a floor so that two near-zero values compare as equal.
inline double RelErr(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // parameter name and index
  std::size_t checked = 0;
};

// Central differences of `loss` against the analytic gradients stored in
// params[i]->grad (computed by the caller beforehand).
template <typename LossFn>
GradCheckResult CheckParamGradients(const std::vector<Param<double>*>& params, LossFn loss, double step = 1e-5) {
  GradCheckResult r;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + step;
      const double up = loss();
      p->value[i] = orig - step;
      const double down = loss();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double err = RelErr(p->grad[i], numeric);
      ++r.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return r;
}

// Random bag with `len` valid rows out of max_len, entries in [-1, 1).
inline Bag RandomBag(Rng& rng, const std::string& id, std::size_t len, std::size_t max_len, std::size_t dim,
                     int label) {
  std::vector<std::vector<float>> rows(len, std::vector<float>(dim));
  for (auto& row : rows) {
    for (auto& v : row) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  }
  return AssembleBag(id, rows, label, max_len);
}

// Gradient check of a double-precision aggregator over a batch of random bags.
inline GradCheckResult CheckAggregatorGradients(const AggregatorConfig& cfg, std::size_t max_len,
                                                std::size_t n_bags, std::uint64_t seed) {
  Aggregator<double> agg(cfg, seed);
  Rng rng(seed + 17);
  std::vector<Bag> bags;
  for (std::size_t b = 0; b < n_bags; ++b) {
    const std::size_t len = 1 + rng.below(max_len);
    bags.push_back(RandomBag(rng, "b" + std::to_string(b), len, max_len, cfg.input_dim,
                             static_cast<int>(b % static_cast<std::size_t>(cfg.num_classes))));
  }
  std::vector<const Bag*> ptrs;
  for (const auto& b : bags) ptrs.push_back(&b);
  const auto batch = PackBags<double>(ptrs);
  auto params = agg.Params();
  // Zero biases put padded all-zero rows exactly on the ReLU kink; move to a generic point.
  for (auto* p : params) {
    if (p->name.ends_with(".bias")) {
      for (auto& v : p->value.values()) v = rng.uniform(-0.2, 0.2);
    }
  }
  ZeroGrads(params);
  AggregatorTrace<double> trace;
  agg.Forward(batch, trace);
  agg.Backward(batch, trace);
  auto loss = [&] {
    AggregatorTrace<double> t;
    agg.Forward(batch, t);
    return static_cast<double>(agg.Loss(batch, t));
  };
  return CheckParamGradients(params, loss);
}

}  // namespace segmil::testing

namespace segmil::testing {
inline int ArgMaxIndex(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}
}  // namespace segmil::testing
