#pragma once

#include "secmlops/attacks.hpp"
#include "secmlops/rng.hpp"

namespace affine {

using secmlops::diffnet::Tensor;

// f(x) = w.x + b with the analytic gradient w.
inline secmlops::attacks::InputObjective objective(const Tensor& w, double b = 0.0) {
  return [w, b](const Tensor& x, Tensor* grad) {
    double v = b;
    for (std::size_t i = 0; i < x.size(); ++i) v += w[i] * x[i];
    if (grad) *grad = w;
    return v;
  };
}

inline double value(const Tensor& w, double b, const Tensor& x) {
  double v = b;
  for (std::size_t i = 0; i < x.size(); ++i) v += w[i] * x[i];
  return v;
}

inline Tensor random(secmlops::Rng& rng, int n, double lo, double hi) {
  Tensor t({n});
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace affine
