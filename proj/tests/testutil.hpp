#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "icil/rng.hpp"
#include "icil/tensor.hpp"

namespace testutil {

using icil::num::RngStream;
using icil::num::Shape;
using icil::num::Tensor;

inline Tensor random_tensor(RngStream& rng, const Shape& shape,
                            double scale = 1.0) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.normal();
  return t;
}

inline Tensor random_uniform(RngStream& rng, const Shape& shape, double lo,
                             double hi) {
  Tensor t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform_in(lo, hi);
  return t;
}

// Central finite differences (h = 1e-5) against an analytic gradient for
// every coordinate of `input`. `eval` recomputes the scalar loss from the
// current contents of `input`. Relative error uses a small magnitude floor so
// near-zero gradients compare sanely.
inline double max_fd_rel_error(Tensor& input, const Tensor& analytic,
                               const std::function<double()>& eval,
                               double h = 1e-5) {
  double worst = 0.0;
  for (int64_t i = 0; i < input.numel(); ++i) {
    double keep = input[i];
    input[i] = keep + h;
    double up = eval();
    input[i] = keep - h;
    double down = eval();
    input[i] = keep;
    double fd = (up - down) / (2.0 * h);
    double a = analytic[i];
    double rel = std::fabs(a - fd) /
                 std::max({std::fabs(a), std::fabs(fd), 1e-2});
    worst = std::max(worst, rel);
  }
  return worst;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

}  // namespace testutil
