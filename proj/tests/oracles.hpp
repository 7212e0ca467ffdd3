#pragma once

// Test-only oracles kept independent of the library code paths they check:
// a central finite-difference gradient checker and a naive 2-D convolution.

#include "vera/autodiff.hpp"
#include "vera/common.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace vera::test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central finite differences against tape gradients.
///
/// `build` must construct the scalar loss from the given leaf values on the
/// provided tape and return {loss, leaves}; it is re-invoked for every probe
/// so the whole graph is rebuilt at perturbed inputs.
inline GradCheckResult grad_check(
    const std::function<std::pair<ad::Var, std::vector<ad::Var>>(ad::Tape&, const std::vector<Mat>&)>&
        build,
    std::vector<Mat> inputs, double h = 1e-4) {
  GradCheckResult res;

  std::vector<Mat> analytic;
  double f0 = 0.0;
  {
    ad::Tape tape;
    auto [loss, leaves] = build(tape, inputs);
    tape.backward(loss);
    f0 = tape.scalar(loss);
    for (ad::Var v : leaves) analytic.push_back(tape.grad(v));
  }
  (void)f0;

  auto eval = [&](const std::vector<Mat>& xs) {
    ad::Tape tape;
    auto [loss, leaves] = build(tape, xs);
    (void)leaves;
    return tape.scalar(loss);
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k = 0; k < inputs[i].size(); ++k) {
      std::vector<Mat> xs = inputs;
      const double orig = xs[i](k);
      xs[i](k) = orig + h;
      const double fp = eval(xs);
      xs[i](k) = orig - h;
      const double fm = eval(xs);
      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[i](k);
      // Floor the denominator so near-zero gradients are compared absolutely;
      // central differences carry O(h^2) truncation noise regardless of size.
      const double scale = std::max({std::abs(num), std::abs(ana), 1e-4});
      const double rel = std::abs(num - ana) / scale;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_analytic = ana;
        res.worst_numeric = num;
      }
    }
  }
  return res;
}

/// Direct nested-loop 2-D convolution with replicate padding ("same" size).
inline Mat naive_conv2d_replicate(const Mat& img, const Mat& kernel) {
  const Eigen::Index H = img.rows(), W = img.cols();
  const Eigen::Index kh = kernel.rows(), kw = kernel.cols();
  const Eigen::Index cy = kh / 2, cx = kw / 2;
  Mat out(H, W);
  for (Eigen::Index y = 0; y < H; ++y) {
    for (Eigen::Index x = 0; x < W; ++x) {
      double acc = 0.0;
      for (Eigen::Index ky = 0; ky < kh; ++ky) {
        for (Eigen::Index kx = 0; kx < kw; ++kx) {
          Eigen::Index sy = y + ky - cy;
          Eigen::Index sx = x + kx - cx;
          sy = std::min(std::max(sy, Eigen::Index{0}), H - 1);
          sx = std::min(std::max(sx, Eigen::Index{0}), W - 1);
          acc += kernel(ky, kx) * img(sy, sx);
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

}  // namespace vera::test
