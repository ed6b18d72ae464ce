#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "stgat/rng.hpp"
#include "stgat/tensor.hpp"

namespace test_util {

inline std::vector<double> random_values(std::size_t n, stgat::Rng& rng,
                                         double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Central finite differences against the analytic gradients of every
// element of every parameter. make_loss must rebuild the same graph on
// each call (it runs once under a tape and then many times without one).
inline void check_gradients(const std::vector<stgat::ad::Tensor>& params,
                            const std::function<stgat::ad::Tensor()>& make_loss,
                            double eps = 1e-5, double tol = 1e-4) {
  std::vector<std::vector<double>> analytic;
  {
    stgat::ad::Tape tape;
    stgat::ad::Tensor loss = make_loss();
    for (auto p : params) p.zero_grad();
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(p.grad());
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v0 = p.value()[i];
      p.value()[i] = v0 + eps;
      const double up = make_loss().item();
      p.value()[i] = v0 - eps;
      const double down = make_loss().item();
      p.value()[i] = v0;
      const double fd = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double scale = std::max(std::abs(a), std::abs(fd));
      const double err = scale > 1e-6 ? std::abs(a - fd) / scale
                                      : std::abs(a - fd);
      worst = std::max(worst, err);
    }
  }
  CHECK(worst < tol);
}

}  // namespace test_util
