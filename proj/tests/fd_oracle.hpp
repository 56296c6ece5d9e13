#pragma once

// Test-only finite-difference gradient oracle. Central differences with step
// 1e-5; stays independent of the tape it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "twga/tensor.hpp"

namespace twga::testing {

// Numerical gradient of a scalar-valued function w.r.t. every entry of `t`.
// `f` must re-run the full forward pass reading the current contents of `t`.
inline std::vector<double> fd_gradient(twga::Tensor& t, const std::function<double()>& f, double step = 1e-5) {
  std::vector<double> g(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double saved = (*t.data)[i];
    (*t.data)[i] = saved + step;
    double hi = f();
    (*t.data)[i] = saved - step;
    double lo = f();
    (*t.data)[i] = saved;
    g[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

// max over elements of |a - b| / (|b| + floor); the floor absorbs central-
// difference rounding noise on entries whose true gradient is ~0
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-12) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double e = std::fabs(a[i] - b[i]) / (std::fabs(b[i]) + floor);
    worst = std::max(worst, e);
  }
  return worst;
}

inline twga::Tensor random_tensor(std::vector<int> shape, twga::Rng& rng, bool requires_grad = true,
                                  double scl = 1.0) {
  twga::Tensor t = twga::Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : *t.data) v = (rng.uniform() * 2.0 - 1.0) * scl;
  return t;
}

}  // namespace twga::testing
