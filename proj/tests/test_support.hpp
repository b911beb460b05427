#pragma once

// Shared oracles for tests: central finite differences and tolerance helpers.
// The finite-difference path only re-runs user-supplied forward lambdas, so
// it stays independent of the autodiff implementation it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "streamcap/tensor.hpp"

namespace testsup {

inline bool close_rel(double a, double b, double tol, double floor = 1e-6) {
  const double denom = std::max({std::fabs(a), std::fabs(b), floor});
  return std::fabs(a - b) / denom <= tol;
}

// Central finite difference of f() w.r.t. storage[i].
template <typename F>
double fd_derivative(F&& f, std::vector<double>& storage, size_t i, double h = 1e-5) {
  const double orig = storage[i];
  storage[i] = orig + h;
  const double fp = f();
  storage[i] = orig - h;
  const double fm = f();
  storage[i] = orig;
  return (fp - fm) / (2.0 * h);
}

// Checks the analytic gradient of `leaf` against central differences on a
// scalar-valued forward pass. `forward` must rebuild the graph from leaves.
template <typename F>
bool gradient_matches(F&& forward, streamcap::Tensor<double>& leaf, double tol = 1e-4,
                      size_t max_coords = 0, streamcap::Rng* pick = nullptr) {
  leaf.zero_grad();  // earlier checks may have accumulated into this leaf
  streamcap::Tape<double> tape;
  {
    streamcap::TapeScope<double> scope(tape);
    auto loss = forward();
    tape.backward(loss);
  }
  if (!leaf.has_grad()) leaf.mutable_grad();  // all-zero analytic gradient
  std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  leaf.zero_grad();

  std::vector<size_t> coords;
  if (max_coords == 0 || max_coords >= leaf.size()) {
    for (size_t i = 0; i < leaf.size(); ++i) coords.push_back(i);
  } else {
    for (size_t i = 0; i < max_coords; ++i)
      coords.push_back(pick ? pick->uniform_int(static_cast<uint64_t>(leaf.size()))
                            : (i * leaf.size()) / max_coords);
  }
  auto eval = [&]() {
    auto out = forward();
    return out.item();
  };
  for (size_t i : coords) {
    const double fd = fd_derivative(eval, leaf.mutable_values(), i);
    if (!close_rel(analytic[i], fd, tol)) return false;
  }
  return true;
}

inline streamcap::Tensor<double> random_tensor(streamcap::Shape shape, streamcap::Rng& rng,
                                               double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(streamcap::numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return streamcap::Tensor<double>::from_vector(std::move(shape), std::move(v), requires_grad);
}

}  // namespace testsup
