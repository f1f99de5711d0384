#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>

#include "cat/tensor.hpp"

namespace cat {

// Central finite differences in f64 against the tape's analytic gradients.
// `f` must evaluate the same computation for tracked and untracked inputs
// (every op in this library dispatches on trackedness automatically).

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
};

namespace detail {

inline Tensor<double> bump(const Tensor<double>& x, std::int64_t flat, double delta) {
  std::vector<double> v = x.to_vector();
  v[static_cast<std::size_t>(flat)] += delta;
  return Tensor<double>(x.shape(), std::move(v));
}

}  // namespace detail

// f: map of named (possibly tracked) tensors -> scalar loss tensor.
template <typename F>
GradCheckResult grad_check_params(F&& f, const std::map<std::string, Tensor<double>>& params,
                                  double eps = 1e-5) {
  Tape<double> tape;
  std::map<std::string, Tensor<double>> tracked;
  for (const auto& [name, value] : params) tracked.emplace(name, tape.leaf(name, value));
  const Tensor<double> loss = f(tracked);
  auto grads = tape.backward(loss);

  GradCheckResult res;
  for (const auto& [name, value] : params) {
    const Tensor<double>& g = grads.at(name);
    for (std::int64_t i = 0; i < value.numel(); ++i) {
      std::map<std::string, Tensor<double>> probe = params;
      probe.at(name) = detail::bump(value, i, eps);
      const double up = f(probe).item();
      probe.at(name) = detail::bump(value, i, -eps);
      const double down = f(probe).item();
      const double fd = (up - down) / (2 * eps);
      const double rel = std::abs(g.at(i) - fd) / std::max(1.0, std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

// Single-input convenience: f: Tensor -> scalar Tensor.
template <typename F>
double grad_check(F&& f, const Tensor<double>& x, double eps = 1e-5) {
  auto wrapped = [&f](const std::map<std::string, Tensor<double>>& p) { return f(p.at("x")); };
  return grad_check_params(wrapped, {{"x", x}}, eps).max_rel_err;
}

}  // namespace cat
