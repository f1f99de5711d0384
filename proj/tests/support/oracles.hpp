#pragma once

// Independent naive-loop oracles used to cross-check the fast paths. These
// deliberately avoid the library's kernels: plain nested loops, no Eigen.

#include <cstdint>
#include <vector>

#include "cat/rng.hpp"
#include "cat/tensor.hpp"

namespace oracle {

// Batched matmul by triple loop over an explicit batch index.
template <typename S>
cat::Tensor<S> matmul_naive(const cat::Tensor<S>& a, const cat::Tensor<S>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  const std::size_t r = as.size();
  const std::int64_t m = as[r - 2], k = as[r - 1], n = bs[r - 1];
  std::int64_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= as[i];
  std::vector<S> out(static_cast<std::size_t>(batch * m * n), S(0));
  const S* pa = a.data();
  const S* pb = b.data();
  for (std::int64_t bi = 0; bi < batch; ++bi)
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        S acc = 0;
        for (std::int64_t e = 0; e < k; ++e)
          acc += pa[bi * m * k + i * k + e] * pb[bi * k * n + e * n + j];
        out[static_cast<std::size_t>(bi * m * n + i * n + j)] = acc;
      }
  cat::Shape shape(as.begin(), as.end() - 2);
  shape.push_back(m);
  shape.push_back(n);
  return cat::Tensor<S>(std::move(shape), std::move(out));
}

// Direct five-index evaluation of the two-stage cross-axis contraction:
//   out[x, s, h, e] = sum_j sum_f  q[x, s, h, f] * k[x, j, h, f] * v[s, j, h, e]
// q, k, v: [S, S, H, dh]; no batched products anywhere.
template <typename S>
cat::Tensor<S> cross_axis_naive(const cat::Tensor<S>& q, const cat::Tensor<S>& k,
                                const cat::Tensor<S>& v) {
  const std::int64_t G = q.dim(0), H = q.dim(2), dh = q.dim(3);
  auto at = [&](const cat::Tensor<S>& t, std::int64_t a, std::int64_t b, std::int64_t h,
                std::int64_t e) { return t.at(((a * G + b) * H + h) * dh + e); };
  std::vector<S> out(static_cast<std::size_t>(G * G * H * dh), S(0));
  for (std::int64_t x = 0; x < G; ++x)
    for (std::int64_t s = 0; s < G; ++s)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t e = 0; e < dh; ++e) {
          S acc = 0;
          for (std::int64_t j = 0; j < G; ++j) {
            S dot = 0;
            for (std::int64_t f = 0; f < dh; ++f) dot += at(q, x, s, h, f) * at(k, x, j, h, f);
            acc += dot * at(v, s, j, h, e);
          }
          out[static_cast<std::size_t>(((x * G + s) * H + h) * dh + e)] = acc;
        }
  return cat::Tensor<S>({G, G, H, dh}, std::move(out));
}

// Per-position affine map y = x W + b by explicit loops (oracle for the
// qkv/output projections and the patch embedding).
template <typename S>
cat::Tensor<S> matvec_rows_naive(const cat::Tensor<S>& x, const cat::Tensor<S>& w,
                                 const cat::Tensor<S>& b) {
  const std::int64_t din = x.dim(x.rank() - 1);
  const std::int64_t dout = w.dim(1);
  const std::int64_t rows = x.numel() / din;
  std::vector<S> out(static_cast<std::size_t>(rows * dout), S(0));
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < dout; ++j) {
      S acc = b.defined() ? b.at(j) : S(0);
      for (std::int64_t i = 0; i < din; ++i) acc += x.at(r * din + i) * w.at(i * dout + j);
      out[static_cast<std::size_t>(r * dout + j)] = acc;
    }
  cat::Shape shape = x.shape();
  shape.back() = dout;
  return cat::Tensor<S>(std::move(shape), std::move(out));
}

template <typename S>
cat::Tensor<S> random_tensor(cat::Shape shape, cat::Rng& rng, S lo = S(-1), S hi = S(1)) {
  std::vector<S> v(static_cast<std::size_t>(cat::shape_numel(shape)));
  for (auto& x : v) x = static_cast<S>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return cat::Tensor<S>(std::move(shape), std::move(v));
}

template <typename S>
S max_abs_diff(const cat::Tensor<S>& a, const cat::Tensor<S>& b) {
  S worst = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
  return worst;
}

}  // namespace oracle
