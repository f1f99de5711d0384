#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "cat/error.hpp"
#include "cat/rope.hpp"
#include "cat/tensor.hpp"

namespace cat {

// Per-head key-scaling scheme. `retnet` follows the published decay
// constants of the retention mechanism this design inherits from:
// gamma[h] = 1 - 2^(-5-h), strictly increasing in head index, all in (0, 1].
// `ones` disables the scaling for ablations.
enum class GammaMode { retnet, ones };

template <typename S>
std::vector<S> gamma_values(GammaMode mode, std::int64_t heads) {
  std::vector<S> g(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h)
    g[static_cast<std::size_t>(h)] =
        mode == GammaMode::ones
            ? S(1)
            : static_cast<S>(1.0 - std::pow(2.0, -5.0 - static_cast<double>(h)));
  return g;
}

struct AttentionConfig {
  std::int64_t hidden;  // d
  std::int64_t heads;   // H
  std::int64_t grid;    // S (square)
  GammaMode gamma_mode = GammaMode::retnet;
  bool use_rotary = true;

  AttentionConfig(std::int64_t d, std::int64_t H, std::int64_t S_,
                  GammaMode gm = GammaMode::retnet, bool rot = true)
      : hidden(d), heads(H), grid(S_), gamma_mode(gm), use_rotary(rot) {
    if (H < 1 || d % H != 0)
      throw ShapeMismatch("hidden " + std::to_string(d) + " not divisible into " +
                          std::to_string(H) + " heads");
    if (head_dim() % 4 != 0 || head_dim() < 4)
      throw BadHeadDim("head_dim " + std::to_string(head_dim()) + " must be divisible by 4");
    if (S_ < 1) throw NotSquareGrid("grid side must be positive");
  }

  std::int64_t head_dim() const { return hidden / heads; }
};

// Learnable tensors of one cross-axis attention block, plus the derived
// (non-learnable, never serialized) per-head gammas.
template <typename S>
struct CrossAxisParams {
  Tensor<S> w_qkv;     // [d, 3d]
  Tensor<S> b_qkv;     // [3d]
  std::vector<S> gammas;  // [H], derived from GammaMode
  Tensor<S> gn_scale;  // [H]
  Tensor<S> gn_shift;  // [H]
  Tensor<S> w_out;     // [d, d]
  Tensor<S> b_out;     // [d]
};

// Single fused affine map to 3d channels, split into q/k/v and reshaped to
// heads. x: [S, S, d] -> each of q, k, v: [S, S, H, dh].
template <typename S>
std::tuple<Tensor<S>, Tensor<S>, Tensor<S>> qkv_project(const Tensor<S>& x,
                                                        const Tensor<S>& w_qkv,
                                                        const Tensor<S>& b_qkv,
                                                        std::int64_t heads) {
  const std::int64_t d = x.dim(x.rank() - 1);
  if (w_qkv.rank() != 2 || w_qkv.dim(0) != d || w_qkv.dim(1) != 3 * d)
    throw ShapeMismatch("qkv weight must be [d, 3d], got " + shape_str(w_qkv.shape()));
  const std::int64_t dh = d / heads;
  const Tensor<S> y = linear(x, w_qkv, b_qkv);  // [..., 3d]
  Shape head_shape = x.shape();
  head_shape.back() = heads;
  head_shape.push_back(dh);
  auto split = [&](std::int64_t slot) {
    return reshape(slice_last(y, slot * d, d), head_shape);
  };
  return {split(0), split(1), split(2)};
}

// k[.., h, ..] * gammas[h].
template <typename S>
Tensor<S> gamma_scale_keys(const Tensor<S>& k, const std::vector<S>& gammas) {
  const std::int64_t dh = k.dim(k.rank() - 1);
  const auto H = static_cast<std::int64_t>(gammas.size());
  if (k.dim(k.rank() - 2) != H)
    throw ShapeMismatch("gamma count " + std::to_string(H) + " vs heads axis of " +
                        shape_str(k.shape()));
  std::vector<S> table(static_cast<std::size_t>(H * dh));
  for (std::int64_t h = 0; h < H; ++h)
    for (std::int64_t c = 0; c < dh; ++c)
      table[static_cast<std::size_t>(h * dh + c)] = gammas[static_cast<std::size_t>(h)];
  return mul(k, Tensor<S>({H, dh}, std::move(table)));
}

// The two-stage softmax-free contraction, per head:
//   stage 1 (rows batched):      A[r, i, j] = sum_e q[r, i, e] * k[r, j, e]
//   stage 2 (swapped batching):  out_pre[s, x, :] = sum_j A[x, s, j] * v[s, j, :]
// followed by the swap back to (row, col) ordering. There is no softmax and
// no normalization of any kind between the two products. The second product
// only type-checks when the grid is square, so non-square input is a hard
// error. q, k, v: [S, S, H, dh] -> same shape; an optional leading batch
// axis ([B, S, S, H, dh]) is carried through unchanged.
template <typename S>
Tensor<S> cross_axis_contract(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v) {
  if (q.rank() != 4 && q.rank() != 5)
    throw ShapeMismatch("cross_axis_contract: expected [S, S, H, dh] (optionally batched), got " +
                        shape_str(q.shape()));
  if (q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeMismatch("cross_axis_contract: q/k/v shapes disagree");
  const std::int64_t off = q.rank() - 4;
  if (q.dim(off) != q.dim(off + 1))
    throw NotSquareGrid("cross-axis contraction requires a square grid, got " +
                        shape_str(q.shape()));

  // [(B,) S, S, H, dh] -> [(B,) H, S, S, dh]
  const std::vector<int> to_heads =
      off ? std::vector<int>{0, 3, 1, 2, 4} : std::vector<int>{2, 0, 1, 3};
  const Tensor<S> qh = permute(q, to_heads);
  const Tensor<S> kh = permute(k, to_heads);
  const Tensor<S> vh = permute(v, to_heads);
  const std::int64_t r = qh.rank();

  const Tensor<S> a = matmul(qh, transpose(kh, r - 2, r - 1));  // [(B,) H, r, i, j]
  const Tensor<S> swapped = transpose(a, r - 3, r - 2);         // [(B,) H, s, x, j]
  const Tensor<S> o = matmul(swapped, vh);                      // [(B,) H, s, x, dh]
  const Tensor<S> back = transpose(o, r - 3, r - 2);            // [(B,) H, x, s, dh]
  return permute(back, off ? std::vector<int>{0, 2, 3, 1, 4} : std::vector<int>{1, 2, 0, 3});
}

// Full cross-axis attention block body: optional imprint injection, fused
// qkv, gamma-scaled keys, rotary on q and k (after the gamma scaling, in
// that order), the two-stage contraction, per-head group normalization,
// head merge, output projection. Differentiable end to end.
template <typename S>
Tensor<S> cross_axis_attention(const Tensor<S>& x, const CrossAxisParams<S>& p,
                               const RotaryTables<S>* tables,
                               const Tensor<S>* imprint = nullptr, S eps = S(1e-5)) {
  if (x.rank() != 3 && x.rank() != 4)
    throw ShapeMismatch("cross_axis_attention: expected [S, S, d] (optionally batched), got " +
                        shape_str(x.shape()));
  const std::int64_t d = x.dim(x.rank() - 1);
  const auto H = static_cast<std::int64_t>(p.gammas.size());
  Tensor<S> xin = imprint ? add(x, *imprint) : x;
  auto [q, k, v] = qkv_project(xin, p.w_qkv, p.b_qkv, H);
  k = gamma_scale_keys(k, p.gammas);
  if (tables) {
    q = apply_rotary(q, *tables);
    k = apply_rotary(k, *tables);
  }
  Tensor<S> o = cross_axis_contract(q, k, v);
  o = group_norm_heads(o, p.gn_scale, p.gn_shift, eps);
  Shape merged = x.shape();
  merged.back() = d;
  return linear(reshape(o, merged), p.w_out, p.b_out);
}

// Baseline quadratic attention over N = S*S flattened tokens: per head
// softmax(QK^T / sqrt(dh)) V, head merge, output projection. When rotary
// tables are supplied, q and k are rotated on the unflattened grid first.
// x: [N, d] -> [N, d]; an optional leading batch axis is carried through.
template <typename S>
Tensor<S> softmax_attention(const Tensor<S>& x, const Tensor<S>& w_qkv, const Tensor<S>& b_qkv,
                            const Tensor<S>& w_out, const Tensor<S>& b_out, std::int64_t heads,
                            const RotaryTables<S>* tables = nullptr) {
  if (x.rank() != 2 && x.rank() != 3)
    throw ShapeMismatch("softmax_attention: expected [N, d] (optionally batched), got " +
                        shape_str(x.shape()));
  const std::int64_t off = x.rank() - 2;
  const std::int64_t B = off ? x.dim(0) : 1;
  const std::int64_t N = x.dim(off), d = x.dim(off + 1);
  const std::int64_t dh = d / heads;
  auto [q, k, v] = qkv_project(x, w_qkv, b_qkv, heads);  // [(B,) N, H, dh]
  if (tables) {
    const std::int64_t R = tables->cos.dim(0), C = tables->cos.dim(1);
    if (R * C != N)
      throw ShapeMismatch("softmax_attention: rotary tables cover " + std::to_string(R * C) +
                          " positions, input has " + std::to_string(N));
    Shape grid_shape = off ? Shape{B, R, C, heads, dh} : Shape{R, C, heads, dh};
    q = reshape(apply_rotary(reshape(q, grid_shape), *tables), q.shape());
    k = reshape(apply_rotary(reshape(k, grid_shape), *tables), k.shape());
  }
  // [(B,) N, H, dh] -> [(B,) H, N, dh]
  const std::vector<int> to_heads = off ? std::vector<int>{0, 2, 1, 3} : std::vector<int>{1, 0, 2};
  const Tensor<S> qh = permute(q, to_heads);
  const Tensor<S> kh = permute(k, to_heads);
  const Tensor<S> vh = permute(v, to_heads);
  const std::int64_t r = qh.rank();
  const S inv_sqrt = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor<S> scores = scale(matmul(qh, transpose(kh, r - 2, r - 1)), inv_sqrt);
  const Tensor<S> weights = softmax(scores);                                 // [(B,) H, N, N]
  const Tensor<S> o = matmul(weights, vh);                                   // [(B,) H, N, dh]
  Shape merged = x.shape();
  return linear(reshape(permute(o, to_heads), merged), w_out, b_out);
}

}  // namespace cat
