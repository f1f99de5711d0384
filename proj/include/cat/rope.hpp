#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cat/error.hpp"
#include "cat/tensor.hpp"

namespace cat {

inline constexpr double kPi = 3.14159265358979323846;

// Geometry of one patch grid: rows x cols positions, dh channels per head.
struct GridSpec {
  std::int64_t rows;
  std::int64_t cols;
  std::int64_t head_dim;

  GridSpec(std::int64_t r, std::int64_t c, std::int64_t dh) : rows(r), cols(c), head_dim(dh) {
    if (r < 1 || c < 1) throw ShapeMismatch("grid must have positive extent");
    if (dh < 4 || dh % 4 != 0)
      throw BadHeadDim("head_dim " + std::to_string(dh) +
                       " must be divisible by 4 (axis interleave x rotation pairing)");
  }
};

// Per-channel rotation frequencies. Within each half of the channel depth,
// consecutive (even, odd) channels share one frequency — one for the row
// axis, one for the column axis — decaying from 1 toward 1e-4 across depth;
// the second half duplicates the first so that rotate-half partners carry
// the same frequency.
template <typename S>
std::vector<S> decay_frequencies(std::int64_t head_dim) {
  if (head_dim < 4 || head_dim % 4 != 0)
    throw BadHeadDim("head_dim " + std::to_string(head_dim) + " must be divisible by 4");
  const std::int64_t m = head_dim / 2;
  std::vector<S> out(static_cast<std::size_t>(head_dim));
  for (std::int64_t j = 0; j < m; ++j) {
    const double expo = -2.0 * static_cast<double>(j / 2) / static_cast<double>(m);
    const S f = static_cast<S>(std::pow(10000.0, expo));
    out[static_cast<std::size_t>(j)] = f;
    out[static_cast<std::size_t>(j + m)] = f;
  }
  return out;
}

// Rotation angles for every (row, col, channel). Base coordinates are
// u(x) = (2x - rows)/rows * pi and v(y) = (2y - cols)/cols * pi, so every
// grid size spans [-pi, pi) along both axes; even channels rotate by the
// row coordinate, odd channels by the column coordinate, scaled by the
// channel's decay frequency. On non-square grids the shorter axis is
// optionally compressed by min/max so both axes advance at matching rates
// per patch.
template <typename S>
Tensor<S> axial_angles(const GridSpec& grid, bool aspect_correction = true) {
  const std::int64_t R = grid.rows, C = grid.cols, dh = grid.head_dim;
  const auto freq = decay_frequencies<double>(dh);
  double row_aspect = 1.0, col_aspect = 1.0;
  if (aspect_correction && R != C) {
    const double ratio = static_cast<double>(std::min(R, C)) / static_cast<double>(std::max(R, C));
    (R < C ? row_aspect : col_aspect) = ratio;
  }

  std::vector<S> out(static_cast<std::size_t>(R * C * dh));
  for (std::int64_t x = 0; x < R; ++x) {
    const double u = (2.0 * static_cast<double>(x) - static_cast<double>(R)) /
                     static_cast<double>(R) * kPi * row_aspect;
    for (std::int64_t y = 0; y < C; ++y) {
      const double v = (2.0 * static_cast<double>(y) - static_cast<double>(C)) /
                       static_cast<double>(C) * kPi * col_aspect;
      for (std::int64_t c = 0; c < dh; ++c) {
        const double coord = (c % 2 == 0) ? u : v;
        out[static_cast<std::size_t>((x * C + y) * dh + c)] = static_cast<S>(freq[static_cast<std::size_t>(c)] * coord);
      }
    }
  }
  return Tensor<S>({R, C, dh}, std::move(out));
}

// Precomputed cos/sin of the axial angles; built once per grid geometry and
// shared by every layer and step.
template <typename S>
struct RotaryTables {
  Tensor<S> cos;  // [rows, cols, dh]
  Tensor<S> sin;  // [rows, cols, dh]
};

template <typename S>
RotaryTables<S> build_tables(const GridSpec& grid, bool aspect_correction = true) {
  const Tensor<S> angles = axial_angles<S>(grid, aspect_correction);
  std::vector<S> cs(static_cast<std::size_t>(angles.numel()));
  std::vector<S> sn(static_cast<std::size_t>(angles.numel()));
  for (std::int64_t i = 0; i < angles.numel(); ++i) {
    cs[static_cast<std::size_t>(i)] = std::cos(angles.at(i));
    sn[static_cast<std::size_t>(i)] = std::sin(angles.at(i));
  }
  return RotaryTables<S>{Tensor<S>(angles.shape(), std::move(cs)),
                         Tensor<S>(angles.shape(), std::move(sn))};
}

// Rotate-half application: out[c] = x[c]*cos[c] + half(x)[c]*sin[c] with
// half(x)[c] = -x[c+m] for c < m and +x[c-m] for c >= m (m = dh/2). Channel
// partners (c, c+m) share axis parity and frequency, so each pair undergoes
// a true planar rotation. x: [rows, cols, H, dh], or [batch, rows, cols, H,
// dh] with the tables shared across the batch; differentiable in x.
template <typename S>
Tensor<S> apply_rotary(const Tensor<S>& x, const RotaryTables<S>& tables) {
  if (x.rank() != 4 && x.rank() != 5)
    throw ShapeMismatch("apply_rotary: expected [rows, cols, heads, head_dim] "
                        "(optionally batched), got " +
                        shape_str(x.shape()));
  const std::int64_t off = x.rank() - 4;
  const std::int64_t B = off ? x.dim(0) : 1;
  const std::int64_t R = x.dim(off), C = x.dim(off + 1), H = x.dim(off + 2),
                     dh = x.dim(off + 3);
  if (tables.cos.shape() != Shape{R, C, dh})
    throw ShapeMismatch("apply_rotary: tables built for " + shape_str(tables.cos.shape()) +
                        ", input is " + shape_str(x.shape()));
  const std::int64_t m = dh / 2;
  const std::int64_t P = R * C;  // positions covered by the tables

  const S* px = x.data();
  const S* pc = tables.cos.data();
  const S* ps = tables.sin.data();
  std::vector<S> out(static_cast<std::size_t>(x.numel()));
  for (std::int64_t bp = 0; bp < B * P; ++bp)
    for (std::int64_t h = 0; h < H; ++h) {
      const S* vx = px + (bp * H + h) * dh;
      const S* vc = pc + (bp % P) * dh;
      const S* vs = ps + (bp % P) * dh;
      S* vo = out.data() + (bp * H + h) * dh;
      for (std::int64_t c = 0; c < dh; ++c) {
        const S half = c < m ? -vx[c + m] : vx[c - m];
        vo[c] = vx[c] * vc[c] + half * vs[c];
      }
    }

  Tensor<S> res(x.shape(), std::move(out));
  Tape<S>* tape = detail::common_tape<S>({&x});
  if (!tape) return res;
  const int xn = x.node();
  const Tensor<S> cosv = tables.cos;
  const Tensor<S> sinv = tables.sin;
  const int id = tape->emit(
      "apply_rotary", {xn},
      [xn, cosv, sinv, B, P, H, dh, m](Tape<S>& t, const Tensor<S>& g) {
        const S* pg = g.data();
        const S* pc2 = cosv.data();
        const S* ps2 = sinv.data();
        std::vector<S> dx(static_cast<std::size_t>(g.numel()));
        for (std::int64_t bp = 0; bp < B * P; ++bp)
          for (std::int64_t h = 0; h < H; ++h) {
            const S* vg = pg + (bp * H + h) * dh;
            const S* vc = pc2 + (bp % P) * dh;
            const S* vs = ps2 + (bp % P) * dh;
            S* vd = dx.data() + (bp * H + h) * dh;
            for (std::int64_t a = 0; a < dh; ++a) {
              vd[a] = vg[a] * vc[a] + (a < m ? vg[a + m] * vs[a + m] : -vg[a - m] * vs[a - m]);
            }
          }
        t.accumulate(xn, Tensor<S>(g.shape(), std::move(dx)));
      });
  return res.with_node(tape, id);
}

}  // namespace cat
