#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cat/error.hpp"
#include "cat/model.hpp"

namespace cat {

// Counting conventions: a fused multiply-add is 1 under macs, 2 under flops.
// Table-style per-parameter comparisons use macs (the convention under which
// a plain affine stack has FPP equal to the token count); flops is the
// conventional "2 per MAC" figure. Reports carry both.
enum class Convention { macs, flops };

inline double convention_factor(Convention c) { return c == Convention::flops ? 2.0 : 1.0; }

// Normalizations, softmax, and gelu are counted at 5 elementary ops per
// element (documented constant; they are well under 1% of any total here).
// Under the macs convention that is 2.5 "mac-equivalents" per element so
// that flops = 2 * macs holds exactly for every component.
inline constexpr double kNormOpsPerElement = 5.0;

// Per-component multiply-add counts of one attention application. softmax
// is zero for the cross-axis form (it has none).
struct AttentionFlops {
  double stage1 = 0;   // first batched product
  double stage2 = 0;   // second batched product
  double qkv = 0;      // fused input projection
  double out = 0;      // output projection
  double softmax = 0;  // normalization of attention entries (quadratic only)

  double contraction() const { return stage1 + stage2; }
  double total() const { return stage1 + stage2 + qkv + out + softmax; }
};

// Cross-axis attention over an S x S grid of d-channel tokens:
// each stage is one batched product of S^3 * d multiply-adds; the fused
// qkv projection is 3*S^2*d^2 and the output projection S^2*d^2.
inline AttentionFlops flops_cross_axis_attention(std::int64_t S, std::int64_t d,
                                                 Convention conv = Convention::macs) {
  const double f = convention_factor(conv);
  const double Sd = static_cast<double>(S), dd = static_cast<double>(d);
  AttentionFlops r;
  r.stage1 = f * Sd * Sd * Sd * dd;
  r.stage2 = r.stage1;
  r.qkv = f * 3.0 * Sd * Sd * dd * dd;
  r.out = f * Sd * Sd * dd * dd;
  return r;
}

// Quadratic attention over N flattened tokens: QK^T and AV are N^2*d
// multiply-adds each; softmax costs kNormOpsPerElement per attention entry,
// and there are heads * N^2 entries (the head count is needed for exactly
// that reason).
inline AttentionFlops flops_quadratic_attention(std::int64_t N, std::int64_t d, std::int64_t heads,
                                                Convention conv = Convention::macs) {
  const double f = convention_factor(conv);
  const double Nd = static_cast<double>(N), dd = static_cast<double>(d);
  AttentionFlops r;
  r.stage1 = f * Nd * Nd * dd;  // QK^T
  r.stage2 = r.stage1;          // AV
  r.qkv = f * 3.0 * Nd * dd * dd;
  r.out = f * Nd * dd * dd;
  r.softmax = f * 0.5 * kNormOpsPerElement * static_cast<double>(heads) * Nd * Nd;
  return r;
}

// Whole-model per-image accounting. Every component is in the requested
// convention and the total is exactly their sum; fpp = total / params.
//
// weight_macs and table_fpp are the affine-weight-only figures (embedding,
// attention projections, ffn, and the classifier map — the multiply-adds a
// parameter-centric table attributes to the weights), always in macs
// regardless of the requested convention. They are the quantities used for
// model-to-model ratio and per-parameter comparisons; the full total
// additionally includes the attention contractions, normalizations, and
// pooling, which such tables conventionally leave out.
struct FlopReport {
  Convention convention = Convention::macs;
  double embed = 0;
  double attn_stage1 = 0;
  double attn_stage2 = 0;
  double projections = 0;
  double ffn = 0;
  double norms = 0;
  double head = 0;
  double total = 0;
  std::int64_t params = 0;
  double fpp = 0;
  double weight_macs = 0;
  double table_fpp = 0;
};

inline FlopReport flops_model(const CatConfig& c, Convention conv = Convention::macs) {
  c.validate();
  const double f = convention_factor(conv);
  const double N = static_cast<double>(c.tokens());
  const double S = static_cast<double>(c.grid());
  const double d = static_cast<double>(c.hidden);
  const double fd = static_cast<double>(c.ffn_hidden());
  const double pd = static_cast<double>(c.patch_dim());
  const double L = static_cast<double>(c.layers);
  const double C = static_cast<double>(c.num_classes);
  const double H = static_cast<double>(c.heads);

  FlopReport r;
  r.convention = conv;
  r.embed = f * N * pd * d;
  if (c.is_cat()) {
    r.attn_stage1 = f * L * S * S * S * d;
    r.attn_stage2 = r.attn_stage1;
  } else {
    r.attn_stage1 = f * L * N * N * d;  // QK^T
    r.attn_stage2 = r.attn_stage1;      // AV
  }
  r.projections = f * L * 4.0 * N * d * d;  // qkv (3) + output (1)
  r.ffn = f * L * 2.0 * N * d * fd;

  // normalized / activated elements per layer
  double norm_elems = c.is_cat() ? L * (3.0 * N * d + N * fd)        // two layer norms + head-group norm + gelu
                                 : L * (2.0 * N * d + N * fd + H * N * N);  // two layer norms + gelu + softmax
  r.norms = f * 0.5 * kNormOpsPerElement * norm_elems;

  // mean pooling (one averaging pass over all tokens) plus the classifier map
  r.head = f * (N * d + d * C);

  r.total = r.embed + r.attn_stage1 + r.attn_stage2 + r.projections + r.ffn + r.norms + r.head;
  r.params = param_count(c);
  r.fpp = r.total / static_cast<double>(r.params);

  r.weight_macs = N * pd * d + L * 4.0 * N * d * d + L * 2.0 * N * d * fd + d * C;
  r.table_fpp = r.weight_macs / static_cast<double>(r.params);
  return r;
}

// ImageNet-1k-scale reference configurations (224 px images, 1000 classes,
// patch 8, hidden 1024, 8 heads, 5 layers). The image size is an assumption
// recorded in the README: the published hyperparameter table gives patch
// size, width, heads, and depth but no resolution, and 224 is the standard
// choice for the datasets involved. The ffn ratios are chosen so that the
// two models' parameter/FLOP books are self-consistent: ratio 1 for the
// cross-axis model, 2459/1024 for the baseline.
inline CatConfig imagenet_preset_cat() {
  CatConfig c;
  c.image_size = 224;
  c.patch_size = 8;
  c.channels = 3;
  c.hidden = 1024;
  c.heads = 8;
  c.layers = 5;
  c.ffn_ratio = 1.0;
  c.num_classes = 1000;
  return c;
}

inline CatConfig imagenet_preset_vit() {
  CatConfig c = imagenet_preset_cat();
  c.model_kind = ModelKind::vit_baseline;
  c.pos_mode = PosMode::sinusoidal;
  c.ffn_ratio = 2459.0 / 1024.0;
  return c;
}

// Ordinary least squares for y = slope * x + intercept.
struct LineFit {
  double slope = 0;
  double intercept = 0;
};

inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  const auto n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  LineFit fit;
  fit.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.intercept = (sy - fit.slope * sx) / n;
  return fit;
}

enum class ScalingOp { cross_axis, quadratic };

// Least-squares slope of log(contraction multiply-adds) against log(N = S^2)
// over grid sides S: the empirical complexity exponent in token count.
// Cross-axis contraction is 2*S^3*d = 2d * N^1.5 (exponent 1.5); the
// quadratic matmul part is 2*N^2*d (exponent 2).
inline LineFit fit_scaling_line(ScalingOp op, const std::vector<std::int64_t>& sizes,
                                std::int64_t d) {
  if (sizes.size() < 3)
    throw TooFewSizes("need at least 3 sizes to fit an exponent, got " +
                      std::to_string(sizes.size()));
  std::vector<double> xs, ys;
  for (const std::int64_t S : sizes) {
    const double N = static_cast<double>(S) * static_cast<double>(S);
    const double count = op == ScalingOp::cross_axis
                             ? flops_cross_axis_attention(S, d).contraction()
                             : flops_quadratic_attention(S * S, d, 1).contraction();
    xs.push_back(std::log(N));
    ys.push_back(std::log(count));
  }
  return fit_line(xs, ys);
}

inline double fit_scaling_exponent(ScalingOp op, const std::vector<std::int64_t>& sizes,
                                   std::int64_t d) {
  return fit_scaling_line(op, sizes, d).slope;
}

}  // namespace cat
