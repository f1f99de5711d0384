#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cat/attention.hpp"
#include "cat/error.hpp"
#include "cat/rng.hpp"
#include "cat/rope.hpp"
#include "cat/tensor.hpp"

namespace cat {

// Strength schedule of the residual imprint across depth (layer index l of
// L): off -> 0, constant -> 1, forward_decay -> 1 - l/L, backward_decay ->
// l/L, tanh variants -> tanh of the corresponding value.
enum class ImprintMode { off, constant, forward_decay, backward_decay, tanh_forward, tanh_backward };

enum class ModelKind { cat, vit_baseline };

// Positional mechanism of the baseline model only; the cross-axis model
// always uses its rotary tables (switchable via use_rotary).
enum class PosMode { rotary, sinusoidal, none };

struct CatConfig {
  std::int64_t image_size = 32;
  std::int64_t patch_size = 8;
  std::int64_t channels = 3;
  std::int64_t hidden = 64;   // d
  std::int64_t heads = 8;     // H
  std::int64_t layers = 3;    // L
  double ffn_ratio = 4.0;     // r; ffn hidden width = round(r * d)
  std::int64_t num_classes = 10;
  ImprintMode imprint_mode = ImprintMode::constant;
  std::vector<bool> imprint_layers;  // per-layer mask; empty = all layers
  ModelKind model_kind = ModelKind::cat;
  PosMode pos_mode = PosMode::rotary;
  GammaMode gamma_mode = GammaMode::retnet;
  bool use_rotary = true;
  bool aspect_correction = true;
  double norm_eps = 1e-5;

  std::int64_t grid() const { return image_size / patch_size; }
  std::int64_t tokens() const { return grid() * grid(); }
  std::int64_t head_dim() const { return hidden / heads; }
  std::int64_t ffn_hidden() const {
    return static_cast<std::int64_t>(std::llround(ffn_ratio * static_cast<double>(hidden)));
  }
  std::int64_t patch_dim() const { return channels * patch_size * patch_size; }

  bool is_cat() const { return model_kind == ModelKind::cat; }
  bool imprint_on(std::int64_t layer) const {
    if (!is_cat() || imprint_mode == ImprintMode::off) return false;
    if (imprint_layers.empty()) return true;
    return imprint_layers[static_cast<std::size_t>(layer)];
  }

  void validate() const {
    if (image_size < 1 || patch_size < 1 || image_size % patch_size != 0)
      throw ConfigError("image_size " + std::to_string(image_size) +
                        " must be a positive multiple of patch_size " +
                        std::to_string(patch_size));
    if (channels < 1) throw ConfigError("channels must be positive");
    if (heads < 1 || hidden % heads != 0)
      throw ConfigError("hidden " + std::to_string(hidden) + " must divide into heads " +
                        std::to_string(heads));
    if (head_dim() % 4 != 0)
      throw ConfigError("head_dim " + std::to_string(head_dim()) + " must be divisible by 4");
    if (layers < 1) throw ConfigError("layers must be positive");
    if (ffn_hidden() < 1) throw ConfigError("ffn_ratio too small");
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (!imprint_layers.empty() &&
        static_cast<std::int64_t>(imprint_layers.size()) != layers)
      throw ConfigError("imprint_layers mask must have one entry per layer");
    if (norm_eps <= 0) throw ConfigError("norm_eps must be positive");
  }
};

inline double imprint_schedule(std::int64_t layer, std::int64_t total_layers, ImprintMode mode) {
  const double frac = static_cast<double>(layer) / static_cast<double>(total_layers);
  switch (mode) {
    case ImprintMode::off: return 0.0;
    case ImprintMode::constant: return 1.0;
    case ImprintMode::forward_decay: return 1.0 - frac;
    case ImprintMode::backward_decay: return frac;
    case ImprintMode::tanh_forward: return std::tanh(1.0 - frac);
    case ImprintMode::tanh_backward: return std::tanh(frac);
  }
  return 0.0;
}

// Canonical parameter enumeration: names and shapes in serialization order.
// The baseline model owns no class_token and no per-head group norm.
inline std::vector<std::pair<std::string, Shape>> enumerate_params(const CatConfig& c) {
  c.validate();
  const std::int64_t d = c.hidden, H = c.heads, f = c.ffn_hidden();
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embed.kernel", Shape{c.patch_dim(), d});
  out.emplace_back("embed.bias", Shape{d});
  if (c.is_cat()) out.emplace_back("class_token", Shape{d});
  for (std::int64_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.emplace_back(p + "in_norm.scale", Shape{d});
    out.emplace_back(p + "in_norm.shift", Shape{d});
    out.emplace_back(p + "attn.qkv.weight", Shape{d, 3 * d});
    out.emplace_back(p + "attn.qkv.bias", Shape{3 * d});
    if (c.is_cat()) {
      out.emplace_back(p + "attn.gn.scale", Shape{H});
      out.emplace_back(p + "attn.gn.shift", Shape{H});
    }
    out.emplace_back(p + "attn.out.weight", Shape{d, d});
    out.emplace_back(p + "attn.out.bias", Shape{d});
    out.emplace_back(p + "out_norm.scale", Shape{d});
    out.emplace_back(p + "out_norm.shift", Shape{d});
    out.emplace_back(p + "ffn.w1.weight", Shape{d, f});
    out.emplace_back(p + "ffn.w1.bias", Shape{f});
    out.emplace_back(p + "ffn.w2.weight", Shape{f, d});
    out.emplace_back(p + "ffn.w2.bias", Shape{d});
  }
  out.emplace_back("head.weight", Shape{d, c.num_classes});
  out.emplace_back("head.bias", Shape{c.num_classes});
  return out;
}

inline std::vector<std::string> param_names(const CatConfig& c) {
  std::vector<std::string> names;
  for (auto& [n, s] : enumerate_params(c)) names.push_back(n);
  return names;
}

inline std::int64_t param_count(const CatConfig& c) {
  std::int64_t total = 0;
  for (auto& [n, s] : enumerate_params(c)) total += shape_numel(s);
  return total;
}

template <typename S>
using ParamMap = std::map<std::string, Tensor<S>>;

// Deterministic initialization: weight matrices and the class token draw
// from a truncated normal (std 0.02, clipped at two sigma); biases and norm
// shifts start at zero, norm scales at one.
template <typename S>
ParamMap<S> init_params(const CatConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  ParamMap<S> params;
  for (auto& [name, shape] : enumerate_params(c)) {
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    const bool is_scale = name.ends_with("norm.scale") || name.ends_with("gn.scale");
    const bool is_weight = name.ends_with("weight") || name.ends_with("kernel") ||
                           name == "class_token";
    std::vector<S> v(n, S(0));
    if (is_scale) {
      v.assign(n, S(1));
    } else if (is_weight) {
      for (auto& x : v) x = static_cast<S>(rng.truncated_normal(0.02));
    }
    params.emplace(name, Tensor<S>(shape, std::move(v)));
  }
  return params;
}

// Non-overlapping stride-p patch extraction. Each patch is flattened in
// (channel, patch_row, patch_col) order — exactly the weight layout of a
// kernel-equals-stride convolution. image: [C, n, n] -> [S*S, C*p*p];
// batched [B, C, n, n] -> [B, S*S, C*p*p]. Pure data movement (the image is
// not a learnable input), so this does not record on any tape.
template <typename S>
Tensor<S> extract_patches(const Tensor<S>& image, std::int64_t p) {
  if (image.rank() != 3 && image.rank() != 4)
    throw BadImageSize("expected [channels, n, n] (optionally batched), got " +
                       shape_str(image.shape()));
  const std::int64_t off = image.rank() - 3;
  const std::int64_t B = off ? image.dim(0) : 1;
  const std::int64_t C = image.dim(off), hpx = image.dim(off + 1), wpx = image.dim(off + 2);
  if (hpx != wpx || p < 1 || hpx % p != 0)
    throw BadImageSize("image " + shape_str(image.shape()) + " is not square with side a multiple of patch size " +
                       std::to_string(p));
  const std::int64_t G = hpx / p;
  const std::int64_t pd = C * p * p;
  std::vector<S> out(static_cast<std::size_t>(B * G * G * pd));
  const S* src = image.data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t gx = 0; gx < G; ++gx)
      for (std::int64_t gy = 0; gy < G; ++gy) {
        S* dst = out.data() + ((b * G + gx) * G + gy) * pd;
        for (std::int64_t ch = 0; ch < C; ++ch)
          for (std::int64_t py = 0; py < p; ++py)
            for (std::int64_t px = 0; px < p; ++px)
              *dst++ = src[((b * C + ch) * hpx + gx * p + py) * wpx + gy * p + px];
      }
  Shape shape = off ? Shape{B, G * G, pd} : Shape{G * G, pd};
  return Tensor<S>(std::move(shape), std::move(out));
}

// Patchify + affine map to the hidden width: the exact
// convolution-with-kernel-equals-stride embedding. image: [C, n, n] ->
// [S, S, d]; batched [B, C, n, n] -> [B, S, S, d].
template <typename S>
Tensor<S> patch_embed(const Tensor<S>& image, const Tensor<S>& kernel, const Tensor<S>& bias,
                      std::int64_t p) {
  const Tensor<S> patches = extract_patches(image, p);
  if (kernel.rank() != 2 || kernel.dim(0) != patches.dim(patches.rank() - 1))
    throw ShapeMismatch("patch kernel " + shape_str(kernel.shape()) + " does not accept patches " +
                        shape_str(patches.shape()));
  const std::int64_t off = image.rank() - 3;
  const std::int64_t G = image.dim(off + 1) / p;
  const std::int64_t d = kernel.dim(1);
  const Tensor<S> mapped = linear(patches, kernel, bias);
  Shape shape = off ? Shape{image.dim(0), G, G, d} : Shape{G, G, d};
  return reshape(mapped, shape);
}

// Classic 1D sinusoidal position table over flattened token order:
// PE[pos, 2i] = sin(pos * w_i), PE[pos, 2i+1] = cos(pos * w_i) with
// w_i = 10000^(-2i/d). Used only by the baseline's sinusoidal mode.
template <typename S>
Tensor<S> sinusoidal_positions(std::int64_t tokens, std::int64_t d) {
  std::vector<S> out(static_cast<std::size_t>(tokens * d));
  for (std::int64_t pos = 0; pos < tokens; ++pos)
    for (std::int64_t c = 0; c < d; ++c) {
      const double w = std::pow(10000.0, -2.0 * static_cast<double>(c / 2) / static_cast<double>(d));
      const double arg = static_cast<double>(pos) * w;
      out[static_cast<std::size_t>(pos * d + c)] =
          static_cast<S>(c % 2 == 0 ? std::sin(arg) : std::cos(arg));
    }
  return Tensor<S>({tokens, d}, std::move(out));
}

namespace detail {

template <typename S>
Tensor<S> ffn_forward(const Tensor<S>& x, const ParamMap<S>& params, const std::string& prefix) {
  const Tensor<S> h = gelu(linear(x, params.at(prefix + "ffn.w1.weight"),
                                  params.at(prefix + "ffn.w1.bias")));
  return linear(h, params.at(prefix + "ffn.w2.weight"), params.at(prefix + "ffn.w2.bias"));
}

// Mean over the token axis: [(B,) N, d] -> [(B,) d], realized as a batched
// product with a constant 1/N row so it flows through the standard matmul
// gradient.
template <typename S>
Tensor<S> mean_pool_tokens(const Tensor<S>& x) {
  const std::int64_t off = x.rank() - 2;
  const std::int64_t N = x.dim(off), d = x.dim(off + 1);
  Shape ones_shape = off ? Shape{x.dim(0), 1, N} : Shape{1, N};
  const Tensor<S> row = Tensor<S>::full(ones_shape, S(1) / static_cast<S>(N));
  Shape out = off ? Shape{x.dim(0), d} : Shape{d};
  return reshape(matmul(row, x), out);
}

}  // namespace detail

// One residual block of the cross-axis model:
//   x1 = attention(in_norm(x), imprint) + x
//   x2 = ffn(out_norm(x1)) + x1
// The imprint term (if any) is injected at the attention entry.
template <typename S>
Tensor<S> cat_block(const Tensor<S>& x, const ParamMap<S>& params, const std::string& prefix,
                    const CatConfig& c, const RotaryTables<S>* tables,
                    const Tensor<S>* imprint_term = nullptr) {
  const S eps = static_cast<S>(c.norm_eps);
  CrossAxisParams<S> ap{params.at(prefix + "attn.qkv.weight"),
                        params.at(prefix + "attn.qkv.bias"),
                        gamma_values<S>(c.gamma_mode, c.heads),
                        params.at(prefix + "attn.gn.scale"),
                        params.at(prefix + "attn.gn.shift"),
                        params.at(prefix + "attn.out.weight"),
                        params.at(prefix + "attn.out.bias")};
  const Tensor<S> normed =
      layer_norm(x, params.at(prefix + "in_norm.scale"), params.at(prefix + "in_norm.shift"), eps);
  const Tensor<S> x1 = add(cross_axis_attention(normed, ap, tables, imprint_term, eps), x);
  const Tensor<S> o =
      layer_norm(x1, params.at(prefix + "out_norm.scale"), params.at(prefix + "out_norm.shift"), eps);
  return add(detail::ffn_forward(o, params, prefix), x1);
}

// One residual block of the baseline model over flattened tokens.
template <typename S>
Tensor<S> vit_block(const Tensor<S>& x, const ParamMap<S>& params, const std::string& prefix,
                    const CatConfig& c, const RotaryTables<S>* tables) {
  const S eps = static_cast<S>(c.norm_eps);
  const Tensor<S> normed =
      layer_norm(x, params.at(prefix + "in_norm.scale"), params.at(prefix + "in_norm.shift"), eps);
  const Tensor<S> attn = softmax_attention(
      normed, params.at(prefix + "attn.qkv.weight"), params.at(prefix + "attn.qkv.bias"),
      params.at(prefix + "attn.out.weight"), params.at(prefix + "attn.out.bias"), c.heads, tables);
  const Tensor<S> x1 = add(attn, x);
  const Tensor<S> o =
      layer_norm(x1, params.at(prefix + "out_norm.scale"), params.at(prefix + "out_norm.shift"), eps);
  return add(detail::ffn_forward(o, params, prefix), x1);
}

// Full forward pass over a batch: images [B, C, n, n] -> logits [B, classes].
//
// Cross-axis path: the imprint base (patch embedding plus the broadcast
// class token) is computed once from the initial embedding and re-scaled per
// layer by the schedule; flagged layers receive it at their attention entry.
// Baseline path: flattened tokens, optional sinusoidal table added at the
// input or rotary tables threaded into each attention.
template <typename S>
Tensor<S> model_forward_batch(const Tensor<S>& images, const ParamMap<S>& params,
                              const CatConfig& c) {
  c.validate();
  if (images.rank() != 4)
    throw BadImageSize("model_forward_batch: expected [B, C, n, n], got " +
                       shape_str(images.shape()));
  const std::int64_t B = images.dim(0), G = c.grid(), d = c.hidden;

  const Tensor<S> e =
      patch_embed(images, params.at("embed.kernel"), params.at("embed.bias"), c.patch_size);

  if (c.is_cat()) {
    RotaryTables<S> tables;
    const bool rot = c.use_rotary;
    if (rot) tables = build_tables<S>(GridSpec(G, G, c.head_dim()), c.aspect_correction);
    const Tensor<S> imprint_base = add(e, params.at("class_token"));
    Tensor<S> x = e;
    for (std::int64_t l = 0; l < c.layers; ++l) {
      const std::string prefix = "layer" + std::to_string(l) + ".";
      Tensor<S> term;
      const Tensor<S>* term_ptr = nullptr;
      if (c.imprint_on(l)) {
        const double s = imprint_schedule(l, c.layers, c.imprint_mode);
        term = scale(imprint_base, static_cast<S>(s));
        term_ptr = &term;
      }
      x = cat_block(x, params, prefix, c, rot ? &tables : nullptr, term_ptr);
    }
    const Tensor<S> pooled = detail::mean_pool_tokens(reshape(x, {B, G * G, d}));
    return linear(pooled, params.at("head.weight"), params.at("head.bias"));
  }

  // baseline
  RotaryTables<S> tables;
  const bool rot = c.pos_mode == PosMode::rotary;
  if (rot) tables = build_tables<S>(GridSpec(G, G, c.head_dim()), c.aspect_correction);
  Tensor<S> x = reshape(e, {B, G * G, d});
  if (c.pos_mode == PosMode::sinusoidal)
    x = add(x, sinusoidal_positions<S>(G * G, d));
  for (std::int64_t l = 0; l < c.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l) + ".";
    x = vit_block(x, params, prefix, c, rot ? &tables : nullptr);
  }
  const Tensor<S> pooled = detail::mean_pool_tokens(x);
  return linear(pooled, params.at("head.weight"), params.at("head.bias"));
}

// Single-image forward: image [C, n, n] -> logits [classes].
template <typename S>
Tensor<S> model_forward(const Tensor<S>& image, const ParamMap<S>& params, const CatConfig& c) {
  if (image.rank() != 3)
    throw BadImageSize("model_forward: expected [C, n, n], got " + shape_str(image.shape()));
  Shape batched = image.shape();
  batched.insert(batched.begin(), 1);
  const Tensor<S> logits = model_forward_batch(reshape(image, batched), params, c);
  return reshape(logits, {c.num_classes});
}

}  // namespace cat
