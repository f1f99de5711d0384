#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cat/error.hpp"
#include "cat/rng.hpp"
#include "cat/tensor.hpp"

namespace cat {

// An in-memory labeled image set: images [count, channels, n, n] with values
// in [0, 1], labels in [0, classes).
template <typename S>
struct Dataset {
  Tensor<S> images;
  std::vector<int> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t image_numel() const { return images.numel() / std::max<std::int64_t>(size(), 1); }

  // gather a batch [B, channels, n, n] by sample indices
  Tensor<S> gather_images(const std::vector<std::int64_t>& idx) const {
    const std::int64_t per = image_numel();
    Shape shape = images.shape();
    shape[0] = static_cast<std::int64_t>(idx.size());
    std::vector<S> out(static_cast<std::size_t>(per) * idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b)
      std::copy_n(images.data() + idx[b] * per, per, out.data() + static_cast<std::int64_t>(b) * per);
    return Tensor<S>(std::move(shape), std::move(out));
  }

  std::vector<int> gather_labels(const std::vector<std::int64_t>& idx) const {
    std::vector<int> out(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) out[b] = labels[static_cast<std::size_t>(idx[b])];
    return out;
  }

  // first `count` samples (all if count < 0 or beyond the end)
  Dataset take(std::int64_t count) const {
    if (count < 0 || count >= size()) return *this;
    const std::int64_t per = image_numel();
    Shape shape = images.shape();
    shape[0] = count;
    std::vector<S> out(images.data(), images.data() + count * per);
    return Dataset{Tensor<S>(std::move(shape), std::move(out)),
                   std::vector<int>(labels.begin(), labels.begin() + count)};
  }
};

// One standard CIFAR-10 binary batch file: 3073-byte records of 1 label byte
// followed by 3072 pixel bytes (red plane, green plane, blue plane, each
// 32x32 row-major), pixels scaled by 1/255.
template <typename S>
Dataset<S> load_cifar10_file(const std::string& path, std::int64_t limit = -1) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw MissingFile("cannot open " + path);
  const std::int64_t bytes = static_cast<std::int64_t>(in.tellg());
  constexpr std::int64_t kRecord = 3073;
  if (bytes % kRecord != 0)
    throw TruncatedRecord(path + ": " + std::to_string(bytes) +
                          " bytes is not a whole number of 3073-byte records");
  std::int64_t count = bytes / kRecord;
  if (limit >= 0) count = std::min(count, limit);

  in.seekg(0);
  std::vector<unsigned char> record(kRecord);
  std::vector<S> pixels(static_cast<std::size_t>(count) * 3072);
  std::vector<int> labels(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(record.data()), kRecord);
    if (!in) throw TruncatedRecord(path + ": short read at record " + std::to_string(i));
    labels[static_cast<std::size_t>(i)] = record[0];
    S* dst = pixels.data() + i * 3072;
    for (std::int64_t b = 0; b < 3072; ++b)
      dst[b] = static_cast<S>(record[static_cast<std::size_t>(1 + b)]) / S(255);
  }
  return Dataset<S>{Tensor<S>({count, 3, 32, 32}, std::move(pixels)), std::move(labels)};
}

// The five training batch files of a standard CIFAR-10 binary directory,
// concatenated in order.
template <typename S>
Dataset<S> load_cifar10(const std::string& dir) {
  std::vector<S> pixels;
  std::vector<int> labels;
  for (int i = 1; i <= 5; ++i) {
    const auto part = load_cifar10_file<S>(dir + "/data_batch_" + std::to_string(i) + ".bin");
    pixels.insert(pixels.end(), part.images.data(), part.images.data() + part.images.numel());
    labels.insert(labels.end(), part.labels.begin(), part.labels.end());
  }
  const auto count = static_cast<std::int64_t>(labels.size());
  return Dataset<S>{Tensor<S>({count, 3, 32, 32}, std::move(pixels)), std::move(labels)};
}

namespace detail {

// Planar-cosine class signatures for the synthetic set: integer frequency
// pairs (cycles per patch along x and y), each a distinct orientation and
// spatial frequency. Two patterns cos(2*pi*a.r/p) and cos(2*pi*b.r/p) are
// exactly orthogonal over a p x p patch when a != +-b (mod p) and are
// zero-mean when a != 0 (mod p), so every prefix of this table is mutually
// orthogonal for large enough p (p >= 7 admits all sixteen).
inline const std::vector<std::array<std::int64_t, 2>>& grating_modes() {
  static const std::vector<std::array<std::int64_t, 2>> modes = {
      {1, 0},  {0, 1},  {1, 1},  {1, -1}, {2, 0},  {0, 2},  {2, 2},  {2, -2},
      {3, 0},  {0, 3},  {3, 3},  {3, -3}, {1, 2},  {2, 1},  {1, 3},  {3, 1}};
  return modes;
}

inline bool zero_mode(std::int64_t kx, std::int64_t ky, std::int64_t p) {
  return ((kx % p) + p) % p == 0 && ((ky % p) + p) % p == 0;
}

inline bool mode_pair_ok(const std::array<std::int64_t, 2>& a,
                         const std::array<std::int64_t, 2>& b, std::int64_t p) {
  return !zero_mode(a[0] - b[0], a[1] - b[1], p) && !zero_mode(a[0] + b[0], a[1] + b[1], p);
}

// First `classes` table modes that stay pairwise orthogonal and zero-mean
// over a patch of size p. ConfigError when p is too small to host them.
inline std::vector<std::array<std::int64_t, 2>> select_grating_modes(std::int64_t classes,
                                                                     std::int64_t p) {
  std::vector<std::array<std::int64_t, 2>> picked;
  for (const auto& m : grating_modes()) {
    if (zero_mode(m[0], m[1], p)) continue;          // constant over the patch
    if (zero_mode(2 * m[0], 2 * m[1], p)) continue;  // self-paired: cos^2 loses orthogonality
    bool ok = true;
    for (const auto& q : picked) ok = ok && mode_pair_ok(m, q, p);
    if (!ok) continue;
    picked.push_back(m);
    if (static_cast<std::int64_t>(picked.size()) == classes) return picked;
  }
  throw ConfigError("patch size " + std::to_string(p) + " admits only " +
                    std::to_string(picked.size()) + " orthogonal class patterns, need " +
                    std::to_string(classes));
}

}  // namespace detail

// Deterministic learnability probe set. Class c's images share a planar
// cosine grating with a class-specific (frequency, orientation) pair that
// repeats exactly once per patch: pixel = 0.5 + amp * cos(2*pi*(kx*x+ky*y)/p)
// plus per-pixel uniform noise of +/-0.05, with amp = 0.3 scaled by a
// per-image jitter in [0.8, 1.2]. The gratings are exactly orthogonal and
// zero-mean over any patch, so matched filters on the mean patch profile
// separate every class with margin: own-class response >= 0.8*0.3 - 2*0.05,
// other-class responses <= 2*0.05. label(index) = index mod C; each sample
// depends only on (seed, index).
template <typename S>
Dataset<S> synthetic_dataset(std::int64_t classes, std::int64_t image_size,
                             std::int64_t patch_size, std::int64_t channels, std::uint64_t seed,
                             std::int64_t count) {
  if (classes < 2 || classes > 16)
    throw ConfigError("synthetic classes must be in [2, 16], got " + std::to_string(classes));
  if (image_size % patch_size != 0)
    throw ConfigError("synthetic image size must be a multiple of the patch size");
  const auto modes = detail::select_grating_modes(classes, patch_size);

  const std::int64_t per = channels * image_size * image_size;
  std::vector<S> pixels(static_cast<std::size_t>(count * per));
  std::vector<int> labels(static_cast<std::size_t>(count));
  const double tau = 2.0 * 3.14159265358979323846;
  for (std::int64_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % classes);
    labels[static_cast<std::size_t>(i)] = label;
    const auto& mode = modes[static_cast<std::size_t>(label)];
    Rng rng(seed + 0x100000001b3ull * static_cast<std::uint64_t>(i));
    const double amp = 0.3 * rng.uniform(0.8, 1.2);
    S* img = pixels.data() + i * per;
    for (std::int64_t ch = 0; ch < channels; ++ch)
      for (std::int64_t y = 0; y < image_size; ++y)
        for (std::int64_t x = 0; x < image_size; ++x) {
          const double phase = tau * static_cast<double>(mode[0] * x + mode[1] * y) /
                               static_cast<double>(patch_size);
          const double value = 0.5 + amp * std::cos(phase) + rng.uniform(-0.05, 0.05);
          *img++ = static_cast<S>(std::clamp(value, 0.0, 1.0));
        }
  }
  return Dataset<S>{Tensor<S>({count, channels, image_size, image_size}, std::move(pixels)),
                    std::move(labels)};
}

// Per-sample mean patch profile [count, p*p]: each image's patches averaged
// into a single channel-mean p x p patch — the patch statistic the synthetic
// classes are linearly separable in.
template <typename S>
std::vector<std::vector<double>> patch_profile_features(const Dataset<S>& data,
                                                        std::int64_t patch_size) {
  const std::int64_t n = data.images.dim(2), ch = data.images.dim(1);
  const std::int64_t G = n / patch_size;
  const std::int64_t dim = patch_size * patch_size;
  std::vector<std::vector<double>> features(static_cast<std::size_t>(data.size()),
                                            std::vector<double>(static_cast<std::size_t>(dim), 0.0));
  const std::int64_t per = data.image_numel();
  for (std::int64_t i = 0; i < data.size(); ++i) {
    const S* img = data.images.data() + i * per;
    auto& f = features[static_cast<std::size_t>(i)];
    for (std::int64_t c = 0; c < ch; ++c)
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) {
          const std::int64_t cell = (y % patch_size) * patch_size + (x % patch_size);
          f[static_cast<std::size_t>(cell)] += static_cast<double>(*img++);
        }
    const double scale = 1.0 / static_cast<double>(ch * G * G);
    for (auto& v : f) v *= scale;
  }
  return features;
}

// Nearest-centroid classifier on mean patch profiles: fit per-class centroids
// on the set, then classify the same set. Returns accuracy — the linear
// separability witness for synthetic data.
template <typename S>
double patch_probe_accuracy(const Dataset<S>& data, std::int64_t patch_size,
                            std::int64_t classes) {
  const auto features = patch_profile_features(data, patch_size);
  if (features.empty()) return 0.0;
  const std::size_t dim = features[0].size();
  std::vector<std::vector<double>> centroid(static_cast<std::size_t>(classes),
                                            std::vector<double>(dim, 0.0));
  std::vector<std::int64_t> counts(static_cast<std::size_t>(classes), 0);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    const auto c = static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)]);
    for (std::size_t j = 0; j < dim; ++j) centroid[c][j] += features[static_cast<std::size_t>(i)][j];
    ++counts[c];
  }
  for (std::size_t c = 0; c < centroid.size(); ++c)
    if (counts[c] > 0)
      for (auto& v : centroid[c]) v /= static_cast<double>(counts[c]);

  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < data.size(); ++i) {
    double best = 0;
    int best_class = -1;
    for (std::size_t c = 0; c < centroid.size(); ++c) {
      if (counts[c] == 0) continue;
      double dist = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = features[static_cast<std::size_t>(i)][j] - centroid[c][j];
        dist += diff * diff;
      }
      if (best_class < 0 || dist < best) {
        best = dist;
        best_class = static_cast<int>(c);
      }
    }
    if (best_class == data.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

// Mirror images left-right: [.., n, n] with the last axis reversed.
template <typename S>
Tensor<S> flip_horizontal(const Tensor<S>& images) {
  const std::int64_t w = images.dim(images.rank() - 1);
  const std::int64_t rows = images.numel() / w;
  std::vector<S> out(static_cast<std::size_t>(images.numel()));
  const S* src = images.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t x = 0; x < w; ++x) out[static_cast<std::size_t>(r * w + x)] = src[r * w + (w - 1 - x)];
  return Tensor<S>(images.shape(), std::move(out));
}

}  // namespace cat
