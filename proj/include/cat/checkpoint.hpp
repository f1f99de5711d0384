#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cat/error.hpp"
#include "cat/tensor.hpp"

namespace cat {

// Checkpoint container: named tensors in file order (parameters first, in
// their canonical order, then optimizer moments), the JSON config snapshot
// the run was started with, and the step counter.
template <typename S>
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<S>>> tensors;
  std::string config_json;
  std::uint64_t step = 0;

  const Tensor<S>& at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw MissingFile("checkpoint has no tensor named " + name);
  }

  std::map<std::string, Tensor<S>> to_map() const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [n, t] : tensors) out.emplace(n, t);
    return out;
  }
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'C', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in, const std::string& what) {
  static_assert(std::is_unsigned_v<T>);
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw TruncatedFile("checkpoint ends inside " + what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

template <typename S>
constexpr std::uint8_t dtype_code() {
  static_assert(sizeof(S) == 4 || sizeof(S) == 8, "checkpoint supports f32 and f64 only");
  return sizeof(S) == 4 ? 0 : 1;
}

// scalars are serialized little-endian; on a little-endian host the raw
// buffer is already in file order
template <typename S>
void write_scalars(std::ostream& out, const S* data, std::int64_t count) {
  for (std::int64_t i = 0; i < count; ++i) {
    typename std::conditional<sizeof(S) == 4, std::uint32_t, std::uint64_t>::type u;
    std::memcpy(&u, data + i, sizeof(S));
    unsigned char bytes[sizeof(S)];
    for (std::size_t b = 0; b < sizeof(S); ++b) bytes[b] = static_cast<unsigned char>((u >> (8 * b)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), sizeof(S));
  }
}

template <typename S>
void read_scalars(std::istream& in, S* data, std::int64_t count, const std::string& name) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(count) * sizeof(S));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw TruncatedFile("checkpoint ends inside tensor " + name);
  for (std::int64_t i = 0; i < count; ++i) {
    typename std::conditional<sizeof(S) == 4, std::uint32_t, std::uint64_t>::type u = 0;
    for (std::size_t b = 0; b < sizeof(S); ++b)
      u |= static_cast<decltype(u)>(bytes[static_cast<std::size_t>(i) * sizeof(S) + b]) << (8 * b);
    std::memcpy(data + i, &u, sizeof(S));
  }
}

}  // namespace detail

// Binary layout (all integers little-endian):
//   magic "CATCKPT1" | u32 version = 1 | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype (0 = f32, 1 = f64)
//               | u8 rank | rank x u64 dims | raw scalar data
//   u32 config length | config JSON bytes | u64 step
template <typename S>
void save_checkpoint(const std::string& path, const Checkpoint<S>& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingFile("cannot write " + path);
  out.write(detail::kCkptMagic, 8);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(detail::dtype_code<S>()));
    out.put(static_cast<char>(tensor.rank()));
    for (std::int64_t a = 0; a < tensor.rank(); ++a)
      detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(tensor.dim(a)));
    detail::write_scalars(out, tensor.data(), tensor.numel());
  }
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out.write(ckpt.config_json.data(), static_cast<std::streamsize>(ckpt.config_json.size()));
  detail::write_le<std::uint64_t>(out, ckpt.step);
  if (!out) throw MissingFile("write failed for " + path);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in) throw TruncatedFile(path + " is shorter than the header");
  if (std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw BadMagic(path + " is not a checkpoint (bad magic)");
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  if (version != 1)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected 1");

  Checkpoint<S> ckpt;
  const auto count = detail::read_le<std::uint32_t>(in, "tensor count");
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_le<std::uint16_t>(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw TruncatedFile("checkpoint ends inside a tensor name");
    const int dtype = in.get();
    const int rank = in.get();
    if (dtype < 0 || rank < 0) throw TruncatedFile("checkpoint ends inside tensor " + name);
    if (dtype != detail::dtype_code<S>())
      throw ShapeMismatch("tensor " + name + " has dtype code " + std::to_string(dtype) +
                          ", expected " + std::to_string(int(detail::dtype_code<S>())));
    Shape shape(static_cast<std::size_t>(rank));
    for (int a = 0; a < rank; ++a)
      shape[static_cast<std::size_t>(a)] =
          static_cast<std::int64_t>(detail::read_le<std::uint64_t>(in, "dims of " + name));
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)));
    detail::read_scalars(in, data.data(), shape_numel(shape), name);
    ckpt.tensors.emplace_back(std::move(name), Tensor<S>(std::move(shape), std::move(data)));
  }
  const auto json_len = detail::read_le<std::uint32_t>(in, "config length");
  ckpt.config_json.resize(json_len);
  in.read(ckpt.config_json.data(), json_len);
  if (!in) throw TruncatedFile("checkpoint ends inside the config snapshot");
  ckpt.step = detail::read_le<std::uint64_t>(in, "step");
  return ckpt;
}

}  // namespace cat
