#pragma once

// LITCKPT1 named-tensor container:
//   "LITCKPT1"
//   repeated until EOF:
//     u64 name length, UTF-8 name bytes,
//     u64 rank, rank × u64 extents,
//     prod(extents) × f32 values
// All integers and floats little-endian.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lit/tensor.hpp"

namespace lit::ckpt {

inline constexpr std::string_view kMagic = "LITCKPT1";

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

std::string encode(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode(std::string_view bytes);

// Writes through a temporary file and renames, so an existing checkpoint is
// never left half-written.
void save(const std::filesystem::path& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load(const std::filesystem::path& path);

template <typename T>
NamedTensor to_record(std::string name, const Tensor<T>& t) {
  NamedTensor r{std::move(name), t.shape(), {}};
  r.values.reserve(t.numel());
  for (const T v : t.data()) r.values.push_back(static_cast<float>(v));
  return r;
}

}  // namespace lit::ckpt
