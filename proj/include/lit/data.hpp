#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lit/tensor.hpp"

namespace lit::data {

// Images stored N×H×W×3, values in [-1, 1].
struct Dataset {
  std::size_t height = 0, width = 0;
  std::size_t num_classes = 0;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }

  template <typename T>
  Tensor<T> images(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

inline constexpr std::size_t kSyntheticClasses = 10;

// Seeded generator of colored geometric shapes, one shape family per class
// (disk, ring, square, frame, triangle, diamond, plus, cross, ellipse,
// half-disk), with random color, size, position and background noise.
Dataset synthetic(std::size_t count, std::uint64_t seed, std::size_t resolution = 64);

// One subdirectory per class (sorted by name) holding PPM/PGM files
// (P2, P3, P5 or P6) of exactly resolution × resolution pixels.
Dataset load_image_dir(const std::filesystem::path& root, std::size_t resolution);

// Row-major RGB bytes → PPM (P6); used for debugging exports and tests.
void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb);

// Per-epoch visiting order: a permutation of 0..n−1 seeded by seed ^ epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

}  // namespace lit::data
