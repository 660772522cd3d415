#include "lit/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "lit/error.hpp"

namespace lit::data {

template <typename T>
Tensor<T> Dataset::images(std::span<const std::size_t> indices) const {
  const std::size_t per = height * width * 3;
  std::vector<T> out(indices.size() * per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ValidationError("dataset index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return Tensor<T>(Shape{indices.size(), height, width, 3}, std::move(out));
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels.at(i));
  return out;
}

template Tensor<float> Dataset::images<float>(std::span<const std::size_t>) const;
template Tensor<double> Dataset::images<double>(std::span<const std::size_t>) const;

namespace {

// u, v: pixel offset from the shape center in units of its radius.
bool inside(int shape, double u, double v) {
  const double au = std::abs(u), av = std::abs(v), r = std::hypot(u, v);
  switch (shape) {
    case 0:
      return r <= 1.0;
    case 1:
      return r <= 1.0 && r >= 0.6;
    case 2:
      return au <= 0.85 && av <= 0.85;
    case 3:
      return au <= 0.9 && av <= 0.9 && (au >= 0.55 || av >= 0.55);
    case 4:
      return v <= 0.8 && v >= -0.9 && au <= (v + 0.9) * 0.6;
    case 5:
      return au + av <= 1.0;
    case 6:
      return (au <= 0.25 && av <= 1.0) || (av <= 0.25 && au <= 1.0);
    case 7:
      return au <= 1.0 && av <= 1.0 && std::abs(au - av) <= 0.25;
    case 8:
      return (u * u) / 1.0 + (v * v) / 0.16 <= 1.0;
    case 9:
      return r <= 1.0 && v >= 0.0;
    default:
      return false;
  }
}

}  // namespace

Dataset synthetic(std::size_t count, std::uint64_t seed, std::size_t resolution) {
  if (resolution < 16) throw ConfigError("synthetic images need resolution >= 16");
  Dataset d;
  d.height = d.width = resolution;
  d.num_classes = kSyntheticClasses;
  d.class_names = {"disk", "ring", "square", "frame", "triangle", "diamond", "plus", "cross", "ellipse", "half_disk"};
  d.pixels.resize(count * resolution * resolution * 3);
  d.labels.resize(count);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double res = static_cast<double>(resolution);
  for (std::size_t n = 0; n < count; ++n) {
    const int label = static_cast<int>(n % kSyntheticClasses);
    d.labels[n] = label;
    const double radius = res * (0.18 + 0.14 * unit(rng));
    const double cy = radius + (res - 2 * radius) * unit(rng);
    const double cx = radius + (res - 2 * radius) * unit(rng);
    double color[3], back[3];
    for (int c = 0; c < 3; ++c) {
      color[c] = 0.4 + 0.6 * unit(rng);
      back[c] = 0.25 * unit(rng);
    }
    float* img = d.pixels.data() + n * resolution * resolution * 3;
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        const double u = (static_cast<double>(x) + 0.5 - cx) / radius;
        const double v = (static_cast<double>(y) + 0.5 - cy) / radius;
        const bool in = inside(label, u, v);
        for (int c = 0; c < 3; ++c) {
          const double base = in ? color[c] : back[c];
          const double value = std::clamp(base + 0.05 * (unit(rng) - 0.5), 0.0, 1.0);
          img[(y * resolution + x) * 3 + c] = static_cast<float>(2.0 * value - 1.0);
        }
      }
    }
  }
  return d;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw IoError("truncated image header");
}

// Returns interleaved RGB in [0, 1].
std::vector<double> read_pnm(const std::filesystem::path& path, std::size_t& width, std::size_t& height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  const std::string magic = next_token(f);
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6") {
    throw IoError(path.string() + ": unsupported image format " + magic);
  }
  width = std::stoul(next_token(f));
  height = std::stoul(next_token(f));
  const double maxval = std::stod(next_token(f));
  if (maxval <= 0 || maxval > 255) throw IoError(path.string() + ": only 8-bit images are supported");
  const bool gray = magic == "P2" || magic == "P5";
  const bool binary = magic == "P5" || magic == "P6";
  const std::size_t channels = gray ? 1 : 3, count = width * height * channels;
  std::vector<double> raw(count);
  if (binary) {
    f.get();
    std::vector<unsigned char> bytes(count);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(f.gcount()) != count) throw IoError(path.string() + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i) raw[i] = bytes[i] / maxval;
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = std::stod(next_token(f)) / maxval;
  }
  if (!gray) return raw;
  std::vector<double> rgb(width * height * 3);
  for (std::size_t i = 0; i < width * height; ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = raw[i];
  return rgb;
}

}  // namespace

Dataset load_image_dir(const std::filesystem::path& root, std::size_t resolution) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError(root.string() + " is not a directory");
  Dataset d;
  d.height = d.width = resolution;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) d.class_names.push_back(entry.path().filename().string());
  }
  std::sort(d.class_names.begin(), d.class_names.end());
  if (d.class_names.empty()) throw ConfigError(root.string() + " holds no class subdirectories");
  d.num_classes = d.class_names.size();
  for (std::size_t c = 0; c < d.class_names.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(root / d.class_names[c])) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::size_t w = 0, h = 0;
      const auto rgb = read_pnm(file, w, h);
      if (w != resolution || h != resolution) {
        throw ConfigError(file.string() + " is " + std::to_string(w) + "x" + std::to_string(h) + ", expected " +
                          std::to_string(resolution) + "x" + std::to_string(resolution));
      }
      for (double v : rgb) d.pixels.push_back(static_cast<float>(2.0 * v - 1.0));
      d.labels.push_back(static_cast<int>(c));
    }
  }
  if (d.labels.empty()) throw ConfigError(root.string() + " holds no PPM/PGM images");
  return d;
}

void write_ppm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != width * height * 3) throw DimensionError("write_ppm: pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << "P6\n" << width << ' ' << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed ^ epoch);
  // Fisher–Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace lit::data
