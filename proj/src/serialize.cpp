#include "lit/serialize.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "lit/error.hpp"

namespace lit::ckpt {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  const auto v = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }

  float f32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return std::bit_cast<float>(v);
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode(const std::vector<NamedTensor>& records) {
  std::string out(kMagic);
  for (const auto& r : records) {
    if (shape_numel(r.shape) != r.values.size()) {
      throw DimensionError("checkpoint record '" + r.name + "' has " + std::to_string(r.values.size()) +
                           " values for shape " + shape_str(r.shape));
    }
    put_u64(out, r.name.size());
    out += r.name;
    put_u64(out, r.shape.size());
    for (auto e : r.shape) put_u64(out, e);
    for (float v : r.values) put_f32(out, v);
  }
  return out;
}

std::vector<NamedTensor> decode(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw IoError("not a LITCKPT1 file (bad magic)");
  std::vector<NamedTensor> records;
  while (!in.done()) {
    NamedTensor r;
    const auto name_len = in.u64();
    r.name = std::string(in.take(name_len));
    const auto rank = in.u64();
    if (rank > 16) throw IoError("checkpoint record '" + r.name + "' has implausible rank");
    std::uint64_t count = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      r.shape.push_back(in.u64());
      count *= r.shape.back();
    }
    if (count * 4 > in.remaining()) throw IoError("checkpoint record '" + r.name + "' truncated");
    r.values.resize(count);
    for (auto& v : r.values) v = in.f32();
    records.push_back(std::move(r));
  }
  return records;
}

void save(const std::filesystem::path& path, const std::vector<NamedTensor>& records) {
  const auto bytes = encode(records);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace lit::ckpt
