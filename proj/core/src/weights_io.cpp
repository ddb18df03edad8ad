#include "ldct/weights_io.hpp"

#include <fmt/format.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace ldct {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string string(std::size_t n) {
    need(n, "string");
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw WeightsFormatError(fmt::format("truncated weights file: {} at byte {} needs {} bytes, {} left", what,
                                           pos_, n, in_.size() - pos_));
    }
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>& WeightsFile::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw WeightsFormatError(fmt::format("weights file has no tensor named '{}'", name));
}

bool WeightsFile::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

std::vector<std::uint8_t> encode_weights(const WeightsFile& file) {
  if (file.version != 1 && file.version != 2) {
    throw WeightsFormatError(fmt::format("unsupported weights version {}", file.version));
  }
  if (file.version == 1 && !file.meta_json.empty()) {
    throw WeightsFormatError("version 1 weights files cannot carry metadata");
  }
  Writer w;
  w.bytes(kWeightsMagic, 4);
  w.u32(file.version);
  if (file.version == 2) {
    w.u32(static_cast<std::uint32_t>(file.meta_json.size()));
    w.bytes(file.meta_json.data(), file.meta_json.size());
  }
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  std::set<std::string> seen;
  for (const auto& [name, t] : file.tensors) {
    if (!seen.insert(name).second) throw WeightsFormatError(fmt::format("duplicate tensor name '{}'", name));
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (float v : t.values()) w.f32(v);
  }
  return w.take();
}

WeightsFile decode_weights(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::string magic = r.string(4);
  if (std::memcmp(magic.data(), kWeightsMagic, 4) != 0) throw WeightsFormatError("bad magic: not a WVGF file");
  WeightsFile file;
  file.version = r.u32();
  if (file.version != 1 && file.version != 2) {
    throw WeightsFormatError(fmt::format("unsupported weights version {}", file.version));
  }
  if (file.version == 2) file.meta_json = r.string(r.u32());
  const std::uint32_t count = r.u32();
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.string(r.u32());
    if (!seen.insert(name).second) throw WeightsFormatError(fmt::format("duplicate tensor name '{}'", name));
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw WeightsFormatError(fmt::format("tensor '{}' has invalid rank {}", name, rank));
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d == 0) throw WeightsFormatError(fmt::format("tensor '{}' has a zero dimension", name));
      n *= d;
    }
    if (n > r.remaining() / 4) {
      throw WeightsFormatError(fmt::format("truncated weights file: tensor '{}' needs {} floats", name, n));
    }
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    file.tensors.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) {
    throw WeightsFormatError(fmt::format("{} trailing bytes after the last tensor", r.remaining()));
  }
  return file;
}

void write_weights(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
                   const std::string& meta_json) {
  WeightsFile file{meta_json.empty() ? 1u : 2u, meta_json, tensors};
  const auto bytes = encode_weights(file);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", tmp.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

WeightsFile read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open weights file '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_weights(bytes);
  } catch (const WeightsFormatError& e) {
    throw WeightsFormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace ldct
