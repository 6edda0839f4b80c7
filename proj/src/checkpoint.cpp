#include "bvton/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace bvton::ckpt {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
    bytes_.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }
  std::uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(4);
    if (std::memcmp(bytes_.data(), "BVCK", 4) != 0) throw CheckpointError(path_.string() + ": not a checkpoint");
    pos_ = 4;
    const std::uint32_t v = u32();
    if (v != kVersion)
      throw CheckpointError(path_.string() + ": unsupported checkpoint version " + std::to_string(v));
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointError(path_.string() + ": truncated checkpoint");
  }
  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save(const std::filesystem::path& path, const nn::ParamStore<Real>& store) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot write checkpoint " + path.string());
  os.write("BVCK", 4);
  put_u32(os, kVersion);
  put_string(os, store.descriptor());
  put_u32(os, static_cast<std::uint32_t>(store.items().size()));
  for (const auto& [name, v] : store.items()) {
    put_string(os, name);
    const Shape s = v.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(os, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < v.value().size(); ++i) put_u32(os, std::bit_cast<std::uint32_t>(v.value()[i]));
  }
}

std::string peek_descriptor(const std::filesystem::path& path) {
  Reader r(path);
  r.magic();
  return r.str();
}

void load(const std::filesystem::path& path, nn::ParamStore<Real>& store) {
  Reader r(path);
  r.magic();
  const std::string desc = r.str();
  if (desc != store.descriptor())
    throw CheckpointError(path.string() + ": architecture mismatch: file has '" + desc + "', model is '" +
                          store.descriptor() + "'");
  const std::uint32_t count = r.u32();
  if (count != store.items().size())
    throw CheckpointError(path.string() + ": parameter count " + std::to_string(count) + " != " +
                          std::to_string(store.items().size()));
  std::vector<std::pair<std::string, TensorF>> values;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    if (!store.contains(name)) throw CheckpointError(path.string() + ": unknown parameter " + name);
    Shape s;
    s.n = static_cast<int>(r.u32());
    s.c = static_cast<int>(r.u32());
    s.h = static_cast<int>(r.u32());
    s.w = static_cast<int>(r.u32());
    if (s != store.get(name).shape())
      throw CheckpointError(path.string() + ": shape mismatch for " + name + ": " + s.str() + " vs " +
                            store.get(name).shape().str());
    TensorF t(s);
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(r.u32());
    values.emplace_back(name, std::move(t));
  }
  // commit only after the whole file validated
  for (auto& [name, t] : values) store.get(name).mutable_value() = std::move(t);
}

}  // namespace bvton::ckpt
