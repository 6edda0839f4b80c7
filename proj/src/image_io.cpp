#include "bvton/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace bvton::io {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  return os;
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path.string());
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// Parses "P5/P6 W H 255\n" and returns the payload offset.
std::size_t parse_netpbm_header(const std::vector<unsigned char>& b, const std::string& magic, int& w, int& h,
                                const std::filesystem::path& path) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < b.size() && !std::isspace(b[pos])) t.push_back(static_cast<char>(b[pos++]));
    return t;
  };
  if (token() != magic) throw FormatError(path.string() + ": expected " + magic + " header");
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    if (std::stoi(token()) != 255) throw FormatError(path.string() + ": only 8-bit maxval supported");
  } catch (const std::invalid_argument&) {
    throw FormatError(path.string() + ": malformed header");
  }
  if (w <= 0 || h <= 0) throw FormatError(path.string() + ": bad dimensions");
  ++pos;  // single whitespace after maxval
  return pos;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::uint8_t quantize(Real v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

TensorF quantize_image(const TensorF& img) {
  TensorF out(img.shape());
  for (Eigen::Index i = 0; i < img.size(); ++i) out[i] = dequantize(quantize(img[i]));
  return out;
}

void write_ppm(const std::filesystem::path& path, const TensorF& rgb) {
  require(rgb.n() == 1 && rgb.c() == 3, "write_ppm: expects (1,3,H,W)");
  auto os = open_out(path);
  os << "P6\n" << rgb.w() << " " << rgb.h() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(rgb.h()) * rgb.w() * 3);
  for (int y = 0; y < rgb.h(); ++y)
    for (int x = 0; x < rgb.w(); ++x)
      for (int c = 0; c < 3; ++c) buf[(static_cast<std::size_t>(y) * rgb.w() + x) * 3 + c] = quantize(rgb(0, c, y, x));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

TensorF read_ppm(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  int w = 0, h = 0;
  const std::size_t off = parse_netpbm_header(b, "P6", w, h, path);
  if (b.size() < off + static_cast<std::size_t>(w) * h * 3) throw FormatError(path.string() + ": truncated");
  TensorF img(Shape{1, 3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img(0, c, y, x) = dequantize(b[off + (static_cast<std::size_t>(y) * w + x) * 3 + c]);
  return img;
}

void write_pgm(const std::filesystem::path& path, const LabelMap& values) {
  auto os = open_out(path);
  os << "P5\n" << values.cols() << " " << values.rows() << "\n255\n";
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size()));
}

LabelMap read_pgm(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  int w = 0, h = 0;
  const std::size_t off = parse_netpbm_header(b, "P5", w, h, path);
  if (b.size() < off + static_cast<std::size_t>(w) * h) throw FormatError(path.string() + ": truncated");
  LabelMap m(h, w);
  std::memcpy(m.data(), b.data() + off, static_cast<std::size_t>(w) * h);
  return m;
}

void write_mask(const std::filesystem::path& path, const TensorF& mask) {
  require(mask.n() == 1 && mask.c() == 1, "write_mask: expects (1,1,H,W)");
  LabelMap m(mask.h(), mask.w());
  for (Eigen::Index i = 0; i < mask.size(); ++i) m.data()[i] = quantize(mask[i]);
  write_pgm(path, m);
}

TensorF read_mask(const std::filesystem::path& path) {
  const LabelMap m = read_pgm(path);
  TensorF t(Shape{1, 1, static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = dequantize(m.data()[i]);
  return t;
}

void write_flow(const std::filesystem::path& path, const TensorF& flow) {
  require(flow.n() == 1, "write_flow: expects a single field");
  auto os = open_out(path);
  os.write("BVFL", 4);
  put_u32(os, static_cast<std::uint32_t>(flow.h()));
  put_u32(os, static_cast<std::uint32_t>(flow.w()));
  put_u32(os, static_cast<std::uint32_t>(flow.c()));
  for (Eigen::Index i = 0; i < flow.size(); ++i) {
    const float f = static_cast<float>(flow[i]);
    put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
}

TensorF read_flow(const std::filesystem::path& path) {
  const auto b = read_bytes(path);
  if (b.size() < 16 || std::memcmp(b.data(), "BVFL", 4) != 0)
    throw FormatError(path.string() + ": missing BVFL header");
  const std::uint32_t h = get_u32(b.data() + 4), w = get_u32(b.data() + 8), c = get_u32(b.data() + 12);
  const std::size_t count = static_cast<std::size_t>(h) * w * c;
  if (h == 0 || w == 0 || c == 0 || b.size() != 16 + 4 * count)
    throw FormatError(path.string() + ": flow payload size does not match header");
  TensorF flow(Shape{1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
  for (std::size_t i = 0; i < count; ++i)
    flow[static_cast<Eigen::Index>(i)] = static_cast<Real>(std::bit_cast<float>(get_u32(b.data() + 16 + 4 * i)));
  return flow;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open: " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
}

std::string fnv1a_file(const std::filesystem::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : read_bytes(path)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace bvton::io
