#pragma once

// Lossless file formats: binary PPM/PGM for 8-bit images, label maps and
// masks, and the BVFL container for float flow fields.

#include "bvton/types.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace bvton::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Values in [0,1] quantized as round(255 v); decoding gives q / 255 exactly.
std::uint8_t quantize(Real v);
inline Real dequantize(std::uint8_t q) { return static_cast<Real>(q) / Real(255); }

/// Round every element to the nearest 8-bit level (the same values a write/read cycle yields).
TensorF quantize_image(const TensorF& img);

void write_ppm(const std::filesystem::path& path, const TensorF& rgb);  // (1,3,H,W)
TensorF read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const LabelMap& values);
LabelMap read_pgm(const std::filesystem::path& path);

/// Single-channel mask (1,1,H,W) in [0,1] as an 8-bit PGM.
void write_mask(const std::filesystem::path& path, const TensorF& mask);
TensorF read_mask(const std::filesystem::path& path);

/// BVFL: "BVFL", u32 H, u32 W, u32 C, then little-endian float32 planar data.
void write_flow(const std::filesystem::path& path, const TensorF& flow);
TensorF read_flow(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a of a file's bytes, as 16 hex digits.
std::string fnv1a_file(const std::filesystem::path& path);

}  // namespace bvton::io
