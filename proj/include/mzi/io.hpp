#pragma once

// 8-bit export of observations: PGM files for inspection and the byte
// layout used on the play-server wire.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mzi/optics.hpp"

namespace mzi {

inline std::uint8_t quantize_pixel(float v) {
  return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::vector<std::uint8_t> quantize(std::span<const float> pixels) {
  std::vector<std::uint8_t> out(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) out[i] = quantize_pixel(pixels[i]);
  return out;
}

inline std::vector<float> dequantize(std::span<const std::uint8_t> bytes) {
  std::vector<float> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = float(bytes[i]) / 255.0f;
  return out;
}

// Binary P5, maxval 255, rows top to bottom.
inline void write_pgm(const std::filesystem::path& path, std::span<const float> pixels, int n) {
  if (pixels.size() != std::size_t(n) * std::size_t(n)) throw contract_violation("write_pgm: pixel count is not n*n");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << n << ' ' << n << "\n255\n";
  const auto bytes = quantize(pixels);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("short write on " + path.string());
}

struct Pgm {
  int width = 0, height = 0;
  std::vector<std::uint8_t> bytes;
};

inline Pgm read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int maxval = 0;
  Pgm p;
  if (!(in >> magic >> p.width >> p.height >> maxval) || magic != "P5" || maxval != 255)
    throw std::runtime_error("not an 8-bit P5 file: " + path.string());
  in.get();
  p.bytes.resize(std::size_t(p.width) * std::size_t(p.height));
  in.read(reinterpret_cast<char*>(p.bytes.data()), std::streamsize(p.bytes.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return p;
}

}  // namespace mzi
