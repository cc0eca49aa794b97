#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "protoscale/tensor.hpp"

namespace protoscale {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Planar float image [channels, height, width], values nominally in [0, 1].
struct Image {
  std::size_t channels = 3, height = 0, width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool operator==(const Image&) const = default;

  Tensor to_tensor() const { return Tensor({channels, height, width}, pixels); }
  static Image from_tensor(const Tensor& t);
  std::vector<double> channel_means() const;
};

/// Integer map of per-pixel ids.
struct LabelMap {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> ids;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), ids(h * w, fill) {}
  std::uint8_t& at(std::size_t y, std::size_t x) { return ids[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return ids[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

/// Stacks equally sized images into [B, C, H, W].
Tensor stack_images(const std::vector<Image>& images);

// Binary netpbm: P6 8-bit RGB and P5 8-bit gray.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& map);
LabelMap read_pgm(const std::filesystem::path& path);

/// Quantizes [0, 1] to 8 bits with rounding.
std::uint8_t to_byte(double v);

}  // namespace protoscale
