#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace wsiseg {

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height, row-major

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), rgb(3 * w * h, fill) {}
  std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + 3 * (y * width + x); }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const {
    return rgb.data() + 3 * (y * width + x);
  }
};

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> values;

  GrayImage() = default;
  GrayImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), values(w * h, fill) {}
};

// Binary PPM (P6) / PGM (P5), maxval 255.
void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace wsiseg
