#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsiseg/image.hpp"
#include "wsiseg/synthslide.hpp"

namespace wsiseg::prep {

using Histogram = std::array<std::uint64_t, 256>;

// Exhaustive Otsu: returns t maximising the between-class variance of the
// split {0..t} | {t+1..255}; the lowest maximiser wins ties. Comparisons are
// exact integer arithmetic. Throws "degenerate histogram" when fewer than two
// bins are occupied.
std::uint8_t otsu_threshold(const Histogram& hist);

// 0.299 R + 0.587 G + 0.114 B rounded to nearest.
std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b);

struct TissueMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> tissue;  // 1 = tissue
  std::uint8_t threshold_used = 0;

  bool at(std::size_t x, std::size_t y) const { return tissue[y * width + x] != 0; }
};

// Tissue is every pixel whose luminance falls in Otsu's lower class
// (luminance <= threshold); the background is near-white.
TissueMask tissue_mask(const RgbImage& slide);

struct GridPos {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const GridPos&) const = default;
};

enum class PatchLabel : std::uint8_t { tumor, normal, nolabel };
const char* label_name(PatchLabel l);
PatchLabel parse_label(const std::string& s);

// Grid anchored at (0,0), no overlap; partial edge cells are dropped. A cell
// is kept iff its tissue fraction is strictly greater than tissue_frac.
// Row-major order.
std::vector<GridPos> extract_patches(const TissueMask& mask, std::size_t patch_size,
                                     double tissue_frac = 0.8);

struct LabelRule {
  double tumor_frac = 0.20;
  double normal_frac = 0.80;
};

// Tumor if tumor fraction > 0.2, else Normal if normal fraction > 0.8, else
// NoLabel.
PatchLabel label_patch(std::span<const synth::PixelClass> window, const LabelRule& rule = {});

struct Patch {
  std::string slide_id;
  GridPos pos;
  PatchLabel label = PatchLabel::nolabel;
  std::vector<std::uint8_t> pixels;  // patch_size^2 RGB
};

// Tissue mask, tiling and labelling for one slide.
std::vector<Patch> make_patches(const synth::SlideImage& slide, const synth::AnnotationMask& mask,
                                std::size_t patch_size, double tissue_frac = 0.8,
                                const LabelRule& rule = {});

std::vector<std::uint8_t> cut_patch(const RgbImage& img, GridPos pos, std::size_t patch_size);

struct AugConfig {
  std::size_t crop_size = 56;
  bool random_crop = true;
  bool rotate = true;
  bool flip = true;
  bool color = true;
  double jitter_lo = 0.75;
  double jitter_hi = 1.25;
};

struct AugParams {
  std::size_t crop_x = 0;
  std::size_t crop_y = 0;
  int quarter_turns = 0;  // counter-clockwise
  bool flip = false;
  // Saturation, contrast, brightness, sharpness multipliers, applied in that order.
  std::array<double, 4> jitter{1.0, 1.0, 1.0, 1.0};
  bool color = false;
};

AugParams sample_augmentation(std::uint64_t seed, const AugConfig& cfg, std::size_t patch_size);
std::vector<std::uint8_t> apply_augmentation(std::span<const std::uint8_t> pixels,
                                             std::size_t patch_size, std::size_t crop_size,
                                             const AugParams& p);
std::vector<std::uint8_t> augment(std::span<const std::uint8_t> pixels, std::size_t patch_size,
                                  std::uint64_t seed, const AugConfig& cfg);
// Center crop with no other transform.
std::vector<std::uint8_t> center_crop(std::span<const std::uint8_t> pixels, std::size_t patch_size,
                                      std::size_t crop_size);

std::uint64_t patch_seed(std::uint64_t global_seed, const std::string& slide_id, GridPos pos);

// <dir>/<id>.patches.txt ("row col label" per line) and <dir>/<id>.patches.bin
// (raw RGB blocks in index order).
void write_patch_store(const std::filesystem::path& dir, const std::string& slide_id,
                       std::size_t patch_size, const std::vector<Patch>& patches);
std::vector<Patch> read_patch_store(const std::filesystem::path& dir, const std::string& slide_id,
                                    std::size_t patch_size);

}  // namespace wsiseg::prep
