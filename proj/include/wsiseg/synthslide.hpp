#pragma once

// Deterministic synthetic slides: white background, lumps of pink "normal"
// tissue, optional purple high-frequency "tumor" foci, optional unannotated
// rims along tissue edges. Everything is a pure function of (seed, config).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wsiseg/image.hpp"

namespace wsiseg::synth {

// Values double as the PGM mask codes.
enum class PixelClass : std::uint8_t {
  background = 0,
  tumor = 64,
  unannotated = 128,
  normal = 255,
};

struct SlideImage {
  std::string id;
  RgbImage image;
};

struct AnnotationMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<PixelClass> classes;

  PixelClass at(std::size_t x, std::size_t y) const { return classes[y * width + x]; }
};

struct SlideGenConfig {
  std::size_t width = 1024;
  std::size_t height = 1024;
  std::size_t patch_size = 64;
  std::size_t max_lumps = 3;
  // Probability that a lump carries a tumor focus.
  double tumor_fraction = 0.6;
  // Width of the unannotated edge band, as a fraction of the lump scale.
  double rim_fraction = 0.08;
  // Checker amplitude of tumor and normal texture (8-bit units).
  double tumor_checker = 24.0;
  double normal_checker = 4.0;
};

void validate(const SlideGenConfig& cfg);

struct GeneratedSlide {
  SlideImage slide;
  AnnotationMask mask;
};

GeneratedSlide generate_slide(std::uint64_t seed, const SlideGenConfig& cfg,
                              std::string id = "slide");

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string id;
  Split split = Split::train;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  SlideGenConfig config;
  std::vector<ManifestEntry> slides;

  std::vector<std::string> ids(Split s) const;
};

// train = floor(0.64 n), test = floor(0.20 n), val = the remainder; which
// slide lands where follows a seeded shuffle.
DatasetManifest plan_dataset(std::uint64_t seed, std::size_t n_slides, const SlideGenConfig& cfg);

std::string slide_id(std::size_t index);
std::uint64_t slide_seed(std::uint64_t dataset_seed, std::size_t index);

// Writes slides/<id>.ppm, slides/<id>.mask.pgm and manifest.txt under `dir`.
DatasetManifest generate_dataset(std::uint64_t seed, std::size_t n_slides,
                                 const SlideGenConfig& cfg, const std::filesystem::path& dir);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m);
DatasetManifest read_manifest(const std::filesystem::path& path);

GrayImage mask_to_pgm(const AnnotationMask& mask);
AnnotationMask mask_from_pgm(const GrayImage& img);

}  // namespace wsiseg::synth
