#pragma once

// The patch feature extractor and the U-Net style segmentation network that
// runs over whole-slide feature maps.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wsiseg/tape.hpp"
#include "wsiseg/tensor.hpp"

namespace wsiseg::model {

struct ArchConfig {
  std::size_t in_channels = 3;
  std::size_t crop = 56;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t feature_dim = 16;
  std::vector<std::size_t> seg_channels{32, 64};  // one entry per U-Net level
  std::size_t seg_bottleneck = 128;
  std::size_t map_rows = 16;
  std::size_t map_cols = 16;

  std::size_t seg_depth() const { return seg_channels.size(); }
  void validate() const;
  std::string describe() const;
  std::string fingerprint() const;
};

struct Conv {
  Tensor w;  // [Cout,Cin,k,k]
  Tensor b;  // [Cout]
};

struct Dense {
  Tensor w;  // [In,Out]
  Tensor b;  // [Out]
};

struct FeatureExtractorParams {
  std::vector<Conv> convs;  // 3x3, padding 1, each followed by relu + 2x2 max-pool
  Dense feature;            // penultimate layer: its output is the feature vector
  Dense classifier;         // feature_dim -> 2 logits
};

struct SegmentationParams {
  std::vector<std::pair<Conv, Conv>> encoder;
  std::pair<Conv, Conv> bottleneck;
  std::vector<std::pair<Conv, Conv>> decoder;  // decoder[i] mirrors encoder[i]
  Conv head;                                   // 1x1 to 2 channels
};

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;
NamedTensors named_tensors(FeatureExtractorParams& p);
NamedTensors named_tensors(SegmentationParams& p);

// He (fan-in) normal weights, zero biases; a pure function of (seed, arch).
FeatureExtractorParams init_extractor(std::uint64_t seed, const ArchConfig& arch);
SegmentationParams init_segmentation(std::uint64_t seed, const ArchConfig& arch);

enum class ExtractorOutput { features, logits };

// patches: [B, in_channels, crop, crop]. Returns [B, feature_dim] or [B, 2].
ad::Var extractor_forward(ad::Tape& tape, FeatureExtractorParams& p, const ad::Var& patches,
                          ExtractorOutput mode);

// fmap: [L, D, H, W] (or [D, H, W]) with H, W divisible by 2^depth.
// Returns per-cell logits [L, 2, H, W].
ad::Var segmentation_forward(ad::Tape& tape, SegmentationParams& p, const ad::Var& fmap);

// Converts 8-bit RGB blocks (side x side, interleaved) to a [B,3,side,side]
// tensor scaled to [0,1].
Tensor pixels_to_tensor(const std::vector<std::vector<std::uint8_t>>& blocks, std::size_t side);

// Checkpoint: a text header (format line, arch fingerprint and description,
// one "tensor = name shape" line per tensor, "end") followed by one TNS1
// record per tensor in header order.
void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const std::string& kind, const NamedTensors& tensors);
// Fills `tensors` in place. Rejects a different arch fingerprint, kind,
// tensor name or shape.
void load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const std::string& kind, const NamedTensors& tensors);

}  // namespace wsiseg::model
