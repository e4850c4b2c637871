#pragma once

// Whole-pipeline configuration as "section.key = value" lines. Every field
// has a default; a file only needs the keys it changes.

#include <cstdint>
#include <filesystem>
#include <string>

#include "wsiseg/eval.hpp"
#include "wsiseg/kvfile.hpp"
#include "wsiseg/models.hpp"
#include "wsiseg/preprocess.hpp"
#include "wsiseg/synthslide.hpp"
#include "wsiseg/trainer.hpp"

namespace wsiseg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";

  std::size_t slides = 100;
  synth::SlideGenConfig synth;

  double tissue_frac = 0.8;
  prep::LabelRule label_rule;
  prep::AugConfig aug;

  model::ArchConfig arch;
  bool per_lump = true;

  // Desk-scale schedule; the learning rates of the end-to-end stage are
  // raised accordingly (see README).
  train::TrainConfig train = desk_training();

  eval::LesionCalibration lesion{0.45, 2.0, 0.2, eval::LesionMeasure::extent};
  synth::Split eval_split = synth::Split::test;
  std::string model = "e2e";  // which weights predict/eval/render-heatmap use

  std::size_t heatmap_scale = 8;
  bool heatmap_truth_panel = true;

  static train::TrainConfig desk_training();

  // Applies "key = value" pairs on top of the current values.
  void apply(const KeyValues& kv);
  void set(const std::string& key, const std::string& value);
  // Every key with its current value, in a fixed order.
  KeyValues to_key_values() const;
  void validate() const;

  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace wsiseg
