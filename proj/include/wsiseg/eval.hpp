#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace wsiseg::eval {

// Tumor probabilities on a slide's patch grid. Invalid cells (no patch) are
// ignored by every metric.
struct PredictionMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> prob;
  std::vector<std::uint8_t> valid;

  PredictionMap() = default;
  PredictionMap(std::size_t r, std::size_t c) : rows(r), cols(c), prob(r * c, 0.0), valid(r * c, 0) {}
};

// Per-cell ground truth on the same grid: 1 tumor, 0 normal, -1 ignore.
// `present` marks cells that hold a patch at all (empty when unknown), which
// separates NoLabel patches from background.
struct TruthMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> labels;
  std::vector<std::uint8_t> present;
};

constexpr double kTumorThreshold = 0.5;

// Predicted tumor iff p >= 0.5. Only valid cells labeled tumor/normal count.
double patch_accuracy(const PredictionMap& preds, const TruthMap& truth);

// Average precision over distinct-score prefixes: sort by descending score,
// equal scores enter together, AP = sum_k (R_k - R_{k-1}) P_k.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

// Valid, labeled cells of a slide appended to flat score/label lists.
void collect_scored_cells(const PredictionMap& preds, const TruthMap& truth,
                          std::vector<double>& scores, std::vector<int>& labels);

enum class SlideClass { negative, itc, micro, macro };
enum class PNStage { pN0, pN0_itc, pN1mi, pN1, pN2 };
const char* slide_class_name(SlideClass c);
const char* pn_stage_name(PNStage s);

enum class LesionMeasure { extent, area };

struct LesionCalibration {
  std::optional<double> cell_mm;  // edge length of one grid cell
  double macro_mm = 2.0;
  double micro_mm = 0.2;
  LesionMeasure measure = LesionMeasure::extent;
};

// Size of the largest 8-connected tumor component (p >= 0.5) in millimetres:
// its bounding-box major extent, or sqrt(area) under LesionMeasure::area.
double largest_lesion_mm(const PredictionMap& preds, double cell_mm, LesionMeasure measure);

// d > macro -> Macro; micro < d <= macro -> Micro; 0 < d <= micro -> ITC;
// no tumor cells -> Negative.
SlideClass slide_class(const PredictionMap& preds, const LesionCalibration& cal);

// Exactly five slides per patient.
PNStage pn_stage(std::span<const SlideClass> slides);

// Quadratically weighted Cohen's kappa over ordered classes 0..k-1.
// Both raters constant on the same class counts as perfect agreement (1.0).
double quadratic_weighted_kappa(std::span<const int> a, std::span<const int> b, int k);
double kappa(std::span<const PNStage> pred, std::span<const PNStage> truth);

}  // namespace wsiseg::eval
