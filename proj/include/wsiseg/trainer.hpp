#pragma once

// Separate Learning (extractor, then frozen features, then segmentation) and
// End-to-End Learning with a retained feature/gradient boundary and
// micro-batched recomputation of the extractor.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wsiseg/adam.hpp"
#include "wsiseg/eval.hpp"
#include "wsiseg/featuremap.hpp"
#include "wsiseg/models.hpp"
#include "wsiseg/preprocess.hpp"

namespace wsiseg::train {

enum class LossReduction { mean, sum };

struct TrainConfig {
  double lr_extractor = 1e-4;
  double lr_segmentation = 1e-4;
  double e2e_lr_extractor = 1e-9;
  double e2e_lr_segmentation = 1e-7;
  std::size_t extractor_epochs = 30;
  std::size_t segmentation_epochs = 50;
  std::size_t e2e_epochs = 10;
  std::size_t extractor_batch = 128;
  std::size_t segmentation_batch = 32;
  std::size_t micro_batches = 8;  // r
  std::uint64_t seed = 0;
  bool balance_classes = false;
  bool warm_start = true;
  LossReduction reduction = LossReduction::mean;

  void validate() const;
};

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  std::size_t peak_live_elements = 0;
};
using Trace = std::vector<TraceRow>;
// "epoch,step,loss,peak_live_elements"
void write_trace_csv(const std::filesystem::path& path, const Trace& trace);

// Adam over a fixed list of tensors, each with its own moment state.
class AdamGroup {
 public:
  AdamGroup() = default;
  explicit AdamGroup(model::NamedTensors params, ad::AdamHyper hyper = {});
  void step(double lr);
  void zero_grad();
  const model::NamedTensors& params() const { return params_; }
  std::uint64_t steps() const { return states_.empty() ? 0 : states_.front().t; }

 private:
  model::NamedTensors params_;
  std::vector<ad::AdamState> states_;
};

// Extractor tensors that take part in the features-mode forward (everything
// except the final classifier layer).
model::NamedTensors feature_tensors(model::FeatureExtractorParams& p);

ad::Var masked_loss(const ad::Var& logits, std::span<const int> labels,
                    std::span<const std::uint8_t> mask, LossReduction reduction);

// --- Separate Learning -----------------------------------------------------

// Patch classifier training on Tumor/Normal patches (NoLabel dropped), with
// per-patch augmentation seeded from (seed, epoch, slide, grid position).
Trace train_feature_extractor(model::FeatureExtractorParams& params,
                              const std::vector<prep::Patch>& patches, std::size_t patch_size,
                              const prep::AugConfig& aug, const TrainConfig& cfg);

// Features-mode forward over center crops, in the given patch order, on a
// no_grad tape. Values are rounded to TNS1 storage precision so a cached
// copy reloads bit-equal.
Tensor extract_all_features(model::FeatureExtractorParams& params,
                            const std::vector<prep::Patch>& patches, std::size_t patch_size,
                            std::size_t crop_size, std::size_t batch = 64);

struct SegSample {
  Tensor maps;  // [L, D, H, W]
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
};
SegSample make_seg_sample(const fmap::SlideLayout& layout, const Tensor& features);

// Batches are groups of individual maps drawn in a seeded shuffle.
Trace train_segmentation(model::SegmentationParams& params, const std::vector<SegSample>& data,
                         const TrainConfig& cfg);

// --- End-to-End Learning ---------------------------------------------------

struct MemoryReport {
  std::size_t patches = 0;          // N
  std::size_t micro_batches = 0;    // r
  std::size_t micro_batch_size = 0; // ceil(N / r)
  std::size_t peak_forward = 0;     // step 1, no_grad micro-batches
  std::size_t peak_segmentation = 0;
  std::size_t peak_recompute = 0;   // step 4, recorded micro-batches
  std::size_t retained = 0;         // features plus their gradient
  std::size_t per_patch = 0;        // M: peak_recompute / micro_batch_size

  // Peak live elements of the extractor phases, retained boundary included.
  std::size_t extractor_peak() const;
};

struct StagedGradients {
  double loss = 0.0;
  Tensor features;    // x, [N, D]
  Tensor loss_grad;   // dL/dx, [N, D]
  bool recompute_exact = true;  // step-4 features matched step 1 bit for bit
  MemoryReport memory;
};

// Steps 1-4 for one slide: leaves dL/dw in the segmentation tensors' grad
// buffers (overwritten) and in the extractor's feature tensors (zeroed, then
// accumulated micro-batch by micro-batch in order). `patches` is
// [N, 3, crop, crop] in slide order; every patch must be placed.
StagedGradients e2e_gradients(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                              const Tensor& patches, const fmap::SlideLayout& layout,
                              std::size_t micro_batches,
                              LossReduction reduction = LossReduction::mean);

struct E2EOptimizers {
  AdamGroup extractor;
  AdamGroup segmentation;
  static E2EOptimizers fresh(model::FeatureExtractorParams& ext, model::SegmentationParams& seg);
};

// Steps 1-5: gradients, then one Adam step on each model.
StagedGradients e2e_step(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                         const Tensor& patches, const fmap::SlideLayout& layout,
                         std::size_t micro_batches, const TrainConfig& cfg, E2EOptimizers& opt);

struct SlideInput {
  std::string id;
  Tensor patches;  // [N, 3, crop, crop], center crops in layout order
  fmap::SlideLayout layout;
};

// Keeps only placed patches and center-crops them.
SlideInput make_slide_input(const std::string& id, const std::vector<prep::Patch>& patches,
                            std::size_t patch_size, std::size_t crop_size, std::size_t map_rows,
                            std::size_t map_cols, bool per_lump);

// Mean over slides with at least one labeled cell of the per-slide masked loss.
double evaluate_masked_loss(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                            const std::vector<SlideInput>& slides, LossReduction reduction);

struct E2EResult {
  Trace trace;
  std::vector<MemoryReport> memory;
  double warm_start_loss = 0.0;
  double final_loss = 0.0;
};

// One e2e_step per slide per epoch, slides in a seeded shuffle; fresh Adam
// state. r is clamped to each slide's patch count.
E2EResult e2e_train(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                    const std::vector<SlideInput>& slides, const TrainConfig& cfg);

// Tumor probability (softmax channel 1) for every placed patch, projected
// back onto the slide grid.
eval::PredictionMap predict(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                            const SlideInput& slide, std::size_t grid_rows, std::size_t grid_cols);

// Patch classifier alone (logits mode), for comparison.
eval::PredictionMap predict_classifier(model::FeatureExtractorParams& ext, const SlideInput& slide,
                                       std::size_t grid_rows, std::size_t grid_cols);

}  // namespace wsiseg::train
