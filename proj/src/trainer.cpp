#include "wsiseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "wsiseg/kvfile.hpp"
#include "wsiseg/ops.hpp"
#include "wsiseg/rng.hpp"
#include "wsiseg/tensor_io.hpp"

namespace wsiseg::train {

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::vector<std::size_t> iota_n(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

// Rows [begin, end) of a tensor whose first axis indexes items.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  Shape s = t.shape();
  const std::size_t stride = t.size() / s[0];
  s[0] = end - begin;
  auto first = t.values().begin() + static_cast<std::ptrdiff_t>(begin * stride);
  return Tensor(s, std::vector<double>(first, first + static_cast<std::ptrdiff_t>((end - begin) * stride)));
}

int class_index(prep::PatchLabel l) { return l == prep::PatchLabel::tumor ? 1 : 0; }

Tensor batch_pixels(const std::vector<std::vector<std::uint8_t>>& blocks, std::size_t side) {
  return model::pixels_to_tensor(blocks, side);
}

std::size_t extractor_depth(const model::FeatureExtractorParams& p) { return p.feature.w.dim(1); }

// No-grad features-mode forward of [N,3,c,c] in chunks; returns [N,D] and
// the largest per-chunk peak.
Tensor forward_features(model::FeatureExtractorParams& ext, const Tensor& patches, std::size_t chunk,
                        std::size_t* peak = nullptr) {
  const std::size_t n = patches.dim(0), depth = extractor_depth(ext);
  Tensor x(Shape{n, depth});
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    ad::Tape tape(ad::GradMode::no_grad);
    {
      ad::Var in = tape.constant(slice_rows(patches, begin, end));
      ad::Var f = model::extractor_forward(tape, ext, in, model::ExtractorOutput::features);
      std::copy(f.value().values().begin(), f.value().values().end(),
                x.data().begin() + static_cast<std::ptrdiff_t>(begin * depth));
    }
    if (peak) *peak = std::max(*peak, tape.peak_live_elements());
  }
  return x;
}

bool any_labeled(const fmap::SlideLayout& layout) {
  for (std::size_t n = 0; n < layout.labels.size(); ++n)
    if (layout.placed[n] && layout.labels[n] != prep::PatchLabel::nolabel) return true;
  return false;
}

}  // namespace

void TrainConfig::validate() const {
  for (double lr : {lr_extractor, lr_segmentation, e2e_lr_extractor, e2e_lr_segmentation})
    if (!std::isfinite(lr) || lr < 0.0) throw std::invalid_argument("learning rates must be finite and >= 0");
  if (extractor_batch == 0 || segmentation_batch == 0) throw std::invalid_argument("batch sizes must be >= 1");
  if (micro_batches == 0) throw std::invalid_argument("micro-batch count r must be >= 1");
}

void write_trace_csv(const std::filesystem::path& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,step,loss,peak_live_elements\n";
  for (const auto& row : trace)
    out << row.epoch << ',' << row.step << ',' << format_double(row.loss) << ','
        << row.peak_live_elements << '\n';
}

AdamGroup::AdamGroup(model::NamedTensors params, ad::AdamHyper hyper) : params_(std::move(params)) {
  for (auto& [name, t] : params_) states_.push_back(ad::AdamState::for_param(*t, hyper));
}

void AdamGroup::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].second->has_grad())
      throw std::logic_error("no gradient for " + params_[i].first);
    ad::adam_update(*params_[i].second, states_[i], lr);
  }
}

void AdamGroup::zero_grad() {
  for (auto& [name, t] : params_) t->zero_grad();
}

model::NamedTensors feature_tensors(model::FeatureExtractorParams& p) {
  model::NamedTensors out;
  for (auto& entry : model::named_tensors(p))
    if (!entry.first.starts_with("classifier.")) out.push_back(entry);
  return out;
}

ad::Var masked_loss(const ad::Var& logits, std::span<const int> labels,
                    std::span<const std::uint8_t> mask, LossReduction reduction) {
  ad::Var mean = ad::masked_softmax_cross_entropy(logits, labels, mask);
  if (reduction == LossReduction::mean) return mean;
  const auto count = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  return ad::mul(mean, mean.tape().constant(Tensor(Shape{1}, count)));
}

Trace train_feature_extractor(model::FeatureExtractorParams& params,
                              const std::vector<prep::Patch>& patches, std::size_t patch_size,
                              const prep::AugConfig& aug, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> tumor, normal;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    if (patches[i].label == prep::PatchLabel::tumor) tumor.push_back(i);
    else if (patches[i].label == prep::PatchLabel::normal) normal.push_back(i);
  }
  if (tumor.empty() || normal.empty())
    throw std::invalid_argument("feature extractor training needs both tumor and normal patches");

  AdamGroup opt(model::named_tensors(params));
  Trace trace;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.extractor_epochs; ++epoch) {
    const std::uint64_t epoch_seed = hash_combine(cfg.seed, epoch);
    Rng rng(hash_combine(epoch_seed, 0x5eed));
    std::vector<std::size_t> order;
    if (cfg.balance_classes) {
      // Oversample the minority class up to the majority count.
      const auto& minority = tumor.size() < normal.size() ? tumor : normal;
      const auto& majority = tumor.size() < normal.size() ? normal : tumor;
      order = majority;
      order.insert(order.end(), minority.begin(), minority.end());
      for (std::size_t k = minority.size(); k < majority.size(); ++k)
        order.push_back(minority[rng.below(minority.size())]);
    } else {
      order = tumor;
      order.insert(order.end(), normal.begin(), normal.end());
      std::sort(order.begin(), order.end());
    }
    shuffle(order, rng);

    for (std::size_t begin = 0; begin < order.size(); begin += cfg.extractor_batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.extractor_batch);
      std::vector<std::vector<std::uint8_t>> blocks;
      std::vector<int> labels;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& p = patches[order[k]];
        blocks.push_back(prep::augment(p.pixels, patch_size, prep::patch_seed(epoch_seed, p.slide_id, p.pos), aug));
        labels.push_back(class_index(p.label));
      }
      const std::vector<std::uint8_t> mask(labels.size(), 1);
      ad::Tape tape;
      ad::Var in = tape.constant(batch_pixels(blocks, aug.crop_size));
      ad::Var logits = model::extractor_forward(tape, params, in, model::ExtractorOutput::logits);
      ad::Var loss = ad::masked_softmax_cross_entropy(logits, labels, mask);
      tape.backward(loss);
      opt.step(cfg.lr_extractor);
      trace.push_back({epoch, step++, loss.value()[0], tape.peak_live_elements()});
    }
  }
  return trace;
}

Tensor extract_all_features(model::FeatureExtractorParams& params,
                            const std::vector<prep::Patch>& patches, std::size_t patch_size,
                            std::size_t crop_size, std::size_t batch) {
  if (batch == 0) throw std::invalid_argument("batch must be >= 1");
  const std::size_t depth = extractor_depth(params);
  Tensor out(Shape{patches.size(), depth});
  for (std::size_t begin = 0; begin < patches.size(); begin += batch) {
    const std::size_t end = std::min(patches.size(), begin + batch);
    std::vector<std::vector<std::uint8_t>> blocks;
    for (std::size_t k = begin; k < end; ++k)
      blocks.push_back(prep::center_crop(patches[k].pixels, patch_size, crop_size));
    Tensor feats = forward_features(params, batch_pixels(blocks, crop_size), end - begin);
    std::copy(feats.values().begin(), feats.values().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * depth));
  }
  return round_to_storage(out);
}

SegSample make_seg_sample(const fmap::SlideLayout& layout, const Tensor& features) {
  return {fmap::layout_feature_maps(layout, features), layout.cell_labels(), layout.cell_mask()};
}

Trace train_segmentation(model::SegmentationParams& params, const std::vector<SegSample>& data,
                         const TrainConfig& cfg) {
  cfg.validate();
  struct Item {
    std::size_t sample, map;
  };
  std::vector<Item> items;
  Shape map_shape;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const Tensor& maps = data[s].maps;
    if (maps.rank() != 4) throw std::invalid_argument("segmentation samples must be [L,D,H,W]");
    Shape one{maps.dim(1), maps.dim(2), maps.dim(3)};
    if (map_shape.empty()) map_shape = one;
    if (one != map_shape) throw std::invalid_argument("segmentation samples differ in map shape");
    const std::size_t plane = maps.dim(2) * maps.dim(3);
    for (std::size_t l = 0; l < maps.dim(0); ++l) {
      const auto first = data[s].mask.begin() + static_cast<std::ptrdiff_t>(l * plane);
      if (std::any_of(first, first + static_cast<std::ptrdiff_t>(plane), [](auto m) { return m != 0; }))
        items.push_back({s, l});
    }
  }
  if (items.empty()) throw std::invalid_argument("segmentation training set has no labeled cells");

  const std::size_t map_elems = shape_size(map_shape), plane = map_shape[1] * map_shape[2];
  AdamGroup opt(model::named_tensors(params));
  Trace trace;
  std::size_t step = 0;
  std::vector<std::size_t> order = iota_n(items.size());
  for (std::size_t epoch = 0; epoch < cfg.segmentation_epochs; ++epoch) {
    Rng rng(hash_combine(hash_combine(cfg.seed, 0x5e9), epoch));
    std::sort(order.begin(), order.end());
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.segmentation_batch) {
      const std::size_t end = std::min(order.size(), begin + cfg.segmentation_batch);
      const std::size_t b = end - begin;
      Tensor batch(Shape{b, map_shape[0], map_shape[1], map_shape[2]});
      std::vector<int> labels;
      std::vector<std::uint8_t> mask;
      for (std::size_t k = 0; k < b; ++k) {
        const Item& it = items[order[begin + k]];
        const SegSample& s = data[it.sample];
        std::copy_n(s.maps.values().begin() + static_cast<std::ptrdiff_t>(it.map * map_elems), map_elems,
                    batch.data().begin() + static_cast<std::ptrdiff_t>(k * map_elems));
        labels.insert(labels.end(), s.labels.begin() + static_cast<std::ptrdiff_t>(it.map * plane),
                      s.labels.begin() + static_cast<std::ptrdiff_t>((it.map + 1) * plane));
        mask.insert(mask.end(), s.mask.begin() + static_cast<std::ptrdiff_t>(it.map * plane),
                    s.mask.begin() + static_cast<std::ptrdiff_t>((it.map + 1) * plane));
      }
      ad::Tape tape;
      ad::Var in = tape.constant(std::move(batch));
      ad::Var logits = ad::map_to_cells(model::segmentation_forward(tape, params, in));
      ad::Var loss = masked_loss(logits, labels, mask, cfg.reduction);
      tape.backward(loss);
      opt.step(cfg.lr_segmentation);
      trace.push_back({epoch, step++, loss.value()[0], tape.peak_live_elements()});
    }
  }
  return trace;
}

std::size_t MemoryReport::extractor_peak() const {
  return std::max(peak_forward, peak_recompute) + retained;
}

StagedGradients e2e_gradients(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                              const Tensor& patches, const fmap::SlideLayout& layout,
                              std::size_t micro_batches, LossReduction reduction) {
  const std::size_t n = layout.positions.size();
  if (patches.rank() != 4 || patches.dim(0) != n)
    throw std::invalid_argument("patches must be [N,3,crop,crop] in layout order");
  if (!std::all_of(layout.placed.begin(), layout.placed.end(), [](auto p) { return p != 0; }))
    throw std::invalid_argument("every patch must be placed on a map");
  if (micro_batches == 0 || micro_batches > n)
    throw std::invalid_argument("micro-batch count r=" + std::to_string(micro_batches) +
                                " must be in [1, N=" + std::to_string(n) + "]");

  StagedGradients out;
  MemoryReport& mem = out.memory;
  const std::size_t chunk = (n + micro_batches - 1) / micro_batches;
  const std::size_t depth = extractor_depth(ext);
  mem.patches = n;
  mem.micro_batches = micro_batches;
  mem.micro_batch_size = chunk;
  mem.retained = 2 * n * depth;

  // Step 1: features only, intermediate activations dropped as they go.
  out.features = forward_features(ext, patches, chunk, &mem.peak_forward);

  // Steps 2-3: feature map, segmentation forward and backward.
  {
    const auto cells = layout.placed_cells();
    const auto labels = layout.cell_labels();
    const auto mask = layout.cell_mask();
    ad::Tape tape;
    ad::Var x = tape.input(out.features, true);
    ad::Var maps = ad::scatter_to_map(x, cells, layout.map_count(), layout.rows, layout.cols);
    ad::Var logits = ad::map_to_cells(model::segmentation_forward(tape, seg, maps));
    ad::Var loss = masked_loss(logits, labels, mask, reduction);
    tape.backward(loss);
    out.loss = loss.value()[0];
    auto g = x.grad();
    out.loss_grad = Tensor(out.features.shape(), std::vector<double>(g.begin(), g.end()));
    if (out.loss_grad.size() != out.features.size()) throw std::logic_error("dL/dx shape mismatch");
    mem.peak_segmentation = tape.peak_live_elements();
  }

  // Step 4: recompute each micro-batch with a tape and back-propagate the
  // surrogate sum(dL/dx * x), accumulating in micro-batch order.
  for (auto& [name, t] : feature_tensors(ext)) t->zero_grad();
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    ad::Tape tape;
    {
      ad::Var in = tape.constant(slice_rows(patches, begin, end));
      ad::Var f = model::extractor_forward(tape, ext, in, model::ExtractorOutput::features);
      const auto& fv = f.value().values();
      if (!std::equal(fv.begin(), fv.end(), out.features.values().begin() + static_cast<std::ptrdiff_t>(begin * depth)))
        out.recompute_exact = false;
      ad::Var surrogate = ad::inner_product(f, slice_rows(out.loss_grad, begin, end));
      tape.accumulate_grad(surrogate);
    }
    mem.peak_recompute = std::max(mem.peak_recompute, tape.peak_live_elements());
  }
  mem.per_patch = mem.peak_recompute / chunk;
  return out;
}

E2EOptimizers E2EOptimizers::fresh(model::FeatureExtractorParams& ext, model::SegmentationParams& seg) {
  return {AdamGroup(feature_tensors(ext)), AdamGroup(model::named_tensors(seg))};
}

StagedGradients e2e_step(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                         const Tensor& patches, const fmap::SlideLayout& layout,
                         std::size_t micro_batches, const TrainConfig& cfg, E2EOptimizers& opt) {
  StagedGradients g = e2e_gradients(ext, seg, patches, layout, micro_batches, cfg.reduction);
  opt.extractor.step(cfg.e2e_lr_extractor);
  opt.segmentation.step(cfg.e2e_lr_segmentation);
  return g;
}

SlideInput make_slide_input(const std::string& id, const std::vector<prep::Patch>& patches,
                            std::size_t patch_size, std::size_t crop_size, std::size_t map_rows,
                            std::size_t map_cols, bool per_lump) {
  std::vector<std::size_t> keep = iota_n(patches.size());
  fmap::SlideLayout layout;
  // Dropping cells that fall off a map can shrink a lump's bounding box and
  // move the rest, so repeat until every remaining patch is placed.
  for (;;) {
    std::vector<prep::GridPos> pos;
    std::vector<prep::PatchLabel> labels;
    for (std::size_t k : keep) {
      pos.push_back(patches[k].pos);
      labels.push_back(patches[k].label);
    }
    layout = fmap::build_layout(std::move(pos), std::move(labels), map_rows, map_cols, per_lump,
                                fmap::OverflowPolicy::crop);
    std::vector<std::size_t> placed;
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (layout.placed[i]) placed.push_back(keep[i]);
    if (placed.size() == keep.size()) break;
    keep = std::move(placed);
  }
  std::vector<std::vector<std::uint8_t>> blocks;
  for (std::size_t k : keep) blocks.push_back(prep::center_crop(patches[k].pixels, patch_size, crop_size));
  SlideInput in;
  in.id = id;
  in.patches = keep.empty() ? Tensor(Shape{0, 3, crop_size, crop_size}) : batch_pixels(blocks, crop_size);
  in.layout = std::move(layout);
  return in;
}

namespace {

// Segmentation logits [L*H*W, 2] for a slide, on no-grad tapes.
Tensor slide_logits(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                    const SlideInput& slide) {
  Tensor x = forward_features(ext, slide.patches, 64);
  ad::Tape tape(ad::GradMode::no_grad);
  ad::Var maps = tape.constant(fmap::layout_feature_maps(slide.layout, x));
  return ad::map_to_cells(model::segmentation_forward(tape, seg, maps)).value();
}

}  // namespace

double evaluate_masked_loss(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                            const std::vector<SlideInput>& slides, LossReduction reduction) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& s : slides) {
    if (s.layout.positions.empty() || !any_labeled(s.layout)) continue;
    ad::Tape tape(ad::GradMode::no_grad);
    ad::Var logits = tape.constant(slide_logits(ext, seg, s));
    total += masked_loss(logits, s.layout.cell_labels(), s.layout.cell_mask(), reduction).value()[0];
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("no slide has labeled cells");
  return total / static_cast<double>(counted);
}

E2EResult e2e_train(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                    const std::vector<SlideInput>& slides, const TrainConfig& cfg) {
  cfg.validate();
  E2EResult res;
  res.warm_start_loss = evaluate_masked_loss(ext, seg, slides, cfg.reduction);
  E2EOptimizers opt = E2EOptimizers::fresh(ext, seg);
  std::vector<std::size_t> order = iota_n(slides.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.e2e_epochs; ++epoch) {
    Rng rng(hash_combine(hash_combine(cfg.seed, 0xe2e), epoch));
    std::sort(order.begin(), order.end());
    shuffle(order, rng);
    for (std::size_t idx : order) {
      const SlideInput& s = slides[idx];
      if (s.layout.positions.empty() || !any_labeled(s.layout)) continue;
      const std::size_t r = std::min(cfg.micro_batches, s.layout.positions.size());
      StagedGradients g = e2e_step(ext, seg, s.patches, s.layout, r, cfg, opt);
      res.trace.push_back({epoch, step++, g.loss, g.memory.extractor_peak()});
      res.memory.push_back(g.memory);
    }
  }
  res.final_loss = evaluate_masked_loss(ext, seg, slides, cfg.reduction);
  return res;
}

eval::PredictionMap predict(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                            const SlideInput& slide, std::size_t grid_rows, std::size_t grid_cols) {
  eval::PredictionMap out(grid_rows, grid_cols);
  if (slide.layout.positions.empty()) return out;
  const Tensor prob = ad::softmax_rows(slide_logits(ext, seg, slide));
  const auto& L = slide.layout;
  for (std::size_t n = 0; n < L.positions.size(); ++n) {
    const auto& c = L.cells[n];
    const std::size_t cell = (c.map * L.rows + c.row) * L.cols + c.col;
    const std::size_t at = L.positions[n].row * grid_cols + L.positions[n].col;
    out.prob.at(at) = prob[cell * 2 + 1];
    out.valid[at] = 1;
  }
  return out;
}

eval::PredictionMap predict_classifier(model::FeatureExtractorParams& ext, const SlideInput& slide,
                                       std::size_t grid_rows, std::size_t grid_cols) {
  eval::PredictionMap out(grid_rows, grid_cols);
  const auto& L = slide.layout;
  for (std::size_t begin = 0; begin < L.positions.size(); begin += 64) {
    const std::size_t end = std::min(L.positions.size(), begin + 64);
    ad::Tape tape(ad::GradMode::no_grad);
    ad::Var in = tape.constant(slice_rows(slide.patches, begin, end));
    const Tensor prob = ad::softmax_rows(
        model::extractor_forward(tape, ext, in, model::ExtractorOutput::logits).value());
    for (std::size_t n = begin; n < end; ++n) {
      const std::size_t at = L.positions[n].row * grid_cols + L.positions[n].col;
      out.prob.at(at) = prob[(n - begin) * 2 + 1];
      out.valid[at] = 1;
    }
  }
  return out;
}

}  // namespace wsiseg::train
