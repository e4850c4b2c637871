#include "wsiseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "wsiseg/featuremap.hpp"
#include "wsiseg/heatmap.hpp"
#include "wsiseg/image.hpp"
#include "wsiseg/kvfile.hpp"
#include "wsiseg/rng.hpp"
#include "wsiseg/tensor_io.hpp"
#include "wsiseg/trainer.hpp"

namespace wsiseg::pipeline {

namespace fs = std::filesystem;

namespace {

const char* kExtractorCkpt = "models/extractor.ckpt";
const char* kSegmentationCkpt = "models/segmentation.ckpt";
const char* kE2EExtractorCkpt = "models/e2e_extractor.ckpt";
const char* kE2ESegmentationCkpt = "models/e2e_segmentation.ckpt";

bool model_specific(const std::string& stage) {
  return stage == "predict" || stage == "eval" || stage == "render-heatmap";
}

struct Stage {
  RunConfig cfg;
  fs::path root;
  std::vector<fs::path> inputs, outputs;
  std::vector<std::string> notes;

  fs::path at(const fs::path& rel) const { return root / rel; }
  void in(const fs::path& rel) { inputs.push_back(rel); }
  void out(const fs::path& rel) { outputs.push_back(rel); }

  synth::DatasetManifest dataset() {
    in("data/manifest.txt");
    auto ds = synth::read_manifest(at("data/manifest.txt"));
    if (ds.config.patch_size != cfg.synth.patch_size)
      throw StageError("dataset patch size " + std::to_string(ds.config.patch_size) +
                       " differs from synth.patch_size " + std::to_string(cfg.synth.patch_size));
    return ds;
  }

  std::vector<prep::Patch> patches(const std::string& id) {
    in("patches/" + id + ".patches.txt");
    in("patches/" + id + ".patches.bin");
    return prep::read_patch_store(at("patches"), id, cfg.synth.patch_size);
  }

  train::SlideInput slide_input(const std::string& id, const std::vector<prep::Patch>& p) const {
    return train::make_slide_input(id, p, cfg.synth.patch_size, cfg.aug.crop_size, cfg.arch.map_rows,
                                   cfg.arch.map_cols, cfg.per_lump);
  }

  void require(const std::vector<std::string>& rel, const std::string& why) {
    std::vector<std::string> missing;
    for (const auto& r : rel)
      if (!fs::exists(at(r))) missing.push_back(at(r).string());
    if (missing.empty()) return;
    std::string msg = why + ": missing ";
    for (std::size_t i = 0; i < missing.size(); ++i) msg += (i ? ", " : "") + missing[i];
    throw StageError(msg);
  }

  void load_extractor(model::FeatureExtractorParams& p, const std::string& rel) {
    in(rel);
    model::load_checkpoint(at(rel), cfg.arch, "extractor", model::named_tensors(p));
  }
  void load_segmentation(model::SegmentationParams& p, const std::string& rel) {
    in(rel);
    model::load_checkpoint(at(rel), cfg.arch, "segmentation", model::named_tensors(p));
  }
};

std::uint64_t extractor_seed(const RunConfig& c) { return hash_combine(c.seed, 1); }
std::uint64_t segmentation_seed(const RunConfig& c) { return hash_combine(c.seed, 2); }

train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t = c.train;
  t.seed = c.seed;
  return t;
}

std::size_t grid_rows(const synth::DatasetManifest& ds) { return ds.config.height / ds.config.patch_size; }
std::size_t grid_cols(const synth::DatasetManifest& ds) { return ds.config.width / ds.config.patch_size; }

void stage_synth(Stage& s) {
  const auto ds = synth::generate_dataset(s.cfg.seed, s.cfg.slides, s.cfg.synth, s.at("data"));
  s.out("data/manifest.txt");
  for (const auto& e : ds.slides) {
    s.out("data/slides/" + e.id + ".ppm");
    s.out("data/slides/" + e.id + ".mask.pgm");
  }
}

void stage_preprocess(Stage& s) {
  const auto ds = s.dataset();
  std::size_t kept = 0;
  for (const auto& e : ds.slides) {
    const std::string img = "data/slides/" + e.id + ".ppm", msk = "data/slides/" + e.id + ".mask.pgm";
    s.in(img);
    s.in(msk);
    synth::SlideImage slide{e.id, read_ppm(s.at(img))};
    const auto mask = synth::mask_from_pgm(read_pgm(s.at(msk)));
    const auto patches = prep::make_patches(slide, mask, ds.config.patch_size, s.cfg.tissue_frac, s.cfg.label_rule);
    prep::write_patch_store(s.at("patches"), e.id, ds.config.patch_size, patches);
    s.out("patches/" + e.id + ".patches.txt");
    s.out("patches/" + e.id + ".patches.bin");
    kept += patches.size();
  }
  s.notes.push_back("patches = " + std::to_string(kept));
}

void stage_train_classifier(Stage& s) {
  const auto ds = s.dataset();
  std::vector<prep::Patch> all;
  for (const auto& id : ds.ids(synth::Split::train)) {
    auto p = s.patches(id);
    std::move(p.begin(), p.end(), std::back_inserter(all));
  }
  auto params = model::init_extractor(extractor_seed(s.cfg), s.cfg.arch);
  const auto trace = train::train_feature_extractor(params, all, ds.config.patch_size, s.cfg.aug, train_config(s.cfg));
  fs::create_directories(s.at("models"));
  fs::create_directories(s.at("traces"));
  model::save_checkpoint(s.at(kExtractorCkpt), s.cfg.arch, "extractor", model::named_tensors(params));
  train::write_trace_csv(s.at("traces/extractor.csv"), trace);
  s.out(kExtractorCkpt);
  s.out("traces/extractor.csv");
}

void stage_extract_features(Stage& s) {
  const auto ds = s.dataset();
  s.require({kExtractorCkpt}, "extract-features needs the patch classifier");
  auto params = model::init_extractor(extractor_seed(s.cfg), s.cfg.arch);
  s.load_extractor(params, kExtractorCkpt);
  for (const auto& e : ds.slides) {
    const auto patches = s.patches(e.id);
    const auto si = s.slide_input(e.id, patches);
    // Keep the patches the layout placed, in slide order.
    std::vector<prep::Patch> placed;
    std::size_t k = 0;
    for (const auto& p : patches)
      if (k < si.layout.positions.size() && p.pos == si.layout.positions[k]) {
        placed.push_back(p);
        ++k;
      }
    const Tensor features = train::extract_all_features(params, placed, ds.config.patch_size, s.cfg.aug.crop_size);
    fmap::write_feature_cache(s.at("features"), e.id, features, si.layout);
    s.out("features/" + e.id + ".features.tns");
    s.out("features/" + e.id + ".features.txt");
  }
}

void stage_train_seg(Stage& s) {
  const auto ds = s.dataset();
  std::vector<train::SegSample> samples;
  for (const auto& id : ds.ids(synth::Split::train)) {
    s.in("features/" + id + ".features.tns");
    s.in("features/" + id + ".features.txt");
    const auto cache = fmap::read_feature_cache(s.at("features"), id);
    if (cache.layout.positions.empty()) continue;
    samples.push_back(train::make_seg_sample(cache.layout, cache.features));
  }
  auto params = model::init_segmentation(segmentation_seed(s.cfg), s.cfg.arch);
  const auto trace = train::train_segmentation(params, samples, train_config(s.cfg));
  fs::create_directories(s.at("models"));
  fs::create_directories(s.at("traces"));
  model::save_checkpoint(s.at(kSegmentationCkpt), s.cfg.arch, "segmentation", model::named_tensors(params));
  train::write_trace_csv(s.at("traces/segmentation.csv"), trace);
  s.out(kSegmentationCkpt);
  s.out("traces/segmentation.csv");
}

void stage_train_e2e(Stage& s) {
  if (s.cfg.train.warm_start)
    s.require({kExtractorCkpt, kSegmentationCkpt},
              "train-e2e warm-starts from the separately trained checkpoints (run train-classifier and train-seg first)");
  const auto ds = s.dataset();
  auto ext = model::init_extractor(extractor_seed(s.cfg), s.cfg.arch);
  auto seg = model::init_segmentation(segmentation_seed(s.cfg), s.cfg.arch);
  if (s.cfg.train.warm_start) {
    s.load_extractor(ext, kExtractorCkpt);
    s.load_segmentation(seg, kSegmentationCkpt);
  }
  std::vector<train::SlideInput> slides;
  for (const auto& id : ds.ids(synth::Split::train)) slides.push_back(s.slide_input(id, s.patches(id)));
  const auto res = train::e2e_train(ext, seg, slides, train_config(s.cfg));

  fs::create_directories(s.at("models"));
  fs::create_directories(s.at("traces"));
  model::save_checkpoint(s.at(kE2EExtractorCkpt), s.cfg.arch, "extractor", model::named_tensors(ext));
  model::save_checkpoint(s.at(kE2ESegmentationCkpt), s.cfg.arch, "segmentation", model::named_tensors(seg));
  train::write_trace_csv(s.at("traces/e2e.csv"), res.trace);
  {
    std::ofstream mem(s.at("traces/e2e_memory.csv"));
    mem << "step,patches,micro_batches,micro_batch_size,peak_forward,peak_segmentation,peak_recompute,retained,per_patch,extractor_peak\n";
    for (std::size_t i = 0; i < res.memory.size(); ++i) {
      const auto& m = res.memory[i];
      mem << i << ',' << m.patches << ',' << m.micro_batches << ',' << m.micro_batch_size << ','
          << m.peak_forward << ',' << m.peak_segmentation << ',' << m.peak_recompute << ','
          << m.retained << ',' << m.per_patch << ',' << m.extractor_peak() << '\n';
    }
  }
  {
    std::ofstream sum(s.at("traces/e2e_summary.txt"));
    write_key_values(sum, {{"warm_start_loss", format_double(res.warm_start_loss)},
                           {"final_loss", format_double(res.final_loss)},
                           {"steps", std::to_string(res.trace.size())}});
  }
  s.out(kE2EExtractorCkpt);
  s.out(kE2ESegmentationCkpt);
  s.out("traces/e2e.csv");
  s.out("traces/e2e_memory.csv");
  s.out("traces/e2e_summary.txt");

  train::MemoryReport worst;
  for (const auto& m : res.memory)
    if (m.extractor_peak() > worst.extractor_peak()) worst = m;
  s.notes.push_back("warm_start_loss = " + format_double(res.warm_start_loss));
  s.notes.push_back("final_loss = " + format_double(res.final_loss));
  s.notes.push_back("memory.max_patches = " + std::to_string(worst.patches));
  s.notes.push_back("memory.micro_batches = " + std::to_string(worst.micro_batches));
  s.notes.push_back("memory.micro_batch_size = " + std::to_string(worst.micro_batch_size));
  s.notes.push_back("memory.peak_forward = " + std::to_string(worst.peak_forward));
  s.notes.push_back("memory.peak_segmentation = " + std::to_string(worst.peak_segmentation));
  s.notes.push_back("memory.peak_recompute = " + std::to_string(worst.peak_recompute));
  s.notes.push_back("memory.retained = " + std::to_string(worst.retained));
  s.notes.push_back("memory.per_patch = " + std::to_string(worst.per_patch));
  s.notes.push_back("memory.extractor_peak = " + std::to_string(worst.extractor_peak()));
}

fs::path prediction_file(const RunConfig& c, const std::string& id) {
  return fs::path("predictions") / c.model / (id + ".pred.tns");
}

void stage_predict(Stage& s) {
  const auto ds = s.dataset();
  auto ext = model::init_extractor(extractor_seed(s.cfg), s.cfg.arch);
  auto seg = model::init_segmentation(segmentation_seed(s.cfg), s.cfg.arch);
  if (s.cfg.model == "e2e") {
    s.require({kE2EExtractorCkpt, kE2ESegmentationCkpt}, "predict with eval.model = e2e needs train-e2e output");
    s.load_extractor(ext, kE2EExtractorCkpt);
    s.load_segmentation(seg, kE2ESegmentationCkpt);
  } else if (s.cfg.model == "separate") {
    s.require({kExtractorCkpt, kSegmentationCkpt}, "predict with eval.model = separate needs train-seg output");
    s.load_extractor(ext, kExtractorCkpt);
    s.load_segmentation(seg, kSegmentationCkpt);
  } else {
    s.require({kExtractorCkpt}, "predict with eval.model = classifier needs train-classifier output");
    s.load_extractor(ext, kExtractorCkpt);
  }
  fs::create_directories(s.at(fs::path("predictions") / s.cfg.model));
  for (const auto& id : ds.ids(s.cfg.eval_split)) {
    const auto si = s.slide_input(id, s.patches(id));
    const auto pred = s.cfg.model == "classifier"
                          ? train::predict_classifier(ext, si, grid_rows(ds), grid_cols(ds))
                          : train::predict(ext, seg, si, grid_rows(ds), grid_cols(ds));
    save_predictions(s.at(prediction_file(s.cfg, id)), pred);
    s.out(prediction_file(s.cfg, id));
  }
}

eval::PredictionMap truth_as_prediction(const eval::TruthMap& t) {
  eval::PredictionMap p(t.rows, t.cols);
  for (std::size_t i = 0; i < t.labels.size(); ++i) {
    p.valid[i] = t.labels[i] >= 0;
    p.prob[i] = t.labels[i] == 1 ? 1.0 : 0.0;
  }
  return p;
}

std::string fmt(double v) { return std::isnan(v) ? "nan" : format_double(v); }

void stage_eval(Stage& s) {
  const auto ds = s.dataset();
  const auto ids = ds.ids(s.cfg.eval_split);
  if (ids.empty()) throw StageError(std::string("no slides in split ") + synth::split_name(s.cfg.eval_split));
  const fs::path dir = fs::path("metrics") / s.cfg.model;
  fs::create_directories(s.at(dir));

  eval::PredictionMap all_pred;
  eval::TruthMap all_truth;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<eval::SlideClass> pred_class, true_class;
  std::ofstream slides(s.at(dir / "slides.csv"));
  slides << "slide,labeled_cells,accuracy,predicted_class,true_class\n";
  for (const auto& id : ids) {
    s.in(prediction_file(s.cfg, id));
    const auto pred = load_predictions(s.at(prediction_file(s.cfg, id)));
    const auto truth = truth_map(s.patches(id), grid_rows(ds), grid_cols(ds));
    std::vector<double> sc;
    std::vector<int> lb;
    eval::collect_scored_cells(pred, truth, sc, lb);
    const double acc = lb.empty() ? std::numeric_limits<double>::quiet_NaN() : eval::patch_accuracy(pred, truth);
    scores.insert(scores.end(), sc.begin(), sc.end());
    labels.insert(labels.end(), lb.begin(), lb.end());
    pred_class.push_back(eval::slide_class(pred, s.cfg.lesion));
    true_class.push_back(eval::slide_class(truth_as_prediction(truth), s.cfg.lesion));
    slides << id << ',' << lb.size() << ',' << fmt(acc) << ',' << eval::slide_class_name(pred_class.back())
           << ',' << eval::slide_class_name(true_class.back()) << '\n';

    // Stack slides vertically so accuracy is pooled over all labeled cells.
    all_pred.cols = all_truth.cols = pred.cols;
    all_pred.rows += pred.rows;
    all_truth.rows += truth.rows;
    all_pred.prob.insert(all_pred.prob.end(), pred.prob.begin(), pred.prob.end());
    all_pred.valid.insert(all_pred.valid.end(), pred.valid.begin(), pred.valid.end());
    all_truth.labels.insert(all_truth.labels.end(), truth.labels.begin(), truth.labels.end());
  }
  slides.close();

  const double accuracy = eval::patch_accuracy(all_pred, all_truth);
  const double ap = std::count(labels.begin(), labels.end(), 1) > 0 ? eval::pr_auc(scores, labels)
                                                                      : std::numeric_limits<double>::quiet_NaN();
  // Consecutive groups of five slides form a patient.
  std::vector<eval::PNStage> pred_stage, true_stage;
  std::ostringstream patients;
  for (std::size_t p = 0; p + 5 <= ids.size(); p += 5) {
    std::span<const eval::SlideClass> pc(pred_class.data() + p, 5), tc(true_class.data() + p, 5);
    pred_stage.push_back(eval::pn_stage(pc));
    true_stage.push_back(eval::pn_stage(tc));
    patients << "patient " << p / 5 << ": predicted " << eval::pn_stage_name(pred_stage.back()) << ", true "
             << eval::pn_stage_name(true_stage.back()) << '\n';
  }
  const double kappa = pred_stage.empty() ? std::numeric_limits<double>::quiet_NaN() : eval::kappa(pred_stage, true_stage);

  {
    std::ofstream m(s.at(dir / "metrics.csv"));
    m << "metric,value\n"
      << "slides," << ids.size() << '\n'
      << "labeled_cells," << labels.size() << '\n'
      << "accuracy," << fmt(accuracy) << '\n'
      << "pr_auc," << fmt(ap) << '\n'
      << "patients," << pred_stage.size() << '\n'
      << "kappa," << fmt(kappa) << '\n';
  }
  {
    std::ofstream m(s.at(dir / "summary.txt"));
    m << "model: " << s.cfg.model << ", split: " << synth::split_name(s.cfg.eval_split) << '\n'
      << "slides: " << ids.size() << ", labeled cells: " << labels.size() << '\n'
      << "patch accuracy (p >= 0.5 is tumor): " << fmt(accuracy) << '\n'
      << "PR-AUC: " << fmt(ap) << '\n'
      << "patients: " << pred_stage.size() << ", quadratic kappa: " << fmt(kappa) << '\n'
      << patients.str();
  }
  s.out(dir / "slides.csv");
  s.out(dir / "metrics.csv");
  s.out(dir / "summary.txt");
  s.notes.push_back("accuracy = " + fmt(accuracy));
  s.notes.push_back("pr_auc = " + fmt(ap));
  s.notes.push_back("kappa = " + fmt(kappa));
}

void stage_render(Stage& s) {
  const auto ds = s.dataset();
  const fs::path dir = fs::path("heatmaps") / s.cfg.model;
  fs::create_directories(s.at(dir));
  for (const auto& id : ds.ids(s.cfg.eval_split)) {
    s.in(prediction_file(s.cfg, id));
    const auto pred = load_predictions(s.at(prediction_file(s.cfg, id)));
    const auto truth = truth_map(s.patches(id), grid_rows(ds), grid_cols(ds));
    write_ppm(s.at(dir / (id + ".ppm")), render_heatmap(pred, truth, s.cfg.heatmap_scale, s.cfg.heatmap_truth_panel));
    s.out(dir / (id + ".ppm"));
  }
}

void write_manifest(const Stage& s, const std::string& stage) {
  const fs::path path = manifest_path(s.cfg, stage);
  fs::create_directories(path.parent_path());
  std::ostringstream head;
  head << "# wsiseg stage manifest\n# stage = " << stage << "\n# seed = " << s.cfg.seed << '\n';
  for (const auto& p : s.inputs) head << "# input " << p.generic_string() << " = " << file_hash(s.at(p)) << '\n';
  for (const auto& p : s.outputs) head << "# output " << p.generic_string() << " = " << file_hash(s.at(p)) << '\n';
  for (const auto& n : s.notes) head << "# " << n << '\n';
  std::ofstream out(path);
  out << head.str();
  write_key_values(out, s.cfg.to_key_values());
  if (!out) throw StageError("cannot write " + path.string());

  std::ofstream run(s.root / "run_manifest.txt", std::ios::app);
  run << "stage " << stage << " -> " << fs::relative(path, s.root).generic_string() << '\n';
  for (const auto& n : s.notes) run << "  " << n << '\n';
}

}  // namespace

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"synth",     "preprocess", "train-classifier",
                                              "extract-features", "train-seg", "train-e2e",
                                              "predict",   "eval",       "render-heatmap"};
  return names;
}

bool is_stage(const std::string& name) {
  const auto& n = stage_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

fs::path manifest_path(const RunConfig& cfg, const std::string& stage) {
  const std::string name = model_specific(stage) ? stage + "-" + cfg.model : stage;
  return cfg.out / "manifests" / (name + ".txt");
}

void run_stage(const std::string& stage, const RunConfig& cfg_in) {
  if (!is_stage(stage)) throw StageError("unknown stage '" + stage + "'");
  Stage s{cfg_in, {}, {}, {}, {}};
  s.cfg.out = fs::absolute(cfg_in.out).lexically_normal();
  s.cfg.validate();
  s.root = s.cfg.out;
  fs::create_directories(s.root);
  if (stage == "synth") stage_synth(s);
  else if (stage == "preprocess") stage_preprocess(s);
  else if (stage == "train-classifier") stage_train_classifier(s);
  else if (stage == "extract-features") stage_extract_features(s);
  else if (stage == "train-seg") stage_train_seg(s);
  else if (stage == "train-e2e") stage_train_e2e(s);
  else if (stage == "predict") stage_predict(s);
  else if (stage == "eval") stage_eval(s);
  else stage_render(s);
  write_manifest(s, stage);
}

void run_all(const RunConfig& cfg) {
  for (const auto& stage : stage_names()) run_stage(stage, cfg);
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

StageManifest read_stage_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StageError("cannot read " + path.string());
  StageManifest m;
  std::string line;
  auto record = [](const std::string& rest) {
    const auto eq = rest.rfind(" = ");
    if (eq == std::string::npos) throw StageError("malformed manifest record: " + rest);
    return RecordedFile{rest.substr(0, eq), rest.substr(eq + 3)};
  };
  while (std::getline(in, line)) {
    if (line.starts_with("# stage = ")) m.stage = line.substr(10);
    else if (line.starts_with("# input ")) m.inputs.push_back(record(line.substr(8)));
    else if (line.starts_with("# output ")) m.outputs.push_back(record(line.substr(9)));
  }
  m.config = RunConfig::load(path);
  return m;
}

std::vector<std::string> changed_outputs(const StageManifest& m) {
  std::vector<std::string> changed;
  for (const auto& f : m.outputs) {
    const fs::path p = m.config.out / f.path;
    if (!fs::exists(p) || file_hash(p) != f.hash) changed.push_back(f.path);
  }
  return changed;
}

eval::TruthMap truth_map(const std::vector<prep::Patch>& patches, std::size_t rows, std::size_t cols) {
  eval::TruthMap t{rows, cols, std::vector<int>(rows * cols, -1), std::vector<std::uint8_t>(rows * cols, 0)};
  for (const auto& p : patches) {
    if (p.pos.row >= rows || p.pos.col >= cols) throw StageError("patch outside the slide grid");
    const std::size_t i = p.pos.row * cols + p.pos.col;
    t.present[i] = 1;
    t.labels[i] = p.label == prep::PatchLabel::tumor ? 1 : p.label == prep::PatchLabel::normal ? 0 : -1;
  }
  return t;
}

void save_predictions(const fs::path& path, const eval::PredictionMap& p) {
  const std::size_t plane = p.rows * p.cols;
  Tensor t(Shape{2, p.rows, p.cols});
  for (std::size_t i = 0; i < plane; ++i) {
    t[i] = p.prob[i];
    t[plane + i] = p.valid[i] ? 1.0 : 0.0;
  }
  save_tensor(path, t);
}

eval::PredictionMap load_predictions(const fs::path& path) {
  const Tensor t = load_tensor(path);
  if (t.rank() != 3 || t.dim(0) != 2) throw StageError(path.string() + " is not a prediction map");
  eval::PredictionMap p(t.dim(1), t.dim(2));
  const std::size_t plane = p.rows * p.cols;
  for (std::size_t i = 0; i < plane; ++i) {
    p.prob[i] = t[i];
    p.valid[i] = t[plane + i] != 0.0;
  }
  return p;
}

EvalSummary read_eval_summary(const RunConfig& cfg) {
  const fs::path path = cfg.out / "metrics" / cfg.model / "metrics.csv";
  std::ifstream in(path);
  if (!in) throw StageError("cannot read " + path.string());
  EvalSummary s;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    const std::string key = line.substr(0, comma), value = line.substr(comma + 1);
    const double v = value == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(value);
    if (key == "slides") s.slides = static_cast<std::size_t>(v);
    else if (key == "labeled_cells") s.labeled_cells = static_cast<std::size_t>(v);
    else if (key == "accuracy") s.accuracy = v;
    else if (key == "pr_auc") s.pr_auc = v;
    else if (key == "patients") s.patients = static_cast<std::size_t>(v);
    else if (key == "kappa") s.kappa = v;
  }
  return s;
}

}  // namespace wsiseg::pipeline
