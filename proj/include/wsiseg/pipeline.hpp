#pragma once

// The pipeline stages as file-to-file steps under RunConfig::out. Each stage
// writes manifests/<stage>.txt: the full configuration (loadable with
// --config) preceded by comment lines recording the stage, the seed and a
// hash of every input and output file.

#include <filesystem>
#include <string>
#include <vector>

#include "wsiseg/config.hpp"
#include "wsiseg/eval.hpp"

namespace wsiseg::pipeline {

struct StageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string>& stage_names();
bool is_stage(const std::string& name);

void run_stage(const std::string& stage, const RunConfig& cfg);
// Every stage in order.
void run_all(const RunConfig& cfg);

std::filesystem::path manifest_path(const RunConfig& cfg, const std::string& stage);

// 64-bit FNV-1a of the file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

struct RecordedFile {
  std::string path;  // relative to the run directory
  std::string hash;
};
struct StageManifest {
  std::string stage;
  std::vector<RecordedFile> inputs;
  std::vector<RecordedFile> outputs;
  RunConfig config;
};
StageManifest read_stage_manifest(const std::filesystem::path& path);

// Output files whose current hash differs from the manifest's record.
std::vector<std::string> changed_outputs(const StageManifest& m);

// Ground truth of a slide on its patch grid, from the stored patch labels.
eval::TruthMap truth_map(const std::vector<prep::Patch>& patches, std::size_t rows, std::size_t cols);

void save_predictions(const std::filesystem::path& path, const eval::PredictionMap& p);
eval::PredictionMap load_predictions(const std::filesystem::path& path);

struct EvalSummary {
  std::size_t slides = 0;
  std::size_t labeled_cells = 0;
  double accuracy = 0.0;
  double pr_auc = 0.0;
  std::size_t patients = 0;
  double kappa = 0.0;  // NaN when there is no complete patient
};
// Reads the last eval stage's metrics file for the configured model.
EvalSummary read_eval_summary(const RunConfig& cfg);

}  // namespace wsiseg::pipeline
