#include "wsiseg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wsiseg::eval {

double patch_accuracy(const PredictionMap& preds, const TruthMap& truth) {
  if (preds.rows != truth.rows || preds.cols != truth.cols)
    throw std::invalid_argument("prediction and truth grids differ");
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (!preds.valid[i] || truth.labels[i] < 0) continue;
    const int predicted = preds.prob[i] >= kTumorThreshold ? 1 : 0;
    ++total;
    correct += predicted == truth.labels[i];
  }
  if (total == 0) throw std::invalid_argument("no labeled cells to score");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  const std::size_t positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw std::invalid_argument("pr_auc needs at least one positive label");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double npos = static_cast<double>(positives);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1) ++tp; else ++fp;
      ++j;
    }
    const double recall = static_cast<double>(tp) / npos;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

void collect_scored_cells(const PredictionMap& preds, const TruthMap& truth,
                          std::vector<double>& scores, std::vector<int>& labels) {
  if (preds.rows != truth.rows || preds.cols != truth.cols)
    throw std::invalid_argument("prediction and truth grids differ");
  for (std::size_t i = 0; i < truth.labels.size(); ++i) {
    if (!preds.valid[i] || truth.labels[i] < 0) continue;
    scores.push_back(preds.prob[i]);
    labels.push_back(truth.labels[i]);
  }
}

const char* slide_class_name(SlideClass c) {
  switch (c) {
    case SlideClass::negative: return "negative";
    case SlideClass::itc: return "itc";
    case SlideClass::micro: return "micro";
    case SlideClass::macro: return "macro";
  }
  return "?";
}

const char* pn_stage_name(PNStage s) {
  switch (s) {
    case PNStage::pN0: return "pN0";
    case PNStage::pN0_itc: return "pN0(i+)";
    case PNStage::pN1mi: return "pN1mi";
    case PNStage::pN1: return "pN1";
    case PNStage::pN2: return "pN2";
  }
  return "?";
}

double largest_lesion_mm(const PredictionMap& preds, double cell_mm, LesionMeasure measure) {
  const std::size_t rows = preds.rows, cols = preds.cols;
  std::vector<std::uint8_t> seen(rows * cols, 0);
  auto tumor = [&](std::size_t i) { return preds.valid[i] && preds.prob[i] >= kTumorThreshold; };
  double best = 0.0;
  for (std::size_t start = 0; start < rows * cols; ++start) {
    if (seen[start] || !tumor(start)) continue;
    std::size_t r0 = rows, c0 = cols, r1 = 0, c1 = 0, area = 0;
    std::vector<std::size_t> stack{start};
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const std::size_t r = i / cols, c = i % cols;
      ++area;
      r0 = std::min(r0, r); r1 = std::max(r1, r);
      c0 = std::min(c0, c); c1 = std::max(c1, c);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const long long rr = static_cast<long long>(r) + dr, cc = static_cast<long long>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long long>(rows) || cc >= static_cast<long long>(cols))
            continue;
          const std::size_t j = static_cast<std::size_t>(rr) * cols + static_cast<std::size_t>(cc);
          if (!seen[j] && tumor(j)) {
            seen[j] = 1;
            stack.push_back(j);
          }
        }
    }
    const double size = measure == LesionMeasure::extent
                            ? static_cast<double>(std::max(r1 - r0 + 1, c1 - c0 + 1)) * cell_mm
                            : std::sqrt(static_cast<double>(area)) * cell_mm;
    best = std::max(best, size);
  }
  return best;
}

SlideClass slide_class(const PredictionMap& preds, const LesionCalibration& cal) {
  if (!cal.cell_mm || !(*cal.cell_mm > 0.0))
    throw std::invalid_argument("slide_class needs a positive cell_mm calibration");
  const double d = largest_lesion_mm(preds, *cal.cell_mm, cal.measure);
  if (d <= 0.0) return SlideClass::negative;
  if (d > cal.macro_mm) return SlideClass::macro;
  if (d > cal.micro_mm) return SlideClass::micro;
  return SlideClass::itc;
}

PNStage pn_stage(std::span<const SlideClass> slides) {
  if (slides.size() != 5)
    throw std::invalid_argument("pn_stage needs exactly 5 slides, got " + std::to_string(slides.size()));
  const auto count = [&](SlideClass c) { return std::count(slides.begin(), slides.end(), c); };
  const auto macro = count(SlideClass::macro);
  if (macro >= 4) return PNStage::pN2;
  if (macro >= 1) return PNStage::pN1;
  if (count(SlideClass::micro) > 0) return PNStage::pN1mi;
  if (count(SlideClass::itc) > 0) return PNStage::pN0_itc;
  return PNStage::pN0;
}

double quadratic_weighted_kappa(std::span<const int> a, std::span<const int> b, int k) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("kappa needs equal-length, nonempty ratings");
  if (k < 2) throw std::invalid_argument("kappa needs at least two classes");
  const std::size_t kk = static_cast<std::size_t>(k);
  std::vector<double> observed(kk * kk, 0.0), row(kk, 0.0), col(kk, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || a[i] >= k || b[i] < 0 || b[i] >= k) throw std::out_of_range("kappa rating out of range");
    observed[a[i] * kk + b[i]] += 1.0;
    row[a[i]] += 1.0;
    col[b[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < kk; ++i)
    for (std::size_t j = 0; j < kk; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / static_cast<double>((kk - 1) * (kk - 1));
      num += w * observed[i * kk + j];
      den += w * row[i] * col[j] / n;
    }
  if (den == 0.0) return 1.0;
  return 1.0 - num / den;
}

double kappa(std::span<const PNStage> pred, std::span<const PNStage> truth) {
  std::vector<int> p(pred.size()), t(truth.size());
  for (std::size_t i = 0; i < pred.size(); ++i) p[i] = static_cast<int>(pred[i]);
  for (std::size_t i = 0; i < truth.size(); ++i) t[i] = static_cast<int>(truth[i]);
  return quadratic_weighted_kappa(p, t, 5);
}

}  // namespace wsiseg::eval
