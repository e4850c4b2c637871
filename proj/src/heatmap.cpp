#include "wsiseg/heatmap.hpp"

#include <stdexcept>

namespace wsiseg {

Rgb blend_half(Rgb a, Rgb b) {
  auto mix = [](int x, int y) { return static_cast<std::uint8_t>((x + y + 1) / 2); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

namespace {

void fill_block(RgbImage& img, std::size_t x0, std::size_t y0, std::size_t scale, Rgb c) {
  for (std::size_t y = y0; y < y0 + scale; ++y)
    for (std::size_t x = x0; x < x0 + scale; ++x) {
      std::uint8_t* p = img.pixel(x, y);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
}

}  // namespace

RgbImage render_heatmap(const eval::PredictionMap& preds, const eval::TruthMap& truth,
                        std::size_t scale, bool truth_panel) {
  if (scale == 0) throw std::invalid_argument("heatmap scale must be >= 1");
  if (preds.rows != truth.rows || preds.cols != truth.cols)
    throw std::invalid_argument("prediction and truth grids differ");
  const std::size_t rows = preds.rows, cols = preds.cols;
  RgbImage img((truth_panel ? 2 : 1) * cols * scale, rows * scale, 255);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (preds.valid[i]) {
        Rgb color = preds.prob[i] >= eval::kTumorThreshold ? kTumorColor : kNormalColor;
        if (truth.labels[i] < 0) color = blend_half(color, kNoLabelColor);
        fill_block(img, c * scale, r * scale, scale, color);
      }
      if (!truth_panel) continue;
      const bool present = truth.present.empty() ? truth.labels[i] >= 0 : truth.present[i] != 0;
      if (!present) continue;
      const Rgb t = truth.labels[i] == 1 ? kTumorColor : truth.labels[i] == 0 ? kNormalColor : kNoLabelColor;
      fill_block(img, (cols + c) * scale, r * scale, scale, t);
    }
  return img;
}

}  // namespace wsiseg
