#pragma once

#include "wsiseg/eval.hpp"
#include "wsiseg/image.hpp"

namespace wsiseg {

struct Rgb {
  std::uint8_t r, g, b;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kTumorColor{255, 0, 0};
inline constexpr Rgb kNormalColor{128, 128, 128};
inline constexpr Rgb kNoLabelColor{128, 0, 128};
inline constexpr Rgb kBackgroundColor{255, 255, 255};

// Per-channel (a + b + 1) / 2.
Rgb blend_half(Rgb a, Rgb b);

// One scale x scale block per cell. Predicted tumor is red, predicted normal
// gray; cells whose truth is NoLabel get the prediction color blended half
// and half with purple; cells without a prediction are white. With
// `truth_panel`, the ground truth is drawn to the right in the same colors
// (NoLabel in plain purple), doubling the width.
RgbImage render_heatmap(const eval::PredictionMap& preds, const eval::TruthMap& truth,
                        std::size_t scale, bool truth_panel);

}  // namespace wsiseg
