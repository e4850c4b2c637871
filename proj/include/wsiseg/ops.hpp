#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "wsiseg/tape.hpp"

namespace wsiseg::ad {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

Var relu(const Var& x);

// Cross-correlation. x is [B,C,H,W] or [C,H,W]; w is [Cout,C,kH,kW]; b is
// [Cout]. Each output element accumulates bias first, then input channels,
// then kernel rows, then kernel columns, in that order.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride = 1,
           std::size_t padding = 0);

// Floor semantics for windows that do not fit. The first maximum in scan
// order wins ties and receives the whole gradient.
Var maxpool2d(const Var& x, std::size_t k, std::size_t stride);

Var nearest_upsample(const Var& x, std::size_t factor);

Var concat_channels(const Var& a, const Var& b);

// x is [B,In] or [In]; W is [In,Out]; b is [Out].
Var fully_connected(const Var& x, const Var& w, const Var& b);

// [B, ...] -> [B, prod(...)].
Var flatten(const Var& x);

Var mul(const Var& a, const Var& b);
Var sum(const Var& x);

// Scalar sum(weights * x) with a constant weight tensor of x's shape.
Var inner_product(const Var& x, const Tensor& weights);

struct CellIndex {
  std::size_t map = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

// Writes row n of x [N,D] into out[cells[n].map, :, cells[n].row, cells[n].col]
// of a zero tensor [L,D,H,W]. Cells must be distinct.
Var scatter_to_map(const Var& x, std::span<const CellIndex> cells, std::size_t maps,
                   std::size_t rows, std::size_t cols);

// [B,C,H,W] -> [B*H*W, C], cell-major in (b, h, w) order.
Var map_to_cells(const Var& x);

// Mean over masked-in rows of softmax cross-entropy. logits [cells,K],
// labels in [0,K). Rows with mask 0 contribute nothing and get exactly zero
// gradient. Throws if every row is masked out.
Var masked_softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                                 std::span<const std::uint8_t> mask);

// Row-wise softmax of a [cells,K] tensor (no tape involvement).
Tensor softmax_rows(const Tensor& logits);

}  // namespace wsiseg::ad
