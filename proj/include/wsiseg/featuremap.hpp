#pragma once

// Arranges per-patch feature vectors on fixed-size maps: each tissue lump's
// bounding box is centred on a zero-filled map, and a label map with the
// same placement carries the per-cell ground truth.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wsiseg/ops.hpp"
#include "wsiseg/preprocess.hpp"
#include "wsiseg/tensor.hpp"

namespace wsiseg::fmap {

using prep::GridPos;
using prep::PatchLabel;

// 8-connected components of the kept grid cells. Each component is sorted
// row-major; components are ordered by their first (topmost, then leftmost)
// cell.
std::vector<std::vector<GridPos>> tissue_components(std::span<const GridPos> cells);

enum class OverflowPolicy { error, crop };

struct OverflowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Cell&) const = default;
};

// Maps the grid positions of one lump onto a rows x cols map:
// cell = grid - origin + offset, offset = floor((map - bbox) / 2) per axis.
class Placement {
 public:
  Placement() = default;
  // Throws OverflowError when the bounding box does not fit and the policy
  // is `error`; with `crop`, cells that fall off the map are left out.
  Placement(std::vector<GridPos> positions, std::size_t rows, std::size_t cols,
            OverflowPolicy policy = OverflowPolicy::error);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  long long offset_row() const { return offset_r_; }
  long long offset_col() const { return offset_c_; }
  const std::vector<GridPos>& positions() const { return positions_; }
  std::size_t dropped() const { return dropped_; }

  std::optional<Cell> cell_of(GridPos pos) const;
  // Index (into positions()) of the patch occupying `cell`, if any.
  std::optional<std::size_t> owner(Cell cell) const;
  bool occupied(Cell cell) const { return owner(cell).has_value(); }

 private:
  std::vector<GridPos> positions_;
  std::size_t rows_ = 0, cols_ = 0;
  std::size_t origin_r_ = 0, origin_c_ = 0;
  long long offset_r_ = 0, offset_c_ = 0;
  std::vector<int> owner_;  // rows*cols, -1 when empty
  std::size_t dropped_ = 0;
};

std::optional<GridPos> cell_to_patch(const Placement& placement, Cell cell);

struct FeatureMap {
  std::size_t depth = 0;
  Tensor data;  // [D, rows, cols]
  std::vector<std::uint8_t> occupancy;
  Placement placement;
};

enum class CellLabel : std::int8_t { normal = 0, tumor = 1, ignore = -1 };

struct LabelMap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<CellLabel> labels;
};

// features: [N, D], row n belongs to positions[n].
FeatureMap assemble_feature_map(std::span<const GridPos> positions, const Tensor& features,
                                std::size_t rows, std::size_t cols,
                                OverflowPolicy policy = OverflowPolicy::error);

// `positions` must be exactly the placement's positions, in order.
LabelMap assemble_label_map(std::span<const GridPos> positions, std::span<const PatchLabel> labels,
                            const Placement& placement);

CellLabel to_cell_label(PatchLabel l);

// All maps of one slide: one per lump (per_lump) or one for the whole slide.
struct SlideLayout {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool per_lump = true;
  std::vector<GridPos> positions;  // slide patch order
  std::vector<PatchLabel> labels;
  std::vector<Placement> maps;
  std::vector<ad::CellIndex> cells;  // per patch; patches cropped off have none
  std::vector<std::uint8_t> placed;  // per patch

  std::size_t map_count() const { return maps.size(); }
  // Per-cell class indices (tumor 1, normal 0, -1 ignore) and loss mask over
  // [maps, rows, cols].
  std::vector<int> cell_labels() const;
  std::vector<std::uint8_t> cell_mask() const;
  std::vector<ad::CellIndex> placed_cells() const;
};

SlideLayout build_layout(std::vector<GridPos> positions, std::vector<PatchLabel> labels,
                         std::size_t rows, std::size_t cols, bool per_lump,
                         OverflowPolicy policy = OverflowPolicy::error);

// [maps, D, rows, cols] built from slide-ordered features [N, D].
Tensor layout_feature_maps(const SlideLayout& layout, const Tensor& features);

// <dir>/<id>.features.tns (TNS1 [N,D]) and <dir>/<id>.features.txt
// (map geometry, per-patch placement and labels).
void write_feature_cache(const std::filesystem::path& dir, const std::string& id,
                         const Tensor& features, const SlideLayout& layout);
struct FeatureCache {
  Tensor features;
  SlideLayout layout;
};
FeatureCache read_feature_cache(const std::filesystem::path& dir, const std::string& id);

}  // namespace wsiseg::fmap
