#include "wsiseg/featuremap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "wsiseg/kvfile.hpp"
#include "wsiseg/tensor_io.hpp"

namespace wsiseg::fmap {

std::vector<std::vector<GridPos>> tissue_components(std::span<const GridPos> cells) {
  std::set<GridPos> remaining(cells.begin(), cells.end());
  std::vector<std::vector<GridPos>> comps;
  while (!remaining.empty()) {
    // std::set order is row-major, so begin() is the topmost-leftmost cell.
    std::vector<GridPos> comp;
    std::vector<GridPos> stack{*remaining.begin()};
    remaining.erase(remaining.begin());
    while (!stack.empty()) {
      const GridPos p = stack.back();
      stack.pop_back();
      comp.push_back(p);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if ((dr == 0 && dc == 0) || (dr < 0 && p.row == 0) || (dc < 0 && p.col == 0)) continue;
          const GridPos q{p.row + dr, p.col + dc};
          if (auto it = remaining.find(q); it != remaining.end()) {
            stack.push_back(q);
            remaining.erase(it);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

namespace {

long long floor_half(long long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

}  // namespace

Placement::Placement(std::vector<GridPos> positions, std::size_t rows, std::size_t cols,
                     OverflowPolicy policy)
    : positions_(std::move(positions)), rows_(rows), cols_(cols), owner_(rows * cols, -1) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("map extents must be positive");
  if (positions_.empty()) return;
  std::size_t r0 = SIZE_MAX, c0 = SIZE_MAX, r1 = 0, c1 = 0;
  for (const auto& p : positions_) {
    r0 = std::min(r0, p.row);
    c0 = std::min(c0, p.col);
    r1 = std::max(r1, p.row);
    c1 = std::max(c1, p.col);
  }
  const std::size_t bh = r1 - r0 + 1, bw = c1 - c0 + 1;
  if ((bh > rows || bw > cols) && policy == OverflowPolicy::error) {
    std::ostringstream msg;
    msg << "tissue bounding box " << bh << "x" << bw << " exceeds map " << rows << "x" << cols
        << " (overflow " << (bh > rows ? bh - rows : 0) << " rows, " << (bw > cols ? bw - cols : 0)
        << " cols)";
    throw OverflowError(msg.str());
  }
  origin_r_ = r0;
  origin_c_ = c0;
  offset_r_ = floor_half(static_cast<long long>(rows) - static_cast<long long>(bh));
  offset_c_ = floor_half(static_cast<long long>(cols) - static_cast<long long>(bw));
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    const auto cell = cell_of(positions_[i]);
    if (!cell) {
      ++dropped_;
      continue;
    }
    int& o = owner_[cell->row * cols_ + cell->col];
    if (o != -1) throw std::invalid_argument("duplicate grid position in placement");
    o = static_cast<int>(i);
  }
}

std::optional<Cell> Placement::cell_of(GridPos pos) const {
  const long long r = static_cast<long long>(pos.row) - static_cast<long long>(origin_r_) + offset_r_;
  const long long c = static_cast<long long>(pos.col) - static_cast<long long>(origin_c_) + offset_c_;
  if (r < 0 || c < 0 || r >= static_cast<long long>(rows_) || c >= static_cast<long long>(cols_))
    return std::nullopt;
  return Cell{static_cast<std::size_t>(r), static_cast<std::size_t>(c)};
}

std::optional<std::size_t> Placement::owner(Cell cell) const {
  if (cell.row >= rows_ || cell.col >= cols_) return std::nullopt;
  const int o = owner_[cell.row * cols_ + cell.col];
  if (o < 0) return std::nullopt;
  return static_cast<std::size_t>(o);
}

std::optional<GridPos> cell_to_patch(const Placement& placement, Cell cell) {
  const auto o = placement.owner(cell);
  if (!o) return std::nullopt;
  return placement.positions()[*o];
}

FeatureMap assemble_feature_map(std::span<const GridPos> positions, const Tensor& features,
                                std::size_t rows, std::size_t cols, OverflowPolicy policy) {
  if (features.rank() != 2 || features.dim(0) != positions.size())
    throw std::invalid_argument("features must be [N, D] with one row per position");
  FeatureMap m;
  m.depth = features.dim(1);
  m.placement = Placement({positions.begin(), positions.end()}, rows, cols, policy);
  m.data = Tensor(Shape{m.depth, rows, cols});
  m.occupancy.assign(rows * cols, 0);
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const auto cell = m.placement.cell_of(positions[n]);
    if (!cell) continue;
    const std::size_t at = cell->row * cols + cell->col;
    m.occupancy[at] = 1;
    for (std::size_t d = 0; d < m.depth; ++d) m.data[d * rows * cols + at] = features[n * m.depth + d];
  }
  return m;
}

CellLabel to_cell_label(PatchLabel l) {
  switch (l) {
    case PatchLabel::tumor: return CellLabel::tumor;
    case PatchLabel::normal: return CellLabel::normal;
    case PatchLabel::nolabel: return CellLabel::ignore;
  }
  return CellLabel::ignore;
}

LabelMap assemble_label_map(std::span<const GridPos> positions, std::span<const PatchLabel> labels,
                            const Placement& placement) {
  if (positions.size() != labels.size()) throw std::invalid_argument("one label per position required");
  if (!std::equal(positions.begin(), positions.end(), placement.positions().begin(),
                  placement.positions().end()))
    throw std::invalid_argument("label positions do not match the feature map placement");
  LabelMap m{placement.rows(), placement.cols(),
             std::vector<CellLabel>(placement.rows() * placement.cols(), CellLabel::ignore)};
  for (std::size_t n = 0; n < positions.size(); ++n)
    if (const auto cell = placement.cell_of(positions[n]))
      m.labels[cell->row * m.cols + cell->col] = to_cell_label(labels[n]);
  return m;
}

std::vector<int> SlideLayout::cell_labels() const {
  std::vector<int> out(maps.size() * rows * cols, -1);
  for (std::size_t n = 0; n < positions.size(); ++n) {
    if (!placed[n]) continue;
    const auto& c = cells[n];
    out[(c.map * rows + c.row) * cols + c.col] = static_cast<int>(to_cell_label(labels[n]));
  }
  return out;
}

std::vector<std::uint8_t> SlideLayout::cell_mask() const {
  const auto labels_ = cell_labels();
  std::vector<std::uint8_t> mask(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) mask[i] = labels_[i] >= 0 ? 1 : 0;
  return mask;
}

std::vector<ad::CellIndex> SlideLayout::placed_cells() const {
  std::vector<ad::CellIndex> out;
  for (std::size_t n = 0; n < cells.size(); ++n)
    if (placed[n]) out.push_back(cells[n]);
  return out;
}

SlideLayout build_layout(std::vector<GridPos> positions, std::vector<PatchLabel> labels,
                         std::size_t rows, std::size_t cols, bool per_lump, OverflowPolicy policy) {
  if (positions.size() != labels.size()) throw std::invalid_argument("one label per position required");
  SlideLayout layout;
  layout.rows = rows;
  layout.cols = cols;
  layout.per_lump = per_lump;
  layout.positions = std::move(positions);
  layout.labels = std::move(labels);
  if (per_lump) {
    for (auto& comp : tissue_components(layout.positions))
      layout.maps.emplace_back(std::move(comp), rows, cols, policy);
  } else if (!layout.positions.empty()) {
    std::vector<GridPos> sorted = layout.positions;
    std::sort(sorted.begin(), sorted.end());
    layout.maps.emplace_back(std::move(sorted), rows, cols, policy);
  }
  std::map<GridPos, std::size_t> map_of;
  for (std::size_t m = 0; m < layout.maps.size(); ++m)
    for (const auto& p : layout.maps[m].positions()) map_of[p] = m;
  layout.cells.resize(layout.positions.size());
  layout.placed.assign(layout.positions.size(), 0);
  for (std::size_t n = 0; n < layout.positions.size(); ++n) {
    const std::size_t m = map_of.at(layout.positions[n]);
    if (const auto c = layout.maps[m].cell_of(layout.positions[n])) {
      layout.cells[n] = {m, c->row, c->col};
      layout.placed[n] = 1;
    }
  }
  return layout;
}

Tensor layout_feature_maps(const SlideLayout& layout, const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) != layout.positions.size())
    throw std::invalid_argument("features must be [N, D] in slide patch order");
  const std::size_t depth = features.dim(1), plane = layout.rows * layout.cols;
  Tensor out(Shape{layout.maps.size(), depth, layout.rows, layout.cols});
  for (std::size_t n = 0; n < layout.positions.size(); ++n) {
    if (!layout.placed[n]) continue;
    const auto& c = layout.cells[n];
    const std::size_t base = c.map * depth * plane + c.row * layout.cols + c.col;
    for (std::size_t d = 0; d < depth; ++d) out[base + d * plane] = features[n * depth + d];
  }
  return out;
}

void write_feature_cache(const std::filesystem::path& dir, const std::string& id,
                         const Tensor& features, const SlideLayout& layout) {
  std::filesystem::create_directories(dir);
  save_tensor(dir / (id + ".features.tns"), features);
  std::ofstream out(dir / (id + ".features.txt"));
  if (!out) throw std::runtime_error("cannot write feature sidecar for " + id);
  KeyValues kv{{"map_rows", std::to_string(layout.rows)},
               {"map_cols", std::to_string(layout.cols)},
               {"per_lump", layout.per_lump ? "1" : "0"},
               {"maps", std::to_string(layout.maps.size())},
               {"patches", std::to_string(layout.positions.size())}};
  write_key_values(out, kv);
  out << "# patch = grid_row grid_col label map cell_row cell_col\n";
  for (std::size_t n = 0; n < layout.positions.size(); ++n) {
    out << "patch = " << layout.positions[n].row << " " << layout.positions[n].col << " "
        << prep::label_name(layout.labels[n]) << " ";
    if (layout.placed[n])
      out << layout.cells[n].map << " " << layout.cells[n].row << " " << layout.cells[n].col << "\n";
    else
      out << "- - -\n";
  }
}

FeatureCache read_feature_cache(const std::filesystem::path& dir, const std::string& id) {
  FeatureCache cache;
  cache.features = load_tensor(dir / (id + ".features.tns"));
  std::size_t rows = 0, cols = 0, maps = 0;
  bool per_lump = true;
  std::vector<GridPos> positions;
  std::vector<PatchLabel> labels;
  std::vector<std::string> placements;
  for (const auto& [k, v] : read_key_values(dir / (id + ".features.txt"))) {
    if (k == "map_rows") rows = std::stoul(v);
    else if (k == "map_cols") cols = std::stoul(v);
    else if (k == "per_lump") per_lump = v == "1";
    else if (k == "maps") maps = std::stoul(v);
    else if (k == "patches") continue;
    else if (k == "patch") {
      std::istringstream ls(v);
      GridPos p;
      std::string label, m, r, c;
      if (!(ls >> p.row >> p.col >> label >> m >> r >> c))
        throw std::runtime_error("malformed feature sidecar line for " + id);
      positions.push_back(p);
      labels.push_back(prep::parse_label(label));
      placements.push_back(m + " " + r + " " + c);
    } else {
      throw std::runtime_error("unknown key '" + k + "' in feature sidecar for " + id);
    }
  }
  cache.layout = build_layout(positions, labels, rows, cols, per_lump, OverflowPolicy::crop);
  if (cache.layout.maps.size() != maps) throw std::runtime_error("feature sidecar map count mismatch for " + id);
  for (std::size_t n = 0; n < positions.size(); ++n) {
    const auto& c = cache.layout.cells[n];
    const std::string expect = cache.layout.placed[n]
                                   ? std::to_string(c.map) + " " + std::to_string(c.row) + " " + std::to_string(c.col)
                                   : "- - -";
    if (expect != placements[n]) throw std::runtime_error("feature sidecar placement mismatch for " + id);
  }
  if (cache.features.rank() != 2 || cache.features.dim(0) != positions.size())
    throw std::runtime_error("feature cache row count mismatch for " + id);
  return cache;
}

}  // namespace wsiseg::fmap
