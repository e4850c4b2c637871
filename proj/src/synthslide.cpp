#include "wsiseg/synthslide.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "wsiseg/kvfile.hpp"
#include "wsiseg/rng.hpp"

namespace wsiseg::synth {
namespace {

struct Ellipse {
  double cx, cy, a, b, cos_t, sin_t;

  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * cos_t + dy * sin_t) / a;
    const double v = (-dx * sin_t + dy * cos_t) / b;
    return u * u + v * v <= 1.0;
  }
};

Ellipse random_ellipse(Rng& rng, double cx, double cy, double amin, double amax) {
  const double theta = rng.uniform(0.0, std::numbers::pi);
  return {cx, cy, rng.uniform(amin, amax), rng.uniform(amin, amax), std::cos(theta),
          std::sin(theta)};
}

// Calls fn(x, y) for every pixel inside the ellipse and the image.
template <typename Fn>
void for_each_inside(const Ellipse& e, std::size_t w, std::size_t h, Fn fn) {
  const double r = std::max(e.a, e.b);
  const auto x0 = static_cast<long long>(std::floor(std::max(0.0, e.cx - r)));
  const auto y0 = static_cast<long long>(std::floor(std::max(0.0, e.cy - r)));
  const auto x1 = static_cast<long long>(std::ceil(std::min<double>(w - 1, e.cx + r)));
  const auto y1 = static_cast<long long>(std::ceil(std::min<double>(h - 1, e.cy + r)));
  for (long long y = y0; y <= y1; ++y)
    for (long long x = x0; x <= x1; ++x)
      if (e.contains(x + 0.5, y + 0.5)) fn(static_cast<std::size_t>(x), static_cast<std::size_t>(y));
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

constexpr int kNoLump = -1;

}  // namespace

void validate(const SlideGenConfig& cfg) {
  if (cfg.width == 0 || cfg.height == 0) throw std::invalid_argument("slide extents must be positive");
  if (cfg.max_lumps == 0) throw std::invalid_argument("max_lumps must be at least 1");
  if (cfg.patch_size == 0) throw std::invalid_argument("patch_size must be positive");
  if (cfg.width < 4 * cfg.patch_size || cfg.height < 4 * cfg.patch_size)
    throw std::invalid_argument("slide extents must cover at least 4 patches per axis");
  if (cfg.tumor_fraction < 0.0 || cfg.tumor_fraction > 1.0)
    throw std::invalid_argument("tumor_fraction must lie in [0,1]");
  if (cfg.rim_fraction < 0.0) throw std::invalid_argument("rim_fraction must be non-negative");
}

GeneratedSlide generate_slide(std::uint64_t seed, const SlideGenConfig& cfg, std::string id) {
  validate(cfg);
  Rng rng(seed);
  const std::size_t w = cfg.width, h = cfg.height, npix = w * h;
  const double side = static_cast<double>(std::min(w, h));

  const std::size_t n_lumps = 1 + rng.below(cfg.max_lumps);
  const double scale = 0.44 * side / std::sqrt(static_cast<double>(n_lumps));

  std::vector<int> lump(npix, kNoLump);
  std::vector<std::array<double, 2>> lump_centers;
  for (std::size_t l = 0; l < n_lumps; ++l) {
    const double cx = rng.uniform(scale, w - scale);
    const double cy = rng.uniform(scale, h - scale);
    lump_centers.push_back({cx, cy});
    const std::size_t parts = 2 + rng.below(2);
    for (std::size_t p = 0; p < parts; ++p) {
      const double ox = rng.uniform(-0.4, 0.4) * scale;
      const double oy = rng.uniform(-0.4, 0.4) * scale;
      const Ellipse e = random_ellipse(rng, cx + ox, cy + oy, 0.55 * scale, 0.9 * scale);
      for_each_inside(e, w, h, [&](std::size_t x, std::size_t y) {
        int& v = lump[y * w + x];
        if (v == kNoLump) v = static_cast<int>(l);
      });
    }
  }

  // One 3x3 dilation pass smooths the ellipse unions.
  {
    std::vector<int> grown = lump;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (lump[y * w + x] != kNoLump) continue;
        for (int dy = -1; dy <= 1 && grown[y * w + x] == kNoLump; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long long nx = static_cast<long long>(x) + dx;
            const long long ny = static_cast<long long>(y) + dy;
            if (nx < 0 || ny < 0 || nx >= static_cast<long long>(w) || ny >= static_cast<long long>(h))
              continue;
            const int v = lump[ny * w + nx];
            if (v != kNoLump) {
              grown[y * w + x] = v;
              break;
            }
          }
        }
      }
    }
    lump.swap(grown);
  }

  AnnotationMask mask{w, h, std::vector<PixelClass>(npix, PixelClass::background)};
  for (std::size_t i = 0; i < npix; ++i)
    if (lump[i] != kNoLump) mask.classes[i] = PixelClass::normal;

  for (std::size_t l = 0; l < n_lumps; ++l) {
    const bool has_tumor = rng.bernoulli(cfg.tumor_fraction);
    const double fx = lump_centers[l][0] + rng.uniform(-0.35, 0.35) * scale;
    const double fy = lump_centers[l][1] + rng.uniform(-0.35, 0.35) * scale;
    const Ellipse focus = random_ellipse(rng, fx, fy, 0.2 * scale, 0.5 * scale);
    if (!has_tumor) continue;
    for_each_inside(focus, w, h, [&](std::size_t x, std::size_t y) {
      const std::size_t i = y * w + x;
      if (lump[i] == static_cast<int>(l)) mask.classes[i] = PixelClass::tumor;
    });
  }

  // Texture is decided before the rim is carved out of the annotation.
  std::vector<bool> tumor_texture(npix);
  for (std::size_t i = 0; i < npix; ++i) tumor_texture[i] = mask.classes[i] == PixelClass::tumor;

  const double rim = cfg.rim_fraction * scale;
  if (rim > 0.0) {
    // Chessboard distance to the nearest background pixel; outside the
    // image counts as background.
    const std::size_t inf = w + h;
    std::vector<std::size_t> dist(npix);
    for (std::size_t i = 0; i < npix; ++i) dist[i] = lump[i] == kNoLump ? 0 : inf;
    auto at = [&](long long x, long long y) -> std::size_t {
      if (x < 0 || y < 0 || x >= static_cast<long long>(w) || y >= static_cast<long long>(h)) return 0;
      return dist[y * w + x];
    };
    for (long long y = 0; y < static_cast<long long>(h); ++y)
      for (long long x = 0; x < static_cast<long long>(w); ++x) {
        std::size_t& d = dist[y * w + x];
        if (d == 0) continue;
        d = std::min({d, at(x - 1, y) + 1, at(x - 1, y - 1) + 1, at(x, y - 1) + 1, at(x + 1, y - 1) + 1});
      }
    for (long long y = static_cast<long long>(h) - 1; y >= 0; --y)
      for (long long x = static_cast<long long>(w) - 1; x >= 0; --x) {
        std::size_t& d = dist[y * w + x];
        if (d == 0) continue;
        d = std::min({d, at(x + 1, y) + 1, at(x + 1, y + 1) + 1, at(x, y + 1) + 1, at(x - 1, y + 1) + 1});
      }
    for (std::size_t i = 0; i < npix; ++i)
      if (lump[i] != kNoLump && static_cast<double>(dist[i]) <= rim)
        mask.classes[i] = PixelClass::unannotated;
  }

  std::vector<std::array<double, 3>> lump_tint(n_lumps);
  for (auto& t : lump_tint)
    for (auto& c : t) c = 3.0 * rng.normal();

  constexpr std::array<double, 3> normal_base{225.0, 150.0, 200.0};
  constexpr std::array<double, 3> tumor_base{150.0, 80.0, 190.0};
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      std::uint8_t* px = img.pixel(x, y);
      if (lump[i] == kNoLump) {
        for (int c = 0; c < 3; ++c) px[c] = clamp_byte(255.0 - std::abs(3.0 * rng.normal()));
        continue;
      }
      const bool tumor = tumor_texture[i];
      const auto& base = tumor ? tumor_base : normal_base;
      const double amp = tumor ? cfg.tumor_checker : cfg.normal_checker;
      const double checker = (((x >> 1) + (y >> 1)) & 1) ? amp : -amp;
      const auto& tint = lump_tint[lump[i]];
      for (int c = 0; c < 3; ++c) px[c] = clamp_byte(base[c] + tint[c] + checker + 6.0 * rng.normal());
    }
  }
  return {SlideImage{std::move(id), std::move(img)}, std::move(mask)};
}

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<std::string> DatasetManifest::ids(Split s) const {
  std::vector<std::string> out;
  for (const auto& e : slides)
    if (e.split == s) out.push_back(e.id);
  return out;
}

std::string slide_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "slide_%03zu", index);
  return buf;
}

std::uint64_t slide_seed(std::uint64_t dataset_seed, std::size_t index) {
  return hash_combine(dataset_seed, index);
}

DatasetManifest plan_dataset(std::uint64_t seed, std::size_t n_slides, const SlideGenConfig& cfg) {
  if (n_slides < 5) throw std::invalid_argument("a dataset needs at least 5 slides");
  validate(cfg);
  const std::size_t n_train = n_slides * 64 / 100;
  const std::size_t n_test = n_slides * 20 / 100;
  std::vector<std::size_t> order(n_slides);
  for (std::size_t i = 0; i < n_slides; ++i) order[i] = i;
  Rng rng(hash_combine(seed, 0x5B11));
  for (std::size_t i = n_slides - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  DatasetManifest m;
  m.seed = seed;
  m.config = cfg;
  m.slides.resize(n_slides);
  for (std::size_t i = 0; i < n_slides; ++i) m.slides[i].id = slide_id(i);
  for (std::size_t k = 0; k < n_slides; ++k) {
    Split s = Split::val;
    if (k < n_train) s = Split::train;
    else if (k < n_train + n_test) s = Split::test;
    m.slides[order[k]].split = s;
  }
  return m;
}

GrayImage mask_to_pgm(const AnnotationMask& mask) {
  GrayImage g(mask.width, mask.height);
  for (std::size_t i = 0; i < mask.classes.size(); ++i)
    g.values[i] = static_cast<std::uint8_t>(mask.classes[i]);
  return g;
}

AnnotationMask mask_from_pgm(const GrayImage& img) {
  AnnotationMask m{img.width, img.height, std::vector<PixelClass>(img.values.size())};
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    switch (img.values[i]) {
      case 0: m.classes[i] = PixelClass::background; break;
      case 64: m.classes[i] = PixelClass::tumor; break;
      case 128: m.classes[i] = PixelClass::unannotated; break;
      case 255: m.classes[i] = PixelClass::normal; break;
      default: throw std::runtime_error("mask contains unknown class code " + std::to_string(img.values[i]));
    }
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto& c = m.config;
  KeyValues kv{
      {"seed", std::to_string(m.seed)},
      {"n_slides", std::to_string(m.slides.size())},
      {"synth.width", std::to_string(c.width)},
      {"synth.height", std::to_string(c.height)},
      {"synth.patch_size", std::to_string(c.patch_size)},
      {"synth.max_lumps", std::to_string(c.max_lumps)},
      {"synth.tumor_fraction", format_double(c.tumor_fraction)},
      {"synth.rim_fraction", format_double(c.rim_fraction)},
      {"synth.tumor_checker", format_double(c.tumor_checker)},
      {"synth.normal_checker", format_double(c.normal_checker)},
  };
  for (const auto& e : m.slides) kv.emplace_back("slide." + e.id, split_name(e.split));
  write_key_values(out, kv);
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw std::runtime_error("manifest: bad value for " + key + ": '" + v + "'");
  return out;
}

}  // namespace

DatasetManifest read_manifest(const std::filesystem::path& path) {
  DatasetManifest m;
  for (const auto& [k, v] : read_key_values(path)) {
    auto& c = m.config;
    if (k == "seed") m.seed = parse_number<std::uint64_t>(k, v);
    else if (k == "n_slides") continue;
    else if (k == "synth.width") c.width = parse_number<std::size_t>(k, v);
    else if (k == "synth.height") c.height = parse_number<std::size_t>(k, v);
    else if (k == "synth.patch_size") c.patch_size = parse_number<std::size_t>(k, v);
    else if (k == "synth.max_lumps") c.max_lumps = parse_number<std::size_t>(k, v);
    else if (k == "synth.tumor_fraction") c.tumor_fraction = parse_number<double>(k, v);
    else if (k == "synth.rim_fraction") c.rim_fraction = parse_number<double>(k, v);
    else if (k == "synth.tumor_checker") c.tumor_checker = parse_number<double>(k, v);
    else if (k == "synth.normal_checker") c.normal_checker = parse_number<double>(k, v);
    else if (k.rfind("slide.", 0) == 0) m.slides.push_back({k.substr(6), parse_split(v)});
    else throw std::runtime_error("manifest: unknown key '" + k + "'");
  }
  return m;
}

DatasetManifest generate_dataset(std::uint64_t seed, std::size_t n_slides,
                                 const SlideGenConfig& cfg, const std::filesystem::path& dir) {
  DatasetManifest m = plan_dataset(seed, n_slides, cfg);
  std::filesystem::create_directories(dir / "slides");
  for (std::size_t i = 0; i < n_slides; ++i) {
    const auto g = generate_slide(slide_seed(seed, i), cfg, m.slides[i].id);
    write_ppm(dir / "slides" / (g.slide.id + ".ppm"), g.slide.image);
    write_pgm(dir / "slides" / (g.slide.id + ".mask.pgm"), mask_to_pgm(g.mask));
  }
  write_manifest(dir / "manifest.txt", m);
  return m;
}

}  // namespace wsiseg::synth
