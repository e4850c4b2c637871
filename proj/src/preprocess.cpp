#include "wsiseg/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wsiseg/rng.hpp"

namespace wsiseg::prep {
namespace {

using u128 = unsigned __int128;

struct Fraction {
  u128 num = 0;
  u128 den = 1;
};

bool greater(const Fraction& a, const Fraction& b) {
  const u128 qa = a.num / a.den, qb = b.num / b.den;
  if (qa != qb) return qa > qb;
  return (a.num % a.den) * b.den > (b.num % b.den) * a.den;
}

}  // namespace

std::uint8_t otsu_threshold(const Histogram& hist) {
  std::uint64_t total = 0, occupied = 0;
  u128 total_sum = 0;
  for (std::size_t i = 0; i < 256; ++i) {
    total += hist[i];
    total_sum += static_cast<u128>(i) * hist[i];
    occupied += hist[i] ? 1 : 0;
  }
  if (occupied < 2) throw std::invalid_argument("degenerate histogram");
  if (total > (1ULL << 28)) throw std::invalid_argument("histogram total exceeds 2^28 counts");

  // Between-class variance times total^2 is (s0*n1 - s1*n0)^2 / (n0*n1).
  Fraction best;
  std::uint8_t best_t = 0;
  bool have = false;
  std::uint64_t n0 = 0;
  u128 s0 = 0;
  for (std::size_t t = 0; t < 255; ++t) {
    n0 += hist[t];
    s0 += static_cast<u128>(t) * hist[t];
    const std::uint64_t n1 = total - n0;
    Fraction f;
    if (n0 != 0 && n1 != 0) {
      const u128 s1 = total_sum - s0;
      const u128 a = s0 * n1, b = s1 * n0;
      const u128 d = a > b ? a - b : b - a;
      f = {d * d, static_cast<u128>(n0) * n1};
    }
    if (!have || greater(f, best)) {
      best = f;
      best_t = static_cast<std::uint8_t>(t);
      have = true;
    }
  }
  return best_t;
}

std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

TissueMask tissue_mask(const RgbImage& slide) {
  const std::size_t n = slide.width * slide.height;
  std::vector<std::uint8_t> lum(n);
  Histogram hist{};
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = slide.rgb.data() + 3 * i;
    lum[i] = luminance(p[0], p[1], p[2]);
    ++hist[lum[i]];
  }
  TissueMask m;
  m.width = slide.width;
  m.height = slide.height;
  m.threshold_used = otsu_threshold(hist);
  m.tissue.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.tissue[i] = lum[i] <= m.threshold_used ? 1 : 0;
  return m;
}

const char* label_name(PatchLabel l) {
  switch (l) {
    case PatchLabel::tumor: return "tumor";
    case PatchLabel::normal: return "normal";
    case PatchLabel::nolabel: return "nolabel";
  }
  return "?";
}

PatchLabel parse_label(const std::string& s) {
  if (s == "tumor") return PatchLabel::tumor;
  if (s == "normal") return PatchLabel::normal;
  if (s == "nolabel") return PatchLabel::nolabel;
  throw std::invalid_argument("unknown patch label '" + s + "'");
}

std::vector<GridPos> extract_patches(const TissueMask& mask, std::size_t patch_size,
                                     double tissue_frac) {
  if (patch_size == 0) throw std::invalid_argument("patch_size must be positive");
  std::vector<GridPos> kept;
  const std::size_t rows = mask.height / patch_size, cols = mask.width / patch_size;
  const double area = static_cast<double>(patch_size * patch_size);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      std::size_t count = 0;
      for (std::size_t y = r * patch_size; y < (r + 1) * patch_size; ++y)
        for (std::size_t x = c * patch_size; x < (c + 1) * patch_size; ++x)
          count += mask.tissue[y * mask.width + x];
      if (static_cast<double>(count) / area > tissue_frac) kept.push_back({r, c});
    }
  }
  return kept;
}

PatchLabel label_patch(std::span<const synth::PixelClass> window, const LabelRule& rule) {
  if (window.empty()) return PatchLabel::nolabel;
  std::size_t tumor = 0, normal = 0;
  for (auto c : window) {
    tumor += c == synth::PixelClass::tumor;
    normal += c == synth::PixelClass::normal;
  }
  const double n = static_cast<double>(window.size());
  if (static_cast<double>(tumor) / n > rule.tumor_frac) return PatchLabel::tumor;
  if (static_cast<double>(normal) / n > rule.normal_frac) return PatchLabel::normal;
  return PatchLabel::nolabel;
}

std::vector<std::uint8_t> cut_patch(const RgbImage& img, GridPos pos, std::size_t patch_size) {
  if ((pos.col + 1) * patch_size > img.width || (pos.row + 1) * patch_size > img.height)
    throw std::out_of_range("patch outside slide bounds");
  std::vector<std::uint8_t> out(3 * patch_size * patch_size);
  for (std::size_t y = 0; y < patch_size; ++y) {
    const std::uint8_t* src = img.pixel(pos.col * patch_size, pos.row * patch_size + y);
    std::copy_n(src, 3 * patch_size, out.data() + 3 * y * patch_size);
  }
  return out;
}

std::vector<Patch> make_patches(const synth::SlideImage& slide, const synth::AnnotationMask& mask,
                                std::size_t patch_size, double tissue_frac,
                                const LabelRule& rule) {
  if (patch_size > slide.image.width || patch_size > slide.image.height)
    throw std::invalid_argument("patch larger than slide");
  const TissueMask tm = tissue_mask(slide.image);
  std::vector<Patch> out;
  std::vector<synth::PixelClass> window(patch_size * patch_size);
  for (GridPos pos : extract_patches(tm, patch_size, tissue_frac)) {
    for (std::size_t y = 0; y < patch_size; ++y)
      for (std::size_t x = 0; x < patch_size; ++x)
        window[y * patch_size + x] = mask.at(pos.col * patch_size + x, pos.row * patch_size + y);
    out.push_back({slide.id, pos, label_patch(window, rule), cut_patch(slide.image, pos, patch_size)});
  }
  return out;
}

AugParams sample_augmentation(std::uint64_t seed, const AugConfig& cfg, std::size_t patch_size) {
  if (cfg.crop_size > patch_size) throw std::invalid_argument("crop_size exceeds patch_size");
  Rng rng(seed);
  AugParams p;
  const std::size_t slack = patch_size - cfg.crop_size;
  if (cfg.random_crop) {
    p.crop_x = rng.below(slack + 1);
    p.crop_y = rng.below(slack + 1);
  } else {
    p.crop_x = p.crop_y = slack / 2;
  }
  if (cfg.rotate) p.quarter_turns = static_cast<int>(rng.below(4));
  if (cfg.flip) p.flip = rng.bernoulli(0.5);
  if (cfg.color) {
    p.color = true;
    for (auto& f : p.jitter) f = rng.uniform(cfg.jitter_lo, cfg.jitter_hi);
  }
  return p;
}

namespace {

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  v = mx;
  const double d = mx - mn;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d + 6.0, 6.0);
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s;
  const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
  const double m = v - c;
  double rr = 0, gg = 0, bb = 0;
  switch (static_cast<int>(h) % 6) {
    case 0: rr = c; gg = x; break;
    case 1: rr = x; gg = c; break;
    case 2: gg = c; bb = x; break;
    case 3: gg = x; bb = c; break;
    case 4: rr = x; bb = c; break;
    default: rr = c; bb = x; break;
  }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

void color_jitter(std::vector<std::uint8_t>& px, std::size_t side, const std::array<double, 4>& f) {
  const std::size_t n = side * side;
  std::vector<double> H(n), S(n), V(n);
  for (std::size_t i = 0; i < n; ++i)
    rgb_to_hsv(px[3 * i] / 255.0, px[3 * i + 1] / 255.0, px[3 * i + 2] / 255.0, H[i], S[i], V[i]);

  for (auto& s : S) s = std::clamp(s * f[0], 0.0, 1.0);

  double mean = 0.0;
  for (double v : V) mean += v;
  mean /= static_cast<double>(n);
  for (auto& v : V) v = std::clamp(mean + (v - mean) * f[1], 0.0, 1.0);

  for (auto& v : V) v = std::clamp(v * f[2], 0.0, 1.0);

  // Unsharp mask on V: strength (f - 1) against a 3x3 box blur.
  std::vector<double> blur(n);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long long yy = static_cast<long long>(y) + dy, xx = static_cast<long long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long long>(side) || xx >= static_cast<long long>(side))
            continue;
          acc += V[yy * side + xx];
          ++cnt;
        }
      blur[y * side + x] = acc / cnt;
    }
  }
  for (std::size_t i = 0; i < n; ++i) V[i] = std::clamp(V[i] + (f[3] - 1.0) * (V[i] - blur[i]), 0.0, 1.0);

  for (std::size_t i = 0; i < n; ++i) {
    double r, g, b;
    hsv_to_rgb(H[i], S[i], V[i], r, g, b);
    px[3 * i] = static_cast<std::uint8_t>(std::lround(std::clamp(r, 0.0, 1.0) * 255.0));
    px[3 * i + 1] = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0, 1.0) * 255.0));
    px[3 * i + 2] = static_cast<std::uint8_t>(std::lround(std::clamp(b, 0.0, 1.0) * 255.0));
  }
}

}  // namespace

std::vector<std::uint8_t> apply_augmentation(std::span<const std::uint8_t> pixels,
                                             std::size_t patch_size, std::size_t crop_size,
                                             const AugParams& p) {
  if (crop_size > patch_size) throw std::invalid_argument("crop_size exceeds patch_size");
  if (pixels.size() != 3 * patch_size * patch_size) throw std::invalid_argument("patch pixel count mismatch");
  if (p.crop_x + crop_size > patch_size || p.crop_y + crop_size > patch_size)
    throw std::out_of_range("crop outside patch");
  const std::size_t c = crop_size;
  std::vector<std::uint8_t> out(3 * c * c);
  const int turns = ((p.quarter_turns % 4) + 4) % 4;
  for (std::size_t y = 0; y < c; ++y) {
    for (std::size_t x = 0; x < c; ++x) {
      // Output (x, y) pulls from the crop after undoing flip, then rotation.
      std::size_t ux = p.flip ? c - 1 - x : x, uy = y;
      std::size_t sx = ux, sy = uy;
      switch (turns) {
        case 1: sx = c - 1 - uy; sy = ux; break;
        case 2: sx = c - 1 - ux; sy = c - 1 - uy; break;
        case 3: sx = uy; sy = c - 1 - ux; break;
        default: break;
      }
      const std::uint8_t* src = pixels.data() + 3 * ((p.crop_y + sy) * patch_size + p.crop_x + sx);
      std::copy_n(src, 3, out.data() + 3 * (y * c + x));
    }
  }
  if (p.color) color_jitter(out, c, p.jitter);
  return out;
}

std::vector<std::uint8_t> augment(std::span<const std::uint8_t> pixels, std::size_t patch_size,
                                  std::uint64_t seed, const AugConfig& cfg) {
  return apply_augmentation(pixels, patch_size, cfg.crop_size,
                            sample_augmentation(seed, cfg, patch_size));
}

std::vector<std::uint8_t> center_crop(std::span<const std::uint8_t> pixels, std::size_t patch_size,
                                      std::size_t crop_size) {
  if (crop_size > patch_size) throw std::invalid_argument("crop_size exceeds patch_size");
  AugParams p;
  p.crop_x = p.crop_y = (patch_size - crop_size) / 2;
  return apply_augmentation(pixels, patch_size, crop_size, p);
}

std::uint64_t patch_seed(std::uint64_t global_seed, const std::string& slide_id, GridPos pos) {
  return hash_combine(hash_combine(hash_combine(global_seed, hash_string(slide_id)), pos.row), pos.col);
}

void write_patch_store(const std::filesystem::path& dir, const std::string& slide_id,
                       std::size_t patch_size, const std::vector<Patch>& patches) {
  std::filesystem::create_directories(dir);
  std::ofstream idx(dir / (slide_id + ".patches.txt"));
  std::ofstream bin(dir / (slide_id + ".patches.bin"), std::ios::binary);
  if (!idx || !bin) throw std::runtime_error("cannot write patch store for " + slide_id);
  for (const auto& p : patches) {
    if (p.pixels.size() != 3 * patch_size * patch_size)
      throw std::invalid_argument("patch pixel count mismatch");
    idx << p.pos.row << " " << p.pos.col << " " << label_name(p.label) << "\n";
    bin.write(reinterpret_cast<const char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size()));
  }
  if (!idx || !bin) throw std::runtime_error("write failed for patch store " + slide_id);
}

std::vector<Patch> read_patch_store(const std::filesystem::path& dir, const std::string& slide_id,
                                    std::size_t patch_size) {
  std::ifstream idx(dir / (slide_id + ".patches.txt"));
  std::ifstream bin(dir / (slide_id + ".patches.bin"), std::ios::binary);
  if (!idx || !bin) throw std::runtime_error("missing patch store for " + slide_id + " in " + dir.string());
  std::vector<Patch> out;
  std::string line;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Patch p;
    std::string label;
    if (!(ls >> p.pos.row >> p.pos.col >> label))
      throw std::runtime_error("malformed patch index line: " + line);
    p.slide_id = slide_id;
    p.label = parse_label(label);
    p.pixels.resize(3 * patch_size * patch_size);
    if (!bin.read(reinterpret_cast<char*>(p.pixels.data()), static_cast<std::streamsize>(p.pixels.size())))
      throw std::runtime_error("patch blob truncated for " + slide_id);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace wsiseg::prep
