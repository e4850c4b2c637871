#include "wsiseg/models.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wsiseg/ops.hpp"
#include "wsiseg/rng.hpp"
#include "wsiseg/tensor_io.hpp"

namespace wsiseg::model {

using ad::Tape;
using ad::Var;

void ArchConfig::validate() const {
  if (in_channels == 0 || feature_dim == 0) throw std::invalid_argument("arch: zero channels or feature_dim");
  if (conv_channels.empty()) throw std::invalid_argument("arch: extractor needs at least one conv block");
  if ((crop >> conv_channels.size()) == 0)
    throw std::invalid_argument("arch: crop " + std::to_string(crop) + " too small for " +
                                std::to_string(conv_channels.size()) + " pooling blocks");
  if (seg_channels.empty()) throw std::invalid_argument("arch: segmentation depth must be >= 1");
  const std::size_t step = std::size_t{1} << seg_depth();
  if (map_rows == 0 || map_cols == 0 || map_rows % step != 0 || map_cols % step != 0)
    throw std::invalid_argument("arch: map size " + std::to_string(map_rows) + "x" +
                                std::to_string(map_cols) + " not divisible by 2^depth = " +
                                std::to_string(step));
  for (auto c : conv_channels)
    if (c == 0) throw std::invalid_argument("arch: zero conv channels");
  for (auto c : seg_channels)
    if (c == 0) throw std::invalid_argument("arch: zero seg channels");
  if (seg_bottleneck == 0) throw std::invalid_argument("arch: zero bottleneck channels");
}

std::string ArchConfig::describe() const {
  std::ostringstream s;
  s << "in=" << in_channels << ";crop=" << crop << ";conv=";
  for (std::size_t i = 0; i < conv_channels.size(); ++i) s << (i ? "," : "") << conv_channels[i];
  s << ";feature=" << feature_dim << ";seg=";
  for (std::size_t i = 0; i < seg_channels.size(); ++i) s << (i ? "," : "") << seg_channels[i];
  s << ";bottleneck=" << seg_bottleneck << ";map=" << map_rows << "x" << map_cols;
  return s.str();
}

std::string ArchConfig::fingerprint() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_string(describe())));
  return buf;
}

namespace {

Tensor he_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = std * rng.normal();
  return t;
}

Conv make_conv(Rng& rng, std::size_t cin, std::size_t cout, std::size_t k) {
  return {he_normal(rng, {cout, cin, k, k}, cin * k * k), Tensor(Shape{cout})};
}

Dense make_dense(Rng& rng, std::size_t in, std::size_t out) {
  return {he_normal(rng, {in, out}, in), Tensor(Shape{out})};
}

void add_conv(NamedTensors& out, const std::string& name, Conv& c) {
  out.emplace_back(name + ".w", &c.w);
  out.emplace_back(name + ".b", &c.b);
}

Var conv_relu(Tape& tape, Conv& c, const Var& x) {
  return ad::relu(ad::conv2d(x, tape.parameter(c.w), tape.parameter(c.b), 1, c.w.dim(2) / 2));
}

}  // namespace

NamedTensors named_tensors(FeatureExtractorParams& p) {
  NamedTensors out;
  for (std::size_t i = 0; i < p.convs.size(); ++i) add_conv(out, "conv" + std::to_string(i), p.convs[i]);
  out.emplace_back("feature.w", &p.feature.w);
  out.emplace_back("feature.b", &p.feature.b);
  out.emplace_back("classifier.w", &p.classifier.w);
  out.emplace_back("classifier.b", &p.classifier.b);
  return out;
}

NamedTensors named_tensors(SegmentationParams& p) {
  NamedTensors out;
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    add_conv(out, "enc" + std::to_string(i) + ".a", p.encoder[i].first);
    add_conv(out, "enc" + std::to_string(i) + ".b", p.encoder[i].second);
  }
  add_conv(out, "bottleneck.a", p.bottleneck.first);
  add_conv(out, "bottleneck.b", p.bottleneck.second);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    add_conv(out, "dec" + std::to_string(i) + ".a", p.decoder[i].first);
    add_conv(out, "dec" + std::to_string(i) + ".b", p.decoder[i].second);
  }
  add_conv(out, "head", p.head);
  return out;
}

FeatureExtractorParams init_extractor(std::uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  Rng rng(hash_combine(seed, 0xE7));
  FeatureExtractorParams p;
  std::size_t cin = arch.in_channels;
  for (auto cout : arch.conv_channels) {
    p.convs.push_back(make_conv(rng, cin, cout, 3));
    cin = cout;
  }
  const std::size_t side = arch.crop >> arch.conv_channels.size();
  p.feature = make_dense(rng, cin * side * side, arch.feature_dim);
  p.classifier = make_dense(rng, arch.feature_dim, 2);
  return p;
}

SegmentationParams init_segmentation(std::uint64_t seed, const ArchConfig& arch) {
  arch.validate();
  Rng rng(hash_combine(seed, 0x5E6));
  SegmentationParams p;
  std::size_t cin = arch.feature_dim;
  for (auto c : arch.seg_channels) {
    p.encoder.emplace_back(make_conv(rng, cin, c, 3), make_conv(rng, c, c, 3));
    cin = c;
  }
  p.bottleneck = {make_conv(rng, cin, arch.seg_bottleneck, 3),
                  make_conv(rng, arch.seg_bottleneck, arch.seg_bottleneck, 3)};
  std::size_t below = arch.seg_bottleneck;
  p.decoder.resize(arch.seg_depth());
  for (std::size_t i = arch.seg_depth(); i-- > 0;) {
    const std::size_t c = arch.seg_channels[i];
    p.decoder[i] = {make_conv(rng, below + c, c, 3), make_conv(rng, c, c, 3)};
    below = c;
  }
  p.head = make_conv(rng, below, 2, 1);
  return p;
}

Var extractor_forward(Tape& tape, FeatureExtractorParams& p, const Var& patches,
                      ExtractorOutput mode) {
  const Shape& s = patches.shape();
  if (s.size() != 4 || p.convs.empty() || s[1] != p.convs.front().w.dim(1))
    throw ad::ShapeError("extractor_forward: unexpected patch batch shape " + shape_string(s));
  Var x = patches;
  for (auto& c : p.convs) x = ad::maxpool2d(conv_relu(tape, c, x), 2, 2);
  x = ad::flatten(x);
  if (x.dim(1) != p.feature.w.dim(0))
    throw ad::ShapeError("extractor_forward: crop size does not match the architecture");
  Var features = ad::fully_connected(x, tape.parameter(p.feature.w), tape.parameter(p.feature.b));
  if (mode == ExtractorOutput::features) return features;
  return ad::fully_connected(features, tape.parameter(p.classifier.w), tape.parameter(p.classifier.b));
}

Var segmentation_forward(Tape& tape, SegmentationParams& p, const Var& fmap) {
  const Shape& s = fmap.shape();
  if (s.size() != 3 && s.size() != 4)
    throw ad::ShapeError("segmentation_forward: expected [L,D,H,W], got " + shape_string(s));
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const std::size_t step = std::size_t{1} << p.encoder.size();
  if (h % step != 0 || w % step != 0)
    throw std::invalid_argument("segmentation_forward: map " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by 2^depth = " + std::to_string(step));
  std::vector<Var> skips;
  Var x = fmap;
  for (auto& [a, b] : p.encoder) {
    x = conv_relu(tape, b, conv_relu(tape, a, x));
    skips.push_back(x);
    x = ad::maxpool2d(x, 2, 2);
  }
  x = conv_relu(tape, p.bottleneck.second, conv_relu(tape, p.bottleneck.first, x));
  for (std::size_t i = p.decoder.size(); i-- > 0;) {
    x = ad::concat_channels(ad::nearest_upsample(x, 2), skips[i]);
    x = conv_relu(tape, p.decoder[i].second, conv_relu(tape, p.decoder[i].first, x));
  }
  return ad::conv2d(x, tape.parameter(p.head.w), tape.parameter(p.head.b), 1, 0);
}

Tensor pixels_to_tensor(const std::vector<std::vector<std::uint8_t>>& blocks, std::size_t side) {
  const std::size_t plane = side * side;
  Tensor t(Shape{blocks.size(), 3, side, side});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].size() != 3 * plane) throw std::invalid_argument("pixel block size mismatch");
    for (std::size_t i = 0; i < plane; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        t[(b * 3 + c) * plane + i] = blocks[b][3 * i + c] / 255.0;
  }
  return t;
}

void save_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const std::string& kind, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "WSISEG-CHECKPOINT 1\n";
  out << "kind = " << kind << "\n";
  out << "arch = " << arch.fingerprint() << "\n";
  out << "arch_desc = " << arch.describe() << "\n";
  for (const auto& [name, t] : tensors) out << "tensor = " << name << " " << shape_string(t->shape()) << "\n";
  out << "end\n";
  for (const auto& [name, t] : tensors) write_tensor(out, *t);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch,
                     const std::string& kind, const NamedTensors& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "WSISEG-CHECKPOINT 1") throw std::runtime_error(path.string() + ": not a checkpoint");
  std::vector<std::string> names;
  std::string file_kind, file_arch;
  while (std::getline(in, line) && line != "end") {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error(path.string() + ": malformed header line");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key == "kind") file_kind = value;
    else if (key == "arch") file_arch = value;
    else if (key == "tensor") names.push_back(value);
  }
  if (file_kind != kind)
    throw std::runtime_error(path.string() + ": checkpoint holds '" + file_kind + "', expected '" + kind + "'");
  if (file_arch != arch.fingerprint())
    throw std::runtime_error(path.string() + ": architecture fingerprint " + file_arch +
                             " does not match " + arch.fingerprint());
  if (names.size() != tensors.size()) throw std::runtime_error(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& [name, t] = tensors[i];
    if (names[i] != name + " " + shape_string(t->shape()))
      throw std::runtime_error(path.string() + ": expected tensor '" + name + "', found '" + names[i] + "'");
    Tensor loaded = read_tensor(in);
    if (loaded.shape() != t->shape()) throw std::runtime_error(path.string() + ": shape mismatch for " + name);
    std::copy(loaded.data().begin(), loaded.data().end(), t->data().begin());
  }
}

}  // namespace wsiseg::model
