#include "wsiseg/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

namespace wsiseg {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string list_string(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string bool_string(bool b) { return b ? "true" : "false"; }

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
};

#define WSISEG_SIZE(name, member)                                                        \
  Field{name, [](const RunConfig& c) { return std::to_string(c.member); },              \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_u64(k, v); }}
#define WSISEG_DOUBLE(name, member)                                                      \
  Field{name, [](const RunConfig& c) { return format_double(c.member); },               \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }}
#define WSISEG_BOOL(name, member)                                                        \
  Field{name, [](const RunConfig& c) { return bool_string(c.member); },                 \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      WSISEG_SIZE("run.seed", seed),
      Field{"run.out", [](const RunConfig& c) { return c.out.string(); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }},

      WSISEG_SIZE("synth.slides", slides),
      WSISEG_SIZE("synth.width", synth.width),
      WSISEG_SIZE("synth.height", synth.height),
      WSISEG_SIZE("synth.patch_size", synth.patch_size),
      WSISEG_SIZE("synth.max_lumps", synth.max_lumps),
      WSISEG_DOUBLE("synth.tumor_fraction", synth.tumor_fraction),
      WSISEG_DOUBLE("synth.rim_fraction", synth.rim_fraction),
      WSISEG_DOUBLE("synth.tumor_checker", synth.tumor_checker),
      WSISEG_DOUBLE("synth.normal_checker", synth.normal_checker),

      WSISEG_DOUBLE("preprocess.tissue_frac", tissue_frac),
      WSISEG_DOUBLE("preprocess.tumor_frac", label_rule.tumor_frac),
      WSISEG_DOUBLE("preprocess.normal_frac", label_rule.normal_frac),

      Field{"aug.crop", [](const RunConfig& c) { return std::to_string(c.aug.crop_size); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.aug.crop_size = c.arch.crop = parse_u64(k, v);
            }},
      WSISEG_BOOL("aug.random_crop", aug.random_crop),
      WSISEG_BOOL("aug.rotate", aug.rotate),
      WSISEG_BOOL("aug.flip", aug.flip),
      WSISEG_BOOL("aug.color", aug.color),
      WSISEG_DOUBLE("aug.jitter_lo", aug.jitter_lo),
      WSISEG_DOUBLE("aug.jitter_hi", aug.jitter_hi),

      Field{"arch.conv_channels", [](const RunConfig& c) { return list_string(c.arch.conv_channels); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.arch.conv_channels = parse_list(k, v); }},
      WSISEG_SIZE("arch.feature_dim", arch.feature_dim),
      Field{"arch.seg_channels", [](const RunConfig& c) { return list_string(c.arch.seg_channels); },
            [](RunConfig& c, const std::string& k, const std::string& v) { c.arch.seg_channels = parse_list(k, v); }},
      WSISEG_SIZE("arch.seg_bottleneck", arch.seg_bottleneck),
      WSISEG_SIZE("arch.map_rows", arch.map_rows),
      WSISEG_SIZE("arch.map_cols", arch.map_cols),
      WSISEG_BOOL("arch.per_lump", per_lump),

      WSISEG_DOUBLE("train.lr_extractor", train.lr_extractor),
      WSISEG_DOUBLE("train.lr_segmentation", train.lr_segmentation),
      WSISEG_DOUBLE("train.e2e_lr_extractor", train.e2e_lr_extractor),
      WSISEG_DOUBLE("train.e2e_lr_segmentation", train.e2e_lr_segmentation),
      WSISEG_SIZE("train.extractor_epochs", train.extractor_epochs),
      WSISEG_SIZE("train.segmentation_epochs", train.segmentation_epochs),
      WSISEG_SIZE("train.e2e_epochs", train.e2e_epochs),
      WSISEG_SIZE("train.extractor_batch", train.extractor_batch),
      WSISEG_SIZE("train.segmentation_batch", train.segmentation_batch),
      WSISEG_SIZE("train.micro_batches", train.micro_batches),
      WSISEG_BOOL("train.balance_classes", train.balance_classes),
      WSISEG_BOOL("train.warm_start", train.warm_start),
      Field{"train.reduction",
            [](const RunConfig& c) { return std::string(c.train.reduction == train::LossReduction::mean ? "mean" : "sum"); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "mean") c.train.reduction = train::LossReduction::mean;
              else if (v == "sum") c.train.reduction = train::LossReduction::sum;
              else throw ConfigError(k + ": expected mean or sum, got '" + v + "'");
            }},

      Field{"eval.cell_mm", [](const RunConfig& c) { return c.lesion.cell_mm ? format_double(*c.lesion.cell_mm) : std::string("none"); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "none") c.lesion.cell_mm.reset();
              else c.lesion.cell_mm = parse_double(k, v);
            }},
      WSISEG_DOUBLE("eval.macro_mm", lesion.macro_mm),
      WSISEG_DOUBLE("eval.micro_mm", lesion.micro_mm),
      Field{"eval.measure",
            [](const RunConfig& c) { return std::string(c.lesion.measure == eval::LesionMeasure::extent ? "extent" : "area"); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "extent") c.lesion.measure = eval::LesionMeasure::extent;
              else if (v == "area") c.lesion.measure = eval::LesionMeasure::area;
              else throw ConfigError(k + ": expected extent or area, got '" + v + "'");
            }},
      Field{"eval.split", [](const RunConfig& c) { return std::string(synth::split_name(c.eval_split)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.eval_split = synth::parse_split(v); }},
      Field{"eval.model", [](const RunConfig& c) { return c.model; },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              if (v != "e2e" && v != "separate" && v != "classifier")
                throw ConfigError(k + ": expected e2e, separate or classifier, got '" + v + "'");
              c.model = v;
            }},

      WSISEG_SIZE("heatmap.scale", heatmap_scale),
      WSISEG_BOOL("heatmap.truth_panel", heatmap_truth_panel),
  };
  return table;
}

#undef WSISEG_SIZE
#undef WSISEG_DOUBLE
#undef WSISEG_BOOL

}  // namespace

train::TrainConfig RunConfig::desk_training() {
  train::TrainConfig t;
  t.extractor_epochs = 15;
  t.segmentation_epochs = 20;
  t.e2e_epochs = 10;
  t.e2e_lr_extractor = 1e-5;
  t.e2e_lr_segmentation = 1e-4;
  return t;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      try {
        f.set(*this, key, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError(key + ": " + e.what());
      }
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::apply(const KeyValues& kv) {
  for (const auto& [k, v] : kv) set(k, v);
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& f : fields()) kv.emplace_back(f.key, f.get(*this));
  return kv;
}

void RunConfig::validate() const {
  synth::validate(synth);
  if (slides == 0) throw ConfigError("synth.slides must be >= 1");
  if (aug.crop_size > synth.patch_size) throw ConfigError("aug.crop must not exceed synth.patch_size");
  if (arch.crop != aug.crop_size) throw ConfigError("arch crop and aug.crop disagree");
  arch.validate();
  train.validate();
  if (heatmap_scale == 0) throw ConfigError("heatmap.scale must be >= 1");
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  RunConfig c;
  c.apply(read_key_values(path));
  return c;
}

}  // namespace wsiseg
