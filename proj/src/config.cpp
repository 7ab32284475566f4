#include "cpnkit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace cpnkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("config: cannot format number");
  return std::string(buf, end);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) {
    throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::array<Index, 4> parse_quad(const std::string& key, const std::string& v) {
  std::array<Index, 4> out{};
  std::stringstream ss(v);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= 4) throw std::invalid_argument("config: '" + key + "' expects 4 comma-separated integers");
    out[i++] = parse_int(key, trim(item));
  }
  if (i != 4) throw std::invalid_argument("config: '" + key + "' expects 4 comma-separated integers");
  return out;
}

std::string format_quad(const std::array<Index, 4>& q) {
  return std::to_string(q[0]) + "," + std::to_string(q[1]) + "," + std::to_string(q[2]) + "," + std::to_string(q[3]);
}

using Setter = std::function<void(const std::string&, const std::string&)>;

std::map<std::string, Setter> model_setters(ModelConfig& c) {
  return {
      {"backbone_widths", [&c](auto& k, auto& v) { c.backbone_widths = parse_quad(k, v); }},
      {"blocks_per_stage", [&c](auto& k, auto& v) { c.blocks_per_stage = parse_int(k, v); }},
      {"lateral_channels", [&c](auto& k, auto& v) { c.lateral_channels = parse_int(k, v); }},
      {"num_keypoints", [&c](auto& k, auto& v) { c.num_keypoints = parse_int(k, v); }},
      {"refine_enabled", [&c](auto& k, auto& v) { c.refine_enabled = parse_bool(k, v); }},
      {"refine_blocks", [&c](auto& k, auto& v) { c.refine_blocks = parse_quad(k, v); }},
      {"refine_levels", [&c](auto& k, auto& v) { c.refine_levels = parse_int(k, v); }},
      {"crop_height", [&c](auto& k, auto& v) { c.crop_height = parse_int(k, v); }},
      {"crop_width", [&c](auto& k, auto& v) { c.crop_width = parse_int(k, v); }},
      {"output_stride", [&c](auto& k, auto& v) { c.output_stride = parse_int(k, v); }},
      {"target_sigma", [&c](auto& k, auto& v) { c.target_sigma = parse_double(k, v); }},
      {"ohkm_m", [&c](auto& k, auto& v) { c.loss.hard_keypoints = static_cast<int>(parse_int(k, v)); }},
      {"global_loss", [&c](auto&, auto& v) { c.loss.global_loss = parse_loss_kind(v); }},
      {"refine_loss", [&c](auto&, auto& v) { c.loss.refine_loss = parse_loss_kind(v); }},
  };
}

std::map<std::string, Setter> train_setters(TrainConfig& c) {
  return {
      {"learning_rate", [&c](auto& k, auto& v) { c.learning_rate = parse_double(k, v); }},
      {"lr_decay_factor", [&c](auto& k, auto& v) { c.lr_decay_factor = parse_double(k, v); }},
      {"lr_decay_interval", [&c](auto& k, auto& v) { c.lr_decay_interval = parse_int(k, v); }},
      {"weight_decay", [&c](auto& k, auto& v) { c.weight_decay = parse_double(k, v); }},
      {"batch_size", [&c](auto& k, auto& v) { c.batch_size = parse_int(k, v); }},
      {"seed", [&c](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(parse_int(k, v)); }},
      {"max_steps", [&c](auto& k, auto& v) { c.max_steps = parse_int(k, v); }},
      {"checkpoint_interval", [&c](auto& k, auto& v) { c.checkpoint_interval = parse_int(k, v); }},
      {"augment", [&c](auto& k, auto& v) { c.augment = parse_bool(k, v); }},
      {"augment_flip", [&c](auto& k, auto& v) { c.augment_flip = parse_bool(k, v); }},
      {"max_rotation_deg", [&c](auto& k, auto& v) { c.max_rotation_deg = parse_double(k, v); }},
      {"min_scale", [&c](auto& k, auto& v) { c.min_scale = parse_double(k, v); }},
      {"max_scale", [&c](auto& k, auto& v) { c.max_scale = parse_double(k, v); }},
  };
}

}  // namespace

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kNone:
      return "none";
    case LossKind::kPlain:
      return "plain";
    case LossKind::kOhkm:
      return "ohkm";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "none") return LossKind::kNone;
  if (text == "plain") return LossKind::kPlain;
  if (text == "ohkm") return LossKind::kOhkm;
  throw std::invalid_argument("config: loss kind must be none|plain|ohkm, got '" + text + "'");
}

void LossConfig::validate() const {
  if (num_keypoints < 1) throw std::invalid_argument("LossConfig: num_keypoints must be positive");
  if (hard_keypoints < 1 || hard_keypoints > num_keypoints) {
    throw std::invalid_argument("LossConfig: ohkm_m must lie in [1, " + std::to_string(num_keypoints) + "]");
  }
}

void ModelConfig::validate() const {
  for (Index w : backbone_widths) {
    if (w < 1) throw std::invalid_argument("ModelConfig: backbone widths must be positive");
  }
  if (blocks_per_stage < 1) throw std::invalid_argument("ModelConfig: blocks_per_stage must be >= 1");
  if (lateral_channels < 2 || lateral_channels % 2 != 0) {
    throw std::invalid_argument("ModelConfig: lateral_channels must be a positive even number");
  }
  if (num_keypoints != 17) throw std::invalid_argument("ModelConfig: num_keypoints must be 17 (COCO layout)");
  if (output_stride != 4) throw std::invalid_argument("ModelConfig: output_stride must be 4 (the C2 level)");
  if (crop_height <= 0 || crop_width <= 0 || crop_height % 32 != 0 || crop_width % 32 != 0) {
    throw std::invalid_argument("ModelConfig: crop " + std::to_string(crop_height) + "x" + std::to_string(crop_width) +
                                " must be positive multiples of 32");
  }
  for (std::size_t i = 0; i < 4; ++i) {
    if (refine_blocks[i] < 0) throw std::invalid_argument("ModelConfig: refine_blocks must be non-negative");
    if (i > 0 && refine_blocks[i] < refine_blocks[i - 1]) {
      throw std::invalid_argument("ModelConfig: refine_blocks must be non-decreasing from P2 to P5");
    }
  }
  if (refine_levels < 1 || refine_levels > 4) throw std::invalid_argument("ModelConfig: refine_levels must be 1..4");
  if (!(target_sigma > 0)) throw std::invalid_argument("ModelConfig: target_sigma must be positive");
  loss.validate();
  if (refine_enabled && loss.refine_loss == LossKind::kNone) {
    throw std::invalid_argument("ModelConfig: refine_loss cannot be none while RefineNet is enabled");
  }
  if (!refine_enabled && loss.global_loss == LossKind::kNone) {
    throw std::invalid_argument("ModelConfig: a GlobalNet-only model needs a global loss");
  }
  if (loss.num_keypoints != num_keypoints) throw std::invalid_argument("ModelConfig: loss keypoint count mismatch");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !(lr_decay_factor > 0) || lr_decay_interval <= 0 || weight_decay < 0 ||
      batch_size <= 0 || max_steps < 0 || checkpoint_interval < 0) {
    throw std::invalid_argument("TrainConfig: rates, intervals and sizes must be positive");
  }
  if (!(max_rotation_deg >= 0 && max_rotation_deg <= 45)) {
    throw std::invalid_argument("TrainConfig: max_rotation_deg must lie in [0, 45]");
  }
  if (!(min_scale >= 0.7 && max_scale <= 1.35 && min_scale <= max_scale)) {
    throw std::invalid_argument("TrainConfig: scale range must lie within [0.7, 1.35]");
  }
}

double TrainConfig::learning_rate_at(std::int64_t step) const {
  double lr = learning_rate;
  for (std::int64_t k = step / lr_decay_interval; k > 0; --k) lr /= lr_decay_factor;
  return lr;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(number) + ": empty key");
    if (out.count(key)) throw std::invalid_argument("config: duplicate key '" + key + "'");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  auto setters = model_setters(c);
  for (const auto& [k, v] : parse_key_values(text)) {
    auto it = setters.find(k);
    if (it == setters.end()) throw std::invalid_argument("config: unknown key '" + k + "'");
    it->second(k, v);
  }
  c.validate();
  return c;
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig c;
  auto model = model_setters(c.model);
  auto train = train_setters(c.train);
  for (const auto& [k, v] : parse_key_values(text)) {
    if (auto it = model.find(k); it != model.end()) {
      it->second(k, v);
    } else if (auto jt = train.find(k); jt != train.end()) {
      jt->second(k, v);
    } else {
      throw std::invalid_argument("config: unknown key '" + k + "'");
    }
  }
  c.model.validate();
  c.train.validate();
  return c;
}

std::string to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "backbone_widths = " << format_quad(c.backbone_widths) << "\n"
     << "blocks_per_stage = " << c.blocks_per_stage << "\n"
     << "lateral_channels = " << c.lateral_channels << "\n"
     << "num_keypoints = " << c.num_keypoints << "\n"
     << "refine_enabled = " << (c.refine_enabled ? "true" : "false") << "\n"
     << "refine_blocks = " << format_quad(c.refine_blocks) << "\n"
     << "refine_levels = " << c.refine_levels << "\n"
     << "crop_height = " << c.crop_height << "\n"
     << "crop_width = " << c.crop_width << "\n"
     << "output_stride = " << c.output_stride << "\n"
     << "target_sigma = " << format_double(c.target_sigma) << "\n"
     << "ohkm_m = " << c.loss.hard_keypoints << "\n"
     << "global_loss = " << to_string(c.loss.global_loss) << "\n"
     << "refine_loss = " << to_string(c.loss.refine_loss) << "\n";
  return os.str();
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "learning_rate = " << format_double(c.learning_rate) << "\n"
     << "lr_decay_factor = " << format_double(c.lr_decay_factor) << "\n"
     << "lr_decay_interval = " << c.lr_decay_interval << "\n"
     << "weight_decay = " << format_double(c.weight_decay) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "seed = " << c.seed << "\n"
     << "max_steps = " << c.max_steps << "\n"
     << "checkpoint_interval = " << c.checkpoint_interval << "\n"
     << "augment = " << (c.augment ? "true" : "false") << "\n"
     << "augment_flip = " << (c.augment_flip ? "true" : "false") << "\n"
     << "max_rotation_deg = " << format_double(c.max_rotation_deg) << "\n"
     << "min_scale = " << format_double(c.min_scale) << "\n"
     << "max_scale = " << format_double(c.max_scale) << "\n";
  return os.str();
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

}  // namespace cpnkit
