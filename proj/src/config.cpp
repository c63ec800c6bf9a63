#include "xtra/config.hpp"

#include <fstream>
#include <sstream>

#include "xtra/error.hpp"

namespace xtra {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string get_str(const ConfigMap& map, const std::string& key,
                    const std::string& fallback) {
  auto it = map.find(key);
  return it == map.end() ? fallback : it->second;
}

double get_num(const ConfigMap& map, const std::string& key, double fallback) {
  auto it = map.find(key);
  if (it == map.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ContractError("config: key '" + key + "' has non-numeric value '" +
                        it->second + "'");
  }
}

std::size_t get_size(const ConfigMap& map, const std::string& key,
                     std::size_t fallback) {
  const double v = get_num(map, key, static_cast<double>(fallback));
  if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
    throw ContractError("config: key '" + key + "' must be a non-negative integer");
  }
  return static_cast<std::size_t>(v);
}

bool get_bool(const ConfigMap& map, const std::string& key, bool fallback) {
  auto it = map.find(key);
  if (it == map.end()) return fallback;
  if (it->second == "true") return true;
  if (it->second == "false") return false;
  throw ContractError("config: key '" + key + "' must be true or false");
}

}  // namespace

ConfigMap parse_flat_toml(const std::string& text) {
  ConfigMap map;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config: line " + std::to_string(lineno) +
                        " is not 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    // strip trailing comment outside quotes
    if (!value.empty() && value[0] != '"') {
      const std::size_t hash = value.find('#');
      if (hash != std::string::npos) value = trim(value.substr(0, hash));
    }
    if (key.empty() || value.empty()) {
      throw FormatError("config: line " + std::to_string(lineno) +
                        " has an empty key or value");
    }
    if (value.front() == '"') {
      if (value.size() < 2 || value.back() != '"') {
        throw FormatError("config: line " + std::to_string(lineno) +
                          " has an unterminated string");
      }
      value = value.substr(1, value.size() - 2);
    }
    map[key] = value;
  }
  return map;
}

ConfigMap load_flat_toml(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("config: cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return parse_flat_toml(text);
}

ModelConfig model_config_from(const ConfigMap& map) {
  ModelConfig d;
  ModelConfig c;
  c.image_px = get_size(map, "image_px", d.image_px);
  c.image_h = get_size(map, "image_h", d.image_h);
  c.image_w = get_size(map, "image_w", d.image_w);
  c.channels = get_size(map, "channels", d.channels);
  c.patch_px = get_size(map, "patch_px", d.patch_px);
  c.block_tokens = get_size(map, "block_tokens", d.block_tokens);
  c.pattern = parse_block_pattern(get_str(map, "pattern", "raster"));
  c.pattern_seed = static_cast<std::uint64_t>(get_num(map, "pattern_seed", 0));
  c.enc_width = get_size(map, "enc_width", d.enc_width);
  c.enc_depth = get_size(map, "enc_depth", d.enc_depth);
  c.enc_heads = get_size(map, "enc_heads", d.enc_heads);
  c.dec_width = get_size(map, "dec_width", d.dec_width);
  c.dec_depth = get_size(map, "dec_depth", d.dec_depth);
  c.dec_heads = get_size(map, "dec_heads", d.dec_heads);
  c.mlp_ratio = get_num(map, "mlp_ratio", d.mlp_ratio);
  c.drop_path_rate = get_num(map, "drop_path_rate", d.drop_path_rate);
  c.num_predicted_blocks = get_size(map, "num_predicted_blocks", d.num_predicted_blocks);
  c.head_hidden = get_size(map, "head_hidden", d.head_hidden);
  return c;
}

TrainConfig train_config_from(const ConfigMap& map) {
  TrainConfig d;
  TrainConfig c;
  c.peak_lr = get_num(map, "peak_lr", d.peak_lr);
  c.min_lr = get_num(map, "min_lr", d.min_lr);
  c.weight_decay = get_num(map, "weight_decay", d.weight_decay);
  c.beta1 = get_num(map, "beta1", d.beta1);
  c.beta2 = get_num(map, "beta2", d.beta2);
  c.adam_eps = get_num(map, "adam_eps", d.adam_eps);
  c.batch_size = get_size(map, "batch_size", d.batch_size);
  c.warmup_epochs = get_size(map, "warmup_epochs", d.warmup_epochs);
  c.total_epochs = get_size(map, "total_epochs", d.total_epochs);
  c.grad_clip = get_num(map, "grad_clip", d.grad_clip);
  c.seed = static_cast<std::uint64_t>(get_num(map, "seed", 0));
  c.checkpoint_every = get_size(map, "checkpoint_every", d.checkpoint_every);
  c.loss = parse_loss_norm(get_str(map, "loss", "l2"));
  c.augment.enabled = get_bool(map, "augment", d.augment.enabled);
  c.augment.scale_lo = get_num(map, "augment_scale_lo", d.augment.scale_lo);
  c.augment.scale_hi = get_num(map, "augment_scale_hi", d.augment.scale_hi);
  c.augment.ratio_lo = get_num(map, "augment_ratio_lo", d.augment.ratio_lo);
  c.augment.ratio_hi = get_num(map, "augment_ratio_hi", d.augment.ratio_hi);
  c.augment.flip_p = get_num(map, "augment_flip_p", d.augment.flip_p);
  return c;
}

std::string to_toml(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream os;
  os.precision(17);
  os << "augment = " << (t.augment.enabled ? "true" : "false") << '\n';
  os << "augment_flip_p = " << t.augment.flip_p << '\n';
  os << "augment_ratio_hi = " << t.augment.ratio_hi << '\n';
  os << "augment_ratio_lo = " << t.augment.ratio_lo << '\n';
  os << "augment_scale_hi = " << t.augment.scale_hi << '\n';
  os << "augment_scale_lo = " << t.augment.scale_lo << '\n';
  os << "adam_eps = " << t.adam_eps << '\n';
  os << "batch_size = " << t.batch_size << '\n';
  os << "beta1 = " << t.beta1 << '\n';
  os << "beta2 = " << t.beta2 << '\n';
  os << "block_tokens = " << m.block_tokens << '\n';
  os << "channels = " << m.channels << '\n';
  os << "checkpoint_every = " << t.checkpoint_every << '\n';
  os << "dec_depth = " << m.dec_depth << '\n';
  os << "dec_heads = " << m.dec_heads << '\n';
  os << "dec_width = " << m.dec_width << '\n';
  os << "drop_path_rate = " << m.drop_path_rate << '\n';
  os << "enc_depth = " << m.enc_depth << '\n';
  os << "enc_heads = " << m.enc_heads << '\n';
  os << "enc_width = " << m.enc_width << '\n';
  os << "grad_clip = " << t.grad_clip << '\n';
  os << "head_hidden = " << m.head_hidden << '\n';
  os << "image_h = " << m.image_h << '\n';
  os << "image_px = " << m.image_px << '\n';
  os << "image_w = " << m.image_w << '\n';
  os << "loss = \"" << loss_norm_name(t.loss) << "\"\n";
  os << "min_lr = " << t.min_lr << '\n';
  os << "mlp_ratio = " << m.mlp_ratio << '\n';
  os << "num_predicted_blocks = " << m.num_predicted_blocks << '\n';
  os << "patch_px = " << m.patch_px << '\n';
  os << "pattern = \"" << (m.pattern == BlockPattern::kRaster ? "raster" : "random")
     << "\"\n";
  os << "pattern_seed = " << m.pattern_seed << '\n';
  os << "peak_lr = " << t.peak_lr << '\n';
  os << "seed = " << t.seed << '\n';
  os << "total_epochs = " << t.total_epochs << '\n';
  os << "warmup_epochs = " << t.warmup_epochs << '\n';
  os << "weight_decay = " << t.weight_decay << '\n';
  return os.str();
}

}  // namespace xtra
