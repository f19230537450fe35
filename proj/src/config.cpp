#include "cmtm/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace cmtm {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return d;
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an integer");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as an unsigned integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

ShapeKind parse_shape(const std::string& key, const std::string& v) {
  if (v == "disk") return ShapeKind::disk;
  if (v == "rectangle") return ShapeKind::rectangle;
  throw ConfigError("key '" + key + "': expected disk/rectangle, got '" + v + "'");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  scene.validate();
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (train_sequences < 1) throw ConfigError("need at least one training sequence");
  if (holdout_sequences < 0) throw ConfigError("holdout_sequences must be nonnegative");
  if (tol_px < 0) throw ConfigError("tol_px must be nonnegative");
  if (scene.height % 8 != 0 || scene.width % 8 != 0) {
    throw ConfigError("scene size must be divisible by 8 for the encoder");
  }
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  os << "seed=" << cfg.seed << "\n";
  os << "model.c1=" << cfg.model.c1 << "\n";
  os << "model.c2=" << cfg.model.c2 << "\n";
  os << "model.c3=" << cfg.model.c3 << "\n";
  os << "model.decoder_channels=" << cfg.model.decoder_channels << "\n";
  os << "cmtm.blocks=" << cfg.model.cmtm.blocks << "\n";
  os << "cmtm.heads=" << cfg.model.cmtm.heads << "\n";
  os << "cmtm.mask_ratio=" << fmt_double(cfg.model.cmtm.mask_ratio) << "\n";
  os << "cmtm.apply_to_app=" << fmt_bool(cfg.model.cmtm.apply_to_app) << "\n";
  os << "cmtm.apply_to_mo=" << fmt_bool(cfg.model.cmtm.apply_to_mo) << "\n";
  os << "cmtm.use_positional=" << fmt_bool(cfg.model.cmtm.use_positional) << "\n";
  os << "cmtm.use_modality=" << fmt_bool(cfg.model.cmtm.use_modality) << "\n";
  os << "optim.lr=" << fmt_double(cfg.lr) << "\n";
  os << "optim.steps=" << cfg.steps << "\n";
  os << "optim.batch=" << cfg.batch << "\n";
  os << "data.height=" << cfg.scene.height << "\n";
  os << "data.width=" << cfg.scene.width << "\n";
  os << "data.shape=" << (cfg.scene.kind == ShapeKind::disk ? "disk" : "rectangle") << "\n";
  os << "data.shape_vx=" << fmt_double(cfg.scene.shape_vx) << "\n";
  os << "data.shape_vy=" << fmt_double(cfg.scene.shape_vy) << "\n";
  os << "data.bg_vx=" << fmt_double(cfg.scene.bg_vx) << "\n";
  os << "data.bg_vy=" << fmt_double(cfg.scene.bg_vy) << "\n";
  os << "data.shape_size=" << fmt_double(cfg.scene.shape_size) << "\n";
  os << "data.frames=" << cfg.scene.frames << "\n";
  os << "data.distractor=" << fmt_bool(cfg.scene.distractor) << "\n";
  os << "data.texture_seed=" << cfg.scene.texture_seed << "\n";
  os << "data.flow_max_mag=" << fmt_double(cfg.scene.flow_max_mag) << "\n";
  os << "data.train_sequences=" << cfg.train_sequences << "\n";
  os << "data.holdout_sequences=" << cfg.holdout_sequences << "\n";
  os << "eval.tol_px=" << cfg.tol_px << "\n";
  return os.str();
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" + line +
                        "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);

    if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "model.c1") cfg.model.c1 = parse_int(key, value);
    else if (key == "model.c2") cfg.model.c2 = parse_int(key, value);
    else if (key == "model.c3") { cfg.model.c3 = parse_int(key, value); cfg.model.cmtm.channels = cfg.model.c3; }
    else if (key == "model.decoder_channels") cfg.model.decoder_channels = parse_int(key, value);
    else if (key == "cmtm.blocks") cfg.model.cmtm.blocks = parse_int(key, value);
    else if (key == "cmtm.heads") cfg.model.cmtm.heads = parse_int(key, value);
    else if (key == "cmtm.mask_ratio") cfg.model.cmtm.mask_ratio = parse_double(key, value);
    else if (key == "cmtm.apply_to_app") cfg.model.cmtm.apply_to_app = parse_bool(key, value);
    else if (key == "cmtm.apply_to_mo") cfg.model.cmtm.apply_to_mo = parse_bool(key, value);
    else if (key == "cmtm.use_positional") cfg.model.cmtm.use_positional = parse_bool(key, value);
    else if (key == "cmtm.use_modality") cfg.model.cmtm.use_modality = parse_bool(key, value);
    else if (key == "optim.lr") cfg.lr = parse_double(key, value);
    else if (key == "optim.steps") cfg.steps = parse_int(key, value);
    else if (key == "optim.batch") cfg.batch = parse_int(key, value);
    else if (key == "data.height") cfg.scene.height = parse_int(key, value);
    else if (key == "data.width") cfg.scene.width = parse_int(key, value);
    else if (key == "data.shape") cfg.scene.kind = parse_shape(key, value);
    else if (key == "data.shape_vx") cfg.scene.shape_vx = parse_double(key, value);
    else if (key == "data.shape_vy") cfg.scene.shape_vy = parse_double(key, value);
    else if (key == "data.bg_vx") cfg.scene.bg_vx = parse_double(key, value);
    else if (key == "data.bg_vy") cfg.scene.bg_vy = parse_double(key, value);
    else if (key == "data.shape_size") cfg.scene.shape_size = parse_double(key, value);
    else if (key == "data.frames") cfg.scene.frames = parse_int(key, value);
    else if (key == "data.distractor") cfg.scene.distractor = parse_bool(key, value);
    else if (key == "data.texture_seed") cfg.scene.texture_seed = parse_u64(key, value);
    else if (key == "data.flow_max_mag") cfg.scene.flow_max_mag = parse_double(key, value);
    else if (key == "data.train_sequences") cfg.train_sequences = parse_int(key, value);
    else if (key == "data.holdout_sequences") cfg.holdout_sequences = parse_int(key, value);
    else if (key == "eval.tol_px") cfg.tol_px = static_cast<int>(parse_int(key, value));
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }
  return cfg;
}

bool RunConfig::operator==(const RunConfig& other) const {
  return serialize_config(*this) == serialize_config(other);
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::io, "cannot open config '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str());
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoError::Kind::io, "cannot write config '" + path + "'");
  out << serialize_config(cfg);
}

}  // namespace cmtm
