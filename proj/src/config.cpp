#include "strnet/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace strnet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw Error("config: invalid value '" + value + "' for key '" + key + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) bad_value(key, v);
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename M>
Field size_field(const char* key, M RunConfig::*member) {
  return {key,
          [=](RunConfig& c, const std::string& v) { c.*member = static_cast<M>(parse_u64(key, v)); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field int_field(const char* key, int RunConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.*member = parse_int(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field real_field(const char* key, double RunConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.*member = parse_double(key, v); },
          [=](const RunConfig& c) { return format_number(c.*member); }};
}

Field bool_field(const char* key, bool RunConfig::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); },
          [=](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      size_field("A", &RunConfig::A),
      size_field("T", &RunConfig::T),
      {"strides", [](RunConfig& c, const std::string& v) { c.strides = parse_list("strides", v); },
       [](const RunConfig& c) {
         std::string s;
         for (std::size_t i = 0; i < c.strides.size(); ++i)
           s += (i ? "," : "") + std::to_string(c.strides[i]);
         return s;
       }},
      real_field("temperature", &RunConfig::temperature),
      real_field("aggregation_epsilon", &RunConfig::aggregation_epsilon),
      size_field("spatial_layers", &RunConfig::spatial_layers),
      bool_field("magnitude_max", &RunConfig::magnitude_max),
      real_field("rho", &RunConfig::rho),
      size_field("num_scales", &RunConfig::num_scales),
      size_field("gn_groups", &RunConfig::gn_groups),
      {"cosine_mode",
       [](RunConfig& c, const std::string& v) {
         if (v != "channel" && v != "frame") bad_value("cosine_mode", v);
         c.cosine_mode = v;
       },
       [](const RunConfig& c) { return c.cosine_mode; }},
      size_field("fusion_channels", &RunConfig::fusion_channels),
      size_field("encoder_channels", &RunConfig::encoder_channels),
      size_field("head_hidden", &RunConfig::head_hidden),
      size_field("distance_hidden", &RunConfig::distance_hidden),
      size_field("action_horizon", &RunConfig::action_horizon),
      size_field("action_dims", &RunConfig::action_dims),
      size_field("diffusion_steps", &RunConfig::diffusion_steps),
      real_field("beta_start", &RunConfig::beta_start),
      real_field("beta_end", &RunConfig::beta_end),
      real_field("alpha", &RunConfig::alpha),
      real_field("learning_rate", &RunConfig::learning_rate),
      real_field("min_learning_rate", &RunConfig::min_learning_rate),
      size_field("batch_size", &RunConfig::batch_size),
      size_field("epochs", &RunConfig::epochs),
      size_field("seed", &RunConfig::seed),
      int_field("world_size", &RunConfig::world_size),
      real_field("obstacle_density", &RunConfig::obstacle_density),
      int_field("observation_window", &RunConfig::observation_window),
      size_field("train_episodes", &RunConfig::train_episodes),
      size_field("data_seed", &RunConfig::data_seed),
      int_field("goal_min_distance", &RunConfig::goal_min_distance),
      int_field("goal_max_distance", &RunConfig::goal_max_distance),
      int_field("goal_max_offset", &RunConfig::goal_max_offset),
      size_field("eval_episodes", &RunConfig::eval_episodes),
      size_field("eval_seed", &RunConfig::eval_seed),
      int_field("max_steps", &RunConfig::max_steps),
      int_field("goal_noise_radius", &RunConfig::goal_noise_radius),
      size_field("embed_episodes", &RunConfig::embed_episodes),
      size_field("embed_seed", &RunConfig::embed_seed),
      bool_field("disable_spatial", &RunConfig::disable_spatial),
      bool_field("disable_temporal", &RunConfig::disable_temporal),
      bool_field("pooling_baseline", &RunConfig::pooling_baseline),
  };
  return table;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (ec != std::errc()) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }
  return std::string(buf, p);
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  if (action_dims != 2) throw Error("config: action_dims must be 2 (planar displacements)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("config: alpha must lie in [0, 1]");
  if (!(learning_rate > 0)) throw Error("config: learning_rate must be positive");
  if (min_learning_rate < 0 || min_learning_rate > learning_rate)
    throw Error("config: min_learning_rate must lie in [0, learning_rate]");
  if (batch_size == 0) throw Error("config: batch_size must be positive");
  if (train_episodes == 0) throw Error("config: train_episodes must be positive");
  if (eval_episodes == 0) throw Error("config: eval_episodes must be positive");
  if (max_steps < 1) throw Error("config: max_steps must be positive");
  if (goal_noise_radius < 0) throw Error("config: goal_noise_radius must be non-negative");
  if (observation_window < 1 || observation_window % 2 == 0)
    throw Error("config: observation_window must be odd");
  if (static_cast<std::size_t>(observation_window) > 2 * A)
    throw Error("config: observation_window must not exceed the encoder input 2A");
  world().validate();
  (void)model();
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.extent = A;
  m.frames = T;
  m.encoder.channels = encoder_channels;
  m.spatial.strides = strides;
  m.spatial.temperature = temperature;
  m.spatial.epsilon = aggregation_epsilon;
  m.spatial.num_layers = spatial_layers;
  m.spatial.max_mode = magnitude_max ? ops::MaxMode::magnitude : ops::MaxMode::signed_max;
  m.temporal.shift.rho = rho;
  m.temporal.multires.num_scales = num_scales;
  m.temporal.gn_groups = gn_groups;
  m.temporal.out_channels = fusion_channels;
  m.temporal.cosine_mode =
      cosine_mode == "frame" ? temporal::CosineMode::frame : temporal::CosineMode::channel;
  m.head.horizon = action_horizon;
  m.head.action_dims = action_dims;
  m.head.hidden = head_hidden;
  m.head.distance_hidden = distance_hidden;
  m.diffusion_steps = diffusion_steps;
  m.beta_start = beta_start;
  m.beta_end = beta_end;
  m.disable_spatial = disable_spatial;
  m.disable_temporal = disable_temporal || pooling_baseline;
  m.finalize();
  return m;
}

nav::WorldConfig RunConfig::world() const {
  nav::WorldConfig w;
  w.size = world_size;
  w.obstacle_density = obstacle_density;
  w.goal_min_distance = goal_min_distance;
  w.goal_max_distance = goal_max_distance;
  w.goal_max_offset = goal_max_offset;
  return w;
}

nav::RenderConfig RunConfig::render() const {
  nav::RenderConfig r;
  r.window = observation_window;
  return r;
}

nav::RolloutConfig RunConfig::rollout() const {
  nav::RolloutConfig r;
  r.max_steps = max_steps;
  r.render = render();
  r.goal_noise_radius = goal_noise_radius;
  return r;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (f.key == key) field = &f;
    if (!field) throw Error("config: unknown key '" + key + "' on line " + std::to_string(lineno));
    if (!seen.insert(key).second) throw Error("config: duplicate key '" + key + "'");
    field->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace strnet
