#include "protoscale/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "protoscale/image.hpp"

namespace protoscale {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("'" + text + "' is not a valid number");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("'" + text + "' is not a boolean");
}

struct Field {
  std::string section, key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field real(std::string sec, std::string key, Access acc) {
  return {std::move(sec), std::move(key), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_number<double>(v); },
          [acc](const RunConfig& c) { return format_double(acc(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field count(std::string sec, std::string key, Access acc) {
  return {std::move(sec), std::move(key),
          [acc](RunConfig& c, const std::string& v) { acc(c) = parse_number<std::uint64_t>(v); },
          [acc](const RunConfig& c) { return std::to_string(acc(const_cast<RunConfig&>(c))); }};
}

template <typename Access>
Field flag(std::string sec, std::string key, Access acc) {
  return {std::move(sec), std::move(key), [acc](RunConfig& c, const std::string& v) { acc(c) = parse_bool(v); },
          [acc](const RunConfig& c) { return std::string(acc(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    // model
    f.push_back(count("model", "input_size", [](RunConfig& c) -> auto& { return c.model.encoder.input_size; }));
    f.push_back({"model", "channels",
                 [](RunConfig& c, const std::string& v) {
                   std::stringstream ss(v);
                   std::string item;
                   std::vector<std::size_t> vals;
                   while (std::getline(ss, item, ',')) vals.push_back(parse_number<std::size_t>(trim(item)));
                   if (vals.size() != 3) throw ConfigError("channels needs exactly three comma-separated values");
                   for (std::size_t k = 0; k < 3; ++k) c.model.encoder.channels[k] = vals[k];
                 },
                 [](const RunConfig& c) {
                   const auto& ch = c.model.encoder.channels;
                   return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]);
                 }});
    f.push_back(count("model", "dim", [](RunConfig& c) -> auto& { return c.model.encoder.dim; }));
    f.push_back(count("model", "heads", [](RunConfig& c) -> auto& { return c.model.encoder.heads; }));
    f.push_back(count("model", "ffn_multiplier", [](RunConfig& c) -> auto& { return c.model.encoder.ffn_multiplier; }));
    // grouping
    f.push_back(count("grouping", "semantic_prototypes", [](RunConfig& c) -> auto& { return c.model.grouping.semantic_prototypes; }));
    f.push_back(count("grouping", "auxiliary_prototypes", [](RunConfig& c) -> auto& { return c.model.grouping.auxiliary_prototypes; }));
    f.push_back(count("grouping", "instance_prototypes", [](RunConfig& c) -> auto& { return c.model.grouping.instance_prototypes; }));
    f.push_back(count("grouping", "relation_dim", [](RunConfig& c) -> auto& { return c.model.grouping.relation_dim; }));
    f.push_back(real("grouping", "semantic_temperature", [](RunConfig& c) -> auto& { return c.model.grouping.semantic_temperature; }));
    f.push_back(real("grouping", "instance_temperature", [](RunConfig& c) -> auto& { return c.model.grouping.instance_temperature; }));
    f.push_back(real("grouping", "affinity_threshold", [](RunConfig& c) -> auto& { return c.model.grouping.affinity_threshold; }));
    f.push_back(flag("grouping", "cosine_logits", [](RunConfig& c) -> auto& { return c.model.grouping.cosine_logits; }));
    f.push_back(flag("grouping", "center_features", [](RunConfig& c) -> auto& { return c.model.grouping.center_features; }));
    f.push_back(flag("grouping", "center_relation", [](RunConfig& c) -> auto& { return c.model.grouping.center_relation; }));
    // prior
    f.push_back(flag("prior", "enabled", [](RunConfig& c) -> auto& { return c.model.prior.enabled; }));
    f.push_back(real("prior", "mu", [](RunConfig& c) -> auto& { return c.model.prior.mu; }));
    f.push_back(real("prior", "sigma", [](RunConfig& c) -> auto& { return c.model.prior.sigma; }));
    // loss
    f.push_back(real("loss", "semantic", [](RunConfig& c) -> auto& { return c.loss.semantic; }));
    f.push_back(real("loss", "instance", [](RunConfig& c) -> auto& { return c.loss.instance; }));
    f.push_back(real("loss", "hierarchical", [](RunConfig& c) -> auto& { return c.loss.hierarchical; }));
    f.push_back(real("loss", "sparsity", [](RunConfig& c) -> auto& { return c.loss.sparsity; }));
    f.push_back(real("loss", "diversity", [](RunConfig& c) -> auto& { return c.loss.diversity; }));
    // augment
    f.push_back(real("augment", "crop_probability", [](RunConfig& c) -> auto& { return c.augment.crop_probability; }));
    f.push_back(real("augment", "crop_area_min", [](RunConfig& c) -> auto& { return c.augment.crop_area_min; }));
    f.push_back(real("augment", "crop_area_max", [](RunConfig& c) -> auto& { return c.augment.crop_area_max; }));
    f.push_back(real("augment", "zoom_probability", [](RunConfig& c) -> auto& { return c.augment.zoom_probability; }));
    f.push_back(real("augment", "zoom_max", [](RunConfig& c) -> auto& { return c.augment.zoom_max; }));
    f.push_back(real("augment", "flip_probability", [](RunConfig& c) -> auto& { return c.augment.flip_probability; }));
    f.push_back(real("augment", "photometric_probability", [](RunConfig& c) -> auto& { return c.augment.photometric_probability; }));
    f.push_back(real("augment", "photometric_strength", [](RunConfig& c) -> auto& { return c.augment.photometric_strength; }));
    f.push_back(count("augment", "views", [](RunConfig& c) -> auto& { return c.augment.views; }));
    f.push_back(real("augment", "blur_sigma_min", [](RunConfig& c) -> auto& { return c.augment.blur_sigma_min; }));
    f.push_back(real("augment", "blur_sigma_max", [](RunConfig& c) -> auto& { return c.augment.blur_sigma_max; }));
    f.push_back(count("augment", "mask_rects_min", [](RunConfig& c) -> auto& { return c.augment.mask_rects_min; }));
    f.push_back(count("augment", "mask_rects_max", [](RunConfig& c) -> auto& { return c.augment.mask_rects_max; }));
    f.push_back(real("augment", "mask_max_fraction", [](RunConfig& c) -> auto& { return c.augment.mask_max_fraction; }));
    f.push_back(real("augment", "jitter", [](RunConfig& c) -> auto& { return c.augment.jitter; }));
    // optimizer
    f.push_back({"optimizer", "kind",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "adam") c.optimizer.kind = OptimizerKind::Adam;
                   else if (v == "sgd") c.optimizer.kind = OptimizerKind::Sgd;
                   else throw ConfigError("optimizer kind must be adam or sgd");
                 },
                 [](const RunConfig& c) { return std::string(c.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd"); }});
    f.push_back(real("optimizer", "learning_rate", [](RunConfig& c) -> auto& { return c.optimizer.learning_rate; }));
    f.push_back(real("optimizer", "beta1", [](RunConfig& c) -> auto& { return c.optimizer.beta1; }));
    f.push_back(real("optimizer", "beta2", [](RunConfig& c) -> auto& { return c.optimizer.beta2; }));
    f.push_back(real("optimizer", "epsilon", [](RunConfig& c) -> auto& { return c.optimizer.epsilon; }));
    // train
    f.push_back(count("train", "steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    f.push_back(count("train", "batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    f.push_back(real("train", "ema_momentum", [](RunConfig& c) -> auto& { return c.train.ema_momentum; }));
    f.push_back({"train", "ema_schedule",
                 [](RunConfig& c, const std::string& v) {
                   if (v == "constant") c.train.ema_schedule = EmaSchedule::Constant;
                   else if (v == "cosine") c.train.ema_schedule = EmaSchedule::Cosine;
                   else throw ConfigError("ema_schedule must be constant or cosine");
                 },
                 [](const RunConfig& c) {
                   return std::string(c.train.ema_schedule == EmaSchedule::Constant ? "constant" : "cosine");
                 }});
    f.push_back(real("train", "lr_final_ratio", [](RunConfig& c) -> auto& { return c.train.lr_final_ratio; }));
    f.push_back(count("train", "checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));
    f.push_back(count("train", "log_every", [](RunConfig& c) -> auto& { return c.train.log_every; }));
    f.push_back(count("train", "seed", [](RunConfig& c) -> auto& { return c.train.seed; }));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

}  // namespace

void RunConfig::validate() const {
  try {
    model.validate();
    augment.validate();
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("optimizer epsilon must be positive");
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(train.ema_momentum >= 0.0 && train.ema_momentum <= 1.0)) throw ConfigError("ema_momentum must lie in [0, 1]");
  if (!(train.lr_final_ratio > 0.0 && train.lr_final_ratio <= 1.0)) throw ConfigError("lr_final_ratio must lie in (0, 1]");
  if (train.checkpoint_every == 0) throw ConfigError("checkpoint_every must be positive");
  if (train.log_every == 0) throw ConfigError("log_every must be positive");
}

std::string RunConfig::to_string() const {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(*this) + "\n";
  }
  return out;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream in(text);
  std::string line, section;
  std::map<std::string, std::size_t> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    std::string sec = section;
    if (sec.empty()) {
      const auto dot = key.find('.');
      if (dot == std::string::npos) throw ConfigError(where + "key '" + key + "' needs a section");
      sec = key.substr(0, dot);
      key = key.substr(dot + 1);
    }
    const Field* f = find_field(sec, key);
    if (!f) throw ConfigError(where + "unknown key '" + sec + "." + key + "'");
    const std::string full = sec + "." + key;
    if (seen.count(full)) throw ConfigError(where + "duplicate key '" + full + "'");
    seen[full] = lineno;
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + full + ": " + e.what());
    }
  }
  cfg.model.grouping.dim = cfg.model.encoder.dim;
  cfg.validate();
  return cfg;
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  const std::string key = trim(assignment.substr(0, eq));
  const auto dot = key.find('.');
  if (eq == std::string::npos || dot == std::string::npos) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const Field* f = find_field(key.substr(0, dot), key.substr(dot + 1));
  if (!f) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(*this, trim(assignment.substr(eq + 1)));
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
  model.grouping.dim = model.encoder.dim;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace protoscale
