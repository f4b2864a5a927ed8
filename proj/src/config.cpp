#include "calattn/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "calattn/errors.hpp"

namespace calattn {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

#define SIZE_FIELD(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, [](RunConfig& c, const std::string& v) { c.member = parse_size(name, v); }}
#define REAL_FIELD(name, member)                                           \
  Field{name, [](const RunConfig& c) { return format_double(c.member); }, \
        [](RunConfig& c, const std::string& v) { c.member = parse_real(name, v); }}
#define BOOL_FIELD(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); }}
#define STRING_FIELD(name, member) \
  Field{name, [](const RunConfig& c) { return c.member; }, [](RunConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("model.image_h", model.image_h),
      SIZE_FIELD("model.image_w", model.image_w),
      SIZE_FIELD("model.channels", model.channels),
      SIZE_FIELD("model.patch", model.patch),
      SIZE_FIELD("model.dim", model.dim),
      SIZE_FIELD("model.depth", model.depth),
      SIZE_FIELD("model.heads", model.heads),
      SIZE_FIELD("model.mlp_ratio", model.mlp_ratio),
      SIZE_FIELD("model.classes", model.classes),
      SIZE_FIELD("model.calattn_hidden", model.calattn_hidden),
      BOOL_FIELD("model.calattn_enabled", model.calattn_enabled),
      Field{"model.calattn_input", [](const RunConfig& c) { return to_string(c.model.calattn_input); },
            [](RunConfig& c, const std::string& v) { c.model.calattn_input = head_input_from_string(v); }},
      Field{"loss.kind", [](const RunConfig& c) { return to_string(c.loss.kind); },
            [](RunConfig& c, const std::string& v) { c.loss.kind = loss_kind_from_string(v); }},
      REAL_FIELD("loss.lambda", loss.lambda),
      REAL_FIELD("loss.gamma", loss.gamma),
      BOOL_FIELD("loss.focal_schedule", loss.focal_schedule),
      REAL_FIELD("loss.alpha", loss.alpha),
      Field{"optimizer.lr_stages", [](const RunConfig& c) { return format_lr_stages(c.optimizer.lr_stages); },
            [](RunConfig& c, const std::string& v) { c.optimizer.lr_stages = parse_lr_stages(v); }},
      REAL_FIELD("optimizer.momentum", optimizer.momentum),
      REAL_FIELD("optimizer.weight_decay", optimizer.weight_decay),
      Field{"data.kind", [](const RunConfig& c) { return to_string(c.data.kind); },
            [](RunConfig& c, const std::string& v) {
              if (v == "mnist") c.data.kind = DataKind::mnist;
              else if (v == "synthetic") c.data.kind = DataKind::synthetic;
              else throw ConfigError("data.kind: unknown dataset '" + v + "'");
            }},
      STRING_FIELD("data.images", data.images),
      STRING_FIELD("data.labels", data.labels),
      SIZE_FIELD("data.train_size", data.train_size),
      SIZE_FIELD("data.test_size", data.test_size),
      REAL_FIELD("data.val_fraction", data.val_fraction),
      BOOL_FIELD("data.normalize", data.normalize),
      SIZE_FIELD("data.per_class", data.per_class),
      REAL_FIELD("data.separation", data.separation),
      SIZE_FIELD("eval.bins", eval.bins),
      REAL_FIELD("eval.hcfp_tau", eval.hcfp_tau),
      REAL_FIELD("eval.smece_bandwidth", eval.smece_bandwidth),
      BOOL_FIELD("eval.fit_nll", eval.fit_nll),
      SIZE_FIELD("train.batch_size", batch_size),
      SIZE_FIELD("train.epochs", epochs),
      Field{"train.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = parse_size("train.seed", v); }},
      STRING_FIELD("output_dir", output_dir),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

void flatten(const YAML::Node& node, const std::string& prefix, KeyValues& out) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      flatten(kv.second, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else if (node.IsScalar()) {
    if (out.count(prefix)) throw ConfigError("duplicate key " + prefix);
    out[prefix] = node.Scalar();
  } else if (node.IsNull()) {
    if (!prefix.empty()) throw ConfigError(prefix + ": missing value");
  } else {
    throw ConfigError(prefix + ": only nested mappings of scalars are supported");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

std::string to_string(DataKind kind) { return kind == DataKind::mnist ? "mnist" : "synthetic"; }

std::vector<LrStage> parse_lr_stages(const std::string& text) {
  std::vector<LrStage> stages;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("optimizer.lr_stages: expected epochs:lr, got '" + item + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    stages.push_back({parse_size("optimizer.lr_stages", trim(item.substr(0, colon))),
                      parse_real("optimizer.lr_stages", trim(item.substr(colon + 1)))});
  }
  if (stages.empty()) throw ConfigError("optimizer.lr_stages: no stages");
  return stages;
}

std::string format_lr_stages(const std::vector<LrStage>& stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ",";
    out += std::to_string(s.epochs) + ":" + format_double(s.lr);
  }
  return out;
}

double lr_at_epoch(const OptimizerConfig& optimizer, std::size_t epoch) {
  std::size_t end = 0;
  for (const auto& s : optimizer.lr_stages) {
    end += s.epochs;
    if (epoch < end) return s.lr;
  }
  return optimizer.lr_stages.back().lr;
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  std::size_t total = 0;
  for (const auto& s : optimizer.lr_stages) {
    if (!(s.lr >= 0.0)) throw ConfigError("learning rates must be non-negative");
    total += s.epochs;
  }
  if (total != epochs)
    throw ConfigError("lr stages cover " + std::to_string(total) + " epochs but train.epochs is " + std::to_string(epochs));
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(data.val_fraction > 0.0 && data.val_fraction < 1.0)) throw ConfigError("data.val_fraction must lie in (0, 1)");
  if (eval.bins == 0) throw ConfigError("eval.bins must be positive");
  if (!(eval.smece_bandwidth > 0.0)) throw ConfigError("eval.smece_bandwidth must be positive");
  if (data.kind == DataKind::synthetic && model.channels * model.image_h * model.image_w < model.classes)
    throw ConfigError("synthetic images too small for the class count");
}

KeyValues to_key_values(const RunConfig& config) {
  KeyValues out;
  for (const auto& f : fields()) out[f.key] = f.get(config);
  return out;
}

RunConfig apply_key_values(RunConfig base, const KeyValues& values) {
  for (const auto& [key, value] : values) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

KeyValues parse_config_text(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  KeyValues out;
  if (!root.IsNull() && !root.IsMap()) throw ConfigError("config root must be a mapping");
  flatten(root, "", out);
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string render_config(const RunConfig& config) {
  std::string out, section;
  for (const auto& [key, value] : to_key_values(config)) {
    const auto dot = key.find('.');
    const std::string head = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string leaf = dot == std::string::npos ? key : key.substr(dot + 1);
    if (head != section) {
      if (!head.empty()) out += head + ":\n";
      section = head;
    }
    std::string quoted;
    for (char ch : value) {
      if (ch == '"' || ch == '\\') quoted += '\\';
      quoted += ch;
    }
    out += (head.empty() ? "" : "  ") + leaf + ": \"" + quoted + "\"\n";
  }
  return out;
}

}  // namespace calattn
