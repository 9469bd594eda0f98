#include <chrnn/config.hpp>
#include <chrnn/errors.hpp>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace chrnn {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_u64(item));
  }
  return out;
}

std::string number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  const char* key;
  Setter set;
  Getter get;
};

// model.conv is handled separately because it depends on model.in_channels.
const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      {"model.in_channels", [](RunConfig& c, const std::string& v) { c.model.in_channels = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.model.in_channels); }},
      {"model.in_height", [](RunConfig& c, const std::string& v) { c.model.in_height = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.model.in_height); }},
      {"model.in_width", [](RunConfig& c, const std::string& v) { c.model.in_width = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.model.in_width); }},
      {"model.scales", [](RunConfig& c, const std::string& v) { c.model.scales = parse_grid_list(v); },
       [](const RunConfig& c) { return format_grid_list(c.model.scales); }},
      {"model.cell", [](RunConfig& c, const std::string& v) { c.model.cell = parse_cell_kind(v); },
       [](const RunConfig& c) { return to_string(c.model.cell); }},
      {"model.variant", [](RunConfig& c, const std::string& v) { c.model.variant = parse_variant(v); },
       [](const RunConfig& c) { return to_string(c.model.variant); }},
      {"model.readout", [](RunConfig& c, const std::string& v) { c.model.readout = parse_readout(v); },
       [](const RunConfig& c) { return to_string(c.model.readout); }},
      {"model.hidden", [](RunConfig& c, const std::string& v) { c.model.hidden = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.model.hidden); }},
      {"model.fc", [](RunConfig& c, const std::string& v) { c.model.fc = to_size_list(v); },
       [](const RunConfig& c) { return join(c.model.fc); }},
      {"model.classes", [](RunConfig& c, const std::string& v) { c.model.classes = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.model.classes); }},
      {"model.dropout", [](RunConfig& c, const std::string& v) { c.model.dropout = to_double(v); },
       [](const RunConfig& c) { return number(c.model.dropout); }},
      {"train.batch", [](RunConfig& c, const std::string& v) { c.train.batch = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.train.batch); }},
      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.lr", [](RunConfig& c, const std::string& v) { c.train.lr = to_double(v); },
       [](const RunConfig& c) { return number(c.train.lr); }},
      {"train.momentum", [](RunConfig& c, const std::string& v) { c.train.momentum = to_double(v); },
       [](const RunConfig& c) { return number(c.train.momentum); }},
      {"train.patience", [](RunConfig& c, const std::string& v) { c.train.patience = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.train.patience); }},
      {"train.weight_decay",
       [](RunConfig& c, const std::string& v) { c.train.weight_decay = to_double(v); },
       [](const RunConfig& c) { return number(c.train.weight_decay); }},
      {"train.lr_mult.conv",
       [](RunConfig& c, const std::string& v) { c.train.lr_mult_conv = to_double(v); },
       [](const RunConfig& c) { return number(c.train.lr_mult_conv); }},
      {"train.lr_mult.hrnn",
       [](RunConfig& c, const std::string& v) { c.train.lr_mult_hrnn = to_double(v); },
       [](const RunConfig& c) { return number(c.train.lr_mult_hrnn); }},
      {"train.lr_mult.head",
       [](RunConfig& c, const std::string& v) { c.train.lr_mult_head = to_double(v); },
       [](const RunConfig& c) { return number(c.train.lr_mult_head); }},
      {"train.augment_flip",
       [](RunConfig& c, const std::string& v) { c.train.augment_flip = to_bool(v); },
       [](const RunConfig& c) { return std::string(c.train.augment_flip ? "true" : "false"); }},
      {"train.threads", [](RunConfig& c, const std::string& v) { c.train.threads = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.train.threads); }},
      {"data.task",
       [](RunConfig& c, const std::string& v) {
         if (v != "synthetic" && v != "idx") {
           throw ConfigError("expected synthetic or idx, got '" + v + "'");
         }
         c.data.task = v;
       },
       [](const RunConfig& c) { return c.data.task; }},
      {"data.train_images", [](RunConfig& c, const std::string& v) { c.data.train_images = v; },
       [](const RunConfig& c) { return c.data.train_images; }},
      {"data.train_labels", [](RunConfig& c, const std::string& v) { c.data.train_labels = v; },
       [](const RunConfig& c) { return c.data.train_labels; }},
      {"data.val_images", [](RunConfig& c, const std::string& v) { c.data.val_images = v; },
       [](const RunConfig& c) { return c.data.val_images; }},
      {"data.val_labels", [](RunConfig& c, const std::string& v) { c.data.val_labels = v; },
       [](const RunConfig& c) { return c.data.val_labels; }},
      {"data.synthetic_train",
       [](RunConfig& c, const std::string& v) { c.data.synthetic_train = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.data.synthetic_train); }},
      {"data.synthetic_val",
       [](RunConfig& c, const std::string& v) { c.data.synthetic_val = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.data.synthetic_val); }},
      {"data.synthetic_seed",
       [](RunConfig& c, const std::string& v) { c.data.synthetic_seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.data.synthetic_seed); }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; },
       [](const RunConfig& c) { return c.out; }},
  };
  return f;
}

constexpr const char* kConvKey = "model.conv";

}  // namespace

ConfigMap ConfigMap::parse(const std::string& text, const std::string& source) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": empty key");
    map.set(section.empty() ? key : section + "." + key, trim(line.substr(eq + 1)));
  }
  return map;
}

ConfigMap ConfigMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::optional<std::string> ConfigMap::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string ConfigMap::to_text() const {
  std::ostringstream os;
  std::string current;
  // Keys without a dot first, then grouped by their first component.
  for (const auto& [k, v] : values_)
    if (k.find('.') == std::string::npos) os << k << " = " << v << '\n';
  for (const auto& [k, v] : values_) {
    const auto dot = k.find('.');
    if (dot == std::string::npos) continue;
    const std::string section = k.substr(0, dot);
    if (section != current) {
      os << '[' << section << "]\n";
      current = section;
    }
    os << k.substr(dot + 1) << " = " << v << '\n';
  }
  return os.str();
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.in_channels = 1;
  c.model.in_height = 24;
  c.model.in_width = 24;
  c.model.conv = parse_conv_stack("8x2x2/s2/p0,16x2x2/s2/p0/linear", 1);
  c.model.scales = parse_grid_list("1,2,3,6");
  c.model.readout = Readout::CellMean;
  c.model.fc = {128, 128};
  c.model.dropout = 0.0;
  c.train.lr = 0.003;
  c.train.patience = 5;
  return c;
}

RunConfig apply_config(const ConfigMap& map, RunConfig base) {
  std::set<std::string> known{kConvKey};
  for (const auto& f : fields()) known.insert(f.key);
  std::vector<std::string> unknown;
  for (const auto& [k, v] : map.values())
    if (!known.count(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = "unknown config key";
    msg += unknown.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", " : "") + unknown[i];
    throw ConfigError(msg);
  }
  const std::string conv_text = map.get(kConvKey).value_or(format_conv_stack(base.model.conv));
  for (const auto& f : fields()) {
    if (const auto v = map.get(f.key)) {
      try {
        f.set(base, *v);
      } catch (const std::exception& e) {
        throw ConfigError(std::string(f.key) + ": " + e.what());
      }
    }
  }
  try {
    base.model.conv = parse_conv_stack(conv_text, base.model.in_channels);
  } catch (const std::exception& e) {
    throw ConfigError(std::string(kConvKey) + ": " + e.what());
  }
  return base;
}

ConfigMap to_config_map(const RunConfig& config) {
  ConfigMap map;
  map.set(kConvKey, format_conv_stack(config.model.conv));
  for (const auto& f : fields()) map.set(f.key, f.get(config));
  return map;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{kConvKey};
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

}  // namespace chrnn
