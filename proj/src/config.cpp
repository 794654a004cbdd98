#include "rls/config.hpp"

#include <charconv>
#include <functional>
#include <limits>
#include <sstream>

#include "rls/binary_format.hpp"

namespace rls::exp {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

[[noreturn]] void type_error(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError(ConfigErrc::type_error, key, "config key '" + key + "': '" + value + "' is not " + expected);
}

[[noreturn]] void range_error(const std::string& key, const std::string& why) {
  throw ConfigError(ConfigErrc::range_error, key, "config key '" + key + "': " + why);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || v.empty()) type_error(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    type_error(key, v, "a number");
  }
  if (used != v.size() || !std::isfinite(out)) type_error(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  type_error(key, v, "a boolean (true/false)");
}

data::AzimuthInterval to_interval(const std::string& key, const std::string& v) {
  const auto comma = v.find(',');
  if (comma == std::string::npos) type_error(key, v, "an interval 'lo,hi' in degrees");
  data::AzimuthInterval out{to_double(key, trim(v.substr(0, comma))), to_double(key, trim(v.substr(comma + 1)))};
  if (!(out.width() > 0.0) || out.width() > 360.0) range_error(key, "interval must have 0 < hi - lo <= 360");
  return out;
}

std::string show(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::string key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

Field count(std::string key, std::size_t Config::*member, std::size_t min) {
  return {key,
          [key, member, min](Config& c, const std::string& v) {
            const auto x = to_u64(key, v);
            if (x < min) range_error(key, "must be >= " + std::to_string(min) + ", got " + v);
            c.*member = static_cast<std::size_t>(x);
          },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field seed(std::string key, std::uint64_t Config::*member) {
  return {key, [key, member](Config& c, const std::string& v) { c.*member = to_u64(key, v); },
          [member](const Config& c) { return std::to_string(c.*member); }};
}

Field real(std::string key, double Config::*member, double lo, double hi, bool lo_open) {
  return {key,
          [key, member, lo, hi, lo_open](Config& c, const std::string& v) {
            const double x = to_double(key, v);
            if ((lo_open ? x <= lo : x < lo) || x > hi)
              range_error(key, "must lie in " + std::string(lo_open ? "(" : "[") + show(lo) + ", " + show(hi) +
                                   "], got " + v);
            c.*member = x;
          },
          [member](const Config& c) { return show(c.*member); }};
}

Field flag(std::string key, bool Config::*member) {
  return {key, [key, member](Config& c, const std::string& v) { c.*member = to_bool(key, v); },
          [member](const Config& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field interval(std::string key, data::AzimuthInterval Config::*member) {
  return {key, [key, member](Config& c, const std::string& v) { c.*member = to_interval(key, v); },
          [member](const Config& c) { return show((c.*member).lo_deg) + "," + show((c.*member).hi_deg); }};
}

const std::vector<Field>& fields() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  static const std::vector<Field> table = {
      seed("seed", &Config::seed),
      count("n_seeds", &Config::n_seeds, 1),
      seed("data_seed", &Config::data_seed),
      flag("vary_data_seeds", &Config::vary_data_seeds),
      seed("rls_seed", &Config::rls_seed),
      count("n_bins", &Config::n_bins, 1),
      count("n_sub", &Config::n_sub, 1),
      count("c1", &Config::c1, 1),
      count("c2", &Config::c2, 1),
      count("c3", &Config::c3, 1),
      count("decoder_hidden", &Config::decoder_hidden, 1),
      count("classifier_hidden", &Config::classifier_hidden, 1),
      count("rls_classes", &Config::rls_classes, 1),
      count("rls_per_class", &Config::rls_per_class, 1),
      count("rls_instances", &Config::rls_instances, 1),
      count("cls_per_class_train", &Config::cls_per_class_train, 1),
      count("cls_per_class_test", &Config::cls_per_class_test, 1),
      count("cls_instances", &Config::cls_instances, 1),
      interval("cls_train_interval", &Config::cls_train_interval),
      interval("cls_test_interval", &Config::cls_test_interval),
      real("visibility_floor", &Config::visibility_floor, 0.0, 1.0, false),
      flag("speckle", &Config::speckle),
      count("rls_epochs", &Config::rls_epochs, 1),
      count("rls_batch", &Config::rls_batch, 1),
      count("rls_steps_per_epoch", &Config::rls_steps_per_epoch, 0),
      real("rls_lr", &Config::rls_lr, 0.0, inf, true),
      real("beta", &Config::beta, 0.0, inf, false),
      real("warmup_fraction", &Config::warmup_fraction, 0.0, 1.0, false),
      count("cls_epochs", &Config::cls_epochs, 1),
      count("cls_batch", &Config::cls_batch, 1),
      real("cls_lr", &Config::cls_lr, 0.0, inf, true),
      count("baseline_epochs", &Config::baseline_epochs, 1),
      count("baseline_batch", &Config::baseline_batch, 1),
      real("baseline_lr", &Config::baseline_lr, 0.0, inf, true),
      count("consistency_pairs", &Config::consistency_pairs, 1),
      count("demo_steps", &Config::demo_steps, 1),
  };
  return table;
}

}  // namespace

std::vector<std::uint64_t> Config::replica_seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t r = 0; r < n_seeds; ++r) out.push_back(seed + r);
  return out;
}

nets::NetworkSpec Config::network_spec() const {
  nets::NetworkSpec s;
  s.channels = {c1, c2, c3};
  s.sub_vectors = n_sub;
  s.bins = n_bins;
  s.decoder_hidden = decoder_hidden;
  s.classifier_hidden = classifier_hidden;
  return s;
}

data::RenderSettings Config::render_settings() const {
  data::RenderSettings r;
  r.visibility_floor = visibility_floor;
  r.speckle = speckle;
  return r;
}

train::RlsTrainConfig Config::rls_train_config() const {
  return {rls_epochs, rls_batch, rls_steps_per_epoch, rls_lr, beta, warmup_fraction, rls_seed};
}

train::ClassifierTrainConfig Config::classifier_config(std::uint64_t replica_seed) const {
  return {cls_epochs, cls_batch, cls_lr, true, replica_seed};
}

train::ClassifierTrainConfig Config::baseline_config(std::uint64_t replica_seed) const {
  return {baseline_epochs, baseline_batch, baseline_lr, false, replica_seed};
}

void set_value(Config& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError(ConfigErrc::unknown_key, key, "unknown config key '" + key + "'");
}

void apply_override(Config& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(ConfigErrc::syntax, "", "override '" + assignment + "' is not of the form key=value");
  set_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

Config parse_config(const std::string& text) {
  Config cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(is, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(ConfigErrc::syntax, "", "config line " + std::to_string(number) + ": expected key = value");
    set_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const io::FormatError& e) {
    throw ConfigError(ConfigErrc::syntax, "", "cannot read config file " + path.string() + ": " + e.what());
  }
  return parse_config(text);
}

std::string format_config(const Config& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

void validate(const Config& cfg) {
  if (cfg.cls_train_interval.overlaps(cfg.cls_test_interval))
    throw ConfigError(ConfigErrc::range_error, "cls_test_interval",
                      "protocol violation: classifier train and test azimuth intervals overlap");
  try {
    cfg.network_spec().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ConfigErrc::range_error, "c1", e.what());
  }
}

}  // namespace rls::exp
