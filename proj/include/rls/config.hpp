#pragma once

// Key = value experiment configuration. Unknown keys, malformed values and
// out-of-range values are rejected with the offending key in the message.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rls/networks.hpp"
#include "rls/synthetic.hpp"
#include "rls/training.hpp"

namespace rls::exp {

enum class ConfigErrc { syntax, unknown_key, type_error, range_error };

class ConfigError : public std::runtime_error {
 public:
  ConfigError(ConfigErrc code, std::string key, const std::string& what)
      : std::runtime_error(what), code_(code), key_(std::move(key)) {}
  ConfigErrc code() const { return code_; }
  const std::string& key() const { return key_; }

 private:
  ConfigErrc code_;
  std::string key_;
};

struct Config {
  // seeds
  std::uint64_t seed = 1;           // first replica seed; replica r uses seed + r
  std::size_t n_seeds = 5;
  std::uint64_t data_seed = 2024;   // templates, instances and chip streams
  bool vary_data_seeds = false;     // also regenerate data per replica
  std::uint64_t rls_seed = 1;       // RLS autoencoder init, pairs and noise

  // latent layout and networks
  std::size_t n_bins = 36;
  std::size_t n_sub = 8;
  std::size_t c1 = 16, c2 = 32, c3 = 64;
  std::size_t decoder_hidden = 512;
  std::size_t classifier_hidden = 120;

  // data protocol
  std::size_t rls_classes = 5;
  std::size_t rls_per_class = 300;
  std::size_t rls_instances = 5;
  std::size_t cls_per_class_train = 75;
  std::size_t cls_per_class_test = 75;
  std::size_t cls_instances = 5;
  data::AzimuthInterval cls_train_interval{-45.0, 45.0};
  data::AzimuthInterval cls_test_interval{135.0, 225.0};
  double visibility_floor = 0.3;
  bool speckle = true;

  // RLS phase
  std::size_t rls_epochs = 12;
  std::size_t rls_batch = 16;
  std::size_t rls_steps_per_epoch = 0;
  double rls_lr = 1e-3;
  double beta = 1e-6;               // KL per chip against MSE per pixel
  double warmup_fraction = 0.1;

  // classifier phase
  std::size_t cls_epochs = 60;
  std::size_t cls_batch = 32;
  double cls_lr = 1e-3;
  std::size_t baseline_epochs = 15;
  std::size_t baseline_batch = 32;
  double baseline_lr = 1e-3;

  // evaluation
  std::size_t consistency_pairs = 500;
  std::size_t demo_steps = 12;

  std::vector<std::uint64_t> replica_seeds() const;
  nets::NetworkSpec network_spec() const;
  data::RenderSettings render_settings() const;
  train::RlsTrainConfig rls_train_config() const;
  // augmentation is set by the caller from the classifier mode.
  train::ClassifierTrainConfig classifier_config(std::uint64_t replica_seed) const;
  train::ClassifierTrainConfig baseline_config(std::uint64_t replica_seed) const;

  friend bool operator==(const Config&, const Config&) = default;
};

// Applies one "key = value" assignment.
void set_value(Config& cfg, const std::string& key, const std::string& value);
// Parses "key=value" (flag form).
void apply_override(Config& cfg, const std::string& assignment);
// Lines: blank, "# comment", or "key = value". Later lines win.
Config parse_config(const std::string& text);
Config load_config(const std::filesystem::path& path);

// Every key in a fixed order; parse_config(format_config(c)) == c.
std::string format_config(const Config& cfg);
std::vector<std::string> config_keys();

// Cross-field checks (e.g. overlapping classifier intervals). Throws
// ConfigError naming the first offending key.
void validate(const Config& cfg);

}  // namespace rls::exp
