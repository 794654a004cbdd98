#pragma once

// The three-phase protocol on a working directory:
//
//   <workdir>/data/       rls-train, cls-train, cls-test (.rlsc + .manifest)
//   <workdir>/ckpt/       rls.rlsw, <mode>-seed-<s>.rlsw
//   <workdir>/metrics/    long-format CSVs
//   <workdir>/manifests/  one RunManifest per command (JSON)
//   <workdir>/reports/    human-readable summaries, demo strips

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rls/config.hpp"
#include "rls/training.hpp"

namespace rls::exp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitMissingArtifact = 3;
inline constexpr int kExitNumerical = 4;
inline constexpr int kExitGate = 5;

inline constexpr const char* kArtifactVersion = "1.0.0";

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& path, const std::string& what)
      : std::runtime_error(what + ": " + path.string()), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Checkpoint and seed list disagree, or artifacts come from different data.
class ArtifactMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClassifierMode { rls_aug, rls_noaug, baseline };
std::string to_string(ClassifierMode m);
ClassifierMode parse_mode(const std::string& s);  // throws ConfigError
inline constexpr ClassifierMode kAllModes[] = {ClassifierMode::rls_aug, ClassifierMode::rls_noaug,
                                               ClassifierMode::baseline};

struct Layout {
  std::filesystem::path root;
  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path ckpt() const { return root / "ckpt"; }
  std::filesystem::path metrics() const { return root / "metrics"; }
  std::filesystem::path manifests() const { return root / "manifests"; }
  std::filesystem::path reports() const { return root / "reports"; }
  // Classifier datasets live in a per-replica subdirectory when data seeds vary.
  std::filesystem::path cls_data(const Config& cfg, std::uint64_t replica_seed) const;
  std::filesystem::path rls_checkpoint() const { return ckpt() / "rls.rlsw"; }
  std::filesystem::path classifier_checkpoint(ClassifierMode m, std::uint64_t seed) const;
};

struct RunManifest {
  std::string command;
  std::string config;                  // format_config snapshot
  std::vector<std::string> overrides;  // as given on the command line
  std::vector<std::uint64_t> seeds;
  std::map<std::string, std::string> dataset_digests;     // file -> sha256
  std::map<std::string, std::string> checkpoints;         // path -> sha256
  std::map<std::string, std::string> outputs;             // path -> sha256
  std::map<std::string, double> timings_seconds;
  std::string version = kArtifactVersion;

  std::string to_json() const;
};

void write_manifest(const Layout& layout, const RunManifest& m);

// ---- metrics CSV ------------------------------------------------------------

struct MetricRow {
  std::string run_id;
  std::string seed;  // replica seed, or "all" for aggregates
  std::string phase;
  std::size_t epoch = 0;
  std::string metric;
  double value = 0.0;
};

// Header: run_id,seed,phase,epoch,metric_name,value. Values printed with 17
// significant digits so reruns compare bytewise.
std::string format_metrics(const std::vector<MetricRow>& rows);

// First 12 hex digits of the SHA-256 of the config snapshot.
std::string run_id(const Config& cfg);

// ---- commands -------------------------------------------------------------------

struct CommandContext {
  Config config;
  Layout layout;
  std::vector<std::string> overrides;
  bool quiet = false;
};

RunManifest cmd_generate(const CommandContext& ctx);
RunManifest cmd_train_rls(const CommandContext& ctx);
RunManifest cmd_train_classifier(const CommandContext& ctx, ClassifierMode mode);

struct ModeReport {
  ClassifierMode mode = ClassifierMode::baseline;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracy;     // percent, per seed
  double mean = 0.0;
  std::optional<double> two_sigma;  // absent with fewer than two seeds
  std::vector<std::vector<double>> confusion;  // [true][predicted], row percent, pooled over seeds
};

struct EvalReport {
  std::vector<ModeReport> modes;
  std::optional<train::ConsistencyReport> consistency_trained;
  std::optional<train::ConsistencyReport> consistency_untrained;
  // Mean latent displacement for a 2-pixel chip shift, relative to the
  // mean distance between class centroids. Measured, not gated.
  std::optional<double> shift_sensitivity;

  const ModeReport* find(ClassifierMode m) const;
};

// Evaluates every mode in `modes` on cls-test for every replica seed.
EvalReport cmd_evaluate(const CommandContext& ctx, const std::vector<ClassifierMode>& modes, RunManifest* manifest = nullptr);
std::string format_report(const EvalReport& r);

// Decoded frames for interpolative shifts k*N/steps, k = 0..steps-1, of the
// posterior mean of `chip`; each frame is 64*64 values in (0,1).
std::vector<std::vector<double>> roll_demo_frames(const nets::EncoderWeights& enc, const nets::DecoderWeights& dec,
                                                  const data::Chip& chip, const std::vector<double>& shifts);
// Binary P5 graymap: frames side by side, 8 bits, value round(255 * v).
std::string encode_strip_pgm(const std::vector<std::vector<double>>& frames);
RunManifest cmd_roll_demo(const CommandContext& ctx, std::size_t chip_index, std::size_t steps,
                          const std::filesystem::path& out);

// Accuracy (percent) of argmax predictions against chip labels, and the
// row-normalised confusion matrix accumulated into counts[true][pred].
double accuracy_percent(const std::vector<std::size_t>& predicted, const std::vector<data::Chip>& chips,
                        std::vector<std::vector<double>>* counts = nullptr);

// Loads the three datasets, verifying digests; MissingArtifact if absent.
data::Dataset load_role(const std::filesystem::path& dir, const std::string& role);

}  // namespace rls::exp
