#include "rls/experiment.hpp"

#include <omp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <iomanip>
#include "json.hpp"
#include <numeric>
#include <sstream>

#include "rls/binary_format.hpp"
#include "rls/checkpoint.hpp"

namespace rls::exp {
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kClassifierClasses = 5;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void log(const CommandContext& ctx, const std::string& line) {
  if (!ctx.quiet) std::fprintf(stderr, "%s\n", line.c_str());
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Stream ids under data_seed.
enum DataStream : std::uint64_t { kTemplates = 0, kInstances = 1, kRlsChips = 2, kTrainChips = 3, kTestChips = 4 };
// Stream ids under a model seed.
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kConsistencyStream = 7;

std::vector<std::uint32_t> id_range(std::size_t first, std::size_t count) {
  std::vector<std::uint32_t> out(count);
  std::iota(out.begin(), out.end(), static_cast<std::uint32_t>(first));
  return out;
}

std::string file_digest(const fs::path& p) { return io::sha256_hex(io::read_file(p)); }

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw MissingArtifact(p, what);
}

io::Checkpoint load_checkpoint(const fs::path& p, const Config& cfg, const std::string& what) {
  require(p, what);
  io::Checkpoint ckpt = io::read_checkpoint(p);
  if (!(ckpt.spec == cfg.network_spec()))
    throw ArtifactMismatch(p.string() + " was written with a different network configuration");
  return ckpt;
}

struct RlsModel {
  nets::EncoderWeights enc;
  nets::DecoderWeights dec;
};

RlsModel load_rls(const Layout& layout, const Config& cfg) {
  const auto ckpt = load_checkpoint(layout.rls_checkpoint(), cfg, "encoder checkpoint not found (run train-rls)");
  Rng unused(0);
  RlsModel m{nets::init_encoder(cfg.network_spec(), unused), nets::init_decoder(cfg.network_spec(), unused)};
  ckpt.load_into(nets::parameters(m.enc));
  ckpt.load_into(nets::parameters(m.dec));
  return m;
}

std::vector<std::size_t> labels_of(const std::vector<data::Chip>& chips) {
  std::vector<std::size_t> out;
  out.reserve(chips.size());
  for (const auto& c : chips) out.push_back(c.class_id);
  return out;
}

std::uint64_t stored_seed(const io::Checkpoint& ckpt, const fs::path& p) {
  if (!ckpt.has("meta.seed")) throw ArtifactMismatch(p.string() + " carries no replica seed");
  return static_cast<std::uint64_t>(ckpt.section("meta.seed").item());
}

// Runs body(r) for every replica concurrently; rethrows the first failure
// in replica order.
template <class F>
void for_each_replica(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t r = 0; r < n; ++r) {
    try {
      body(r);
    } catch (...) {
      errors[r] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// Translates every pixel by (dx, dy), filling with zeros.
data::Chip shifted_chip(const data::Chip& c, long dx, long dy) {
  constexpr auto n = static_cast<long>(data::kChipSize);
  data::Chip out = c;
  for (long y = 0; y < n; ++y)
    for (long x = 0; x < n; ++x) {
      const long sy = y - dy, sx = x - dx;
      out.pixels[static_cast<std::size_t>(y * n + x)] =
          (sy < 0 || sy >= n || sx < 0 || sx >= n) ? 0.0 : c.pixels[static_cast<std::size_t>(sy * n + sx)];
    }
  return out;
}

double shift_sensitivity(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips) {
  const std::size_t dim = enc.spec.latent_dim();
  std::vector<data::Chip> moved;
  for (const auto& c : chips) moved.push_back(shifted_chip(c, 2, 0));
  const Tensor z = train::encode_means(enc, chips), zm = train::encode_means(enc, moved);

  double displacement = 0.0;
  for (std::size_t r = 0; r < chips.size(); ++r) {
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d += (z[r * dim + i] - zm[r * dim + i]) * (z[r * dim + i] - zm[r * dim + i]);
    displacement += std::sqrt(d);
  }
  displacement /= static_cast<double>(chips.size());

  std::vector<std::vector<double>> centroid(kClassifierClasses, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> count(kClassifierClasses, 0);
  for (std::size_t r = 0; r < chips.size(); ++r) {
    const auto c = chips[r].class_id;
    ++count[c];
    for (std::size_t i = 0; i < dim; ++i) centroid[c][i] += z[r * dim + i];
  }
  double spread = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < kClassifierClasses; ++a)
    for (std::size_t b = a + 1; b < kClassifierClasses; ++b) {
      if (!count[a] || !count[b]) continue;
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = centroid[a][i] / static_cast<double>(count[a]) - centroid[b][i] / static_cast<double>(count[b]);
        d += diff * diff;
      }
      spread += std::sqrt(d);
      ++pairs;
    }
  return pairs && spread > 0.0 ? displacement / (spread / static_cast<double>(pairs)) : 0.0;
}

RunManifest start_manifest(std::string command, const CommandContext& ctx, std::vector<std::uint64_t> seeds) {
  RunManifest m;
  m.command = std::move(command);
  m.config = format_config(ctx.config);
  m.overrides = ctx.overrides;
  m.seeds = std::move(seeds);
  return m;
}

std::string digests_key(const fs::path& dir, const std::string& role) { return (dir / (role + ".rlsc")).string(); }

void write_output(const fs::path& p, const std::string& bytes, RunManifest& m) {
  io::write_file(p, bytes);
  m.outputs[p.string()] = io::sha256_hex(bytes);
}

}  // namespace

std::string to_string(ClassifierMode m) {
  switch (m) {
    case ClassifierMode::rls_aug: return "rls-aug";
    case ClassifierMode::rls_noaug: return "rls-noaug";
    case ClassifierMode::baseline: return "baseline";
  }
  return "?";
}

ClassifierMode parse_mode(const std::string& s) {
  for (auto m : kAllModes)
    if (to_string(m) == s) return m;
  throw ConfigError(ConfigErrc::type_error, "mode", "unknown classifier mode '" + s + "' (rls-aug, rls-noaug, baseline)");
}

fs::path Layout::cls_data(const Config& cfg, std::uint64_t replica_seed) const {
  return cfg.vary_data_seeds ? data() / ("replica-" + std::to_string(replica_seed)) : data();
}

fs::path Layout::classifier_checkpoint(ClassifierMode m, std::uint64_t seed) const {
  return ckpt() / (to_string(m) + "-seed-" + std::to_string(seed) + ".rlsw");
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = version;
  j["config"] = config;
  j["overrides"] = overrides;
  j["seeds"] = seeds;
  j["dataset_digests"] = dataset_digests;
  j["checkpoints"] = checkpoints;
  j["outputs"] = outputs;
  j["timings_seconds"] = timings_seconds;
  return j.dump(2) + "\n";
}

void write_manifest(const Layout& layout, const RunManifest& m) {
  io::write_file(layout.manifests() / (m.command + ".json"), m.to_json());
}

std::string format_metrics(const std::vector<MetricRow>& rows) {
  std::string out = "run_id,seed,phase,epoch,metric_name,value\n";
  for (const auto& r : rows)
    out += r.run_id + "," + r.seed + "," + r.phase + "," + std::to_string(r.epoch) + "," + r.metric + "," +
           format_double(r.value) + "\n";
  return out;
}

std::string run_id(const Config& cfg) { return io::sha256_hex(format_config(cfg)).substr(0, 12); }

data::Dataset load_role(const fs::path& dir, const std::string& role) {
  require(dir / (role + ".rlsc"), role + " dataset not found (run generate)");
  require(dir / (role + ".manifest"), role + " manifest not found (run generate)");
  return data::load_dataset(dir, role);
}

double accuracy_percent(const std::vector<std::size_t>& predicted, const std::vector<data::Chip>& chips,
                        std::vector<std::vector<double>>* counts) {
  if (predicted.size() != chips.size()) throw ShapeError("accuracy: prediction count differs from chip count");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < chips.size(); ++i) {
    correct += predicted[i] == chips[i].class_id;
    if (counts) (*counts).at(chips[i].class_id).at(predicted[i]) += 1.0;
  }
  return chips.empty() ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(chips.size());
}

// ---- generate ------------------------------------------------------------------

RunManifest cmd_generate(const CommandContext& ctx) {
  const auto t0 = Clock::now();
  const Config& cfg = ctx.config;
  validate(cfg);
  RunManifest m = start_manifest("generate", ctx, cfg.replica_seeds());

  Rng template_rng(mix_seed(cfg.data_seed, kTemplates));
  const auto templates = data::make_class_templates(cfg.rls_classes + kClassifierClasses, template_rng);
  const std::uint64_t instance_seed = mix_seed(cfg.data_seed, kInstances);
  const auto render = cfg.render_settings();
  const auto rls_ids = id_range(0, cfg.rls_classes);
  const auto cls_ids = id_range(cfg.rls_classes, kClassifierClasses);

  auto save = [&](const fs::path& dir, const data::SplitSpec& split) {
    auto ds = data::generate_dataset(templates, split, render);
    const auto manifest = data::save_dataset(dir, ds);
    m.dataset_digests[digests_key(dir, split.role)] = manifest.chip_file_sha256;
    log(ctx, "generate: " + std::to_string(ds.chips.size()) + " chips -> " + (dir / manifest.chip_file).string());
  };

  save(ctx.layout.data(), {"rls-train", rls_ids, cfg.rls_per_class, cfg.rls_instances, {0.0, 360.0},
                           mix_seed(cfg.data_seed, kRlsChips), instance_seed});
  std::vector<std::uint64_t> variants{0};
  if (cfg.vary_data_seeds) variants = cfg.replica_seeds();
  for (const auto v : variants) {
    const fs::path dir = cfg.vary_data_seeds ? ctx.layout.cls_data(cfg, v) : ctx.layout.data();
    const auto stream = [&](std::uint64_t id) {
      const auto base = mix_seed(cfg.data_seed, id);
      return cfg.vary_data_seeds ? mix_seed(base, v) : base;
    };
    save(dir, {"cls-train", cls_ids, cfg.cls_per_class_train, cfg.cls_instances, cfg.cls_train_interval,
               stream(kTrainChips), instance_seed});
    save(dir, {"cls-test", cls_ids, cfg.cls_per_class_test, cfg.cls_instances, cfg.cls_test_interval,
               stream(kTestChips), instance_seed});
  }
  m.timings_seconds["total"] = seconds_since(t0);
  write_manifest(ctx.layout, m);
  return m;
}

// ---- train-rls ------------------------------------------------------------------

RunManifest cmd_train_rls(const CommandContext& ctx) {
  const auto t0 = Clock::now();
  const Config& cfg = ctx.config;
  validate(cfg);
  RunManifest m = start_manifest("train-rls", ctx, {cfg.rls_seed});
  const auto ds = load_role(ctx.layout.data(), "rls-train");
  m.dataset_digests[digests_key(ctx.layout.data(), "rls-train")] = ds.manifest.chip_file_sha256;

  const auto spec = cfg.network_spec();
  Rng init(mix_seed(cfg.rls_seed, kInitStream));
  auto enc = nets::init_encoder(spec, init);
  auto dec = nets::init_decoder(spec, init);

  const std::string id = run_id(cfg);
  std::vector<MetricRow> rows;
  const auto history = train::train_rls(enc, dec, ds.chips, cfg.rls_train_config(),
                                        [&](std::size_t epoch, const train::LossBreakdown& l) {
                                          std::ostringstream os;
                                          os << "train-rls: epoch " << epoch + 1 << "/" << cfg.rls_epochs
                                             << " reconstruction " << l.reconstruction << " kl " << l.kl << " ("
                                             << std::fixed << std::setprecision(1) << seconds_since(t0) << " s)";
                                          log(ctx, os.str());
                                        });
  const std::string seed = std::to_string(cfg.rls_seed);
  for (std::size_t e = 0; e < history.size(); ++e) {
    rows.push_back({id, seed, "train-rls", e + 1, "reconstruction", history[e].reconstruction});
    rows.push_back({id, seed, "train-rls", e + 1, "kl", history[e].kl});
    rows.push_back({id, seed, "train-rls", e + 1, "beta", history[e].beta});
    rows.push_back({id, seed, "train-rls", e + 1, "total", history[e].total});
  }

  io::Checkpoint ckpt{spec, {}};
  ckpt.put(nets::parameters(std::as_const(enc)));
  ckpt.put(nets::parameters(std::as_const(dec)));
  ckpt.put("meta.seed", Tensor::scalar(static_cast<double>(cfg.rls_seed)));
  const std::string bytes = io::serialize(ckpt);
  io::write_file(ctx.layout.rls_checkpoint(), bytes);
  m.checkpoints[ctx.layout.rls_checkpoint().string()] = io::sha256_hex(bytes);
  write_output(ctx.layout.metrics() / "train-rls.csv", format_metrics(rows), m);
  m.timings_seconds["total"] = seconds_since(t0);
  write_manifest(ctx.layout, m);
  return m;
}

// ---- train-classifier ---------------------------------------------------------------

RunManifest cmd_train_classifier(const CommandContext& ctx, ClassifierMode mode) {
  const auto t0 = Clock::now();
  const Config& cfg = ctx.config;
  validate(cfg);
  const auto seeds = cfg.replica_seeds();
  RunManifest m = start_manifest("train-classifier-" + to_string(mode), ctx, seeds);
  const auto spec = cfg.network_spec();
  const bool latent_mode = mode != ClassifierMode::baseline;

  std::optional<RlsModel> model;
  if (latent_mode) {
    model = load_rls(ctx.layout, cfg);
    m.checkpoints[ctx.layout.rls_checkpoint().string()] = file_digest(ctx.layout.rls_checkpoint());
  }

  // One dataset (and latent matrix) per distinct data directory.
  std::map<fs::path, std::pair<data::Dataset, Tensor>> inputs;
  for (const auto s : seeds) {
    const fs::path dir = ctx.layout.cls_data(cfg, s);
    if (inputs.count(dir)) continue;
    auto ds = load_role(dir, "cls-train");
    m.dataset_digests[digests_key(dir, "cls-train")] = ds.manifest.chip_file_sha256;
    Tensor z = latent_mode ? train::encode_means(model->enc, ds.chips) : Tensor::scalar(0.0);
    inputs.emplace(dir, std::make_pair(std::move(ds), std::move(z)));
  }

  const std::string id = run_id(cfg);
  std::vector<std::vector<MetricRow>> rows(seeds.size());
  std::vector<std::string> digests(seeds.size());
  for_each_replica(seeds.size(), [&](std::size_t r) {
    const auto seed = seeds[r];
    const auto t_replica = Clock::now();
    const auto& [ds, z] = inputs.at(ctx.layout.cls_data(cfg, seed));
    Rng init(mix_seed(seed, kInitStream));
    io::Checkpoint ckpt{spec, {}};
    std::vector<double> history;
    if (latent_mode) {
      auto cls = nets::init_classifier(spec, init);
      auto ccfg = cfg.classifier_config(seed);
      ccfg.augmentation = mode == ClassifierMode::rls_aug;
      history = train::train_classifier_on_latents(cls, z, labels_of(ds.chips), ccfg);
      ckpt.put(nets::parameters(std::as_const(cls)));
    } else {
      auto net = nets::init_baseline(spec, init);
      history = train::train_baseline(net, ds.chips, cfg.baseline_config(seed));
      ckpt.put(nets::parameters(std::as_const(net)));
    }
    ckpt.put("meta.seed", Tensor::scalar(static_cast<double>(seed)));
    const std::string bytes = io::serialize(ckpt);
    io::write_file(ctx.layout.classifier_checkpoint(mode, seed), bytes);
    digests[r] = io::sha256_hex(bytes);
    for (std::size_t e = 0; e < history.size(); ++e)
      rows[r].push_back({id, std::to_string(seed), "train-" + to_string(mode), e + 1, "loss", history[e]});
    std::ostringstream os;
    os << "train-classifier " << to_string(mode) << ": seed " << seed << " final loss "
       << (history.empty() ? 0.0 : history.back()) << " (" << std::fixed << std::setprecision(1)
       << seconds_since(t_replica) << " s)";
    log(ctx, os.str());
  });

  std::vector<MetricRow> all;
  for (std::size_t r = 0; r < seeds.size(); ++r) {
    m.checkpoints[ctx.layout.classifier_checkpoint(mode, seeds[r]).string()] = digests[r];
    all.insert(all.end(), rows[r].begin(), rows[r].end());
  }
  write_output(ctx.layout.metrics() / ("train-" + to_string(mode) + ".csv"), format_metrics(all), m);
  m.timings_seconds["total"] = seconds_since(t0);
  write_manifest(ctx.layout, m);
  return m;
}

// ---- evaluate ---------------------------------------------------------------------

const ModeReport* EvalReport::find(ClassifierMode m) const {
  for (const auto& r : modes)
    if (r.mode == m) return &r;
  return nullptr;
}

EvalReport cmd_evaluate(const CommandContext& ctx, const std::vector<ClassifierMode>& modes, RunManifest* out) {
  const auto t0 = Clock::now();
  const Config& cfg = ctx.config;
  validate(cfg);
  const auto seeds = cfg.replica_seeds();
  RunManifest m = start_manifest("evaluate", ctx, seeds);
  const auto spec = cfg.network_spec();

  bool latent_needed = false;
  for (auto mode : modes) latent_needed |= mode != ClassifierMode::baseline;
  std::optional<RlsModel> model;
  if (latent_needed) {
    model = load_rls(ctx.layout, cfg);
    m.checkpoints[ctx.layout.rls_checkpoint().string()] = file_digest(ctx.layout.rls_checkpoint());
  }

  // Every mode must have trained on the cls-train bytes present now.
  for (auto mode : modes) {
    const fs::path p = ctx.layout.manifests() / ("train-classifier-" + to_string(mode) + ".json");
    require(p, "training manifest for mode " + to_string(mode) + " not found (run train-classifier)");
    const auto j = nlohmann::json::parse(io::read_file(p));
    for (const auto s : seeds) {
      const fs::path dir = ctx.layout.cls_data(cfg, s);
      const auto key = digests_key(dir, "cls-train");
      const auto current = file_digest(dir / "cls-train.rlsc");
      if (!j["dataset_digests"].contains(key) || j["dataset_digests"][key].get<std::string>() != current)
        throw ArtifactMismatch("mode " + to_string(mode) + " was trained on different cls-train data than " + key);
    }
  }

  std::map<fs::path, std::pair<data::Dataset, Tensor>> tests;
  for (const auto s : seeds) {
    const fs::path dir = ctx.layout.cls_data(cfg, s);
    if (tests.count(dir)) continue;
    auto ds = load_role(dir, "cls-test");
    m.dataset_digests[digests_key(dir, "cls-test")] = ds.manifest.chip_file_sha256;
    Tensor z = model ? train::encode_means(model->enc, ds.chips) : Tensor::scalar(0.0);
    tests.emplace(dir, std::make_pair(std::move(ds), std::move(z)));
  }

  const std::string id = run_id(cfg);
  std::vector<MetricRow> rows;
  EvalReport report;
  for (auto mode : modes) {
    ModeReport mr;
    mr.mode = mode;
    mr.seeds = seeds;
    std::vector<std::vector<double>> counts(kClassifierClasses, std::vector<double>(kClassifierClasses, 0.0));
    for (const auto s : seeds) {
      const fs::path p = ctx.layout.classifier_checkpoint(mode, s);
      const auto ckpt = load_checkpoint(p, cfg, "classifier checkpoint not found (run train-classifier)");
      if (stored_seed(ckpt, p) != s)
        throw ArtifactMismatch("seed/checkpoint mismatch: " + p.string() + " holds seed " +
                               std::to_string(stored_seed(ckpt, p)) + ", expected " + std::to_string(s));
      m.checkpoints[p.string()] = file_digest(p);
      const auto& [ds, z] = tests.at(ctx.layout.cls_data(cfg, s));
      Rng unused(0);
      std::vector<std::size_t> predicted;
      if (mode == ClassifierMode::baseline) {
        auto net = nets::init_baseline(spec, unused);
        ckpt.load_into(nets::parameters(net));
        std::vector<std::size_t> all(ds.chips.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        for (std::size_t b = 0; b < all.size(); b += 64) {
          const std::span<const std::size_t> idx(all.data() + b, std::min<std::size_t>(64, all.size() - b));
          const auto pred = nets::argmax_rows(nets::baseline_logits(net, train::stack_chips(ds.chips, idx)));
          predicted.insert(predicted.end(), pred.begin(), pred.end());
        }
      } else {
        auto cls = nets::init_classifier(spec, unused);
        ckpt.load_into(nets::parameters(cls));
        predicted = nets::argmax_rows(nets::classify(cls, z));
      }
      const double acc = accuracy_percent(predicted, ds.chips, &counts);
      mr.accuracy.push_back(acc);
      rows.push_back({id, std::to_string(s), "eval-" + to_string(mode), 0, "accuracy", acc});
    }
    const double n = static_cast<double>(mr.accuracy.size());
    mr.mean = std::accumulate(mr.accuracy.begin(), mr.accuracy.end(), 0.0) / n;
    if (mr.accuracy.size() >= 2) {
      double ss = 0.0;
      for (double a : mr.accuracy) ss += (a - mr.mean) * (a - mr.mean);
      mr.two_sigma = 2.0 * std::sqrt(ss / (n - 1.0));
    }
    for (auto& row : counts) {
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      for (auto& v : row) v = total > 0.0 ? 100.0 * v / total : 0.0;
    }
    mr.confusion = counts;
    rows.push_back({id, "all", "eval-" + to_string(mode), 0, "accuracy_mean", mr.mean});
    if (mr.two_sigma) rows.push_back({id, "all", "eval-" + to_string(mode), 0, "accuracy_2sigma", *mr.two_sigma});
    for (std::size_t t = 0; t < kClassifierClasses; ++t)
      for (std::size_t p = 0; p < kClassifierClasses; ++p)
        rows.push_back({id, "all", "eval-" + to_string(mode), 0,
                        "confusion_" + std::to_string(t) + "_" + std::to_string(p), mr.confusion[t][p]});
    report.modes.push_back(std::move(mr));
  }

  if (model) {
    const auto rls = load_role(ctx.layout.data(), "rls-train");
    m.dataset_digests[digests_key(ctx.layout.data(), "rls-train")] = rls.manifest.chip_file_sha256;
    Rng pairs_trained(mix_seed(cfg.rls_seed, kConsistencyStream));
    report.consistency_trained = train::latent_consistency(model->enc, rls.chips, cfg.consistency_pairs, pairs_trained);
    Rng init(mix_seed(cfg.rls_seed, kInitStream));
    const auto untrained = nets::init_encoder(spec, init);
    Rng pairs_untrained(mix_seed(cfg.rls_seed, kConsistencyStream));
    report.consistency_untrained = train::latent_consistency(untrained, rls.chips, cfg.consistency_pairs, pairs_untrained);
    report.shift_sensitivity = shift_sensitivity(model->enc, tests.begin()->second.first.chips);
    for (const auto& [name, c] : {std::pair{"trained", *report.consistency_trained},
                                  std::pair{"untrained", *report.consistency_untrained}}) {
      const std::string phase = std::string("consistency-") + name;
      rows.push_back({id, std::to_string(cfg.rls_seed), phase, 0, "rolled_similarity", c.rolled_similarity});
      rows.push_back({id, std::to_string(cfg.rls_seed), phase, 0, "unrolled_similarity", c.unrolled_similarity});
      rows.push_back({id, std::to_string(cfg.rls_seed), phase, 0, "delta", c.delta()});
      rows.push_back({id, std::to_string(cfg.rls_seed), phase, 0, "pairs", static_cast<double>(c.pairs)});
    }
    rows.push_back({id, std::to_string(cfg.rls_seed), "shift-sensitivity", 0, "relative_displacement_2px",
                    *report.shift_sensitivity});
  }

  write_output(ctx.layout.metrics() / "eval.csv", format_metrics(rows), m);
  write_output(ctx.layout.reports() / "summary.txt", format_report(report), m);
  m.timings_seconds["total"] = seconds_since(t0);
  write_manifest(ctx.layout, m);
  if (out) *out = m;
  return report;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "Back-view (cls-test) accuracy, percent\n";
  for (const auto& m : r.modes) {
    os << "  " << std::left << std::setw(10) << to_string(m.mode) << std::right << " mean " << std::setw(6) << m.mean;
    if (m.two_sigma)
      os << " +/- " << *m.two_sigma << " (2 sigma)";
    else
      os << " (2 sigma: n/a, single seed)";
    os << "  per seed:";
    for (double a : m.accuracy) os << ' ' << a;
    os << '\n';
  }
  for (const auto& m : r.modes) {
    os << "\nConfusion matrix, " << to_string(m.mode) << " (rows: true class, percent)\n";
    for (const auto& row : m.confusion) {
      os << "  ";
      for (double v : row) os << std::setw(8) << v;
      os << '\n';
    }
  }
  os << std::setprecision(4);
  if (r.consistency_trained && r.consistency_untrained) {
    os << "\nLatent consistency (" << r.consistency_trained->pairs << " pairs, rls-train)\n";
    for (const auto& [name, c] : {std::pair{"trained  ", *r.consistency_trained},
                                  std::pair{"untrained", *r.consistency_untrained}})
      os << "  " << name << " rolled " << c.rolled_similarity << "  unrolled " << c.unrolled_similarity
         << "  delta " << c.delta() << '\n';
  }
  if (r.shift_sensitivity)
    os << "\n2-pixel shift displacement / mean class-centroid distance: " << *r.shift_sensitivity << '\n';
  return os.str();
}

// ---- roll demo ----------------------------------------------------------------------

std::vector<std::vector<double>> roll_demo_frames(const nets::EncoderWeights& enc, const nets::DecoderWeights& dec,
                                                  const data::Chip& chip, const std::vector<double>& shifts) {
  const auto& spec = enc.spec;
  const std::size_t one = 0;
  const auto post = nets::encode(enc, train::stack_chips({chip}, std::span(&one, 1)));
  const auto z = latent::unflatten(post.mean, spec.sub_vectors, spec.bins);
  std::vector<std::vector<double>> frames;
  for (double s : shifts) {
    const auto rolled = latent::roll_interpolative(z, s);
    const Tensor flat({1, spec.latent_dim()}, std::vector<double>(rolled.values().begin(), rolled.values().end()));
    const Tensor img = nets::decode(dec, flat);
    frames.emplace_back(img.data().begin(), img.data().end());
  }
  return frames;
}

std::string encode_strip_pgm(const std::vector<std::vector<double>>& frames) {
  constexpr std::size_t n = data::kChipSize;
  std::string out = "P5\n" + std::to_string(frames.size() * n) + " " + std::to_string(n) + "\n255\n";
  for (std::size_t y = 0; y < n; ++y)
    for (const auto& f : frames)
      for (std::size_t x = 0; x < n; ++x) {
        const double v = std::clamp(f.at(y * n + x), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
      }
  return out;
}

RunManifest cmd_roll_demo(const CommandContext& ctx, std::size_t chip_index, std::size_t steps, const fs::path& out) {
  const auto t0 = Clock::now();
  const Config& cfg = ctx.config;
  validate(cfg);
  if (steps < 1) throw ConfigError(ConfigErrc::range_error, "demo_steps", "roll demo needs at least one step");
  RunManifest m = start_manifest("roll-demo", ctx, {cfg.rls_seed});
  const auto model = load_rls(ctx.layout, cfg);
  m.checkpoints[ctx.layout.rls_checkpoint().string()] = file_digest(ctx.layout.rls_checkpoint());
  const auto ds = load_role(ctx.layout.data(), "rls-train");
  m.dataset_digests[digests_key(ctx.layout.data(), "rls-train")] = ds.manifest.chip_file_sha256;
  if (chip_index >= ds.chips.size())
    throw ConfigError(ConfigErrc::range_error, "chip", "chip index " + std::to_string(chip_index) + " out of range");

  std::vector<double> shifts;
  for (std::size_t k = 0; k < steps; ++k)
    shifts.push_back(static_cast<double>(k) * static_cast<double>(cfg.n_bins) / static_cast<double>(steps));
  write_output(out, encode_strip_pgm(roll_demo_frames(model.enc, model.dec, ds.chips[chip_index], shifts)), m);
  m.timings_seconds["total"] = seconds_since(t0);
  write_manifest(ctx.layout, m);
  log(ctx, "roll-demo: " + std::to_string(steps) + " frames -> " + out.string());
  return m;
}

}  // namespace rls::exp
