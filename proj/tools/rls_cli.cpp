// rls: command-line driver for the three-phase protocol.
//
//   rls generate | train-rls | train-classifier --mode M | evaluate | roll-demo | check
//
// Every command reads --config (key = value text) and any number of
// --set key=value overrides, which win over the file.

#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rls/acceptance.hpp"
#include "rls/experiment.hpp"

namespace fs = std::filesystem;
using namespace rls;

namespace {

struct GlobalOptions {
  std::string workdir = "rls-work";
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;
};

exp::CommandContext make_context(const GlobalOptions& g) {
  exp::CommandContext ctx;
  ctx.config = g.config_path.empty() ? exp::Config{} : exp::load_config(g.config_path);
  for (const auto& o : g.overrides) exp::apply_override(ctx.config, o);
  exp::validate(ctx.config);
  ctx.layout.root = g.workdir;
  ctx.overrides = g.overrides;
  ctx.quiet = g.quiet;
  return ctx;
}

std::vector<exp::ClassifierMode> parse_modes(const std::vector<std::string>& names) {
  std::vector<exp::ClassifierMode> modes;
  for (const auto& n : names) {
    if (n == "all") return {std::begin(exp::kAllModes), std::end(exp::kAllModes)};
    modes.push_back(exp::parse_mode(n));
  }
  return modes;
}

int run_check(const GlobalOptions& g, bool quick) {
  acceptance::Options opt;
  opt.config = make_context(g).config;
  opt.workdir = fs::path(g.workdir) / "acceptance";
  opt.quick = quick;
  opt.quiet = g.quiet;
  const auto results = acceptance::run_all(opt, [](const acceptance::CriterionResult& r) {
    std::cout << acceptance::format_result(r) << std::endl;
  });
  for (const auto& r : results)
    if (!r.skipped && !r.passed) return exp::kExitGate;
  return exp::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Training reallocates the same large activation buffers every step;
  // keeping them on the heap avoids a page-fault storm from fresh mmaps.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Rollable latent space experiments on synthetic SAR chips"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("-w,--workdir", g.workdir, "Working directory for data, checkpoints and reports");
  app.add_option("-c,--config", g.config_path, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
  app.add_option("-s,--set", g.overrides, "Override one key, e.g. --set beta=1e-5 (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress lines");

  auto* generate = app.add_subcommand("generate", "Render the rls-train, cls-train and cls-test datasets");
  auto* train_rls = app.add_subcommand("train-rls", "Train the rollable-latent autoencoder");

  auto* train_cls = app.add_subcommand("train-classifier", "Train one classifier per replica seed");
  std::vector<std::string> train_modes;
  train_cls->add_option("-m,--mode", train_modes, "rls-aug, rls-noaug, baseline or all")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score every replica on cls-test and write the report");
  std::vector<std::string> eval_modes{"all"};
  evaluate->add_option("-m,--mode", eval_modes, "Modes to evaluate (default all)");

  auto* demo = app.add_subcommand("roll-demo", "Decode one chip's latent at evenly spaced rolls");
  std::size_t chip = 0;
  std::size_t steps = 0;
  std::string out;
  demo->add_option("--chip", chip, "Index into rls-train");
  demo->add_option("--steps", steps, "Number of frames (default: demo_steps from the config)");
  demo->add_option("-o,--out", out, "Output graymap (default <workdir>/reports/roll-demo.pgm)");

  auto* check = app.add_subcommand("check", "Run the acceptance criteria; exit 5 if any fails");
  bool quick = false;
  check->add_flag("--quick", quick, "Skip the full protocol run (criteria 5 and 6)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exp::kExitOk : exp::kExitConfig;
  }

  try {
    if (*check) return run_check(g, quick);
    const auto ctx = make_context(g);
    if (*generate) {
      exp::cmd_generate(ctx);
    } else if (*train_rls) {
      exp::cmd_train_rls(ctx);
    } else if (*train_cls) {
      for (auto m : parse_modes(train_modes)) exp::cmd_train_classifier(ctx, m);
    } else if (*evaluate) {
      std::cout << exp::format_report(exp::cmd_evaluate(ctx, parse_modes(eval_modes)));
    } else if (*demo) {
      const fs::path target = out.empty() ? ctx.layout.reports() / "roll-demo.pgm" : fs::path(out);
      exp::cmd_roll_demo(ctx, chip, steps ? steps : ctx.config.demo_steps, target);
    }
    return exp::kExitOk;
  } catch (const exp::ConfigError& e) {
    std::cerr << "config error (" << e.key() << "): " << e.what() << '\n';
    return exp::kExitConfig;
  } catch (const exp::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return exp::kExitMissingArtifact;
  } catch (const exp::ArtifactMismatch& e) {
    std::cerr << "artifact mismatch: " << e.what() << '\n';
    return exp::kExitMissingArtifact;
  } catch (const train::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return exp::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
