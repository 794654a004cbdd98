#pragma once

// The eight acceptance criteria as runnable checks. Shared by the `check`
// subcommand and the acceptance test binary.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rls/experiment.hpp"

namespace rls::acceptance {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  bool skipped = false;
  std::string detail;
  double seconds = 0.0;
};

// "PASS  [1] gradient suite: ... (3.2 s)"
std::string format_result(const CriterionResult& r);

CriterionResult gradient_suite(std::size_t cases_per_op, std::uint64_t seed);
CriterionResult roll_algebra(std::size_t cases, std::uint64_t seed);
CriterionResult conv_oracle(std::uint64_t seed);
CriterionResult kl_roll_invariance(std::size_t cases, std::uint64_t seed);

// Full protocol (generate, train-rls, three classifier modes, evaluate) in
// `workdir`; returns the evaluation and the wall time it took.
struct ProtocolRun {
  exp::EvalReport report;
  double seconds = 0.0;
};
ProtocolRun run_protocol(const exp::Config& cfg, const std::filesystem::path& workdir, bool quiet);

CriterionResult surrogate_ordering(const exp::Config& cfg, const ProtocolRun& run);
CriterionResult latent_consistency(const ProtocolRun& run);
// Runs the protocol for `cfg` twice from scratch and once more over the first
// directory, comparing every checkpoint, dataset and metrics file bytewise.
CriterionResult reproducibility(const exp::Config& cfg, const std::filesystem::path& scratch);
// Untrained latent heads and baselines, one per replica seed, on the cls-test
// set of an already generated (and RLS-trained) workdir.
CriterionResult null_calibration(const exp::Config& cfg, const std::filesystem::path& workdir);

// Central interval [lo, hi] of correct counts holding at least `level` of
// the Binomial(n, p) mass, with at most (1 - level)/2 excluded on each side.
std::pair<std::size_t, std::size_t> binomial_interval(std::size_t n, double p, double level);

// Tiny configuration: 2 RLS classes of 10 chips, 2 epochs, 2 seeds.
exp::Config smoke_config();

struct Options {
  exp::Config config;                 // protocol for criteria 5, 6 and 8
  std::filesystem::path workdir;      // scratch space, created if needed
  bool quick = false;                 // skip the full protocol (5, 6), calibrate on the smoke run
  bool quiet = true;
};

// Runs every criterion in order, reporting each as it completes.
std::vector<CriterionResult> run_all(const Options& opt,
                                     const std::function<void(const CriterionResult&)>& on_result = {});

}  // namespace rls::acceptance
