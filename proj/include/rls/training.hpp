#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rls/networks.hpp"
#include "rls/optim.hpp"
#include "rls/rng.hpp"
#include "rls/synthetic.hpp"

namespace rls::train {

// Raised when a loss turns non-finite; carries enough to replay the failure.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t step, std::uint64_t seed)
      : std::runtime_error(what + " at step " + std::to_string(step) + " (seed " + std::to_string(seed) + ")"),
        step_(step),
        seed_(seed) {}
  std::size_t step() const { return step_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::size_t step_;
  std::uint64_t seed_;
};

// Stacks chips into a [B, 1, 64, 64] tensor.
Tensor stack_chips(const std::vector<data::Chip>& chips, std::span<const std::size_t> indices);

// ---- cross-view pairs -------------------------------------------------------

struct ChipPair {
  std::size_t source = 0;  // chip index of X(theta_i)
  std::size_t target = 0;  // chip index of X(theta_j)
  long shift = 0;          // bin(theta_j) - bin(theta_i), in (-N, N)
};

struct PairBatch {
  Tensor source;  // [B, 1, 64, 64]
  Tensor target;  // [B, 1, 64, 64]
  std::vector<long> shifts;
  std::vector<std::uint64_t> objects;  // (class_id << 32) | instance_id
  std::vector<ChipPair> pairs;
};

// Groups chips by object instance and nearest azimuth bin. Objects seen at
// fewer than two distinct bins cannot form a pair and are excluded, unless
// bins == 1.
class PairSampler {
 public:
  PairSampler(const std::vector<data::Chip>& chips, std::size_t bins);

  std::size_t eligible_objects() const { return objects_.size(); }
  std::size_t excluded_objects() const { return excluded_; }

  // Uniform object, then two distinct bins of it, then a chip at each bin.
  // With bins == 1 both chips come from the single bin and the shift is 0.
  ChipPair sample_pair(Rng& rng) const;
  PairBatch sample(std::size_t batch_size, Rng& rng) const;

 private:
  struct Object {
    std::uint64_t key;
    std::vector<std::size_t> bins;
    std::vector<std::vector<std::size_t>> chips_at_bin;
  };

  const std::vector<data::Chip>& chips_;
  std::vector<Object> objects_;
  std::size_t excluded_ = 0;
};

// ---- RLS autoencoder ---------------------------------------------------------

struct LossBreakdown {
  double reconstruction = 0.0;  // mean squared error per pixel
  double kl = 0.0;              // mean KL per chip
  double beta = 0.0;            // KL weight in effect for this step
  double total = 0.0;           // reconstruction + beta * kl
};

struct RlsTrainConfig {
  std::size_t epochs = 12;
  std::size_t batch_size = 16;
  std::size_t steps_per_epoch = 0;  // 0: chips / batch_size
  double learning_rate = 1e-3;
  double beta = 1e-6;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 1;
};

// Decoder(Roll(reparameterize(Encoder(source)), shift)) against target, plus
// beta * KL of the unrolled posterior; one Adam step over encoder+decoder.
// Returns the losses measured before the update.
LossBreakdown rls_train_step(nets::EncoderWeights& enc, nets::DecoderWeights& dec, const PairBatch& batch,
                             OptimizerState& opt, double beta, Rng& noise_rng);

std::vector<Tensor*> trainable(nets::EncoderWeights& enc, nets::DecoderWeights& dec);

using EpochCallback = std::function<void(std::size_t epoch, const LossBreakdown& mean_losses)>;

// Full RLS phase; weights are initialised by the caller. Throws
// NumericalError on a non-finite loss.
std::vector<LossBreakdown> train_rls(nets::EncoderWeights& enc, nets::DecoderWeights& dec,
                                     const std::vector<data::Chip>& chips, const RlsTrainConfig& cfg,
                                     const EpochCallback& on_epoch = {});

// ---- classifiers --------------------------------------------------------------

struct ClassifierTrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  bool augmentation = true;
  std::uint64_t seed = 1;
};

// Posterior means of every chip, [count, K*N], computed in fixed-size chunks.
Tensor encode_means(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips);

// Cross-entropy step on precomputed latent means. With augmentation, each row
// is rolled by an independent uniform shift in [0, N) drawn from aug_rng.
double classifier_train_step(nets::ClassifierWeights& cls, const Tensor& latents, std::span<const std::size_t> labels,
                             OptimizerState& opt, bool augmentation, Rng& aug_rng);

// Same step starting from chips through the frozen encoder.
double classifier_train_step(const nets::EncoderWeights& enc, nets::ClassifierWeights& cls, const Tensor& chips,
                             std::span<const std::size_t> labels, OptimizerState& opt, bool augmentation,
                             Rng& aug_rng);

double baseline_train_step(nets::BaselineCnnWeights& net, const Tensor& chips, std::span<const std::size_t> labels,
                           OptimizerState& opt);

// Per-epoch mean training loss. The classifier is initialised by the caller.
std::vector<double> train_classifier(const nets::EncoderWeights& enc, nets::ClassifierWeights& cls,
                                     const std::vector<data::Chip>& chips, const ClassifierTrainConfig& cfg);
std::vector<double> train_classifier_on_latents(nets::ClassifierWeights& cls, const Tensor& latents,
                                                std::span<const std::size_t> labels, const ClassifierTrainConfig& cfg);
std::vector<double> train_baseline(nets::BaselineCnnWeights& net, const std::vector<data::Chip>& chips,
                                   const ClassifierTrainConfig& cfg);

// ---- latent consistency ----------------------------------------------------

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct ConsistencyReport {
  std::size_t pairs = 0;
  double rolled_similarity = 0.0;    // mean cos(Z_j, Roll(Z_i, j - i))
  double unrolled_similarity = 0.0;  // mean cos(Z_j, Z_i)
  double delta() const { return rolled_similarity - unrolled_similarity; }
};

// Similarities are taken between posterior means after subtracting the mean
// latent over `chips`.
ConsistencyReport latent_consistency(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips,
                                     std::span<const ChipPair> pairs);
ConsistencyReport latent_consistency(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips,
                                     std::size_t n_pairs, Rng& rng);

}  // namespace rls::train
