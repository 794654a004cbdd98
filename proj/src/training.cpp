#include "rls/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rls/latent.hpp"

namespace rls::train {
namespace {

constexpr std::size_t kEncodeChunk = 64;

// Independent streams derived from one config seed.
enum Stream : std::uint64_t {
  kPairStream = 11,
  kNoiseStream = 12,
  kShuffleStream = 21,
  kAugmentStream = 22,
};

std::vector<Tensor*> ensure_trainable(const nets::ParamList& params) {
  std::vector<Tensor*> out;
  for (const auto& [name, t] : params) {
    if (!t->requires_grad()) t->set_requires_grad(true);
    out.push_back(t);
  }
  return out;
}

void zero_grads(const std::vector<Tensor*>& params) {
  for (Tensor* p : params) p->zero_grad();
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> rows) {
  const std::size_t width = m.extent(1);
  Tensor out({rows.size(), width});
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(rows[r] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * width));
  return out;
}

std::vector<std::size_t> labels_of(const std::vector<data::Chip>& chips, std::span<const std::size_t> idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(chips[i].class_id);
  return out;
}

}  // namespace

Tensor stack_chips(const std::vector<data::Chip>& chips, std::span<const std::size_t> indices) {
  constexpr std::size_t px = data::kChipSize * data::kChipSize;
  Tensor out({indices.size(), 1, data::kChipSize, data::kChipSize});
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy(chips.at(indices[b]).pixels.begin(), chips.at(indices[b]).pixels.end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * px));
  return out;
}

PairSampler::PairSampler(const std::vector<data::Chip>& chips, std::size_t bins) : chips_(chips) {
  if (bins == 0) throw std::invalid_argument("PairSampler: need at least one azimuth bin");
  // With a single bin every view shares bin 0 and pairs carry shift 0.
  const auto bin_of = [&](double theta) {
    return bins == 1 ? std::size_t{0} : latent::AzimuthMapping(bins).nearest(theta);
  };
  std::map<std::uint64_t, std::map<std::size_t, std::vector<std::size_t>>> grouped;
  for (std::size_t i = 0; i < chips.size(); ++i) {
    const std::uint64_t key = (std::uint64_t{chips[i].class_id} << 32) | chips[i].instance_id;
    grouped[key][bin_of(chips[i].azimuth_deg)].push_back(i);
  }
  for (auto& [key, by_bin] : grouped) {
    if (by_bin.size() < 2 && bins > 1) {
      ++excluded_;
      continue;
    }
    Object o{key, {}, {}};
    for (auto& [bin, idx] : by_bin) {
      o.bins.push_back(bin);
      o.chips_at_bin.push_back(std::move(idx));
    }
    objects_.push_back(std::move(o));
  }
}

ChipPair PairSampler::sample_pair(Rng& rng) const {
  if (objects_.empty()) throw std::runtime_error("no object has chips at two distinct azimuth bins");
  const Object& o = objects_[rng.below(objects_.size())];
  const std::size_t a = rng.below(o.bins.size());
  std::size_t b = a;
  if (o.bins.size() > 1) {
    b = rng.below(o.bins.size() - 1);
    if (b >= a) ++b;
  }
  ChipPair p;
  p.source = o.chips_at_bin[a][rng.below(o.chips_at_bin[a].size())];
  p.target = o.chips_at_bin[b][rng.below(o.chips_at_bin[b].size())];
  p.shift = static_cast<long>(o.bins[b]) - static_cast<long>(o.bins[a]);
  return p;
}

PairBatch PairSampler::sample(std::size_t batch_size, Rng& rng) const {
  PairBatch batch;
  std::vector<std::size_t> src, tgt;
  for (std::size_t i = 0; i < batch_size; ++i) {
    const ChipPair p = sample_pair(rng);
    batch.pairs.push_back(p);
    batch.shifts.push_back(p.shift);
    batch.objects.push_back((std::uint64_t{chips_[p.source].class_id} << 32) | chips_[p.source].instance_id);
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  batch.source = stack_chips(chips_, src);
  batch.target = stack_chips(chips_, tgt);
  return batch;
}

std::vector<Tensor*> trainable(nets::EncoderWeights& enc, nets::DecoderWeights& dec) {
  auto params = ensure_trainable(nets::parameters(enc));
  for (Tensor* t : ensure_trainable(nets::parameters(dec))) params.push_back(t);
  return params;
}

LossBreakdown rls_train_step(nets::EncoderWeights& enc, nets::DecoderWeights& dec, const PairBatch& batch,
                             OptimizerState& opt, double beta, Rng& noise_rng) {
  const auto params = trainable(enc, dec);
  zero_grads(params);
  const auto& spec = enc.spec;
  const double rows = static_cast<double>(batch.shifts.size());

  ad::Graph g;
  const auto post = nets::encode(g, enc, g.reference(batch.source));
  const ad::Var z = nets::reparameterize(post.mean, post.logvar, noise_rng);
  const ad::Var rolled = latent::roll_batch(z, batch.shifts, spec.sub_vectors, spec.bins);
  const ad::Var recon = nets::decode(g, dec, rolled);
  const ad::Var diff = ad::sub(recon, g.reference(batch.target));
  const ad::Var rec = ad::mean(ad::mul(diff, diff));
  const ad::Var kl = ad::scale(ad::gaussian_kl(post.mean, post.logvar), 1.0 / rows);
  const ad::Var total = ad::add(rec, ad::scale(kl, beta));

  LossBreakdown out{rec.value().item(), kl.value().item(), beta, total.value().item()};
  if (!std::isfinite(out.total)) throw NumericalError("non-finite RLS loss", opt.step + 1, 0);
  g.backward(total);
  adam_update(params, opt);
  return out;
}

std::vector<LossBreakdown> train_rls(nets::EncoderWeights& enc, nets::DecoderWeights& dec,
                                     const std::vector<data::Chip>& chips, const RlsTrainConfig& cfg,
                                     const EpochCallback& on_epoch) {
  const PairSampler sampler(chips, enc.spec.bins);
  Rng pair_rng(mix_seed(cfg.seed, kPairStream));
  Rng noise_rng(mix_seed(cfg.seed, kNoiseStream));
  auto opt = make_adam(trainable(enc, dec), {cfg.learning_rate});

  const std::size_t steps_per_epoch =
      cfg.steps_per_epoch ? cfg.steps_per_epoch : std::max<std::size_t>(1, chips.size() / cfg.batch_size);
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const auto warmup = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.warmup_fraction * static_cast<double>(total_steps))));

  std::vector<LossBreakdown> history;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossBreakdown sum;
    for (std::size_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const double ramp = std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
      const PairBatch batch = sampler.sample(cfg.batch_size, pair_rng);
      LossBreakdown l;
      try {
        l = rls_train_step(enc, dec, batch, opt, cfg.beta * ramp, noise_rng);
      } catch (const NumericalError& e) {
        throw NumericalError("non-finite RLS loss", e.step(), cfg.seed);
      }
      sum.reconstruction += l.reconstruction;
      sum.kl += l.kl;
      sum.total += l.total;
      sum.beta = l.beta;
    }
    const double n = static_cast<double>(steps_per_epoch);
    LossBreakdown mean{sum.reconstruction / n, sum.kl / n, sum.beta, sum.total / n};
    history.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return history;
}

Tensor encode_means(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips) {
  const std::size_t dim = enc.spec.latent_dim();
  Tensor out({std::max<std::size_t>(chips.size(), 1), dim});
  for (std::size_t begin = 0; begin < chips.size(); begin += kEncodeChunk) {
    const std::size_t end = std::min(chips.size(), begin + kEncodeChunk);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto post = nets::encode(enc, stack_chips(chips, idx));
    std::copy(post.mean.data().begin(), post.mean.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * dim));
  }
  return out;
}

double classifier_train_step(nets::ClassifierWeights& cls, const Tensor& latents, std::span<const std::size_t> labels,
                             OptimizerState& opt, bool augmentation, Rng& aug_rng) {
  const auto& spec = cls.spec;
  Tensor z = latents;
  if (augmentation) {
    std::vector<long> shifts(latents.extent(0));
    for (auto& s : shifts) s = static_cast<long>(aug_rng.below(spec.bins));
    z = latent::roll_batch(latents, shifts, spec.sub_vectors, spec.bins);
  }
  const auto params = ensure_trainable(nets::parameters(cls));
  zero_grads(params);
  ad::Graph g;
  const ad::Var loss = ad::softmax_cross_entropy(nets::classify(g, cls, g.reference(z)), labels);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericalError("non-finite classifier loss", opt.step + 1, 0);
  g.backward(loss);
  adam_update(params, opt);
  return value;
}

double classifier_train_step(const nets::EncoderWeights& enc, nets::ClassifierWeights& cls, const Tensor& chips,
                             std::span<const std::size_t> labels, OptimizerState& opt, bool augmentation,
                             Rng& aug_rng) {
  const auto post = nets::encode(enc, chips);
  return classifier_train_step(cls, post.mean, labels, opt, augmentation, aug_rng);
}

double baseline_train_step(nets::BaselineCnnWeights& net, const Tensor& chips, std::span<const std::size_t> labels,
                           OptimizerState& opt) {
  const auto params = ensure_trainable(nets::parameters(net));
  zero_grads(params);
  ad::Graph g;
  const ad::Var loss = ad::softmax_cross_entropy(nets::baseline_logits(g, net, g.reference(chips)), labels);
  const double value = loss.value().item();
  if (!std::isfinite(value)) throw NumericalError("non-finite baseline loss", opt.step + 1, 0);
  g.backward(loss);
  adam_update(params, opt);
  return value;
}

std::vector<double> train_classifier_on_latents(nets::ClassifierWeights& cls, const Tensor& latents,
                                                std::span<const std::size_t> labels, const ClassifierTrainConfig& cfg) {
  Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
  Rng aug_rng(mix_seed(cfg.seed, kAugmentStream));
  auto opt = make_adam(ensure_trainable(nets::parameters(cls)), {cfg.learning_rate});
  const std::size_t n = labels.size();
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, shuffle_rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batches) {
      const std::span<const std::size_t> idx(order.data() + begin, std::min(cfg.batch_size, n - begin));
      std::vector<std::size_t> y;
      for (auto i : idx) y.push_back(labels[i]);
      try {
        sum += classifier_train_step(cls, gather_rows(latents, idx), y, opt, cfg.augmentation, aug_rng);
      } catch (const NumericalError& e) {
        throw NumericalError("non-finite classifier loss", e.step(), cfg.seed);
      }
    }
    history.push_back(sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  return history;
}

std::vector<double> train_classifier(const nets::EncoderWeights& enc, nets::ClassifierWeights& cls,
                                     const std::vector<data::Chip>& chips, const ClassifierTrainConfig& cfg) {
  std::vector<std::size_t> all(chips.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return train_classifier_on_latents(cls, encode_means(enc, chips), labels_of(chips, all), cfg);
}

std::vector<double> train_baseline(nets::BaselineCnnWeights& net, const std::vector<data::Chip>& chips,
                                   const ClassifierTrainConfig& cfg) {
  Rng shuffle_rng(mix_seed(cfg.seed, kShuffleStream));
  auto opt = make_adam(ensure_trainable(nets::parameters(net)), {cfg.learning_rate});
  const std::size_t n = chips.size();
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled(n, shuffle_rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++batches) {
      const std::span<const std::size_t> idx(order.data() + begin, std::min(cfg.batch_size, n - begin));
      try {
        sum += baseline_train_step(net, stack_chips(chips, idx), labels_of(chips, idx), opt);
      } catch (const NumericalError& e) {
        throw NumericalError("non-finite baseline loss", e.step(), cfg.seed);
      }
    }
    history.push_back(sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
  }
  return history;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na * nb);
  return denom > 0.0 ? dot / denom : 0.0;
}

ConsistencyReport latent_consistency(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips,
                                     std::span<const ChipPair> pairs) {
  const auto& spec = enc.spec;
  const std::size_t dim = spec.latent_dim();
  Tensor means = encode_means(enc, chips);
  std::vector<double> centre(dim, 0.0);
  for (std::size_t r = 0; r < chips.size(); ++r)
    for (std::size_t i = 0; i < dim; ++i) centre[i] += means[r * dim + i];
  for (auto& c : centre) c /= static_cast<double>(chips.size());
  for (std::size_t r = 0; r < chips.size(); ++r)
    for (std::size_t i = 0; i < dim; ++i) means[r * dim + i] -= centre[i];

  ConsistencyReport report;
  report.pairs = pairs.size();
  double rolled = 0.0, unrolled = 0.0;
  for (const auto& p : pairs) {
    const std::span<const double> src(means.data().data() + p.source * dim, dim);
    const std::span<const double> tgt(means.data().data() + p.target * dim, dim);
    const Tensor src_row({1, dim}, std::vector<double>(src.begin(), src.end()));
    const long shift[] = {p.shift};
    const Tensor moved = latent::roll_batch(src_row, shift, spec.sub_vectors, spec.bins);
    rolled += cosine_similarity(tgt, moved.data());
    unrolled += cosine_similarity(tgt, src);
  }
  if (!pairs.empty()) {
    report.rolled_similarity = rolled / static_cast<double>(pairs.size());
    report.unrolled_similarity = unrolled / static_cast<double>(pairs.size());
  }
  return report;
}

ConsistencyReport latent_consistency(const nets::EncoderWeights& enc, const std::vector<data::Chip>& chips,
                                     std::size_t n_pairs, Rng& rng) {
  const PairSampler sampler(chips, enc.spec.bins);
  std::vector<ChipPair> pairs;
  for (std::size_t i = 0; i < n_pairs; ++i) pairs.push_back(sampler.sample_pair(rng));
  return latent_consistency(enc, chips, pairs);
}

}  // namespace rls::train
