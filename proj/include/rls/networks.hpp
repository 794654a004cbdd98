#pragma once

// VAE encoder/decoder, latent classifier head, and the baseline CNN.
//
// Encoder: `stages` conv layers (5x5, stride 2, pad 2, ReLU) halving the
// image each time, then two parallel affine heads for mean and logvar.
// Decoder: affine -> ReLU -> affine -> ReLU -> reshape, then per stage a
// nearest 2x upsample and a stride-1 5x5 conv, ReLU between stages and a
// sigmoid on the last. Classifier: affine(K*N -> 120) -> ReLU -> affine(-> 5).
// Baseline: the encoder conv trunk followed by the classifier-shaped head.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rls/autodiff.hpp"
#include "rls/latent.hpp"
#include "rls/rng.hpp"
#include "rls/tensor.hpp"

namespace rls::nets {

struct NetworkSpec {
  std::size_t image_size = 64;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t sub_vectors = 8;
  std::size_t bins = 36;
  std::size_t decoder_hidden = 512;
  std::size_t classifier_hidden = 120;
  std::size_t classes = 5;
  std::size_t kernel = 5;

  std::size_t latent_dim() const { return sub_vectors * bins; }
  std::size_t stages() const { return channels.size(); }
  // Spatial extent after the conv trunk.
  std::size_t trunk_extent() const { return image_size >> stages(); }
  std::size_t trunk_features() const { return channels.back() * trunk_extent() * trunk_extent(); }

  // Throws std::invalid_argument on inconsistent geometry.
  void validate() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct ConvLayer {
  Tensor weight;  // [Cout, Cin, k, k]
  Tensor bias;    // [Cout]
};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

using ParamList = std::vector<std::pair<std::string, Tensor*>>;
using ConstParamList = std::vector<std::pair<std::string, const Tensor*>>;

struct EncoderWeights {
  NetworkSpec spec;
  std::vector<ConvLayer> convs;
  DenseLayer mean_head;
  DenseLayer logvar_head;
};

struct DecoderWeights {
  NetworkSpec spec;
  DenseLayer hidden;
  DenseLayer expand;
  std::vector<ConvLayer> convs;
};

struct ClassifierWeights {
  NetworkSpec spec;
  DenseLayer hidden;
  DenseLayer logits;
};

struct BaselineCnnWeights {
  NetworkSpec spec;
  std::vector<ConvLayer> convs;
  DenseLayer hidden;
  DenseLayer logits;
};

// Initial bias of the decoder's final conv: sigmoid(-3) ~ 0.047, roughly
// the background level of a chip.
inline constexpr double kDecoderOutputBias = -3.0;

// Initial bias of the encoder's log-variance head. Starting with unit
// posterior variance buries the mean under sampling noise and the decoder
// learns to ignore z; exp(-8) keeps early samples close to the mean.
inline constexpr double kEncoderLogvarBias = -8.0;

// Uniform init with bound sqrt(6/fan_in) for layers feeding a ReLU and
// sqrt(3/fan_in) for output layers. Biases are zero except the two above.
// Reproducible per seed.
EncoderWeights init_encoder(const NetworkSpec& spec, Rng& rng);
DecoderWeights init_decoder(const NetworkSpec& spec, Rng& rng);
ClassifierWeights init_classifier(const NetworkSpec& spec, Rng& rng);
BaselineCnnWeights init_baseline(const NetworkSpec& spec, Rng& rng);

// Named parameter views, in a fixed order shared by the optimizer and the
// checkpoint format. Names look like "encoder.conv1.weight".
ParamList parameters(EncoderWeights& w);
ParamList parameters(DecoderWeights& w);
ParamList parameters(ClassifierWeights& w);
ParamList parameters(BaselineCnnWeights& w);
ConstParamList parameters(const EncoderWeights& w);
ConstParamList parameters(const DecoderWeights& w);
ConstParamList parameters(const ClassifierWeights& w);
ConstParamList parameters(const BaselineCnnWeights& w);

// Sets requires_grad on every parameter (allocating or dropping grads).
void set_trainable(const ParamList& params, bool on);

// ---- graph-level forward passes -------------------------------------------
//
// Weights passed by non-const reference enter the graph as gradient-receiving
// leaves when their requires_grad flag is set; const weights enter as
// read-only references and never receive gradients.

struct PosteriorVars {
  ad::Var mean;    // [B, K*N]
  ad::Var logvar;  // [B, K*N]
};

PosteriorVars encode(ad::Graph& g, EncoderWeights& w, ad::Var chips);
PosteriorVars encode(ad::Graph& g, const EncoderWeights& w, ad::Var chips);
ad::Var decode(ad::Graph& g, DecoderWeights& w, ad::Var z);
ad::Var decode(ad::Graph& g, const DecoderWeights& w, ad::Var z);
ad::Var classify(ad::Graph& g, ClassifierWeights& w, ad::Var z);
ad::Var classify(ad::Graph& g, const ClassifierWeights& w, ad::Var z);
ad::Var baseline_logits(ad::Graph& g, BaselineCnnWeights& w, ad::Var chips);
ad::Var baseline_logits(ad::Graph& g, const BaselineCnnWeights& w, ad::Var chips);

// z = mean + exp(0.5 * logvar) * eps with eps ~ N(0, 1) drawn from rng.
ad::Var reparameterize(ad::Var mean, ad::Var logvar, Rng& rng);

// ---- plain-tensor conveniences (forward only) -----------------------------

struct Posterior {
  Tensor mean;    // [B, K*N]
  Tensor logvar;  // [B, K*N]
};

// chips: [B, 1, S, S] with S = spec.image_size.
Posterior encode(const EncoderWeights& w, const Tensor& chips);
// z: [B, K*N]; returns [B, 1, S, S] in (0, 1).
Tensor decode(const DecoderWeights& w, const Tensor& z);
// z: [B, K*N]; returns logits [B, classes].
Tensor classify(const ClassifierWeights& w, const Tensor& z);
Tensor baseline_logits(const BaselineCnnWeights& w, const Tensor& chips);

std::vector<latent::LatentCode> reparameterize(const Posterior& p, std::size_t sub_vectors, std::size_t bins,
                                               Rng& rng);

// Row-wise argmax of [B, C] logits.
std::vector<std::size_t> argmax_rows(const Tensor& logits);

}  // namespace rls::nets
