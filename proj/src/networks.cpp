#include "rls/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <type_traits>

namespace rls::nets {

void NetworkSpec::validate() const {
  if (channels.empty()) throw std::invalid_argument("network needs at least one conv stage");
  for (auto c : channels)
    if (c == 0) throw std::invalid_argument("channel widths must be positive");
  if (image_size == 0 || (image_size % (std::size_t{1} << stages())) != 0)
    throw std::invalid_argument("image size " + std::to_string(image_size) + " not divisible by 2^" +
                                std::to_string(stages()));
  if (sub_vectors == 0 || bins == 0) throw std::invalid_argument("latent K and N must be positive");
  if (decoder_hidden == 0 || classifier_hidden == 0 || classes < 2 || kernel == 0 || kernel % 2 == 0)
    throw std::invalid_argument("invalid network widths");
}

namespace {

enum class Role { hidden, output };

Tensor uniform_tensor(Shape shape, std::size_t fan_in, Role role, Rng& rng) {
  const double bound = std::sqrt((role == Role::hidden ? 6.0 : 3.0) / static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

ConvLayer make_conv(std::size_t in, std::size_t out, std::size_t k, Role role, Rng& rng) {
  return {uniform_tensor({out, in, k, k}, in * k * k, role, rng), Tensor({out})};
}

DenseLayer make_dense(std::size_t in, std::size_t out, Role role, Rng& rng) {
  return {uniform_tensor({in, out}, in, role, rng), Tensor({out})};
}

std::vector<ConvLayer> make_trunk(const NetworkSpec& spec, Rng& rng) {
  std::vector<ConvLayer> convs;
  std::size_t in = 1;
  for (auto c : spec.channels) {
    convs.push_back(make_conv(in, c, spec.kernel, Role::hidden, rng));
    in = c;
  }
  return convs;
}

template <class T>
ad::Var bind(ad::Graph& g, T& t) {
  if constexpr (std::is_const_v<T>)
    return g.reference(t);
  else
    return g.leaf(t);
}

template <class Layer>
ad::Var dense(ad::Graph& g, Layer& layer, ad::Var x) {
  return ad::affine(x, bind(g, layer.weight), bind(g, layer.bias));
}

template <class Layer>
ad::Var conv(ad::Graph& g, Layer& layer, ad::Var x, std::size_t stride, std::size_t pad) {
  return ad::conv2d(x, bind(g, layer.weight), bind(g, layer.bias), stride, pad);
}

void check_chips(const NetworkSpec& spec, const Shape& s) {
  if (s.size() != 4 || s[1] != 1 || s[2] != spec.image_size || s[3] != spec.image_size)
    throw ShapeError("expected chips [B,1," + std::to_string(spec.image_size) + "," +
                     std::to_string(spec.image_size) + "], got " + to_string(s));
}

void check_latent(const NetworkSpec& spec, const Shape& s) {
  if (s.size() != 2 || s[1] != spec.latent_dim())
    throw ShapeError("expected latent batch [B," + std::to_string(spec.latent_dim()) + "], got " + to_string(s));
}

template <class Convs>
ad::Var trunk(ad::Graph& g, Convs& convs, const NetworkSpec& spec, ad::Var x) {
  for (auto& layer : convs) x = ad::relu(conv(g, layer, x, 2, spec.kernel / 2));
  const std::size_t batch = x.shape()[0];
  return ad::reshape(x, {batch, spec.trunk_features()});
}

template <class W>
PosteriorVars encode_impl(ad::Graph& g, W& w, ad::Var chips) {
  check_chips(w.spec, chips.shape());
  const ad::Var features = trunk(g, w.convs, w.spec, chips);
  return {dense(g, w.mean_head, features), dense(g, w.logvar_head, features)};
}

template <class W>
ad::Var decode_impl(ad::Graph& g, W& w, ad::Var z) {
  const auto& spec = w.spec;
  check_latent(spec, z.shape());
  const std::size_t batch = z.shape()[0];
  ad::Var h = ad::relu(dense(g, w.hidden, z));
  h = ad::relu(dense(g, w.expand, h));
  h = ad::reshape(h, {batch, spec.channels.back(), spec.trunk_extent(), spec.trunk_extent()});
  for (std::size_t i = 0; i < w.convs.size(); ++i) {
    h = conv(g, w.convs[i], ad::upsample2x(h), 1, spec.kernel / 2);
    h = i + 1 == w.convs.size() ? ad::sigmoid(h) : ad::relu(h);
  }
  return h;
}

template <class W>
ad::Var classify_impl(ad::Graph& g, W& w, ad::Var z) {
  check_latent(w.spec, z.shape());
  return dense(g, w.logits, ad::relu(dense(g, w.hidden, z)));
}

template <class W>
ad::Var baseline_impl(ad::Graph& g, W& w, ad::Var chips) {
  check_chips(w.spec, chips.shape());
  const ad::Var features = trunk(g, w.convs, w.spec, chips);
  return dense(g, w.logits, ad::relu(dense(g, w.hidden, features)));
}

template <class List, class Convs>
void add_convs(List& out, const std::string& prefix, Convs& convs) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const std::string base = prefix + ".conv" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", &convs[i].weight);
    out.emplace_back(base + ".bias", &convs[i].bias);
  }
}

template <class List, class Layer>
void add_dense(List& out, const std::string& name, Layer& layer) {
  out.emplace_back(name + ".weight", &layer.weight);
  out.emplace_back(name + ".bias", &layer.bias);
}

template <class List, class W>
List encoder_params(W& w) {
  List out;
  add_convs(out, "encoder", w.convs);
  add_dense(out, "encoder.mean", w.mean_head);
  add_dense(out, "encoder.logvar", w.logvar_head);
  return out;
}

template <class List, class W>
List decoder_params(W& w) {
  List out;
  add_dense(out, "decoder.hidden", w.hidden);
  add_dense(out, "decoder.expand", w.expand);
  add_convs(out, "decoder", w.convs);
  return out;
}

template <class List, class W>
List classifier_params(W& w) {
  List out;
  add_dense(out, "classifier.hidden", w.hidden);
  add_dense(out, "classifier.logits", w.logits);
  return out;
}

template <class List, class W>
List baseline_params(W& w) {
  List out;
  add_convs(out, "baseline", w.convs);
  add_dense(out, "baseline.hidden", w.hidden);
  add_dense(out, "baseline.logits", w.logits);
  return out;
}

}  // namespace

EncoderWeights init_encoder(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  EncoderWeights w{spec, make_trunk(spec, rng), {}, {}};
  w.mean_head = make_dense(spec.trunk_features(), spec.latent_dim(), Role::output, rng);
  w.logvar_head = make_dense(spec.trunk_features(), spec.latent_dim(), Role::output, rng);
  std::fill(w.logvar_head.bias.data().begin(), w.logvar_head.bias.data().end(), kEncoderLogvarBias);
  return w;
}

DecoderWeights init_decoder(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  DecoderWeights w{spec, {}, {}, {}};
  w.hidden = make_dense(spec.latent_dim(), spec.decoder_hidden, Role::hidden, rng);
  w.expand = make_dense(spec.decoder_hidden, spec.trunk_features(), Role::hidden, rng);
  for (std::size_t i = spec.stages(); i-- > 0;) {
    const std::size_t in = spec.channels[i];
    const std::size_t out = i == 0 ? 1 : spec.channels[i - 1];
    w.convs.push_back(make_conv(in, out, spec.kernel, i == 0 ? Role::output : Role::hidden, rng));
  }
  // Chips are mostly dark background. Starting the sigmoid near 0.5 makes
  // the first updates drive every decoder ReLU negative, after which the
  // output no longer depends on z.
  std::fill(w.convs.back().bias.data().begin(), w.convs.back().bias.data().end(), kDecoderOutputBias);
  return w;
}

ClassifierWeights init_classifier(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  ClassifierWeights w{spec, {}, {}};
  w.hidden = make_dense(spec.latent_dim(), spec.classifier_hidden, Role::hidden, rng);
  w.logits = make_dense(spec.classifier_hidden, spec.classes, Role::output, rng);
  return w;
}

BaselineCnnWeights init_baseline(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  BaselineCnnWeights w{spec, make_trunk(spec, rng), {}, {}};
  w.hidden = make_dense(spec.trunk_features(), spec.classifier_hidden, Role::hidden, rng);
  w.logits = make_dense(spec.classifier_hidden, spec.classes, Role::output, rng);
  return w;
}

ParamList parameters(EncoderWeights& w) { return encoder_params<ParamList>(w); }
ParamList parameters(DecoderWeights& w) { return decoder_params<ParamList>(w); }
ParamList parameters(ClassifierWeights& w) { return classifier_params<ParamList>(w); }
ParamList parameters(BaselineCnnWeights& w) { return baseline_params<ParamList>(w); }
ConstParamList parameters(const EncoderWeights& w) { return encoder_params<ConstParamList>(w); }
ConstParamList parameters(const DecoderWeights& w) { return decoder_params<ConstParamList>(w); }
ConstParamList parameters(const ClassifierWeights& w) { return classifier_params<ConstParamList>(w); }
ConstParamList parameters(const BaselineCnnWeights& w) { return baseline_params<ConstParamList>(w); }

void set_trainable(const ParamList& params, bool on) {
  for (const auto& [name, t] : params) t->set_requires_grad(on);
}

PosteriorVars encode(ad::Graph& g, EncoderWeights& w, ad::Var chips) { return encode_impl(g, w, chips); }
PosteriorVars encode(ad::Graph& g, const EncoderWeights& w, ad::Var chips) { return encode_impl(g, w, chips); }
ad::Var decode(ad::Graph& g, DecoderWeights& w, ad::Var z) { return decode_impl(g, w, z); }
ad::Var decode(ad::Graph& g, const DecoderWeights& w, ad::Var z) { return decode_impl(g, w, z); }
ad::Var classify(ad::Graph& g, ClassifierWeights& w, ad::Var z) { return classify_impl(g, w, z); }
ad::Var classify(ad::Graph& g, const ClassifierWeights& w, ad::Var z) { return classify_impl(g, w, z); }
ad::Var baseline_logits(ad::Graph& g, BaselineCnnWeights& w, ad::Var chips) { return baseline_impl(g, w, chips); }
ad::Var baseline_logits(ad::Graph& g, const BaselineCnnWeights& w, ad::Var chips) {
  return baseline_impl(g, w, chips);
}

ad::Var reparameterize(ad::Var mean, ad::Var logvar, Rng& rng) {
  Tensor eps(mean.shape());
  for (auto& v : eps.data()) v = rng.normal();
  ad::Graph& g = mean.graph();
  const ad::Var stddev = ad::exp(ad::scale(logvar, 0.5));
  return ad::add(mean, ad::mul(stddev, g.constant(std::move(eps))));
}

Posterior encode(const EncoderWeights& w, const Tensor& chips) {
  ad::Graph g;
  const auto p = encode(g, w, g.reference(chips));
  return {p.mean.value(), p.logvar.value()};
}

Tensor decode(const DecoderWeights& w, const Tensor& z) {
  ad::Graph g;
  return decode(g, w, g.reference(z)).value();
}

Tensor classify(const ClassifierWeights& w, const Tensor& z) {
  ad::Graph g;
  return classify(g, w, g.reference(z)).value();
}

Tensor baseline_logits(const BaselineCnnWeights& w, const Tensor& chips) {
  ad::Graph g;
  return baseline_logits(g, w, g.reference(chips)).value();
}

std::vector<latent::LatentCode> reparameterize(const Posterior& p, std::size_t sub_vectors, std::size_t bins,
                                               Rng& rng) {
  if (p.mean.shape() != p.logvar.shape() || p.mean.rank() != 2 || p.mean.extent(1) != sub_vectors * bins)
    throw ShapeError("reparameterize: posterior " + to_string(p.mean.shape()) + " does not match K*N=" +
                     std::to_string(sub_vectors * bins));
  const std::size_t dim = sub_vectors * bins;
  std::vector<latent::LatentCode> out;
  for (std::size_t b = 0; b < p.mean.extent(0); ++b) {
    std::vector<double> z(dim);
    for (std::size_t i = 0; i < dim; ++i)
      z[i] = p.mean[b * dim + i] + std::exp(0.5 * p.logvar[b * dim + i]) * rng.normal();
    out.emplace_back(sub_vectors, bins, std::move(z));
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [B,C], got " + to_string(logits.shape()));
  const std::size_t rows = logits.extent(0), cols = logits.extent(1);
  std::vector<std::size_t> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (logits[r * cols + c] > logits[r * cols + best]) best = c;
    out[r] = best;
  }
  return out;
}

}  // namespace rls::nets
