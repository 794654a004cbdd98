#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "rls/grad_check.hpp"
#include "rls/latent.hpp"
#include "rls/networks.hpp"

using namespace rls;

namespace {

Tensor random_chips(std::size_t batch, std::size_t size, Rng& rng) {
  Tensor t({batch, 1, size, size});
  for (auto& v : t.data()) v = rng.uniform();
  return t;
}

nets::NetworkSpec small_spec() {
  nets::NetworkSpec s;
  s.image_size = 8;
  s.channels = {3};
  s.kernel = 3;
  s.sub_vectors = 2;
  s.bins = 4;
  s.decoder_hidden = 7;
  s.classifier_hidden = 6;
  return s;
}

}  // namespace

TEST_SUITE("networks") {
  TEST_CASE("default shapes") {
    const nets::NetworkSpec spec;
    CHECK(spec.trunk_extent() == 8);
    CHECK(spec.latent_dim() == 288);
    Rng rng(1);
    const auto enc = nets::init_encoder(spec, rng);
    const auto dec = nets::init_decoder(spec, rng);
    const auto cls = nets::init_classifier(spec, rng);
    const auto base = nets::init_baseline(spec, rng);
    const Tensor chips = random_chips(2, 64, rng);
    const auto post = nets::encode(enc, chips);
    CHECK(post.mean.shape() == Shape{2, 288});
    CHECK(post.logvar.shape() == Shape{2, 288});
    const Tensor img = nets::decode(dec, post.mean);
    CHECK(img.shape() == Shape{2, 1, 64, 64});
    for (double v : img.data()) REQUIRE((v > 0.0 && v < 1.0));
    CHECK(nets::classify(cls, post.mean).shape() == Shape{2, 5});
    CHECK(nets::baseline_logits(base, chips).shape() == Shape{2, 5});
    CHECK(enc.convs.size() == 3);
    CHECK(dec.convs.size() == 3);
  }

  TEST_CASE("identical chips give identical posteriors") {
    const nets::NetworkSpec spec;
    Rng rng(2);
    const auto enc = nets::init_encoder(spec, rng);
    Tensor one = random_chips(1, 64, rng);
    Tensor two({2, 1, 64, 64});
    std::copy(one.data().begin(), one.data().end(), two.data().begin());
    std::copy(one.data().begin(), one.data().end(), two.data().begin() + 4096);
    const auto p = nets::encode(enc, two);
    for (std::size_t i = 0; i < 288; ++i) REQUIRE(p.mean[i] == p.mean[288 + i]);
    CHECK(nets::encode(enc, one).mean == nets::encode(enc, one).mean);
  }

  TEST_CASE("initialisation: reproducible, bounded, zero biases except the two documented ones") {
    const nets::NetworkSpec spec;
    Rng a(5), b(5);
    auto e1 = nets::init_encoder(spec, a);
    auto e2 = nets::init_encoder(spec, b);
    const auto p1 = nets::parameters(std::as_const(e1));
    const auto p2 = nets::parameters(std::as_const(e2));
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(*p1[i].second == *p2[i].second);

    Rng c(6);
    auto dec = nets::init_decoder(spec, c);
    auto base = nets::init_baseline(spec, c);
    for (const auto& list : {nets::parameters(e1), nets::parameters(dec), nets::parameters(base)}) {
      for (const auto& [name, t] : list) {
        CAPTURE(name);
        if (name.ends_with("bias")) {
          const double expect = t == &dec.convs.back().bias      ? nets::kDecoderOutputBias
                                : t == &e1.logvar_head.bias ? nets::kEncoderLogvarBias
                                                            : 0.0;
          for (double v : t->data()) REQUIRE(v == expect);
        } else {
          const auto& s = t->shape();
          const std::size_t fan_in = s.size() == 4 ? s[1] * s[2] * s[3] : s[0];
          const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
          for (double v : t->data()) REQUIRE(std::abs(v) <= bound);
        }
      }
    }
  }

  TEST_CASE("parameter names are stable and prefixed") {
    const nets::NetworkSpec spec;
    Rng rng(7);
    auto enc = nets::init_encoder(spec, rng);
    const auto p = nets::parameters(enc);
    CHECK(p.front().first == "encoder.conv1.weight");
    for (const auto& [name, t] : p) CHECK(name.starts_with("encoder."));
    auto cls = nets::init_classifier(spec, rng);
    for (const auto& [name, t] : nets::parameters(cls)) CHECK(name.starts_with("classifier."));
  }

  TEST_CASE("spec validation") {
    nets::NetworkSpec s;
    s.image_size = 60;
    CHECK_THROWS(s.validate());
    s = {};
    s.channels.clear();
    CHECK_THROWS(s.validate());
    s = {};
    s.bins = 0;
    CHECK_THROWS(s.validate());
    CHECK_NOTHROW(nets::NetworkSpec{}.validate());
  }

  TEST_CASE("zero classifier weights give uniform logits and argmax picks the lowest index") {
    const nets::NetworkSpec spec;
    Rng rng(8);
    auto cls = nets::init_classifier(spec, rng);
    for (auto& [name, t] : nets::parameters(cls))
      for (auto& v : t->data()) v = 0.0;
    Tensor z({3, spec.latent_dim()});
    for (auto& v : z.data()) v = rng.normal();
    const Tensor logits = nets::classify(cls, z);
    for (double v : logits.data()) CHECK(v == 0.0);
    CHECK(nets::argmax_rows(logits) == std::vector<std::size_t>{0, 0, 0});
    CHECK(nets::argmax_rows(Tensor({1, 3}, std::vector<double>{1, 5, 5})) == std::vector<std::size_t>{1});
  }

  TEST_CASE("softmax of classifier logits sums to one") {
    const nets::NetworkSpec spec;
    Rng rng(9);
    const auto cls = nets::init_classifier(spec, rng);
    Tensor z({4, spec.latent_dim()});
    for (auto& v : z.data()) v = rng.normal();
    const Tensor logits = nets::classify(cls, z);
    for (std::size_t r = 0; r < 4; ++r) {
      double m = -1e300, s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) m = std::max(m, logits[r * 5 + c]);
      for (std::size_t c = 0; c < 5; ++c) s += std::exp(logits[r * 5 + c] - m);
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) total += std::exp(logits[r * 5 + c] - m) / s;
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
    const std::vector<long> zero(4, 0);
    CHECK(nets::classify(cls, latent::roll_batch(z, zero, spec.sub_vectors, spec.bins)) == logits);
  }

  TEST_CASE("reparameterize") {
    ad::Graph g;
    Tensor m({1, 6});
    for (std::size_t i = 0; i < 6; ++i) m[i] = static_cast<double>(i) - 2.5;
    Rng r1(3);
    const auto z = nets::reparameterize(g.constant(m), g.constant(Tensor({1, 6}, -60.0)), r1);
    for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(z.value()[i] - m[i]) < 1e-12);

    Rng a(4), b(4);
    const auto za = nets::reparameterize(g.constant(m), g.constant(Tensor({1, 6})), a);
    const auto zb = nets::reparameterize(g.constant(m), g.constant(Tensor({1, 6})), b);
    CHECK(za.value() == zb.value());

    // Monte-Carlo mean: each coordinate has unit variance.
    const std::size_t draws = 100000;
    Rng rng(5);
    const auto zs = nets::reparameterize(g.constant(Tensor({draws, 1}, 0.7)), g.constant(Tensor({draws, 1})), rng);
    double s = 0.0;
    for (double v : zs.value().data()) s += v;
    CHECK(std::abs(s / draws - 0.7) < 5.0 / std::sqrt(static_cast<double>(draws)));
  }

  TEST_CASE("encode-roll-decode loss passes finite differences on the 8x8 surrogate") {
    const auto spec = small_spec();
    Rng rng(10);
    const Tensor chips = random_chips(2, 8, rng);
    const std::vector<long> shifts{1, 3};
    auto enc = nets::init_encoder(spec, rng);
    auto dec = nets::init_decoder(spec, rng);
    // Input-side check through the whole chain with weights fixed.
    auto f = [&](ad::Graph& g, ad::Var x) {
      const auto p = nets::encode(g, std::as_const(enc), x);
      const auto z = latent::roll_batch(p.mean, shifts, spec.sub_vectors, spec.bins);
      const auto d = ad::sub(nets::decode(g, std::as_const(dec), z), g.reference(chips));
      return ad::add(ad::mean(ad::mul(d, d)), ad::gaussian_kl(p.mean, p.logvar));
    };
    CHECK(ad::grad_check(f, chips, 1e-6, 1e-4).passed);

    // Decoder weights: analytic gradients against central differences.
    Tensor z({2, spec.latent_dim()});
    for (auto& v : z.data()) v = rng.normal();
    const auto params = nets::parameters(dec);
    nets::set_trainable(params, true);
    auto loss = [&](ad::Graph& g) {
      const auto d = ad::sub(nets::decode(g, dec, g.reference(z)), g.reference(chips));
      return ad::mean(ad::mul(d, d));
    };
    {
      ad::Graph g;
      g.backward(loss(g));
    }
    for (auto& [name, t] : params) {
      CAPTURE(name);
      for (std::size_t i = 0; i < t->size(); i += 1 + t->size() / 7) {
        const double orig = (*t)[i];
        (*t)[i] = orig + 1e-6;
        ad::Graph g1;
        const double up = loss(g1).value().item();
        (*t)[i] = orig - 1e-6;
        ad::Graph g2;
        const double down = loss(g2).value().item();
        (*t)[i] = orig;
        CHECK(ad::relative_error(t->grad()[i], (up - down) / 2e-6) < 1e-4);
      }
    }
  }
}
