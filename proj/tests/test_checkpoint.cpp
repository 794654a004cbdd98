#include <filesystem>

#include "doctest.h"
#include "rls/binary_format.hpp"
#include "rls/checkpoint.hpp"

using namespace rls;

namespace {

nets::NetworkSpec tiny_spec() {
  nets::NetworkSpec s;
  s.image_size = 16;
  s.channels = {2, 3};
  s.kernel = 3;
  s.sub_vectors = 2;
  s.bins = 4;
  s.decoder_hidden = 6;
  s.classifier_hidden = 5;
  s.classes = 3;
  return s;
}

io::FormatErrc errc_of(std::string_view bytes) {
  try {
    io::deserialize(bytes);
  } catch (const io::FormatError& e) {
    return e.code();
  }
  FAIL("deserialize accepted bad input");
  return io::FormatErrc::io_failure;
}

}  // namespace

TEST_SUITE("checkpoint") {
  TEST_CASE("encoder and decoder weights round trip bitwise") {
    const auto spec = tiny_spec();
    Rng rng(3);
    auto enc = nets::init_encoder(spec, rng);
    auto dec = nets::init_decoder(spec, rng);
    io::Checkpoint ck;
    ck.spec = spec;
    ck.put(nets::parameters(std::as_const(enc)));
    ck.put(nets::parameters(std::as_const(dec)));
    ck.put("meta.seed", Tensor::vector({42.0}));

    const auto path = std::filesystem::temp_directory_path() / "rls-test-ckpt.rlsw";
    io::write_checkpoint(path, ck);
    const auto back = io::read_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(back.spec == spec);
    CHECK(back.section("meta.seed").item() == 42.0);

    Rng other(99);
    auto enc2 = nets::init_encoder(spec, other);
    auto dec2 = nets::init_decoder(spec, other);
    back.load_into(nets::parameters(enc2));
    back.load_into(nets::parameters(dec2));
    const auto a = nets::parameters(std::as_const(enc)), b = nets::parameters(std::as_const(enc2));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
    const auto c = nets::parameters(std::as_const(dec)), d = nets::parameters(std::as_const(dec2));
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(*c[i].second == *d[i].second);
  }

  TEST_CASE("missing sections and shape changes are rejected") {
    const auto spec = tiny_spec();
    Rng rng(3);
    auto enc = nets::init_encoder(spec, rng);
    io::Checkpoint ck;
    ck.spec = spec;
    CHECK_FALSE(ck.has("e1.mean_head.weight"));
    CHECK_THROWS_AS(ck.section("nope"), io::FormatError);
    CHECK_THROWS(ck.load_into(nets::parameters(enc)));

    ck.put(nets::parameters(std::as_const(enc)));
    auto wider = spec;
    wider.channels = {2, 4};
    Rng r2(3);
    auto enc_w = nets::init_encoder(wider, r2);
    CHECK_THROWS(ck.load_into(nets::parameters(enc_w)));
  }

  TEST_CASE("corrupt files report the failure kind") {
    const auto spec = tiny_spec();
    Rng rng(1);
    auto dec = nets::init_decoder(spec, rng);
    io::Checkpoint ck;
    ck.spec = spec;
    ck.put(nets::parameters(std::as_const(dec)));
    const std::string bytes = io::serialize(ck);
    CHECK(bytes.substr(0, 4) == "RLSW");
    CHECK(io::deserialize(bytes).sections.size() == ck.sections.size());

    std::string magic = bytes;
    magic[3] = 'X';
    CHECK(errc_of(magic) == io::FormatErrc::bad_magic);

    std::string version = bytes;
    version[4] = 2;
    CHECK(errc_of(version) == io::FormatErrc::version_mismatch);

    for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1})
      CHECK(errc_of(std::string_view(bytes).substr(0, cut)) != io::FormatErrc::malformed);
    CHECK(errc_of(std::string_view(bytes).substr(0, bytes.size() - 1)) == io::FormatErrc::truncated_payload);

    CHECK_THROWS_AS(io::read_checkpoint("/nonexistent/dir/x.rlsw"), io::FormatError);
  }
}
