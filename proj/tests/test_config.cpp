#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "rls/config.hpp"

using namespace rls;
using exp::ConfigErrc;

namespace {

ConfigErrc errc_of(const std::string& text) {
  try {
    exp::validate(exp::parse_config(text));
  } catch (const exp::ConfigError& e) {
    return e.code();
  }
  FAIL("accepted: " << text);
  return ConfigErrc::syntax;
}

std::string key_of(const std::string& text) {
  try {
    exp::validate(exp::parse_config(text));
  } catch (const exp::ConfigError& e) {
    CHECK(std::string(e.what()).find(e.key()) != std::string::npos);
    return e.key();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("empty or comment-only text gives the defaults") {
    CHECK(exp::parse_config("") == exp::Config{});
    CHECK(exp::parse_config("# nothing here\n\n   \n") == exp::Config{});
    const exp::Config d;
    CHECK(d.n_bins == 36);
    CHECK(d.n_sub == 8);
    CHECK(d.network_spec().latent_dim() == 288);
    CHECK(d.replica_seeds() == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    exp::validate(d);
  }

  TEST_CASE("values are parsed and later lines win") {
    const auto c = exp::parse_config("n_bins = 12\nbeta=0.5\nspeckle = false\ncls_test_interval = 100, 200\nn_bins = 18\n");
    CHECK(c.n_bins == 18);
    CHECK(c.beta == 0.5);
    CHECK_FALSE(c.speckle);
    CHECK(c.cls_test_interval.lo_deg == 100.0);
    CHECK(c.cls_test_interval.hi_deg == 200.0);
  }

  TEST_CASE("distinct diagnostics name the key") {
    CHECK(errc_of("n_bins = 0") == ConfigErrc::range_error);
    CHECK(key_of("n_bins = 0") == "n_bins");
    CHECK(errc_of("n_binz = 3") == ConfigErrc::unknown_key);
    CHECK(key_of("n_binz = 3") == "n_binz");
    CHECK(errc_of("beta = lots") == ConfigErrc::type_error);
    CHECK(key_of("beta = lots") == "beta");
    CHECK(errc_of("n_seeds = -1") == ConfigErrc::type_error);
    CHECK(errc_of("speckle = maybe") == ConfigErrc::type_error);
    CHECK(errc_of("just words") == ConfigErrc::syntax);
    CHECK(errc_of("beta = nan") == ConfigErrc::type_error);
  }

  TEST_CASE("overlapping classifier intervals are a protocol violation") {
    try {
      exp::validate(exp::parse_config("cls_test_interval = 30, 120"));
      FAIL("overlap accepted");
    } catch (const exp::ConfigError& e) {
      CHECK(e.code() == ConfigErrc::range_error);
      CHECK(std::string(e.what()).find("protocol violation") != std::string::npos);
    }
    // Wrap-around: [-45, 45] and [300, 350] overlap at 315..345.
    CHECK(errc_of("cls_test_interval = 300, 350") == ConfigErrc::range_error);
    exp::validate(exp::parse_config("cls_test_interval = 50, 300"));
  }

  TEST_CASE("format and parse round trip every key") {
    exp::Config c;
    c.seed = 77;
    c.beta = 1.25e-7;
    c.rls_lr = 0.1 + 0.2;
    c.vary_data_seeds = true;
    c.cls_train_interval = {-30.5, 10.25};
    const std::string text = exp::format_config(c);
    CHECK(exp::parse_config(text) == c);
    for (const auto& k : exp::config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
  }

  TEST_CASE("flag overrides win over the file") {
    const auto path = std::filesystem::temp_directory_path() / "rls-test-config.txt";
    std::ofstream(path) << "beta = 0.1\nn_seeds = 3\n";
    auto c = exp::load_config(path);
    std::filesystem::remove(path);
    CHECK(c.beta == 0.1);
    exp::apply_override(c, "beta=0.2");
    exp::apply_override(c, " n_seeds = 7 ");
    CHECK(c.beta == 0.2);
    CHECK(c.n_seeds == 7);
    CHECK_THROWS_AS(exp::apply_override(c, "beta"), exp::ConfigError);
    CHECK_THROWS_AS(exp::load_config("/nonexistent/rls.cfg"), exp::ConfigError);
  }
}
