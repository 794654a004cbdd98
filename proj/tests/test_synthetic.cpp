#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "rls/binary_format.hpp"
#include "rls/synthetic.hpp"

using namespace rls;
namespace fs = std::filesystem;

namespace {

double l2(const data::Chip& a, const data::Chip& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += (a.pixels[i] - b.pixels[i]) * (a.pixels[i] - b.pixels[i]);
  return std::sqrt(s);
}

std::vector<data::ScattererModel> templates(std::size_t n = 10) {
  Rng rng(2024);
  return data::make_class_templates(n, rng);
}

fs::path scratch_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("rls-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("templates: deterministic, distinct ids, sane scatterers") {
    const auto a = templates(), b = templates();
    REQUIRE(a.size() == 10);
    std::set<std::uint32_t> ids;
    for (std::size_t c = 0; c < a.size(); ++c) {
      ids.insert(a[c].class_id);
      CHECK(a[c].scatterers.size() >= 3);
      CHECK(a[c].scatterers.size() == b[c].scatterers.size());
      for (std::size_t i = 0; i < a[c].scatterers.size(); ++i) {
        const auto& s = a[c].scatterers[i];
        CHECK(s.x == b[c].scatterers[i].x);
        CHECK(s.amplitude > 0.0);
        CHECK(std::abs(s.x) <= 0.5 * a[c].footprint_length);
        CHECK(std::abs(s.y) <= 0.5 * a[c].footprint_width);
      }
    }
    CHECK(ids.size() == 10);
  }

  TEST_CASE("visibility window") {
    data::Scatterer s;
    s.visibility_center_deg = 90.0;
    s.visibility_width_deg = 120.0;
    CHECK(data::visibility(s, 90.0, 0.3) == doctest::Approx(1.0));
    CHECK(data::visibility(s, 270.0, 0.3) == doctest::Approx(0.3));
    CHECK(data::visibility(s, 150.0, 0.3) == doctest::Approx(0.3));
    CHECK(data::visibility(s, 120.0, 0.0) == doctest::Approx(0.5));
    CHECK(data::visibility(s, 90.0 + 360.0, 0.3) == doctest::Approx(1.0));
    s.visibility_width_deg = 360.0;
    CHECK(data::visibility(s, 270.0, 0.3) == 1.0);
  }

  TEST_CASE("chips are 64x64, finite and in [0, 1]") {
    const auto t = templates();
    for (bool speckle : {false, true})
      for (double theta : {0.0, 33.0, 181.5, 359.9}) {
        data::RenderSettings rs;
        rs.speckle = speckle;
        Rng rng(5);
        const auto chip = data::render_chip(data::make_instance(t[3], {}, 9), theta, rng, rs);
        REQUIRE(chip.pixels.size() == data::kChipSize * data::kChipSize);
        double peak = 0.0;
        for (double p : chip.pixels) {
          REQUIRE(std::isfinite(p));
          REQUIRE(p >= 0.0);
          REQUIRE(p <= 1.0);
          peak = std::max(peak, p);
        }
        CHECK(peak == 1.0);
      }
  }

  TEST_CASE("rotation is periodic in azimuth") {
    const auto inst = data::make_instance(templates()[1], {}, 4);
    data::RenderSettings rs;
    rs.speckle = false;
    Rng a(1), b(1);
    const auto c0 = data::render_chip(inst, 0.0, a, rs);
    const auto c1 = data::render_chip(inst, 360.0 - 1e-9, b, rs);
    CHECK(l2(c0, c1) < 1e-6);
  }

  TEST_CASE("a model with no return renders as zeros") {
    data::ScattererModel m;
    m.clutter = 0.0;
    m.scatterers.push_back({0.0, 0.0, 0.0, 360.0, 0.0});
    Rng rng(1);
    const auto chip = data::render_chip(m, 10.0, rng);
    for (double p : chip.pixels) REQUIRE(p == 0.0);
  }

  TEST_CASE("classes are separable: inter-class distance exceeds intra-class") {
    const auto t = templates(5);
    data::RenderSettings rs;
    double intra = 0.0, inter = 0.0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t i = 0; i < 20; ++i) {
        Rng r(100 * c + i);
        const auto a = data::render_chip(data::make_instance(t[c], {}, 1000 + i), 0.0, r, rs);
        const auto b = data::render_chip(data::make_instance(t[c], {}, 2000 + i), 0.0, r, rs);
        const auto o = data::render_chip(data::make_instance(t[(c + 1) % 5], {}, 3000 + i), 0.0, r, rs);
        intra += l2(a, b);
        inter += l2(a, o);
        ++n_intra;
        ++n_inter;
      }
    CHECK(inter / n_inter > intra / n_intra);
  }

  TEST_CASE("azimuth intervals") {
    const data::AzimuthInterval front{-45.0, 45.0}, back{135.0, 225.0}, all{0.0, 360.0};
    CHECK(front.contains(350.0));
    CHECK(front.contains(0.0));
    CHECK_FALSE(front.contains(90.0));
    CHECK(back.contains(180.0));
    CHECK_FALSE(front.overlaps(back));
    CHECK_FALSE(back.overlaps(front));
    CHECK(front.overlaps({40.0, 60.0}));
    CHECK_FALSE(front.overlaps({280.0, 310.0}));
    CHECK(front.overlaps({300.0, 330.0}) == true);
    CHECK(all.overlaps(front));
    CHECK(all.contains(-720.5));
  }

  TEST_CASE("datasets honour counts and intervals, deterministically") {
    const auto t = templates();
    const data::SplitSpec front{"cls-train", {5, 6, 7, 8, 9}, 12, 3, {-45.0, 45.0}, 77, 13};
    const auto ds = data::generate_dataset(t, front);
    REQUIRE(ds.chips.size() == 60);
    std::vector<std::size_t> per_class(5, 0);
    for (const auto& c : ds.chips) {
      REQUIRE(c.class_id < 5);
      REQUIRE(c.instance_id < 3);
      REQUIRE(front.interval.contains(c.azimuth_deg));
      ++per_class[c.class_id];
    }
    for (auto n : per_class) CHECK(n == 12);
    CHECK(ds.manifest.class_counts == std::vector<std::size_t>(5, 12));
    CHECK(data::generate_dataset(t, front).chips == ds.chips);

    const data::SplitSpec omni{"rls-train", {0, 1, 2, 3, 4}, 300, 5, {0.0, 360.0}, 5, 13};
    const auto rls = data::generate_dataset(t, omni);
    CHECK(rls.chips.size() == 1500);
    double lo = 360.0, hi = 0.0;
    for (const auto& c : rls.chips) lo = std::min(lo, c.azimuth_deg), hi = std::max(hi, c.azimuth_deg);
    CHECK(lo < 5.0);
    CHECK(hi > 355.0);
  }

  TEST_CASE("chip file round trip and negative cases") {
    const auto t = templates();
    const auto ds = data::generate_dataset(t, {"cls-test", {5, 6}, 3, 1, {135.0, 225.0}, 3, 13});
    const std::string bytes = data::encode_chips(ds.chips);
    CHECK(bytes.substr(0, 4) == "RLSC");
    CHECK(bytes.size() == 20 + ds.chips.size() * (16 + 8 * 4096));
    CHECK(data::decode_chips(bytes) == ds.chips);

    try {
      data::decode_chips(bytes.substr(0, bytes.size() - 9));
      FAIL("truncated file accepted");
    } catch (const io::FormatError& e) {
      CHECK(e.code() == io::FormatErrc::truncated_payload);
      CHECK(std::string(e.what()).find("truncated payload") != std::string::npos);
    }
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(data::decode_chips(bad), io::FormatError);

    const std::string empty = data::encode_chips({});
    CHECK(data::decode_chips(empty).empty());
  }

  TEST_CASE("datasets save with a digest and load back") {
    const auto dir = scratch_dir("synthetic");
    auto ds = data::generate_dataset(templates(), {"cls-train", {5, 6}, 4, 2, {-45.0, 45.0}, 3, 13});
    const auto m = data::save_dataset(dir, ds);
    CHECK(m.chip_file == "cls-train.rlsc");
    CHECK(m.chip_file_sha256 == io::sha256_hex(io::read_file(dir / "cls-train.rlsc")));
    const auto back = data::load_dataset(dir, "cls-train");
    CHECK(back.chips == ds.chips);
    CHECK(back.manifest.template_ids == std::vector<std::uint32_t>{5, 6});
    CHECK(back.manifest.coverage.lo_deg == -45.0);

    // Tampering with the chip file is detected through the manifest digest.
    std::string bytes = io::read_file(dir / "cls-train.rlsc");
    bytes[100] ^= 1;
    io::write_file(dir / "cls-train.rlsc", bytes);
    CHECK_THROWS_AS(data::load_dataset(dir, "cls-train"), io::FormatError);
    fs::remove_all(dir);
  }

  TEST_CASE("manifest text round trip") {
    data::DatasetManifest m;
    m.role = "rls-train";
    m.template_ids = {0, 1, 2};
    m.class_counts = {3, 4, 5};
    m.instances_per_class = 2;
    m.coverage = {0.0, 360.0};
    m.generator_seed = 123456789012345ULL;
    m.instance_seed = 7;
    m.chip_file = "rls-train.rlsc";
    m.chip_file_sha256 = std::string(64, 'a');
    const auto back = data::parse_manifest(data::format_manifest(m));
    CHECK(back.role == m.role);
    CHECK(back.template_ids == m.template_ids);
    CHECK(back.class_counts == m.class_counts);
    CHECK(back.generator_seed == m.generator_seed);
    CHECK(back.chip_file_sha256 == m.chip_file_sha256);
  }
}
