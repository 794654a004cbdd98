#pragma once

// Synthetic stand-in for SAR target chips.
//
// A target is a set of point scatterers on a rectangular footprint. Viewing
// it from azimuth theta rotates the layout by theta in the image plane and
// scales each scatterer by an azimuthal visibility window (anisotropic
// returns). Scatterers are splatted as Gaussian blobs on a 64x64 grid,
// corrupted with unit-mean exponential multiplicative speckle,
// log(1 + x)-compressed and normalised to [0, 1].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rls/rng.hpp"

namespace rls::data {

inline constexpr std::size_t kChipSize = 64;

struct Scatterer {
  double x = 0.0;  // metres, along the target's long axis
  double y = 0.0;  // metres, across
  double amplitude = 1.0;
  double visibility_width_deg = 360.0;
  double visibility_center_deg = 0.0;
};

struct ScattererModel {
  std::uint32_t class_id = 0;
  std::vector<Scatterer> scatterers;
  double footprint_length = 6.0;  // metres
  double footprint_width = 3.0;
  double clutter = 0.003;  // background intensity
};

struct RenderSettings {
  double pixel_spacing = 0.15;    // metres per pixel
  double psf_sigma_px = 1.3;
  double visibility_floor = 0.3;  // fraction of amplitude kept outside the window
  double max_shift_px = 1.0;      // per-chip random translation
  double compression_gain = 20.0;
  bool speckle = true;
};

struct JitterSettings {
  double position_sigma = 0.25;  // metres
  double amplitude_log_sigma = 0.15;
};

struct Chip {
  std::uint32_t class_id = 0;
  std::uint32_t instance_id = 0;
  double azimuth_deg = 0.0;  // [0, 360)
  std::vector<double> pixels = std::vector<double>(kChipSize * kChipSize, 0.0);

  friend bool operator==(const Chip&, const Chip&) = default;
};

// Deterministic per rng state. Classes differ in footprint, scatterer count
// (5 to 10) and layout.
std::vector<ScattererModel> make_class_templates(std::size_t n_classes, Rng& rng);

// One physical object of a class: positions and amplitudes perturbed,
// deterministically from instance_seed.
ScattererModel make_instance(const ScattererModel& tmpl, const JitterSettings& jitter, std::uint64_t instance_seed);

// Visibility multiplier of a scatterer seen from theta.
double visibility(const Scatterer& s, double theta_deg, double floor);

// rng drives the per-chip translation and the speckle draw.
Chip render_chip(const ScattererModel& instance, double theta_deg, Rng& rng, const RenderSettings& settings = {});

// ---- datasets ------------------------------------------------------------

struct AzimuthInterval {
  double lo_deg = 0.0;
  double hi_deg = 360.0;

  double width() const { return hi_deg - lo_deg; }
  // Whether theta (any real, taken mod 360) falls inside [lo, hi].
  bool contains(double theta_deg) const;
  // Intersection of positive measure, taking wrap-around into account.
  bool overlaps(const AzimuthInterval& other) const;

  friend bool operator==(const AzimuthInterval&, const AzimuthInterval&) = default;
};

struct DatasetManifest {
  std::string role;  // rls-train | cls-train | cls-test
  std::vector<std::uint32_t> template_ids;
  std::vector<std::size_t> class_counts;
  std::size_t instances_per_class = 1;
  AzimuthInterval coverage;
  std::uint64_t generator_seed = 0;
  std::uint64_t instance_seed = 0;
  std::string chip_file;
  std::string chip_file_sha256;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Chip> chips;
};

struct SplitSpec {
  std::string role;
  std::vector<std::uint32_t> template_ids;  // chip class_id = index into this list
  std::size_t per_class = 1;
  std::size_t instances_per_class = 1;
  AzimuthInterval interval;
  std::uint64_t seed = 0;           // per-chip streams: azimuth, shift, speckle
  std::uint64_t instance_seed = 0;  // object geometry, shared across roles
};

// Chip i draws from its own stream mix_seed(seed, i), so generation order
// and thread count do not affect the result.
Dataset generate_dataset(const std::vector<ScattererModel>& templates, const SplitSpec& split,
                         const RenderSettings& render = {}, const JitterSettings& jitter = {});

// ---- RLSC chip file --------------------------------------------------------
//
//   "RLSC" u32 version(=1) u32 count u32 H(=64) u32 W(=64)
//   per chip: u32 class_id u32 instance_id f64 azimuth_deg f64 pixels[H*W]
// Little-endian throughout.

inline constexpr std::uint32_t kChipFileVersion = 1;

std::string encode_chips(const std::vector<Chip>& chips);
std::vector<Chip> decode_chips(std::string_view bytes);
void write_chips(const std::filesystem::path& path, const std::vector<Chip>& chips);
std::vector<Chip> read_chips(const std::filesystem::path& path);

// Human-readable key = value manifest stored next to the chip file.
std::string format_manifest(const DatasetManifest& m);
DatasetManifest parse_manifest(const std::string& text);

// Writes <dir>/<role>.rlsc and <dir>/<role>.manifest; fills chip_file and
// its digest into the returned manifest.
DatasetManifest save_dataset(const std::filesystem::path& dir, Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir, const std::string& role);

}  // namespace rls::data
