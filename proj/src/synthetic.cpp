#include "rls/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "rls/binary_format.hpp"

namespace rls::data {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

double wrap_degrees(double theta) {
  double t = std::fmod(theta, 360.0);
  if (t < 0.0) t += 360.0;
  return t >= 360.0 ? 0.0 : t;
}

// Signed difference a - b folded into (-180, 180].
double angle_difference(double a, double b) {
  double d = wrap_degrees(a - b);
  return d > 180.0 ? d - 360.0 : d;
}

}  // namespace

std::vector<ScattererModel> make_class_templates(std::size_t n_classes, Rng& rng) {
  if (n_classes < 1) throw std::invalid_argument("make_class_templates: need at least one class");
  std::vector<ScattererModel> out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    ScattererModel m;
    m.class_id = static_cast<std::uint32_t>(c);
    m.footprint_length = rng.uniform(4.5, 8.0);
    m.footprint_width = rng.uniform(2.2, 3.6);
    const std::size_t count = 5 + rng.below(6);
    for (std::size_t i = 0; i < count; ++i) {
      Scatterer s;
      s.x = rng.uniform(-0.5, 0.5) * m.footprint_length;
      s.y = rng.uniform(-0.5, 0.5) * m.footprint_width;
      s.amplitude = rng.uniform(0.4, 1.0);
      s.visibility_center_deg = rng.uniform(0.0, 360.0);
      s.visibility_width_deg = rng.uniform(120.0, 300.0);
      m.scatterers.push_back(s);
    }
    out.push_back(std::move(m));
  }
  return out;
}

ScattererModel make_instance(const ScattererModel& tmpl, const JitterSettings& jitter, std::uint64_t instance_seed) {
  Rng rng(instance_seed);
  ScattererModel m = tmpl;
  const double hx = 0.5 * m.footprint_length, hy = 0.5 * m.footprint_width;
  for (auto& s : m.scatterers) {
    s.x = std::clamp(s.x + jitter.position_sigma * rng.normal(), -hx, hx);
    s.y = std::clamp(s.y + jitter.position_sigma * rng.normal(), -hy, hy);
    s.amplitude *= std::exp(jitter.amplitude_log_sigma * rng.normal());
  }
  return m;
}

double visibility(const Scatterer& s, double theta_deg, double floor) {
  const double d = angle_difference(theta_deg, s.visibility_center_deg);
  const double half = 0.5 * s.visibility_width_deg;
  double window = 0.0;
  if (half >= 180.0)
    window = 1.0;
  else if (std::abs(d) < half)
    window = 0.5 * (1.0 + std::cos(std::numbers::pi * d / half));
  return floor + (1.0 - floor) * window;
}

Chip render_chip(const ScattererModel& instance, double theta_deg, Rng& rng, const RenderSettings& settings) {
  constexpr auto n = static_cast<long>(kChipSize);
  Chip chip;
  chip.class_id = instance.class_id;
  chip.azimuth_deg = wrap_degrees(theta_deg);

  const double shift_x = rng.uniform(-settings.max_shift_px, settings.max_shift_px);
  const double shift_y = rng.uniform(-settings.max_shift_px, settings.max_shift_px);
  const double centre = 0.5 * static_cast<double>(kChipSize - 1);
  const double c = std::cos(theta_deg * kDegToRad), s = std::sin(theta_deg * kDegToRad);
  const double sigma = settings.psf_sigma_px;
  const long reach = static_cast<long>(std::ceil(4.0 * sigma));

  std::vector<double> intensity(kChipSize * kChipSize, instance.clutter);
  for (const auto& sc : instance.scatterers) {
    const double amp = sc.amplitude * visibility(sc, theta_deg, settings.visibility_floor);
    if (amp == 0.0) continue;
    const double u = c * sc.x - s * sc.y;
    const double v = s * sc.x + c * sc.y;
    const double col = centre + shift_x + u / settings.pixel_spacing;
    const double row = centre + shift_y - v / settings.pixel_spacing;
    const long r0 = static_cast<long>(std::floor(row)), c0 = static_cast<long>(std::floor(col));
    for (long r = std::max(0L, r0 - reach); r <= std::min(n - 1, r0 + reach); ++r)
      for (long q = std::max(0L, c0 - reach); q <= std::min(n - 1, c0 + reach); ++q) {
        const double dr = static_cast<double>(r) - row, dc = static_cast<double>(q) - col;
        intensity[static_cast<std::size_t>(r * n + q)] += amp * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
      }
  }

  double peak = 0.0;
  for (std::size_t i = 0; i < intensity.size(); ++i) {
    const double speckled = settings.speckle ? intensity[i] * rng.exponential() : intensity[i];
    chip.pixels[i] = std::log1p(settings.compression_gain * speckled);
    peak = std::max(peak, chip.pixels[i]);
  }
  if (peak > 0.0)
    for (auto& p : chip.pixels) p /= peak;
  else
    std::fill(chip.pixels.begin(), chip.pixels.end(), 0.0);
  return chip;
}

bool AzimuthInterval::contains(double theta_deg) const {
  if (width() >= 360.0) return true;
  return wrap_degrees(theta_deg - lo_deg) <= width();
}

bool AzimuthInterval::overlaps(const AzimuthInterval& other) const {
  if (width() >= 360.0 || other.width() >= 360.0) return true;
  return wrap_degrees(other.lo_deg - lo_deg) < width() || wrap_degrees(lo_deg - other.lo_deg) < other.width();
}

Dataset generate_dataset(const std::vector<ScattererModel>& templates, const SplitSpec& split,
                         const RenderSettings& render, const JitterSettings& jitter) {
  if (!(split.interval.width() > 0.0) || split.interval.width() > 360.0)
    throw std::invalid_argument("generate_dataset: azimuth interval [" + std::to_string(split.interval.lo_deg) + ", " +
                                std::to_string(split.interval.hi_deg) + "] is empty or wider than 360 degrees");
  if (split.per_class < 1 || split.instances_per_class < 1 || split.template_ids.empty())
    throw std::invalid_argument("generate_dataset: need per_class >= 1, instances >= 1 and at least one class");

  std::vector<ScattererModel> instances;
  for (std::size_t label = 0; label < split.template_ids.size(); ++label) {
    const auto tid = split.template_ids[label];
    if (tid >= templates.size()) throw std::out_of_range("generate_dataset: template id out of range");
    for (std::size_t i = 0; i < split.instances_per_class; ++i) {
      auto inst = make_instance(templates[tid], jitter, mix_seed(mix_seed(split.instance_seed, tid), i));
      inst.class_id = static_cast<std::uint32_t>(label);
      instances.push_back(std::move(inst));
    }
  }

  Dataset ds;
  const std::size_t total = split.template_ids.size() * split.per_class;
  ds.chips.resize(total);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t idx = 0; idx < total; ++idx) {
    const std::size_t label = idx / split.per_class;
    const std::size_t instance = (idx % split.per_class) % split.instances_per_class;
    Rng rng(mix_seed(split.seed, idx));
    const double theta = split.interval.lo_deg + split.interval.width() * rng.uniform();
    Chip chip = render_chip(instances[label * split.instances_per_class + instance], theta, rng, render);
    chip.instance_id = static_cast<std::uint32_t>(instance);
    ds.chips[idx] = std::move(chip);
  }

  auto& m = ds.manifest;
  m.role = split.role;
  m.template_ids = split.template_ids;
  m.class_counts.assign(split.template_ids.size(), split.per_class);
  m.instances_per_class = split.instances_per_class;
  m.coverage = split.interval;
  m.generator_seed = split.seed;
  m.instance_seed = split.instance_seed;
  return ds;
}

std::string encode_chips(const std::vector<Chip>& chips) {
  io::ByteWriter w;
  w.bytes("RLSC");
  w.u32(kChipFileVersion);
  w.u32(static_cast<std::uint32_t>(chips.size()));
  w.u32(kChipSize);
  w.u32(kChipSize);
  for (const auto& c : chips) {
    w.u32(c.class_id);
    w.u32(c.instance_id);
    w.f64(c.azimuth_deg);
    for (double p : c.pixels) w.f64(p);
  }
  return w.buffer();
}

std::vector<Chip> decode_chips(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "RLSC") throw io::FormatError(io::FormatErrc::bad_magic, "not an RLSC chip file");
  const auto version = r.u32();
  if (version != kChipFileVersion)
    throw io::FormatError(io::FormatErrc::version_mismatch,
                          "chip file version " + std::to_string(version) + ", reader supports " +
                              std::to_string(kChipFileVersion));
  const auto count = r.u32();
  const auto h = r.u32(), w = r.u32();
  if (h != kChipSize || w != kChipSize)
    throw io::FormatError(io::FormatErrc::malformed,
                          "chip size " + std::to_string(h) + "x" + std::to_string(w) + ", expected 64x64");
  const std::size_t record = 4 + 4 + 8 + 8 * kChipSize * kChipSize;
  if (r.remaining() < count * record)
    throw io::FormatError(io::FormatErrc::truncated_payload, std::to_string(count) + " chips declared, " +
                                                                 std::to_string(r.remaining() / record) + " present");
  std::vector<Chip> chips(count);
  for (auto& c : chips) {
    c.class_id = r.u32();
    c.instance_id = r.u32();
    c.azimuth_deg = r.f64();
    for (auto& p : c.pixels) p = r.f64();
  }
  if (r.remaining() != 0) throw io::FormatError(io::FormatErrc::malformed, "trailing bytes after last chip");
  return chips;
}

void write_chips(const std::filesystem::path& path, const std::vector<Chip>& chips) {
  io::write_file(path, encode_chips(chips));
}

std::vector<Chip> read_chips(const std::filesystem::path& path) { return decode_chips(io::read_file(path)); }

namespace {

template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <class T>
std::vector<T> split_list(const std::string& s) {
  std::vector<T> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(static_cast<T>(std::stoull(item)));
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string format_degrees(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string format_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  os << "role = " << m.role << '\n'
     << "chips = " << [&] {
          std::size_t n = 0;
          for (auto c : m.class_counts) n += c;
          return n;
        }() << '\n'
     << "template_ids = " << join(m.template_ids) << '\n'
     << "class_counts = " << join(m.class_counts) << '\n'
     << "instances_per_class = " << m.instances_per_class << '\n'
     << "azimuth_lo_deg = " << format_degrees(m.coverage.lo_deg) << '\n'
     << "azimuth_hi_deg = " << format_degrees(m.coverage.hi_deg) << '\n'
     << "generator_seed = " << m.generator_seed << '\n'
     << "instance_seed = " << m.instance_seed << '\n'
     << "chip_file = " << m.chip_file << '\n'
     << "chip_file_sha256 = " << m.chip_file_sha256 << '\n';
  return os.str();
}

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "role") m.role = value;
    else if (key == "template_ids") m.template_ids = split_list<std::uint32_t>(value);
    else if (key == "class_counts") m.class_counts = split_list<std::size_t>(value);
    else if (key == "instances_per_class") m.instances_per_class = std::stoull(value);
    else if (key == "azimuth_lo_deg") m.coverage.lo_deg = std::stod(value);
    else if (key == "azimuth_hi_deg") m.coverage.hi_deg = std::stod(value);
    else if (key == "generator_seed") m.generator_seed = std::stoull(value);
    else if (key == "instance_seed") m.instance_seed = std::stoull(value);
    else if (key == "chip_file") m.chip_file = value;
    else if (key == "chip_file_sha256") m.chip_file_sha256 = value;
  }
  return m;
}

DatasetManifest save_dataset(const std::filesystem::path& dir, Dataset& dataset) {
  auto& m = dataset.manifest;
  const std::string bytes = encode_chips(dataset.chips);
  m.chip_file = m.role + ".rlsc";
  m.chip_file_sha256 = io::sha256_hex(bytes);
  io::write_file(dir / m.chip_file, bytes);
  io::write_file(dir / (m.role + ".manifest"), format_manifest(m));
  return m;
}

Dataset load_dataset(const std::filesystem::path& dir, const std::string& role) {
  Dataset ds;
  ds.manifest = parse_manifest(io::read_file(dir / (role + ".manifest")));
  const std::string bytes = io::read_file(dir / (role + ".rlsc"));
  if (!ds.manifest.chip_file_sha256.empty() && io::sha256_hex(bytes) != ds.manifest.chip_file_sha256)
    throw io::FormatError(io::FormatErrc::malformed, role + ".rlsc does not match the digest in its manifest");
  ds.chips = decode_chips(bytes);
  return ds;
}

}  // namespace rls::data
