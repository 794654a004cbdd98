#include "rls/checkpoint.hpp"

#include "rls/binary_format.hpp"

namespace rls::io {

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, t] : sections)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::section(const std::string& name) const {
  for (const auto& [n, t] : sections)
    if (n == name) return t;
  throw FormatError(FormatErrc::malformed, "checkpoint has no section '" + name + "'");
}

void Checkpoint::put(const std::string& name, Tensor value) {
  for (auto& [n, t] : sections)
    if (n == name) {
      t = std::move(value);
      return;
    }
  sections.emplace_back(name, std::move(value));
}

void Checkpoint::put(const nets::ConstParamList& params) {
  for (const auto& [name, t] : params) put(name, Tensor(t->shape(), std::vector<double>(t->data().begin(), t->data().end())));
}

void Checkpoint::load_into(const nets::ParamList& params) const {
  for (const auto& [name, t] : params) {
    const Tensor& src = section(name);
    if (src.shape() != t->shape())
      throw FormatError(FormatErrc::malformed, "section '" + name + "' has shape " + rls::to_string(src.shape()) +
                                                   ", expected " + rls::to_string(t->shape()));
    std::copy(src.data().begin(), src.data().end(), t->data().begin());
  }
}

std::string serialize(const Checkpoint& ckpt) {
  const auto& s = ckpt.spec;
  ByteWriter w;
  w.bytes("RLSW");
  w.u32(kCheckpointVersion);
  for (auto v : {s.image_size, s.kernel, s.sub_vectors, s.bins, s.decoder_hidden, s.classifier_hidden, s.classes})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(s.channels.size()));
  for (auto c : s.channels) w.u32(static_cast<std::uint32_t>(c));
  w.u32(static_cast<std::uint32_t>(ckpt.sections.size()));
  for (const auto& [name, t] : ckpt.sections) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (double v : t.data()) w.f64(v);
  }
  return w.buffer();
}

Checkpoint deserialize(std::string_view bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || r.bytes(4) != "RLSW") throw FormatError(FormatErrc::bad_magic, "not an RLSW checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError(FormatErrc::version_mismatch, "checkpoint version " + std::to_string(version) +
                                                        ", reader supports " + std::to_string(kCheckpointVersion));
  Checkpoint ckpt;
  auto& s = ckpt.spec;
  s.image_size = r.u32();
  s.kernel = r.u32();
  s.sub_vectors = r.u32();
  s.bins = r.u32();
  s.decoder_hidden = r.u32();
  s.classifier_hidden = r.u32();
  s.classes = r.u32();
  const auto stages = r.u32();
  if (stages > 16) throw FormatError(FormatErrc::malformed, "implausible stage count");
  s.channels.resize(stages);
  for (auto& c : s.channels) c = r.u32();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32();
    std::string name(r.bytes(name_len));
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError(FormatErrc::malformed, "section '" + name + "' has bad rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) throw FormatError(FormatErrc::malformed, "section '" + name + "' has a zero extent");
      n *= e;
    }
    if (r.remaining() / 8 < n) throw FormatError(FormatErrc::truncated_payload, "section '" + name + "' cut short");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f64();
    ckpt.sections.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw FormatError(FormatErrc::malformed, "trailing bytes after last section");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, serialize(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace rls::io
