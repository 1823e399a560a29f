#include "msvit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "msvit/config.hpp"

namespace msvit {
namespace {

constexpr char kMagic[4] = {'M', 'S', 'V', 'T'};

// All integers little-endian. The sandbox targets are little-endian, so
// plain byte copies are already canonical; the static_assert documents the
// assumption rather than hiding a byte-swap path that would never run.
static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_bytes(std::ofstream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<uint64_t>(out, s.size());
  write_bytes(out, s.data(), s.size());
}

void read_bytes(std::ifstream& in, void* p, size_t n, const std::string& file) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    raise("checkpoint '" + file + "' is truncated");
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& file) {
  T v;
  read_bytes(in, &v, sizeof(T), file);
  return v;
}

std::string read_string(std::ifstream& in, const std::string& file) {
  auto n = read_pod<uint64_t>(in, file);
  if (n > (1ull << 32)) raise("checkpoint '" + file + "' has an implausible string length");
  std::string s(n, '\0');
  read_bytes(in, s.data(), n, file);
  return s;
}

struct Header {
  uint32_t version = 0;
  std::string config_text;
  uint64_t tensor_count = 0;
};

Header read_header(std::ifstream& in, const std::string& file) {
  if (!in) raise("cannot open checkpoint '" + file + "'");
  char magic[4];
  read_bytes(in, magic, 4, file);
  if (std::memcmp(magic, kMagic, 4) != 0)
    raise("'" + file + "' is not a checkpoint (bad magic bytes)");
  Header h;
  h.version = read_pod<uint32_t>(in, file);
  if (h.version != kCheckpointVersion)
    raise("checkpoint '" + file + "' has format version " + std::to_string(h.version) +
          "; this build reads version " + std::to_string(kCheckpointVersion));
  h.config_text = read_string(in, file);
  h.tensor_count = read_pod<uint64_t>(in, file);
  return h;
}

void load_tensors(std::ifstream& in, Model& model, uint64_t count, const std::string& file) {
  auto& entries = model.params().entries();
  if (count != entries.size())
    raise("checkpoint '" + file + "' holds " + std::to_string(count) + " tensors, model has " +
          std::to_string(entries.size()));
  for (const auto& e : entries) {
    auto path = read_string(in, file);
    if (path != e.path)
      raise("checkpoint '" + file + "' tensor '" + path + "' does not match model entry '" +
            e.path + "'");
    auto is_buffer = read_pod<uint8_t>(in, file);
    if ((is_buffer != 0) != e.buffer)
      raise("checkpoint '" + file + "' disagrees on whether '" + path + "' is a buffer");
    auto rank = read_pod<uint32_t>(in, file);
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<int64_t>(in, file);
    ag::Var var = e.var;  // shared handle; writes land in the model's tensor
    Tensor& dst = var.value();
    if (!same_shape(shape, dst.shape()))
      raise("checkpoint '" + file + "' tensor '" + path + "' has shape " + shape_str(shape) +
            ", model expects " + shape_str(dst.shape()));
    read_bytes(in, dst.data(), sizeof(double) * static_cast<size_t>(dst.numel()), file);
  }
}

ModelConfig parse_embedded_config(const std::string& text, const std::string& file) {
  KvMap kv = parse_config_text(text, "checkpoint '" + file + "'");
  ModelConfig cfg = model_config_from_kv(kv);
  reject_unknown_keys(kv, "checkpoint '" + file + "'");
  return cfg;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) raise("cannot write checkpoint '" + file + "'");
  write_bytes(out, kMagic, 4);
  write_pod<uint32_t>(out, kCheckpointVersion);
  write_string(out, model.config().canonical_text());
  const auto& entries = model.params().entries();
  write_pod<uint64_t>(out, entries.size());
  for (const auto& e : entries) {
    write_string(out, e.path);
    write_pod<uint8_t>(out, e.buffer ? 1 : 0);
    const Tensor& t = e.var.value();
    write_pod<uint32_t>(out, static_cast<uint32_t>(t.shape().size()));
    for (auto d : t.shape()) write_pod<int64_t>(out, d);
    write_bytes(out, t.data(), sizeof(double) * static_cast<size_t>(t.numel()));
  }
  out.flush();
  if (!out) {
    std::remove(file.c_str());
    raise("writing checkpoint '" + file + "' failed");
  }
}

std::unique_ptr<Model> load_checkpoint(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  Header h = read_header(in, file);
  auto model = Model::build(parse_embedded_config(h.config_text, file));
  load_tensors(in, *model, h.tensor_count, file);
  return model;
}

void load_checkpoint_into(Model& model, const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  Header h = read_header(in, file);
  const std::string want = model.config().canonical_text();
  if (h.config_text != want)
    raise("checkpoint '" + file +
          "' was produced by a different architecture; its config does not match the "
          "target model's");
  load_tensors(in, model, h.tensor_count, file);
}

ModelConfig peek_checkpoint_config(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  Header h = read_header(in, file);
  return parse_embedded_config(h.config_text, file);
}

}  // namespace msvit
