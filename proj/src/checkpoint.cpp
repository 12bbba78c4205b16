#include "strnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

namespace strnet {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'R', 'C'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("checkpoint: unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error("checkpoint: unexpected end of file");
  return s;
}

using TensorMap = std::map<std::string, Tensor<float>>;

void fill(ModelParams<float>& params, const TensorMap& tensors) {
  std::size_t matched = 0;
  params.visit([&](const std::string& name, Tensor<float>& t) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("checkpoint/config mismatch: missing parameter " + name);
    if (it->second.shape() != t.shape())
      throw Error("checkpoint/config mismatch: " + name + " has shape " +
                  to_string(it->second.shape()) + ", config expects " + to_string(t.shape()));
    t = it->second;
    ++matched;
  });
  if (matched != tensors.size())
    throw Error("checkpoint/config mismatch: checkpoint holds parameters the config does not use");
}

TensorMap collect(ModelParams<float> params) {
  TensorMap out;
  params.visit(
      [&](const std::string& name, Tensor<float>& t) { out.emplace(name, t); });
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const RunConfig& cfg, ModelParams<float>& params) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  const std::string text = serialize_config(cfg);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));

  std::uint32_t count = 0;
  params.visit([&](const std::string&, Tensor<float>&) { ++count; });
  put_u32(out, count);
  params.visit([&](const std::string& name, Tensor<float>& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  });
  if (!out) throw Error("checkpoint: write failed");
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot open " + path + " for writing");
  write_checkpoint(out, cfg, params);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw Error("checkpoint: bad magic");
  const int version = in.get();
  if (version != kVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config = parse_config(get_string(in));

  TensorMap tensors;
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in);
    const std::uint32_t rank = get_u32(in);
    if (rank == 0 || rank > 8) throw Error("checkpoint: implausible rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = get_u32(in);
    Tensor<float> t(shape);
    for (auto& v : t.data()) v = std::bit_cast<float>(get_u32(in));
    if (!tensors.emplace(name, std::move(t)).second)
      throw Error("checkpoint: duplicate parameter " + name);
  }
  ckpt.params = ModelParams<float>::init(ckpt.config.model(), 0);
  fill(ckpt.params, tensors);
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("checkpoint: cannot open " + path);
  return read_checkpoint(in);
}

ModelParams<float> params_for_config(const Checkpoint& ckpt, const RunConfig& cfg) {
  auto params = ModelParams<float>::init(cfg.model(), 0);
  fill(params, collect(ckpt.params));
  return params;
}

}  // namespace strnet
