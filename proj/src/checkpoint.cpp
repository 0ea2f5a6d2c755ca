#include "meses/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace meses {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'M', 'E', 'S', 'E', 'S', 'C', 'K', 'P'};

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(path + ": truncated checkpoint");
  return v;
}

std::ifstream open_checked(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw FormatError(path + ": not a checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  return in;
}

nlohmann::json read_manifest(std::ifstream& in, const std::string& path) {
  const auto n = get<std::uint64_t>(in, path);
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw FormatError(path + ": truncated manifest");
  return nlohmann::json::parse(text);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& params, const nlohmann::json& manifest) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = manifest.dump();
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8));
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

nlohmann::json load_checkpoint(const std::string& path, ParamRegistry& params, bool add_missing) {
  auto in = open_checked(path);
  auto manifest = read_manifest(in, path);
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t t = 0; t < count; ++t) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw FormatError(path + ": truncated name");
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = get<std::uint64_t>(in, path);
    Tensor value(shape);
    if (!in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * 8)))
      throw FormatError(path + ": truncated tensor " + name);
    if (params.contains(name)) {
      Parameter& p = params.at(name);
      if (p.value.shape() != shape)
        throw FormatError(path + ": shape mismatch for " + name + ": file " + shape_str(shape) + ", model " +
                          shape_str(p.value.shape()));
      p.value = std::move(value);
    } else if (add_missing) {
      params.add(name, std::move(value));
    } else {
      throw FormatError(path + ": unexpected tensor " + name);
    }
  }
  return manifest;
}

nlohmann::json read_checkpoint_manifest(const std::string& path) {
  auto in = open_checked(path);
  return read_manifest(in, path);
}

}  // namespace meses
