#include "mara/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mara/common.hpp"

namespace mara {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'A', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw Error("checkpoint corrupt: oversized string");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw Error("checkpoint truncated");
  return s;
}

}  // namespace

const NamedArray& Checkpoint::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw Error("checkpoint has no array named " + name);
}

void Checkpoint::add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values) {
  arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.kind);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    std::uint64_t n = 1;
    for (auto d : a.shape) n *= d;
    if (n != a.values.size()) throw Error("checkpoint array " + a.name + ": shape does not match value count");
    put_string(out, a.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                           std::optional<std::uint64_t> expected_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw Error(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.kind = get_string(in);
  ckpt.config_hash = get<std::uint64_t>(in);
  if (ckpt.kind != expected_kind)
    throw Error("checkpoint " + path.string() + " holds '" + ckpt.kind + "', expected '" + expected_kind + "'");
  if (expected_hash && *expected_hash != ckpt.config_hash) {
    std::ostringstream msg;
    msg << "checkpoint/config hash mismatch for " << path.string() << " (file " << std::hex << ckpt.config_hash
        << ", config " << *expected_hash << ")";
    throw Error(msg.str());
  }
  const auto n = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = get_string(in);
    const auto ndim = get<std::uint32_t>(in);
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      a.shape.push_back(get<std::uint64_t>(in));
      count *= a.shape.back();
    }
    if (count > (1ull << 32)) throw Error("checkpoint corrupt: oversized array");
    a.values.resize(count);
    if (!in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(count * sizeof(double))))
      throw Error("checkpoint truncated");
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace mara
