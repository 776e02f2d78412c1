#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mara {

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

/// Versioned container of named parameter arrays.
///
/// Layout (little-endian):
///   "MARACKPT" | u32 version | u32 len, kind bytes | u64 config_hash |
///   u32 n_arrays | n x ( u32 len, name bytes | u32 ndim | ndim x u64 | f64 values )
struct Checkpoint {
  std::string kind;
  std::uint64_t config_hash = 0;
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
  void add(std::string name, std::vector<std::uint64_t> shape, std::vector<double> values);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Loads a checkpoint, refusing a different kind or (when given) config hash.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_kind,
                           std::optional<std::uint64_t> expected_hash = std::nullopt);

}  // namespace mara
