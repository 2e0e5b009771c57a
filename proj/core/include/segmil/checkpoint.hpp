#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "segmil/tensor.hpp"

namespace segmil {

// Versioned model container:
//   "MILS" | u32 version | kind | config echo | u64 seed | u32 count |
//   count x (name | u32 rank | u64 dims[rank] | f32 values)
// Strings are u32-length-prefixed UTF-8; all integers little-endian.
struct NamedTensor {
  std::string name;
  Tensor<float> tensor;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;         // "segment", "dsingle", ...
  std::string config_json;  // training/architecture echo
  std::uint64_t seed = 0;
  std::vector<NamedTensor> tensors;

  const Tensor<float>& Get(const std::string& name) const;
  bool operator==(const Checkpoint&) const = default;
};

void WriteCheckpoint(std::ostream& os, const Checkpoint& ckpt);
Checkpoint ReadCheckpoint(std::istream& is);
void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

// Copies parameter values into / out of a checkpoint by name.
void ExportParams(const std::vector<Param<float>*>& params, Checkpoint& ckpt);
void ImportParams(const Checkpoint& ckpt, const std::vector<Param<float>*>& params);

}  // namespace segmil
