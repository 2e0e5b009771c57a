#include "segmil/checkpoint.hpp"

#include <fstream>
#include <unordered_map>

#include "segmil/binary_io.hpp"

namespace segmil {

const Tensor<float>& Checkpoint::Get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw Error(ErrorCode::kNotFound, "checkpoint has no tensor named " + name);
}

void WriteCheckpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write("MILS", 4);
  io::WriteLE<std::uint32_t>(os, Checkpoint::kVersion);
  io::WriteString(os, ckpt.kind);
  io::WriteString(os, ckpt.config_json);
  io::WriteLE<std::uint64_t>(os, ckpt.seed);
  io::WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    io::WriteString(os, t.name);
    io::WriteShape(os, t.tensor.shape());
    io::WriteFloats(os, t.tensor.values());
  }
  if (!os) throw Error(ErrorCode::kIoError, "failed writing checkpoint");
}

Checkpoint ReadCheckpoint(std::istream& is) {
  io::ExpectMagic(is, "MILS", "checkpoint");
  const auto version = io::ReadLE<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw Error(ErrorCode::kCorruptStore, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.kind = io::ReadString(is);
  ckpt.config_json = io::ReadString(is);
  ckpt.seed = io::ReadLE<std::uint64_t>(is);
  const auto count = io::ReadLE<std::uint32_t>(is);
  ckpt.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = io::ReadString(is);
    t.tensor = Tensor<float>(io::ReadShape(is));
    io::ReadFloats(is, t.tensor.values());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void SaveCheckpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  WriteCheckpoint(os, ckpt);
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return ReadCheckpoint(is);
}

void ExportParams(const std::vector<Param<float>*>& params, Checkpoint& ckpt) {
  for (const auto* p : params) ckpt.tensors.push_back({p->name, p->value});
}

void ImportParams(const Checkpoint& ckpt, const std::vector<Param<float>*>& params) {
  for (auto* p : params) {
    const auto& t = ckpt.Get(p->name);
    if (t.shape() != p->value.shape()) {
      throw Error(ErrorCode::kShapeMismatch, p->name + ": checkpoint shape " + ShapeString(t.shape()) +
                                                 " vs model " + ShapeString(p->value.shape()));
    }
    p->value = t;
  }
}

}  // namespace segmil
