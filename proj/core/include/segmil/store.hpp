#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "segmil/tensor.hpp"

namespace segmil {

// One utterance of a corpus. Empty speaker/session and fold == -1 mean
// "not recorded"; they are written as "-".
struct ManifestRecord {
  std::string path;
  std::string utterance_id;
  std::string label;
  int label_index = -1;
  std::string speaker;
  std::string session;
  int fold = -1;
  double duration_seconds = 0.0;
  bool operator==(const ManifestRecord&) const = default;
};

// Tab-delimited text:
//   #classes <TAB> name0 <TAB> name1 ...
//   #fold_assignment <TAB> random|speaker-stratified   (optional)
//   path utterance_id label label_index speaker session fold duration_seconds
//   one record per line
struct Manifest {
  std::vector<std::string> classes;
  std::string fold_assignment;
  std::vector<ManifestRecord> records;

  int num_classes() const { return static_cast<int>(classes.size()); }
  const ManifestRecord& Find(const std::string& utterance_id) const;
  bool operator==(const Manifest&) const = default;
};

Manifest ReadManifest(std::istream& is);
Manifest ReadManifest(const std::filesystem::path& path);
void WriteManifest(std::ostream& os, const Manifest& manifest);
void WriteManifest(const std::filesystem::path& path, const Manifest& manifest);

// Named float32 tensors in one file:
//   header  "MILF" | u32 version | u64 index_offset (0 while uncommitted)
//   records id | u32 rank | u64 dims | f32 values
//   index   u32 count | count x (id | u64 record offset)
// Single writer. A store whose header has no index (writer died before
// Commit) is rejected as kCorruptStore.
class FeatureStore {
 public:
  static constexpr std::uint32_t kVersion = 1;
  enum class Mode { kRead, kCreate, kAppend };

  FeatureStore(const std::filesystem::path& path, Mode mode);
  ~FeatureStore();
  FeatureStore(const FeatureStore&) = delete;
  FeatureStore& operator=(const FeatureStore&) = delete;

  void Put(const std::string& id, const Tensor<float>& tensor);
  Tensor<float> Get(const std::string& id) const;
  bool Contains(const std::string& id) const;
  std::vector<std::string> Ids() const;  // sorted
  std::vector<std::string> Ids(const std::string& prefix) const;
  std::size_t size() const;
  // Writes the index and publishes it in the header.
  void Commit();

 private:
  void LoadIndex();

  std::filesystem::path path_;
  Mode mode_;
  mutable std::fstream file_;
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> index_;
  std::uint64_t end_ = 0;
  bool dirty_ = false;
};

}  // namespace segmil
