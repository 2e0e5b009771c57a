#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace segmil::cli {

// Same digest `git hash-object` prints: sha1("blob <size>\0" + content).
std::string GitBlobHash(const std::filesystem::path& path);
std::string GitBlobHashBytes(const std::string& bytes);

// Collects provenance lines; echoes them to stderr and writes them next to
// the command's output.
class ProvenanceLog {
 public:
  explicit ProvenanceLog(std::string command) : command_(std::move(command)) {}
  void Note(const std::string& key, const std::string& value);
  void Input(const std::string& role, const std::filesystem::path& path);
  void Write(const std::filesystem::path& log_path) const;

 private:
  std::string command_;
  std::vector<std::string> lines_;
};

}  // namespace segmil::cli
