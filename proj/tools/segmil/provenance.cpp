#include "provenance.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <iostream>
#include <memory>

#include "segmil/error.hpp"

namespace segmil::cli {

namespace {

class Sha1 {
 public:
  Sha1() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha1(), nullptr) != 1) {
      throw Error(ErrorCode::kIoError, "sha1 unavailable");
    }
  }
  void Update(const char* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  std::string HexDigest() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md, &len);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += hex[md[i] >> 4];
      out += hex[md[i] & 15];
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string GitBlobHashBytes(const std::string& bytes) {
  Sha1 sha;
  const std::string header = "blob " + std::to_string(bytes.size());
  sha.Update(header.c_str(), header.size() + 1);  // includes the NUL
  sha.Update(bytes.data(), bytes.size());
  return sha.HexDigest();
}

std::string GitBlobHash(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot hash " + path.string());
  const auto size = std::filesystem::file_size(path);
  Sha1 sha;
  const std::string header = "blob " + std::to_string(size);
  sha.Update(header.c_str(), header.size() + 1);
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    sha.Update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return sha.HexDigest();
}

void ProvenanceLog::Note(const std::string& key, const std::string& value) {
  lines_.push_back(key + "=" + value);
  std::cerr << "[segmil " << command_ << "] " << key << "=" << value << '\n';
}

void ProvenanceLog::Input(const std::string& role, const std::filesystem::path& path) {
  Note("input." + role, path.string() + " blob " + GitBlobHash(path));
}

void ProvenanceLog::Write(const std::filesystem::path& log_path) const {
  std::ofstream os(log_path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write " + log_path.string());
  os << "command=" << command_ << '\n';
  for (const auto& l : lines_) os << l << '\n';
}

}  // namespace segmil::cli
