#include "segmil/store.hpp"

#include <charconv>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "segmil/binary_io.hpp"

namespace segmil {

namespace {

std::vector<std::string> SplitTabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

[[noreturn]] void ParseFail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kParseError, "manifest line " + std::to_string(line) + ": " + what);
}

template <typename T>
T ParseNumber(const std::string& text, std::size_t line, const char* field) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    ParseFail(line, std::string("bad ") + field + " '" + text + "'");
  }
  return value;
}

std::string Dash(const std::string& s) { return s.empty() ? "-" : s; }
std::string Undash(const std::string& s) { return s == "-" ? "" : s; }

std::string FormatDouble(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

const char* const kHeader[] = {"path", "utterance_id", "label", "label_index",
                               "speaker", "session", "fold", "duration_seconds"};

}  // namespace

const ManifestRecord& Manifest::Find(const std::string& utterance_id) const {
  for (const auto& r : records) {
    if (r.utterance_id == utterance_id) return r;
  }
  throw Error(ErrorCode::kNotFound, "utterance " + utterance_id + " not in manifest");
}

Manifest ReadManifest(std::istream& is) {
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  std::unordered_map<std::string, int> class_index;
  std::unordered_map<std::string, std::size_t> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = SplitTabs(line);
    if (fields[0] == "#classes") {
      if (!m.classes.empty()) ParseFail(lineno, "class table given twice");
      m.classes.assign(fields.begin() + 1, fields.end());
      for (std::size_t i = 0; i < m.classes.size(); ++i) {
        if (m.classes[i].empty() || !class_index.emplace(m.classes[i], static_cast<int>(i)).second) {
          ParseFail(lineno, "empty or repeated class name");
        }
      }
      continue;
    }
    if (fields[0] == "#fold_assignment") {
      if (fields.size() != 2) ParseFail(lineno, "fold_assignment takes one value");
      m.fold_assignment = fields[1];
      continue;
    }
    if (!header_seen) {
      if (m.classes.empty()) ParseFail(lineno, "missing #classes line before the header");
      if (fields.size() != std::size(kHeader)) ParseFail(lineno, "header must have 8 columns");
      for (std::size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] != kHeader[i]) ParseFail(lineno, "unexpected header column '" + fields[i] + "'");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() != std::size(kHeader)) {
      ParseFail(lineno, "expected 8 fields, got " + std::to_string(fields.size()));
    }
    ManifestRecord r;
    r.path = fields[0];
    r.utterance_id = fields[1];
    r.label = fields[2];
    r.label_index = ParseNumber<int>(fields[3], lineno, "label_index");
    r.speaker = Undash(fields[4]);
    r.session = Undash(fields[5]);
    r.fold = fields[6] == "-" ? -1 : ParseNumber<int>(fields[6], lineno, "fold");
    r.duration_seconds = ParseNumber<double>(fields[7], lineno, "duration_seconds");
    if (r.path.empty() || r.utterance_id.empty()) ParseFail(lineno, "empty path or utterance_id");
    const auto it = class_index.find(r.label);
    if (it == class_index.end()) ParseFail(lineno, "label '" + r.label + "' not in the class table");
    if (it->second != r.label_index) ParseFail(lineno, "label_index disagrees with the class table");
    if (r.fold < -1) ParseFail(lineno, "negative fold");
    const auto [pos, fresh] = seen.emplace(r.utterance_id, lineno);
    if (!fresh) {
      throw Error(ErrorCode::kDuplicateId, "manifest line " + std::to_string(lineno) + ": utterance_id '" +
                                               r.utterance_id + "' already used on line " +
                                               std::to_string(pos->second));
    }
    m.records.push_back(std::move(r));
  }
  if (!header_seen) ParseFail(lineno, "no header line");
  return m;
}

Manifest ReadManifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read manifest " + path.string());
  return ReadManifest(is);
}

void WriteManifest(std::ostream& os, const Manifest& m) {
  os << "#classes";
  for (const auto& c : m.classes) os << '\t' << c;
  os << '\n';
  if (!m.fold_assignment.empty()) os << "#fold_assignment\t" << m.fold_assignment << '\n';
  for (std::size_t i = 0; i < std::size(kHeader); ++i) os << (i ? "\t" : "") << kHeader[i];
  os << '\n';
  for (const auto& r : m.records) {
    os << r.path << '\t' << r.utterance_id << '\t' << r.label << '\t' << r.label_index << '\t' << Dash(r.speaker)
       << '\t' << Dash(r.session) << '\t' << (r.fold < 0 ? std::string("-") : std::to_string(r.fold)) << '\t'
       << FormatDouble(r.duration_seconds) << '\n';
  }
}

void WriteManifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write manifest " + path.string());
  WriteManifest(os, manifest);
  if (!os) throw Error(ErrorCode::kIoError, "failed writing manifest " + path.string());
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 8;
constexpr std::uint64_t kIndexOffsetPos = 8;
}  // namespace

FeatureStore::FeatureStore(const std::filesystem::path& path, Mode mode) : path_(path), mode_(mode) {
  if (mode == Mode::kCreate) {
    file_.open(path, std::ios::binary | std::ios::in | std::ios::out | std::ios::trunc);
    if (!file_) throw Error(ErrorCode::kIoError, "cannot create feature store " + path.string());
    file_.write("MILF", 4);
    io::WriteLE<std::uint32_t>(file_, kVersion);
    io::WriteLE<std::uint64_t>(file_, 0);
    end_ = kHeaderBytes;
    dirty_ = true;
    return;
  }
  const auto flags = mode == Mode::kRead ? std::ios::binary | std::ios::in
                                         : std::ios::binary | std::ios::in | std::ios::out;
  file_.open(path, flags);
  if (!file_) throw Error(ErrorCode::kIoError, "cannot open feature store " + path.string());
  LoadIndex();
  if (mode == Mode::kAppend) {
    // New records overwrite the old index, which is rewritten on Commit.
    file_.seekp(static_cast<std::streamoff>(kIndexOffsetPos));
    io::WriteLE<std::uint64_t>(file_, 0);
    file_.flush();
    dirty_ = true;
  }
}

FeatureStore::~FeatureStore() {
  if (mode_ != Mode::kRead && dirty_) {
    try {
      Commit();
    } catch (...) {
    }
  }
}

void FeatureStore::LoadIndex() {
  file_.seekg(0);
  io::ExpectMagic(file_, "MILF", "feature store");
  const auto version = io::ReadLE<std::uint32_t>(file_);
  if (version != kVersion) {
    throw Error(ErrorCode::kCorruptStore, "unsupported feature store version " + std::to_string(version));
  }
  const auto index_offset = io::ReadLE<std::uint64_t>(file_);
  file_.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(file_.tellg());
  if (index_offset < kHeaderBytes || index_offset >= size) {
    throw Error(ErrorCode::kCorruptStore, "feature store index missing or stale in " + path_.string());
  }
  file_.seekg(static_cast<std::streamoff>(index_offset));
  const auto count = io::ReadLE<std::uint32_t>(file_);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto id = io::ReadString(file_);
    const auto off = io::ReadLE<std::uint64_t>(file_);
    if (off < kHeaderBytes || off >= index_offset) throw Error(ErrorCode::kCorruptStore, "record offset out of range");
    index_.emplace(std::move(id), off);
  }
  end_ = index_offset;
}

void FeatureStore::Put(const std::string& id, const Tensor<float>& tensor) {
  std::lock_guard lock(mu_);
  if (mode_ == Mode::kRead) throw Error(ErrorCode::kIoError, "feature store opened read-only");
  if (index_.count(id)) throw Error(ErrorCode::kDuplicateId, "record '" + id + "' already stored");
  file_.seekp(static_cast<std::streamoff>(end_));
  io::WriteString(file_, id);
  io::WriteShape(file_, tensor.shape());
  io::WriteFloats(file_, tensor.values());
  if (!file_) throw Error(ErrorCode::kIoError, "failed appending to " + path_.string());
  index_.emplace(id, end_);
  end_ = static_cast<std::uint64_t>(file_.tellp());
  dirty_ = true;
}

Tensor<float> FeatureStore::Get(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(id);
  if (it == index_.end()) throw Error(ErrorCode::kNotFound, "no record '" + id + "' in " + path_.string());
  file_.clear();
  file_.seekg(static_cast<std::streamoff>(it->second));
  if (io::ReadString(file_) != id) throw Error(ErrorCode::kCorruptStore, "record id mismatch for '" + id + "'");
  Tensor<float> t(io::ReadShape(file_));
  io::ReadFloats(file_, t.values());
  return t;
}

bool FeatureStore::Contains(const std::string& id) const {
  std::lock_guard lock(mu_);
  return index_.count(id) > 0;
}

std::vector<std::string> FeatureStore::Ids() const { return Ids(""); }

std::vector<std::string> FeatureStore::Ids(const std::string& prefix) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (auto it = index_.lower_bound(prefix); it != index_.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it) {
    out.push_back(it->first);
  }
  return out;
}

std::size_t FeatureStore::size() const {
  std::lock_guard lock(mu_);
  return index_.size();
}

void FeatureStore::Commit() {
  std::lock_guard lock(mu_);
  if (mode_ == Mode::kRead) return;
  file_.clear();
  file_.seekp(static_cast<std::streamoff>(end_));
  io::WriteLE<std::uint32_t>(file_, static_cast<std::uint32_t>(index_.size()));
  for (const auto& [id, off] : index_) {
    io::WriteString(file_, id);
    io::WriteLE<std::uint64_t>(file_, off);
  }
  file_.flush();
  file_.seekp(static_cast<std::streamoff>(kIndexOffsetPos));
  io::WriteLE<std::uint64_t>(file_, end_);
  file_.flush();
  if (!file_) throw Error(ErrorCode::kIoError, "failed committing " + path_.string());
  dirty_ = false;
}

}  // namespace segmil
