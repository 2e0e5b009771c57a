#include "segmil/rng.hpp"

#include <cmath>

#include "segmil/error.hpp"

namespace segmil {

std::string_view ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kClipTooShort: return "ClipTooShort";
    case ErrorCode::kInvalidRate: return "InvalidRate";
    case ErrorCode::kInvalidRange: return "InvalidRange";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUtteranceTooShort: return "UtteranceTooShort";
    case ErrorCode::kEmptyBag: return "EmptyBag";
    case ErrorCode::kDegenerateData: return "DegenerateData";
    case ErrorCode::kEmptyClass: return "EmptyClass";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kFoldMismatch: return "FoldMismatch";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kNotFound: return "NotFound";
    case ErrorCode::kCorruptStore: return "CorruptStore";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kUnsupportedFormat: return "UnsupportedFormat";
  }
  return "Unknown";
}

std::size_t Rng::below(std::size_t n) {
  if (n <= 1) return 0;
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t SplitMix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t DeriveSeed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return SplitMix64(base ^ SplitMix64(h));
}

std::uint64_t DeriveSeed(std::uint64_t base, std::uint64_t index) {
  return SplitMix64(base ^ SplitMix64(index + 0x51ed27ULL));
}

}  // namespace segmil
