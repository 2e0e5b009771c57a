#include "segmil/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "segmil/error.hpp"

namespace segmil {
namespace {

std::uint32_t U32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t U16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
void Put32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void Put16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace

WavData ParseWav(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(ErrorCode::kUnsupportedFormat, "not a RIFF/WAVE file");
  }
  WavData wav;
  bool have_fmt = false;
  int bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = U32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw Error(ErrorCode::kUnsupportedFormat, "short fmt chunk");
      const std::uint16_t format = U16(chunk + 8);
      wav.channels = U16(chunk + 10);
      wav.sample_rate = static_cast<int>(U32(chunk + 12));
      bits = U16(chunk + 22);
      // 0xFFFE (extensible) is accepted when the payload is still 16-bit PCM.
      if (format != 1 && format != 0xFFFE) {
        throw Error(ErrorCode::kUnsupportedFormat, "only PCM WAV is supported");
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, avail);
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw Error(ErrorCode::kUnsupportedFormat, "missing fmt chunk");
  if (data == nullptr) throw Error(ErrorCode::kUnsupportedFormat, "missing data chunk");
  if (bits != 16) throw Error(ErrorCode::kUnsupportedFormat, "only 16-bit PCM is supported");
  if (wav.channels != 1) {
    throw Error(ErrorCode::kUnsupportedFormat,
                "expected mono audio, got " + std::to_string(wav.channels) + " channels");
  }
  if (wav.sample_rate <= 0) throw Error(ErrorCode::kInvalidRate, "non-positive sample rate");

  const std::size_t n = data_size / 2;
  wav.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto raw = static_cast<std::int16_t>(U16(data + 2 * i));
    wav.samples[i] = static_cast<double>(raw) / 32768.0;
  }
  return wav;
}

WavData ReadWav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return ParseWav(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<unsigned char> EncodeWav(std::span<const double> samples, int sample_rate) {
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidRate, "non-positive sample rate");
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  Put32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  Put32(out, 16);
  Put16(out, 1);
  Put16(out, 1);
  Put32(out, static_cast<std::uint32_t>(sample_rate));
  Put32(out, static_cast<std::uint32_t>(sample_rate) * 2);
  Put16(out, 2);
  Put16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  Put32(out, data_bytes);
  for (double s : samples) {
    Put16(out, static_cast<std::uint16_t>(QuantizePcm16(s)));
  }
  return out;
}

std::int16_t QuantizePcm16(double sample) {
  return static_cast<std::int16_t>(std::clamp(std::lround(sample * 32768.0), -32768L, 32767L));
}

double Pcm16RoundTrip(double sample) { return static_cast<double>(QuantizePcm16(sample)) / 32768.0; }

void WriteWav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  const auto bytes = EncodeWav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "short write to " + path.string());
}

}  // namespace segmil
