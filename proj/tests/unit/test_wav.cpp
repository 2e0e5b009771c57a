#include <gtest/gtest.h>

#include <filesystem>

#include "segmil/error.hpp"
#include "segmil/rng.hpp"
#include "segmil/wav.hpp"

namespace segmil {
namespace {

TEST(Wav, EncodeParseRoundTripIsPcm16Exact) {
  Rng rng(1);
  std::vector<double> x(1000);
  for (auto& v : x) v = rng.uniform(-1.2, 1.2);
  const auto bytes = EncodeWav(x, 16000);
  const auto wav = ParseWav(bytes);
  EXPECT_EQ(wav.sample_rate, 16000);
  EXPECT_EQ(wav.channels, 1);
  ASSERT_EQ(wav.samples.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(wav.samples[i], Pcm16RoundTrip(x[i]));
}

TEST(Wav, Pcm16RoundTripIsIdempotent) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const double q = Pcm16RoundTrip(rng.uniform(-1.0, 1.0));
    EXPECT_EQ(Pcm16RoundTrip(q), q);
  }
  EXPECT_EQ(QuantizePcm16(1.0), 32767);
  EXPECT_EQ(QuantizePcm16(-2.0), -32768);
}

TEST(Wav, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "segmil_wav_test.wav";
  const std::vector<double> x = {0.0, 0.5, -0.5, 0.25};
  WriteWav(path, x, 8000);
  const auto wav = ReadWav(path);
  EXPECT_EQ(wav.sample_rate, 8000);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(wav.samples[i], Pcm16RoundTrip(x[i]));
  std::filesystem::remove(path);
}

TEST(Wav, RejectsStereoAndGarbage) {
  auto bytes = EncodeWav(std::vector<double>{0.1, 0.2}, 16000);
  auto stereo = bytes;
  stereo[22] = 2;  // channel count
  try {
    ParseWav(stereo);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnsupportedFormat);
  }
  std::vector<unsigned char> junk(10, 'x');
  EXPECT_THROW(ParseWav(junk), Error);
}

}  // namespace
}  // namespace segmil
