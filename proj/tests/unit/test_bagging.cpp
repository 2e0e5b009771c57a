#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "segmil/bagging.hpp"
#include "segmil/error.hpp"

namespace segmil {
namespace {

MelSpectrogram Ramp(std::size_t frames, std::size_t mels = 64) {
  MelSpectrogram m;
  m.utterance_id = "u";
  m.frames.resize(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(mels));
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames.data()[i] = static_cast<double>(i % 997) * 0.01;
  return m;
}

TEST(SegmentCount, GeometryExamples) {
  EXPECT_EQ(SegmentCount(205), 29u);
  EXPECT_EQ(SegmentCount(32), 1u);
  EXPECT_EQ(SegmentCount(453), 71u);
  EXPECT_EQ(SegmentCount(31), 0u);
}

TEST(SegmentCount, MonotoneInFrames) {
  for (std::size_t f = 1; f < 600; ++f) EXPECT_LE(SegmentCount(f - 1), SegmentCount(f));
}

TEST(MaxBagLength, FromDuration) {
  DspConfig dsp;
  EXPECT_EQ(FramesForDuration(2.07, dsp), 205u);
  EXPECT_EQ(MaxBagLength(2.07, dsp), 29u);
  EXPECT_EQ(MaxBagLength(4.55, dsp), 71u);
}

TEST(SegmentUtterance, OverlapAndInheritedLabel) {
  const auto spec = Ramp(205);
  const auto segs = SegmentUtterance(spec, 3);
  ASSERT_EQ(segs.size(), 29u);
  for (std::size_t j = 0; j < segs.size(); ++j) {
    EXPECT_EQ(segs[j].label, 3);
    EXPECT_EQ(segs[j].start_frame, 6 * j);
    ASSERT_EQ(segs[j].features.size(), 32u * 64u);
    EXPECT_EQ(segs[j].features[0], static_cast<float>(spec.frames(static_cast<Eigen::Index>(6 * j), 0)));
  }
  // Consecutive segments share 26 frames.
  for (std::size_t j = 1; j < segs.size(); ++j) {
    for (std::size_t r = 0; r < 26; ++r) {
      for (std::size_t c = 0; c < 64; ++c) {
        ASSERT_EQ(segs[j - 1].features[(r + 6) * 64 + c], segs[j].features[r * 64 + c]);
      }
    }
  }
}

TEST(SegmentUtterance, ShortInputIsAnError) {
  try {
    SegmentUtterance(Ramp(20), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUtteranceTooShort);
  }
  const auto padded = PadToMinFrames(Ramp(20), 32, -5.0);
  ASSERT_EQ(padded.num_frames(), 32u);
  EXPECT_EQ(padded.frames(31, 0), -5.0);
  EXPECT_EQ(SegmentUtterance(padded, 0).size(), 1u);
}

TEST(ClampUtterance, TruncatesAndPads) {
  DspConfig dsp;
  const auto long_spec = Ramp(FramesForDuration(3.0, dsp));
  const auto clamped = ClampUtterance(long_spec, 2.07, dsp);
  EXPECT_EQ(clamped.num_frames(), 205u);
  EXPECT_EQ(clamped.frames.row(204), long_spec.frames.row(204));

  const auto exact = Ramp(205);
  EXPECT_EQ(ClampUtterance(exact, 2.07, dsp).frames, exact.frames);

  const auto short_spec = Ramp(FramesForDuration(1.0, dsp));
  ASSERT_EQ(short_spec.num_frames(), 98u);
  const auto padded = ClampUtterance(short_spec, 2.07, dsp);
  ASSERT_EQ(padded.num_frames(), 205u);
  EXPECT_EQ(padded.frames.topRows(98), short_spec.frames);
  EXPECT_EQ(padded.frames(150, 10), std::log(dsp.energy_floor));
}

TEST(AssembleBag, PadTruncateAndExactFit) {
  Rng rng(1);
  for (std::size_t len : {29u, 10u, 40u}) {
    std::vector<std::vector<float>> rows(len, std::vector<float>(64));
    for (auto& r : rows) {
      for (auto& v : r) v = static_cast<float>(rng.uniform(-1, 1));
    }
    const auto bag = AssembleBag("b", rows, 2, 29);
    const std::size_t kept = std::min<std::size_t>(len, 29);
    EXPECT_EQ(bag.true_length, kept);
    EXPECT_EQ(bag.label, 2);
    for (std::size_t t = 0; t < 29; ++t) {
      EXPECT_EQ(bag.mask[t], t < kept);
      for (std::size_t d = 0; d < 64; ++d) {
        if (t < kept) {
          ASSERT_EQ(bag.row(t)[d], rows[t][d]);  // bit-exact read back
        } else {
          ASSERT_EQ(bag.row(t)[d], 0.0f);
        }
      }
    }
  }
  EXPECT_THROW(AssembleBag("b", {}, 0, 29), Error);
  EXPECT_THROW(AssembleBag("b", {{1.0f}, {1.0f, 2.0f}}, 0, 29), Error);
}

}  // namespace
}  // namespace segmil
