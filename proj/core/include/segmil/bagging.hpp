#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "segmil/dsp.hpp"

namespace segmil {

struct SegmentGeometry {
  std::size_t seg_frames = 32;
  std::size_t shift_frames = 6;
  std::size_t n_mels = 64;
};

// Fixed-size log-Mel window; the label is inherited from the parent utterance.
struct Segment {
  std::string utterance_id;
  std::size_t start_frame = 0;
  std::vector<float> features;  // seg_frames x n_mels, row-major
  int label = -1;
};

// 1 + floor((F - seg) / shift) for F >= seg, else 0.
std::size_t SegmentCount(std::size_t num_frames, std::size_t seg_frames = 32, std::size_t shift_frames = 6);

// Frame count produced by `seconds` of audio under the DSP geometry.
std::size_t FramesForDuration(double seconds, const DspConfig& dsp);

// Bag length implied by a maximum utterance duration (29 at 2.07 s, 71 at 4.55 s).
std::size_t MaxBagLength(double max_seconds, const DspConfig& dsp, const SegmentGeometry& geom = {});

// Throws kUtteranceTooShort when the spectrogram has fewer than seg_frames rows.
std::vector<Segment> SegmentUtterance(const MelSpectrogram& spec, int label, const SegmentGeometry& geom = {});

// Pads (with `pad_value` rows) to at least `min_frames`.
MelSpectrogram PadToMinFrames(const MelSpectrogram& spec, std::size_t min_frames, double pad_value);

// Truncates or pads (with log(energy_floor) rows) to the frame count of
// `max_seconds`.
MelSpectrogram ClampUtterance(const MelSpectrogram& spec, double max_seconds, const DspConfig& dsp);

struct Bag {
  std::string utterance_id;
  std::size_t max_len = 0;
  std::size_t dim = 0;
  std::vector<float> embeddings;  // max_len x dim, rows >= true_length are zero
  std::vector<bool> mask;
  int label = -1;
  std::size_t true_length = 0;

  std::span<const float> row(std::size_t t) const { return {embeddings.data() + t * dim, dim}; }
};

// Copies the first min(len, max_len) embeddings; throws kEmptyBag on empty
// input and kShapeMismatch on ragged rows.
Bag AssembleBag(std::string utterance_id, const std::vector<std::vector<float>>& embeddings, int label,
                std::size_t max_len);

}  // namespace segmil
