#include "segmil/bagging.hpp"

#include <algorithm>
#include <cmath>

#include "segmil/error.hpp"

namespace segmil {

std::size_t SegmentCount(std::size_t num_frames, std::size_t seg_frames, std::size_t shift_frames) {
  if (num_frames < seg_frames || shift_frames == 0) return 0;
  return 1 + (num_frames - seg_frames) / shift_frames;
}

std::size_t FramesForDuration(double seconds, const DspConfig& dsp) {
  const auto samples = static_cast<std::size_t>(std::llround(seconds * dsp.sample_rate));
  return FrameCount(samples, static_cast<std::size_t>(dsp.WindowSamples()),
                    static_cast<std::size_t>(dsp.HopSamples()));
}

std::size_t MaxBagLength(double max_seconds, const DspConfig& dsp, const SegmentGeometry& geom) {
  const std::size_t frames = std::max(FramesForDuration(max_seconds, dsp), geom.seg_frames);
  return SegmentCount(frames, geom.seg_frames, geom.shift_frames);
}

std::vector<Segment> SegmentUtterance(const MelSpectrogram& spec, int label, const SegmentGeometry& geom) {
  const std::size_t frames = spec.num_frames();
  if (frames < geom.seg_frames) {
    throw Error(ErrorCode::kUtteranceTooShort, spec.utterance_id + " has " + std::to_string(frames) +
                                                   " frames, fewer than one segment");
  }
  if (static_cast<std::size_t>(spec.frames.cols()) != geom.n_mels) {
    throw Error(ErrorCode::kShapeMismatch, "spectrogram has " + std::to_string(spec.frames.cols()) + " bins");
  }
  const std::size_t count = SegmentCount(frames, geom.seg_frames, geom.shift_frames);
  std::vector<Segment> out(count);
  for (std::size_t t = 0; t < count; ++t) {
    Segment& seg = out[t];
    seg.utterance_id = spec.utterance_id;
    seg.start_frame = t * geom.shift_frames;
    seg.label = label;
    seg.features.resize(geom.seg_frames * geom.n_mels);
    for (std::size_t f = 0; f < geom.seg_frames; ++f) {
      for (std::size_t m = 0; m < geom.n_mels; ++m) {
        seg.features[f * geom.n_mels + m] = static_cast<float>(
            spec.frames(static_cast<Eigen::Index>(seg.start_frame + f), static_cast<Eigen::Index>(m)));
      }
    }
  }
  return out;
}

MelSpectrogram PadToMinFrames(const MelSpectrogram& spec, std::size_t min_frames, double pad_value) {
  if (spec.num_frames() >= min_frames) return spec;
  MelSpectrogram out = spec;
  out.frames = RowMatrixXd::Constant(static_cast<Eigen::Index>(min_frames), spec.frames.cols(), pad_value);
  out.frames.topRows(spec.frames.rows()) = spec.frames;
  return out;
}

MelSpectrogram ClampUtterance(const MelSpectrogram& spec, double max_seconds, const DspConfig& dsp) {
  if (!(max_seconds > 0.0)) throw Error(ErrorCode::kInvalidConfig, "max_seconds must be positive");
  const auto target = static_cast<Eigen::Index>(FramesForDuration(max_seconds, dsp));
  if (spec.frames.rows() == target) return spec;
  MelSpectrogram out = spec;
  if (spec.frames.rows() > target) {
    out.frames = spec.frames.topRows(target);
  } else {
    out.frames = RowMatrixXd::Constant(target, spec.frames.cols(), std::log(dsp.energy_floor));
    out.frames.topRows(spec.frames.rows()) = spec.frames;
  }
  return out;
}

Bag AssembleBag(std::string utterance_id, const std::vector<std::vector<float>>& embeddings, int label,
                std::size_t max_len) {
  if (embeddings.empty()) throw Error(ErrorCode::kEmptyBag, utterance_id + " has no segment embeddings");
  if (max_len == 0) throw Error(ErrorCode::kInvalidConfig, "bag length must be positive");
  Bag bag;
  bag.utterance_id = std::move(utterance_id);
  bag.max_len = max_len;
  bag.dim = embeddings.front().size();
  bag.label = label;
  bag.true_length = std::min(embeddings.size(), max_len);
  bag.embeddings.assign(max_len * bag.dim, 0.0f);
  bag.mask.assign(max_len, false);
  for (std::size_t t = 0; t < bag.true_length; ++t) {
    if (embeddings[t].size() != bag.dim) {
      throw Error(ErrorCode::kShapeMismatch, bag.utterance_id + ": ragged embedding rows");
    }
    std::copy(embeddings[t].begin(), embeddings[t].end(), bag.embeddings.begin() + static_cast<std::ptrdiff_t>(t * bag.dim));
    bag.mask[t] = true;
  }
  return bag;
}

}  // namespace segmil
