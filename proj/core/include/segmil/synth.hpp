#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "segmil/bagging.hpp"
#include "segmil/dsp.hpp"
#include "segmil/store.hpp"

namespace segmil {

struct SynthSpec {
  int n_classes = 4;
  int n_utterances = 600;
  double utterance_seconds = 2.07;
  int sample_rate = 16000;
  double witness_density = 0.2;  // fraction of an utterance's segments carrying the pattern
  double snr_db = 0.0;           // chord power over noise power inside the span
  std::uint64_t seed = 1;
  int n_folds = 5;
  double noise_rms = 0.05;
  double noise_low_hz = 100.0;
  double noise_high_hz = 6000.0;

  void Validate() const;
};

// Chord frequencies of class k: {600 + 400k, 1000 + 400k} Hz.
std::vector<double> ClassChord(int k);

struct WitnessSpan {
  double start_ms = 0.0;
  double end_ms = 0.0;
  bool operator==(const WitnessSpan&) const = default;
};

struct TruthRecord {
  std::string utterance_id;
  int label = -1;
  std::vector<WitnessSpan> spans;
  bool operator==(const TruthRecord&) const = default;
};

struct SynthTruth {
  std::vector<TruthRecord> records;
  const TruthRecord& Find(const std::string& utterance_id) const;
  bool operator==(const SynthTruth&) const = default;
};

struct SynthCorpus {
  std::vector<AudioClip> clips;  // samples already quantized as PCM16 would store them
  Manifest manifest;
  SynthTruth truth;
};

SynthCorpus GenerateCorpus(const SynthSpec& spec);
// Writes <out>/wav/<id>.wav, <out>/manifest.tsv and <out>/truth.tsv.
void WriteCorpus(const SynthCorpus& corpus, const std::filesystem::path& out_dir);

// One line per utterance: id <TAB> class <TAB> start-end[;start-end...] (ms).
void WriteTruth(std::ostream& os, const SynthTruth& truth);
SynthTruth ReadTruth(std::istream& is);
SynthTruth ReadTruth(const std::filesystem::path& path);

// A segment is a witness iff at least half of its frames have their centre
// inside a witness span.
std::vector<bool> OracleSegmentLabels(const TruthRecord& truth, std::size_t num_frames, const DspConfig& dsp = {},
                                      const SegmentGeometry& geom = {});

}  // namespace segmil
