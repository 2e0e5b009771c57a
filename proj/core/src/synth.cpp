#include "segmil/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "segmil/rng.hpp"
#include "segmil/wav.hpp"

namespace segmil {

void SynthSpec::Validate() const {
  if (n_classes < 2) throw Error(ErrorCode::kInvalidConfig, "synth needs at least 2 classes");
  if (n_utterances < n_classes) throw Error(ErrorCode::kInvalidConfig, "n_utterances must be >= n_classes");
  if (!(witness_density > 0.0 && witness_density <= 1.0)) {
    throw Error(ErrorCode::kInvalidRange, "witness_density must lie in (0, 1]");
  }
  if (sample_rate <= 0 || !(utterance_seconds > 0.0)) throw Error(ErrorCode::kInvalidConfig, "bad rate or duration");
  if (n_folds < 1) throw Error(ErrorCode::kInvalidConfig, "n_folds must be positive");
  if (!(noise_low_hz > 0.0 && noise_low_hz < noise_high_hz && noise_high_hz < sample_rate / 2.0)) {
    throw Error(ErrorCode::kInvalidRange, "noise band must lie inside (0, Nyquist)");
  }
  if (!(noise_rms > 0.0)) throw Error(ErrorCode::kInvalidRange, "noise_rms must be positive");
}

std::vector<double> ClassChord(int k) { return {600.0 + 400.0 * k, 1000.0 + 400.0 * k}; }

const TruthRecord& SynthTruth::Find(const std::string& utterance_id) const {
  for (const auto& r : records) {
    if (r.utterance_id == utterance_id) return r;
  }
  throw Error(ErrorCode::kNotFound, "utterance " + utterance_id + " has no truth record");
}

namespace {

// RBJ cookbook biquad, direct form I.
struct Biquad {
  double b0, b1, b2, a1, a2;
  double x1 = 0, x2 = 0, y1 = 0, y2 = 0;

  static Biquad Make(bool highpass, double fc, double fs) {
    const double w = 2.0 * std::numbers::pi * fc / fs;
    const double alpha = std::sin(w) / std::numbers::sqrt2;  // sin(w) / 2Q with Q = 1/sqrt(2)
    const double c = std::cos(w);
    const double a0 = 1.0 + alpha;
    Biquad q{};
    if (highpass) {
      q.b0 = (1.0 + c) / 2.0 / a0;
      q.b1 = -(1.0 + c) / a0;
    } else {
      q.b0 = (1.0 - c) / 2.0 / a0;
      q.b1 = (1.0 - c) / a0;
    }
    q.b2 = q.b0;
    q.a1 = -2.0 * c / a0;
    q.a2 = (1.0 - alpha) / a0;
    return q;
  }

  double operator()(double x) {
    const double y = b0 * x + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
    x2 = x1;
    x1 = x;
    y2 = y1;
    y1 = y;
    return y;
  }
};

std::string FormatMs(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

SynthCorpus GenerateCorpus(const SynthSpec& spec) {
  spec.Validate();
  DspConfig dsp;
  dsp.sample_rate = spec.sample_rate;
  const std::size_t hop = dsp.HopSamples(), win = dsp.WindowSamples();
  const std::size_t n = static_cast<std::size_t>(std::llround(spec.utterance_seconds * spec.sample_rate));
  const std::size_t frames = FrameCount(n, win, hop);
  const SegmentGeometry geom;
  if (frames < geom.seg_frames) throw Error(ErrorCode::kInvalidConfig, "synthetic utterances shorter than a segment");
  const std::size_t segments = SegmentCount(frames, geom.seg_frames, geom.shift_frames);

  SynthCorpus corpus;
  for (int k = 0; k < spec.n_classes; ++k) corpus.manifest.classes.push_back("class" + std::to_string(k));
  corpus.manifest.fold_assignment = "speaker-stratified";
  const double fs = spec.sample_rate;
  const double ramp = 0.005 * fs;

  for (int i = 0; i < spec.n_utterances; ++i) {
    Rng rng(DeriveSeed(spec.seed, static_cast<std::uint64_t>(i)));
    const int label = i % spec.n_classes;
    const int fold = (i / spec.n_classes) % spec.n_folds;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "utt%05d", i);
    const std::string id = idbuf;

    // Band-limited noise: white Gaussian through a 2nd-order high-pass and
    // low-pass, then scaled to the target RMS.
    std::vector<double> x(n);
    auto hp = Biquad::Make(true, spec.noise_low_hz, fs);
    auto lp = Biquad::Make(false, spec.noise_high_hz, fs);
    for (std::size_t s = 0; s < 64; ++s) lp(hp(rng.normal()));  // settle the filters
    double power = 0.0;
    for (auto& v : x) {
      v = lp(hp(rng.normal()));
      power += v * v;
    }
    const double scale = spec.noise_rms / std::sqrt(power / static_cast<double>(n));
    for (auto& v : x) v *= scale;
    const double noise_power = spec.noise_rms * spec.noise_rms;

    // One contiguous witness span covering ~density of the segments, frame aligned.
    TruthRecord truth{id, label, {}};
    std::size_t s0 = 0, s1 = n;
    if (spec.witness_density < 1.0) {
      const double target = spec.witness_density * static_cast<double>(segments);
      const long len_frames = std::clamp<long>(std::lround(static_cast<double>(geom.shift_frames) * target - 1.0),
                                               static_cast<long>(geom.seg_frames / 2), static_cast<long>(frames));
      const long half = static_cast<long>(geom.seg_frames / 2);
      const long last_start = static_cast<long>((segments - 1) * geom.shift_frames);
      long lo = half, hi = last_start + half - len_frames;
      if (hi < lo) {
        lo = 0;
        hi = std::max<long>(0, static_cast<long>(frames) - len_frames);
      }
      const long a = lo + static_cast<long>(rng.below(static_cast<std::size_t>(hi - lo + 1)));
      // Frame f is centred at f*hop + win/2, so this interval holds exactly
      // len_frames centres.
      s0 = static_cast<std::size_t>(a) * hop + win / 2 - hop / 2;
      s1 = std::min(n, static_cast<std::size_t>(a + len_frames) * hop + win / 2 - hop / 2);
    }
    truth.spans.push_back({1000.0 * static_cast<double>(s0) / fs, 1000.0 * static_cast<double>(s1) / fs});

    const auto chord = ClassChord(label);
    // Equal-amplitude tones; total chord power = noise power * 10^(snr/10).
    const double amp = std::sqrt(2.0 * noise_power * std::pow(10.0, spec.snr_db / 10.0) / static_cast<double>(chord.size()));
    std::vector<double> phase(chord.size());
    for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double span_len = static_cast<double>(s1 - s0);
    for (std::size_t s = s0; s < s1; ++s) {
      const double rel = static_cast<double>(s - s0);
      double env = 1.0;
      if (rel < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * rel / ramp);
      if (span_len - rel < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(std::numbers::pi * (span_len - rel) / ramp));
      double tone = 0.0;
      for (std::size_t c = 0; c < chord.size(); ++c) {
        tone += std::sin(2.0 * std::numbers::pi * chord[c] * static_cast<double>(s) / fs + phase[c]);
      }
      x[s] += env * amp * tone;
    }
    for (auto& v : x) v = Pcm16RoundTrip(v);

    AudioClip clip;
    clip.id = id;
    clip.samples = std::move(x);
    clip.sample_rate = spec.sample_rate;
    clip.label = label;
    clip.speaker = "spk" + std::to_string(fold);
    clip.session = "s" + std::to_string(fold);
    clip.fold = fold;

    ManifestRecord rec;
    rec.path = "wav/" + id + ".wav";
    rec.utterance_id = id;
    rec.label = corpus.manifest.classes[static_cast<std::size_t>(label)];
    rec.label_index = label;
    rec.speaker = clip.speaker;
    rec.session = clip.session;
    rec.fold = fold;
    rec.duration_seconds = static_cast<double>(n) / fs;

    corpus.clips.push_back(std::move(clip));
    corpus.manifest.records.push_back(std::move(rec));
    corpus.truth.records.push_back(std::move(truth));
  }
  return corpus;
}

void WriteCorpus(const SynthCorpus& corpus, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + (out_dir / "wav").string() + ": " + ec.message());
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    WriteWav(out_dir / corpus.manifest.records[i].path, corpus.clips[i].samples, corpus.clips[i].sample_rate);
  }
  WriteManifest(out_dir / "manifest.tsv", corpus.manifest);
  std::ofstream os(out_dir / "truth.tsv", std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIoError, "cannot write truth file in " + out_dir.string());
  WriteTruth(os, corpus.truth);
  if (!os) throw Error(ErrorCode::kIoError, "failed writing truth file");
}

void WriteTruth(std::ostream& os, const SynthTruth& truth) {
  for (const auto& r : truth.records) {
    os << r.utterance_id << '\t' << r.label << '\t';
    for (std::size_t i = 0; i < r.spans.size(); ++i) {
      os << (i ? ";" : "") << FormatMs(r.spans[i].start_ms) << '-' << FormatMs(r.spans[i].end_ms);
    }
    os << '\n';
  }
}

SynthTruth ReadTruth(std::istream& is) {
  SynthTruth truth;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::kParseError, "truth line " + std::to_string(lineno) + ": " + what);
  };
  auto number = [&](std::string_view text) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) fail("bad number '" + std::string(text) + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) fail("expected 3 tab-separated fields");
    TruthRecord r;
    r.utterance_id = line.substr(0, t1);
    r.label = static_cast<int>(number(std::string_view(line).substr(t1 + 1, t2 - t1 - 1)));
    std::string_view rest = std::string_view(line).substr(t2 + 1);
    while (!rest.empty()) {
      const auto semi = rest.find(';');
      const auto item = rest.substr(0, semi);
      const auto dash = item.find('-');
      if (dash == std::string_view::npos) fail("span needs start-end");
      r.spans.push_back({number(item.substr(0, dash)), number(item.substr(dash + 1))});
      if (semi == std::string_view::npos) break;
      rest.remove_prefix(semi + 1);
    }
    truth.records.push_back(std::move(r));
  }
  return truth;
}

SynthTruth ReadTruth(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIoError, "cannot read truth file " + path.string());
  return ReadTruth(is);
}

std::vector<bool> OracleSegmentLabels(const TruthRecord& truth, std::size_t num_frames, const DspConfig& dsp,
                                      const SegmentGeometry& geom) {
  const double hop_ms = 1000.0 * static_cast<double>(dsp.HopSamples()) / dsp.sample_rate;
  const double centre_ms = 1000.0 * static_cast<double>(dsp.WindowSamples()) / 2.0 / dsp.sample_rate;
  std::vector<bool> inside(num_frames, false);
  for (std::size_t f = 0; f < num_frames; ++f) {
    const double c = static_cast<double>(f) * hop_ms + centre_ms;
    for (const auto& s : truth.spans) inside[f] = inside[f] || (c >= s.start_ms && c < s.end_ms);
  }
  const std::size_t count = SegmentCount(num_frames, geom.seg_frames, geom.shift_frames);
  std::vector<bool> flags(count, false);
  for (std::size_t j = 0; j < count; ++j) {
    std::size_t hits = 0;
    for (std::size_t f = j * geom.shift_frames; f < j * geom.shift_frames + geom.seg_frames; ++f) hits += inside[f];
    flags[j] = 2 * hits >= geom.seg_frames;
  }
  return flags;
}

}  // namespace segmil
