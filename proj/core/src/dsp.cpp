#include "segmil/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "segmil/error.hpp"

namespace segmil {

void ValidateClip(const AudioClip& clip) {
  if (clip.sample_rate <= 0) throw Error(ErrorCode::kInvalidRate, "clip " + clip.id + " has non-positive rate");
  if (clip.samples.empty()) throw Error(ErrorCode::kClipTooShort, "clip " + clip.id + " is empty");
  for (double s : clip.samples) {
    if (!std::isfinite(s) || std::abs(s) > 1.0) {
      throw Error(ErrorCode::kInvalidConfig, "clip " + clip.id + " has samples outside [-1, 1]");
    }
  }
}

int DspConfig::WindowSamples() const {
  return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
}

int DspConfig::HopSamples() const {
  return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

std::size_t FrameCount(std::size_t num_samples, std::size_t window_samples, std::size_t hop_samples) {
  if (num_samples < window_samples || hop_samples == 0) return 0;
  return 1 + (num_samples - window_samples) / hop_samples;
}

std::vector<double> MakeWindow(WindowType type, std::size_t length) {
  std::vector<double> w(length, 1.0);
  if (type == WindowType::kHamming && length > 1) {
    const double denom = static_cast<double>(length - 1);
    for (std::size_t i = 0; i < length; ++i) {
      w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / denom);
    }
  }
  return w;
}

void Fft(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  if (n <= 1) return;
  if ((n & (n - 1)) != 0) {
    std::vector<std::complex<double>> out(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) {
        const double angle = -2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
        acc += data[t] * std::polar(1.0, angle);
      }
      out[k] = acc;
    }
    data.swap(out);
    return;
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  // Twiddles are evaluated directly (not by recurrence) so rounding error does
  // not accumulate along the butterfly; the table is cached per size.
  thread_local std::vector<std::complex<double>> twiddle;
  if (twiddle.size() != n / 2) {
    twiddle.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      twiddle[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t stride = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<double> u = data[start + k];
        const std::complex<double> a = data[start + k + half], w = twiddle[k * stride];
        // Written out to avoid the NaN-recovery path of complex operator*.
        const std::complex<double> v(a.real() * w.real() - a.imag() * w.imag(),
                                     a.real() * w.imag() + a.imag() * w.real());
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

RowMatrixXd StftPower(std::span<const double> samples, int sample_rate, double window_ms, double hop_ms,
                      int nfft, WindowType window) {
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidRate, "non-positive sample rate");
  const auto win = static_cast<std::size_t>(std::lround(sample_rate * window_ms / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(sample_rate * hop_ms / 1000.0));
  if (win == 0 || hop == 0) throw Error(ErrorCode::kInvalidConfig, "window and hop must span at least one sample");
  if (nfft <= 0 || static_cast<std::size_t>(nfft) < win) {
    throw Error(ErrorCode::kInvalidConfig, "nfft must be at least the window length");
  }
  if (samples.size() < win) {
    throw Error(ErrorCode::kClipTooShort, std::to_string(samples.size()) + " samples < window of " +
                                              std::to_string(win));
  }
  const std::size_t frames = FrameCount(samples.size(), win, hop);
  const std::size_t bins = static_cast<std::size_t>(nfft) / 2 + 1;
  const auto w = MakeWindow(window, win);

  RowMatrixXd power(frames, bins);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(nfft));
  for (std::size_t f = 0; f < frames; ++f) {
    const double* frame = samples.data() + f * hop;
    for (std::size_t i = 0; i < win; ++i) buf[i] = frame[i] * w[i];
    std::fill(buf.begin() + static_cast<std::ptrdiff_t>(win), buf.end(), 0.0);
    Fft(buf);
    for (std::size_t k = 0; k < bins; ++k) power(f, k) = std::norm(buf[k]);
  }
  return power;
}

RowMatrixXd StftPower(const AudioClip& clip, const DspConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw Error(ErrorCode::kInvalidRate, "clip " + clip.id + " is " + std::to_string(clip.sample_rate) +
                                             " Hz but the configuration expects " +
                                             std::to_string(cfg.sample_rate) + " Hz");
  }
  return StftPower(clip.samples, clip.sample_rate, cfg.window_ms, cfg.hop_ms, cfg.nfft, cfg.window);
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterBank BuildMelFilterBank(int sample_rate, int nfft, int n_mels, double fmin, double fmax) {
  if (sample_rate <= 0) throw Error(ErrorCode::kInvalidRate, "non-positive sample rate");
  if (nfft <= 0 || n_mels < 1) throw Error(ErrorCode::kInvalidConfig, "nfft and n_mels must be positive");
  if (!(fmin >= 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0) {
    throw Error(ErrorCode::kInvalidRange, "need 0 <= fmin < fmax <= Nyquist");
  }
  const std::size_t bins = static_cast<std::size_t>(nfft) / 2 + 1;
  const double mel_lo = HzToMel(fmin);
  const double mel_hi = HzToMel(fmax);
  const double step = (mel_hi - mel_lo) / (n_mels + 1);

  MelFilterBank bank;
  bank.fmin = fmin;
  bank.fmax = fmax;
  bank.weights = RowMatrixXd::Zero(static_cast<Eigen::Index>(bins), n_mels);
  bank.center_hz.resize(static_cast<std::size_t>(n_mels));

  // Triangles are built on the mel axis: zero at neighbouring peaks, one at
  // the filter's own peak.
  for (int m = 0; m < n_mels; ++m) {
    const double left = mel_lo + step * m;
    const double center = left + step;
    const double right = center + step;
    bank.center_hz[static_cast<std::size_t>(m)] = MelToHz(center);
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double mel = HzToMel(static_cast<double>(k) * sample_rate / nfft);
      double weight = 0.0;
      if (mel > left && mel <= center) {
        weight = (mel - left) / (center - left);
      } else if (mel > center && mel < right) {
        weight = (right - mel) / (right - center);
      }
      if (weight > 0.0) {
        bank.weights(static_cast<Eigen::Index>(k), m) = weight;
        any = true;
      }
    }
    if (!any) {
      throw Error(ErrorCode::kInvalidRange,
                  "mel filter " + std::to_string(m) + " covers no FFT bin; use fewer filters or a larger nfft");
    }
  }
  return bank;
}

RowMatrixXd LogMel(const RowMatrixXd& power, const MelFilterBank& bank, double energy_floor) {
  if (power.cols() != bank.weights.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "power has " + std::to_string(power.cols()) +
                                               " bins but the filterbank expects " +
                                               std::to_string(bank.weights.rows()));
  }
  RowMatrixXd out = power * bank.weights;
  out = out.array().max(energy_floor).log();
  return out;
}

void NormalizePerBin(RowMatrixXd& frames) {
  if (frames.rows() == 0) return;
  for (Eigen::Index m = 0; m < frames.cols(); ++m) {
    auto col = frames.col(m);
    const double mean = col.mean();
    const double var = (col.array() - mean).square().mean();
    const double scale = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
    col = (col.array() - mean) * scale;
  }
}

MelSpectrogram ComputeLogMel(const AudioClip& clip, const DspConfig& cfg, const MelFilterBank& bank) {
  ValidateClip(clip);
  MelSpectrogram spec;
  spec.utterance_id = clip.id;
  spec.frame_hop = cfg.hop_ms / 1000.0;
  spec.window_len = cfg.window_ms / 1000.0;
  spec.frames = LogMel(StftPower(clip, cfg), bank, cfg.energy_floor);
  if (cfg.normalize) NormalizePerBin(spec.frames);
  return spec;
}

MelSpectrogram ComputeLogMel(const AudioClip& clip, const DspConfig& cfg) {
  const auto bank = BuildMelFilterBank(cfg.sample_rate, cfg.nfft, cfg.n_mels, cfg.fmin, cfg.EffectiveFmax());
  return ComputeLogMel(clip, cfg, bank);
}

}  // namespace segmil
