#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace segmil {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AudioClip {
  std::string id;
  std::vector<double> samples;
  int sample_rate = 0;
  int label = -1;
  std::string speaker;
  std::string session;
  int fold = -1;
};

// Throws kInvalidRate / kInvalidConfig when the clip violates its invariants
// (empty, non-finite, or out-of-range samples; non-positive rate).
void ValidateClip(const AudioClip& clip);

enum class WindowType { kHamming, kRectangular };

struct DspConfig {
  int sample_rate = 16000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int nfft = 512;
  int n_mels = 64;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 selects Nyquist
  double energy_floor = 1e-10;
  WindowType window = WindowType::kHamming;
  bool normalize = false;  // per-utterance mean/variance per Mel bin

  int WindowSamples() const;
  int HopSamples() const;
  double EffectiveFmax() const { return fmax > 0.0 ? fmax : sample_rate / 2.0; }
};

// 1 + floor((n - window) / hop) for n >= window, else 0.
std::size_t FrameCount(std::size_t num_samples, std::size_t window_samples, std::size_t hop_samples);

std::vector<double> MakeWindow(WindowType type, std::size_t length);

// In-place complex FFT. Power-of-two sizes use iterative radix-2; other sizes
// fall back to a direct DFT.
void Fft(std::vector<std::complex<double>>& data);

// Power spectrogram, frames x (nfft/2 + 1). Each frame is windowed and
// zero-padded to nfft.
RowMatrixXd StftPower(std::span<const double> samples, int sample_rate, double window_ms, double hop_ms,
                      int nfft, WindowType window = WindowType::kHamming);
// Same, but rejects clips whose sample rate differs from the configuration.
RowMatrixXd StftPower(const AudioClip& clip, const DspConfig& cfg);

double HzToMel(double hz);
double MelToHz(double mel);

struct MelFilterBank {
  RowMatrixXd weights;  // (nfft/2 + 1) x n_mels
  double fmin = 0.0;
  double fmax = 0.0;
  std::vector<double> center_hz;
};

MelFilterBank BuildMelFilterBank(int sample_rate, int nfft, int n_mels, double fmin, double fmax);

// entry(f, m) = ln(max(power.row(f) . weights.col(m), energy_floor)).
RowMatrixXd LogMel(const RowMatrixXd& power, const MelFilterBank& bank, double energy_floor);

struct MelSpectrogram {
  std::string utterance_id;
  RowMatrixXd frames;  // F x n_mels
  double frame_hop = 0.010;
  double window_len = 0.025;

  std::size_t num_frames() const { return static_cast<std::size_t>(frames.rows()); }
};

void NormalizePerBin(RowMatrixXd& frames);

// WAV samples -> log-Mel spectrogram with the configured geometry.
MelSpectrogram ComputeLogMel(const AudioClip& clip, const DspConfig& cfg);
MelSpectrogram ComputeLogMel(const AudioClip& clip, const DspConfig& cfg, const MelFilterBank& bank);

}  // namespace segmil
