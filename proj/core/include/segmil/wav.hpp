#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace segmil {

struct WavData {
  int sample_rate = 0;
  int channels = 0;
  std::vector<double> samples;  // mono, scaled to [-1, 1)
};

// Reads a RIFF/WAVE file holding 16-bit little-endian PCM. Multi-channel
// input is rejected (kUnsupportedFormat) rather than mixed down.
WavData ReadWav(const std::filesystem::path& path);
WavData ParseWav(std::span<const unsigned char> bytes);

// Writes mono PCM16; samples are clipped to [-1, 1] and rounded.
void WriteWav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate);
std::vector<unsigned char> EncodeWav(std::span<const double> samples, int sample_rate);

std::int16_t QuantizePcm16(double sample);
// The value a sample reads back as after WriteWav + ReadWav.
double Pcm16RoundTrip(double sample);

}  // namespace segmil
