#pragma once

// Waveform <-> time-frequency conversions: STFT with a periodic Hann window
// (640-sample frames, 160-sample hop, 16 kHz), an 80-band mel filterbank over
// 0-8 kHz, log-mel chunking into 80x20 slices, weighted overlap-add inversion,
// mel pseudo-inversion for waveform reconstruction, and SNR-controlled noise
// mixing.

#include <complex>
#include <vector>

#include "avse/common.hpp"

namespace avse {

inline constexpr int kSampleRate = 16000;
inline constexpr int kFrameLen = 640;   // 40 ms
inline constexpr int kHop = 160;        // 10 ms
inline constexpr int kNumBins = kFrameLen / 2 + 1;  // 321
inline constexpr int kMelBands = 80;
inline constexpr int kChunkFrames = 20;  // 200 ms
inline constexpr double kLogFloor = 1e-8;

struct Waveform {
  std::vector<double> samples;  // amplitudes, nominally in [-1, 1]
  int sample_rate = kSampleRate;

  size_t size() const { return samples.size(); }
};

struct ComplexSpectrogram {
  // row-major [kNumBins x frames]
  std::vector<std::complex<double>> bins;
  int frames = 0;
  int frame_len = kFrameLen;
  int hop = kHop;

  std::complex<double>& at(int f, int t) { return bins[static_cast<size_t>(f) * frames + t]; }
  const std::complex<double>& at(int f, int t) const {
    return bins[static_cast<size_t>(f) * frames + t];
  }
};

struct LogMelChunk {
  // row-major [kMelBands x kChunkFrames]
  std::vector<double> values;

  double& at(int m, int t) { return values[static_cast<size_t>(m) * kChunkFrames + t]; }
  double at(int m, int t) const { return values[static_cast<size_t>(m) * kChunkFrames + t]; }
};

// Periodic Hann window: w[k] = 0.5*(1 - cos(2*pi*k/n)), so w[0] == 0.
std::vector<double> hann_window(int n);

// Center-padded (reflection) STFT; frame count is ceil(len/hop).
ComplexSpectrogram stft(const Waveform& w);

// Weighted overlap-add inverse with the analysis window; returns frames*hop
// samples. For s = stft(w) the result matches w away from the boundary frames.
Waveform istft(const ComplexSpectrogram& s);

// 80 triangular filters with centers uniformly spaced on the mel scale
// m = 2595*log10(1 + f/700) between 0 and 8000 Hz; row-major [80 x 321].
const std::vector<double>& mel_filterbank();

// log(filterbank * |s| + kLogFloor); row-major [80 x frames].
std::vector<double> log_mel(const ComplexSpectrogram& s);

// Non-overlapping 80x20 slices; a trailing remainder of < 20 frames is dropped.
std::vector<LogMelChunk> chunk(const std::vector<double>& mel, int frames);

// Reassemble chunked slices back into a [80 x n*20] matrix.
std::vector<double> concat_chunks(const std::vector<LogMelChunk>& chunks);

// Pseudo-inverse mel reconstruction: linear magnitude = clamp(pinv(FB)*exp(M), 0)
// combined with the supplied phase, then istft. `mel` is [80 x frames]; the
// phase spectrogram must have at least that many frames (extra frames ignored).
Waveform mel_to_waveform(const std::vector<double>& mel, int frames,
                         const ComplexSpectrogram& phase);

// Chunk-level wrapper over mel_to_waveform.
Waveform mel_pseudo_inverse(const LogMelChunk& chunk, const ComplexSpectrogram& phase);

struct MixResult {
  Waveform mixture;
  size_t noise_offset = 0;  // crop position used
  double gain = 0.0;        // scale applied to the noise
};

// mixture = clean + g * noise[offset : offset+len], with g chosen so the
// clean-to-scaled-noise power ratio equals snr_db. The crop offset is drawn
// from rng; pass the same stream for reproducible mixtures.
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng);

// Mean square of the samples.
double signal_power(const Waveform& w);

// SNR in dB of `estimate` against `reference` over [begin, end).
double snr_db(const std::vector<double>& reference, const std::vector<double>& estimate,
              size_t begin, size_t end);

}  // namespace avse
