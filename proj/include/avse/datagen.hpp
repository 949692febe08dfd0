#pragma once

// Deterministic synthetic audio-visual corpus: harmonic speech-like
// utterances, three noise families with disjoint train/test parameter sets,
// clean-derived visual embeddings, and SNR-controlled mixing. The whole
// corpus is a pure function of the SynthSpec.

#include <array>
#include <string>
#include <vector>

#include "avse/dsp.hpp"

namespace avse {

struct VideoSegment {
  // [5 frames x D], row-major
  std::vector<double> embeddings;
  int dim = 0;
};

enum class NoiseFamily { kWhite, kPink, kToneCluster };

const char* noise_family_name(NoiseFamily f);

struct SynthSpec {
  int n_train = 500;
  int n_val = 50;
  int n_test = 60;
  double utterance_len = 1.0;                      // seconds
  double snr_train_lo = -10.0, snr_train_hi = 10.0;
  std::vector<double> snr_eval{0.0, -5.0};
  int video_dim = 64;
  uint64_t seed = 0;

  void validate() const;
};

struct AvExample {
  Waveform clean;
  Waveform noisy;
  std::vector<VideoSegment> video;  // one segment per 200 ms chunk
  double snr_db = 0.0;
  NoiseFamily noise_family = NoiseFamily::kWhite;
  uint64_t seed = 0;
};

// Harmonic source with a randomized F0 trajectory (80-300 Hz, 6-10
// harmonics), two slowly varying resonance peaks, and a 2-6 Hz syllabic
// amplitude envelope; peak-normalized to 0.5.
Waveform synth_speech(uint64_t seed, double len_seconds);

// Per 40 ms video frame: a fixed random projection of clean-signal features
// (log energy, F0 estimate, envelope derivative, 5-band spectral shape) plus
// small Gaussian jitter, grouped 5 frames per segment.
std::vector<VideoSegment> synth_video(const Waveform& clean, int dim, uint64_t jitter_seed);

// Noise generator for one family instance; `params_seed` selects the family
// parameters (spectral tilt, tone set, AM rate), `real_seed` the realization.
Waveform synth_noise(NoiseFamily family, uint64_t params_seed, uint64_t real_seed,
                     size_t n_samples);

struct Corpus {
  std::vector<AvExample> train, val, test;
};

// Train/val mixed at uniform random SNR in [lo, hi]; test at exactly the
// snr_eval levels with noise parameters held out from train/val.
Corpus build_corpus(const SynthSpec& spec);

// On-disk layout: <dir>/{train,val,test}/ex<NNNNN>/{clean.wav, noisy.wav,
// video.f32, meta.json}. video.f32: 16-byte header (magic "AVVF", u32
// version, u32 n_frames, u32 dim), then row-major f32 little-endian frames.
void write_corpus(const std::string& dir, const Corpus& corpus);

struct ExamplePaths {
  std::string clean, noisy, video, meta;
};
std::vector<ExamplePaths> list_split(const std::string& dir, const std::string& split);

// Flat [n_frames x dim] frame matrix IO for video features.
void write_video_features(const std::string& path, const std::vector<VideoSegment>& segments);
std::vector<VideoSegment> read_video_features(const std::string& path);

struct ExampleMeta {
  double snr_db = 0.0;
  std::string noise_family;
  uint64_t seed = 0;
};
ExampleMeta read_meta(const std::string& path);

}  // namespace avse
