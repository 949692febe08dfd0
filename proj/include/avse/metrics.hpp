#pragma once

// Objective scoring: classic STOI (one-third octave bands, 384 ms analysis
// segments, clipped normalized correlation, computed at 10 kHz) and SI-SDR
// (scale-invariant projection), plus corpus-level evaluation grouped by test
// condition.

#include <functional>
#include <string>
#include <vector>

#include "avse/datagen.hpp"
#include "avse/dsp.hpp"

namespace avse {

// Intelligibility score in [~0, 1]; inputs are 16 kHz, equal length,
// >= 384 ms. Internally resampled to 10 kHz by polyphase decimation.
double stoi(const Waveform& clean, const Waveform& degraded);

// 10*log10(||a s||^2 / ||a s - e||^2) with a = <e,s>/||s||^2, capped at 100 dB.
double si_sdr(const Waveform& reference, const Waveform& estimate);

struct EvalRow {
  double snr_db = 0.0;
  std::string noise_family;
  int n = 0;
  double stoi_noisy = 0.0, stoi_enh = 0.0;
  double sisdr_noisy = 0.0, sisdr_enh = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::string header_note;  // scoring-path documentation

  std::string to_table() const;
  std::string to_jsonl() const;
  // aggregate means over all rows weighted by n
  double mean_stoi_noisy() const;
  double mean_stoi_enh() const;
  double mean_sisdr_noisy() const;
  double mean_sisdr_enh() const;
};

using EnhanceFn =
    std::function<Waveform(const Waveform& noisy, const std::vector<VideoSegment>& video)>;

// Scores every example of `split` both unprocessed and enhanced; rows are
// grouped by (snr_db, noise family) and ordered ascending in SNR then family.
EvalReport evaluate_corpus(const EnhanceFn& enhance, const std::string& corpus_dir,
                           const std::string& split = "test");

}  // namespace avse
