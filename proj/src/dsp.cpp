#include "avse/dsp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace avse {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Reflection index (no edge repetition), bouncing for short signals.
size_t reflect_index(int64_t p, int64_t len) {
  if (len == 1) return 0;
  while (p < 0 || p >= len) {
    if (p < 0) p = -p;
    if (p >= len) p = 2 * (len - 1) - p;
  }
  return static_cast<size_t>(p);
}

// DFT tables for the 640-point real transform, built once.
struct DftTables {
  Eigen::MatrixXd cos_fk;   // kNumBins x kFrameLen
  Eigen::MatrixXd sin_fk;   // kNumBins x kFrameLen
  Eigen::MatrixXd icos_kf;  // kFrameLen x kNumBins, inverse weights folded in
  Eigen::MatrixXd isin_kf;

  DftTables() {
    cos_fk.resize(kNumBins, kFrameLen);
    sin_fk.resize(kNumBins, kFrameLen);
    icos_kf.resize(kFrameLen, kNumBins);
    isin_kf.resize(kFrameLen, kNumBins);
    for (int f = 0; f < kNumBins; ++f)
      for (int k = 0; k < kFrameLen; ++k) {
        double a = 2.0 * kPi * f * k / kFrameLen;
        cos_fk(f, k) = std::cos(a);
        sin_fk(f, k) = std::sin(a);
        // conjugate-symmetric expansion: bins 1..319 count twice
        double wgt = (f == 0 || f == kNumBins - 1) ? 1.0 : 2.0;
        icos_kf(k, f) = wgt * std::cos(a) / kFrameLen;
        isin_kf(k, f) = wgt * std::sin(a) / kFrameLen;
      }
  }
};

const DftTables& dft_tables() {
  static const DftTables t;
  return t;
}

}  // namespace

std::vector<double> hann_window(int n) {
  if (n < 1) throw std::invalid_argument("hann_window: n must be >= 1");
  std::vector<double> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) w[static_cast<size_t>(k)] = 0.5 * (1.0 - std::cos(2.0 * kPi * k / n));
  return w;
}

ComplexSpectrogram stft(const Waveform& w) {
  const int64_t len = static_cast<int64_t>(w.samples.size());
  if (len < 1) throw std::invalid_argument("stft: empty waveform");
  const int T = static_cast<int>((len + kHop - 1) / kHop);
  const int64_t left = kFrameLen / 2;  // 320

  static const std::vector<double> win = hann_window(kFrameLen);
  const auto& tab = dft_tables();

  // windowed frames, kFrameLen x T
  Eigen::MatrixXd frames(kFrameLen, T);
  for (int t = 0; t < T; ++t) {
    int64_t start = static_cast<int64_t>(t) * kHop - left;
    for (int k = 0; k < kFrameLen; ++k)
      frames(k, t) = w.samples[reflect_index(start + k, len)] * win[static_cast<size_t>(k)];
  }
  Eigen::MatrixXd re = tab.cos_fk * frames;   // kNumBins x T
  Eigen::MatrixXd im = -(tab.sin_fk * frames);

  ComplexSpectrogram s;
  s.frames = T;
  s.bins.resize(static_cast<size_t>(kNumBins) * T);
  for (int f = 0; f < kNumBins; ++f)
    for (int t = 0; t < T; ++t) s.at(f, t) = {re(f, t), im(f, t)};
  return s;
}

Waveform istft(const ComplexSpectrogram& s) {
  if (s.frame_len != kFrameLen || s.hop != kHop)
    throw std::invalid_argument("istft: inconsistent frame_len/hop");
  const int T = s.frames;
  if (T < 1) throw std::invalid_argument("istft: empty spectrogram");

  static const std::vector<double> win = hann_window(kFrameLen);
  const auto& tab = dft_tables();

  Eigen::MatrixXd re(kNumBins, T), im(kNumBins, T);
  for (int f = 0; f < kNumBins; ++f)
    for (int t = 0; t < T; ++t) {
      re(f, t) = s.at(f, t).real();
      im(f, t) = s.at(f, t).imag();
    }
  // time-domain frames of the conjugate-symmetric inverse DFT
  Eigen::MatrixXd frames = tab.icos_kf * re - tab.isin_kf * im;  // kFrameLen x T

  const int64_t padded_len = static_cast<int64_t>(T - 1) * kHop + kFrameLen;
  std::vector<double> num(static_cast<size_t>(padded_len), 0.0);
  std::vector<double> den(static_cast<size_t>(padded_len), 0.0);
  for (int t = 0; t < T; ++t) {
    int64_t off = static_cast<int64_t>(t) * kHop;
    for (int k = 0; k < kFrameLen; ++k) {
      num[static_cast<size_t>(off + k)] += win[static_cast<size_t>(k)] * frames(k, t);
      den[static_cast<size_t>(off + k)] += win[static_cast<size_t>(k)] * win[static_cast<size_t>(k)];
    }
  }

  const int64_t left = kFrameLen / 2;
  const int64_t out_len = static_cast<int64_t>(T) * kHop;
  Waveform out;
  out.samples.resize(static_cast<size_t>(out_len));
  for (int64_t n = 0; n < out_len; ++n) {
    double d = den[static_cast<size_t>(left + n)];
    if (d < 1e-12) throw std::runtime_error("istft: zero window normalization (degenerate)");
    out.samples[static_cast<size_t>(n)] = num[static_cast<size_t>(left + n)] / d;
  }
  return out;
}

namespace {

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

std::vector<double> build_mel_filterbank() {
  std::vector<double> fb(static_cast<size_t>(kMelBands) * kNumBins, 0.0);
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(8000.0);
  std::vector<double> edges(kMelBands + 2);
  for (int e = 0; e < kMelBands + 2; ++e)
    edges[static_cast<size_t>(e)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * e / (kMelBands + 1));
  const double bin_hz = static_cast<double>(kSampleRate) / kFrameLen;  // 25 Hz
  for (int m = 0; m < kMelBands; ++m) {
    double fl = edges[static_cast<size_t>(m)];
    double fc = edges[static_cast<size_t>(m + 1)];
    double fr = edges[static_cast<size_t>(m + 2)];
    for (int i = 0; i < kNumBins; ++i) {
      double f = i * bin_hz;
      double wgt = 0.0;
      if (f > fl && f < fc)
        wgt = (f - fl) / (fc - fl);
      else if (f >= fc && f < fr)
        wgt = (fr - f) / (fr - fc);
      if (wgt > 0.0) fb[static_cast<size_t>(m) * kNumBins + i] = wgt;
    }
  }
  return fb;
}

Eigen::MatrixXd build_mel_pinv() {
  const auto& fb = mel_filterbank();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      F(fb.data(), kMelBands, kNumBins);
  // Moore-Penrose right inverse: Fᵀ (F Fᵀ)⁻¹  (F has full row rank)
  Eigen::MatrixXd gram = F * F.transpose();
  return F.transpose() * gram.ldlt().solve(Eigen::MatrixXd::Identity(kMelBands, kMelBands));
}

}  // namespace

const std::vector<double>& mel_filterbank() {
  static const std::vector<double> fb = build_mel_filterbank();
  return fb;
}

std::vector<double> log_mel(const ComplexSpectrogram& s) {
  if (s.frame_len / 2 + 1 != kNumBins)
    throw std::invalid_argument("log_mel: spectrogram must have 321 frequency rows");
  const int T = s.frames;
  Eigen::MatrixXd mag(kNumBins, T);
  for (int f = 0; f < kNumBins; ++f)
    for (int t = 0; t < T; ++t) mag(f, t) = std::abs(s.at(f, t));
  const auto& fb = mel_filterbank();
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      F(fb.data(), kMelBands, kNumBins);
  Eigen::MatrixXd mel = F * mag;  // kMelBands x T
  std::vector<double> out(static_cast<size_t>(kMelBands) * T);
  for (int m = 0; m < kMelBands; ++m)
    for (int t = 0; t < T; ++t)
      out[static_cast<size_t>(m) * T + t] = std::log(mel(m, t) + kLogFloor);
  return out;
}

std::vector<LogMelChunk> chunk(const std::vector<double>& mel, int frames) {
  if (mel.size() != static_cast<size_t>(kMelBands) * frames)
    throw std::invalid_argument("chunk: matrix must be 80 x frames");
  const int n = frames / kChunkFrames;
  std::vector<LogMelChunk> out(static_cast<size_t>(std::max(n, 0)));
  for (int c = 0; c < n; ++c) {
    auto& ch = out[static_cast<size_t>(c)];
    ch.values.resize(static_cast<size_t>(kMelBands) * kChunkFrames);
    for (int m = 0; m < kMelBands; ++m)
      for (int t = 0; t < kChunkFrames; ++t)
        ch.at(m, t) = mel[static_cast<size_t>(m) * frames + c * kChunkFrames + t];
  }
  return out;
}

std::vector<double> concat_chunks(const std::vector<LogMelChunk>& chunks) {
  const int T = static_cast<int>(chunks.size()) * kChunkFrames;
  std::vector<double> out(static_cast<size_t>(kMelBands) * T);
  for (size_t c = 0; c < chunks.size(); ++c)
    for (int m = 0; m < kMelBands; ++m)
      for (int t = 0; t < kChunkFrames; ++t)
        out[static_cast<size_t>(m) * T + c * kChunkFrames + t] = chunks[c].at(m, t);
  return out;
}

Waveform mel_to_waveform(const std::vector<double>& mel, int frames,
                         const ComplexSpectrogram& phase) {
  if (mel.size() != static_cast<size_t>(kMelBands) * frames)
    throw std::invalid_argument("mel_to_waveform: matrix must be 80 x frames");
  if (phase.frames < frames)
    throw std::invalid_argument("mel_to_waveform: phase has " + std::to_string(phase.frames) +
                                " frames, need >= " + std::to_string(frames));
  static const Eigen::MatrixXd pinv = build_mel_pinv();  // kNumBins x kMelBands

  Eigen::MatrixXd expm(kMelBands, frames);
  for (int m = 0; m < kMelBands; ++m)
    for (int t = 0; t < frames; ++t)
      expm(m, t) = std::exp(mel[static_cast<size_t>(m) * frames + t]);
  Eigen::MatrixXd mag = (pinv * expm).cwiseMax(0.0);  // kNumBins x frames

  ComplexSpectrogram s;
  s.frames = frames;
  s.bins.resize(static_cast<size_t>(kNumBins) * frames);
  for (int f = 0; f < kNumBins; ++f)
    for (int t = 0; t < frames; ++t) {
      std::complex<double> ph = phase.at(f, t);
      double a = std::abs(ph);
      std::complex<double> unit = a > 0.0 ? ph / a : std::complex<double>(1.0, 0.0);
      s.at(f, t) = mag(f, t) * unit;
    }
  return istft(s);
}

Waveform mel_pseudo_inverse(const LogMelChunk& chunk, const ComplexSpectrogram& phase) {
  return mel_to_waveform(chunk.values, kChunkFrames, phase);
}

double signal_power(const Waveform& w) {
  double acc = 0.0;
  for (double v : w.samples) acc += v * v;
  return w.samples.empty() ? 0.0 : acc / static_cast<double>(w.samples.size());
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db, Rng& rng) {
  if (noise.samples.size() < clean.samples.size())
    throw std::invalid_argument("mix_at_snr: noise shorter than clean");
  const size_t len = clean.samples.size();
  const size_t max_off = noise.samples.size() - len;
  const size_t off = max_off == 0
                         ? 0
                         : static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(max_off)));

  double p_clean = signal_power(clean);
  double p_noise = 0.0;
  for (size_t i = 0; i < len; ++i) p_noise += noise.samples[off + i] * noise.samples[off + i];
  p_noise /= static_cast<double>(len);
  if (p_clean <= 0.0 || p_noise <= 0.0)
    throw std::invalid_argument("mix_at_snr: silent clean or noise, SNR undefined");

  const double g = std::sqrt(p_clean / p_noise) * std::pow(10.0, -snr_db / 20.0);
  MixResult r;
  r.noise_offset = off;
  r.gain = g;
  r.mixture.samples.resize(len);
  for (size_t i = 0; i < len; ++i)
    r.mixture.samples[i] = clean.samples[i] + g * noise.samples[off + i];
  return r;
}

double snr_db(const std::vector<double>& reference, const std::vector<double>& estimate,
              size_t begin, size_t end) {
  double sig = 0.0, err = 0.0;
  for (size_t i = begin; i < end && i < reference.size() && i < estimate.size(); ++i) {
    sig += reference[i] * reference[i];
    double d = reference[i] - estimate[i];
    err += d * d;
  }
  if (err <= 0.0) return 300.0;
  return 10.0 * std::log10(sig / err);
}

}  // namespace avse
