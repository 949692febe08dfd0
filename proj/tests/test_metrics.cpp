#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "avse/datagen.hpp"
#include "avse/metrics.hpp"

#include <cmath>
#include <complex>
#include <filesystem>

using namespace avse;

namespace {

constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Independent STOI oracle. Same published definition, deliberately different
// code paths: the resampler materializes the zero-stuffed 80 kHz stream and
// convolves it directly (no polyphase), spectra come from a naive O(N^2) DFT
// (no FFT), and the correlation is computed with two-pass means.

std::vector<double> oracle_resample(const std::vector<double>& x) {
  const int up = 5, down = 8, taps = 161, half = taps / 2;
  std::vector<double> h(taps);
  for (int n = 0; n < taps; ++n) {
    const double m = n - half;
    const double sinc =
        m == 0.0 ? 2.0 / 16.0 : std::sin(2.0 * kPi * m / 16.0) / (kPi * m);
    const double win = 0.5 * (1.0 - std::cos(2.0 * kPi * n / (taps - 1)));
    h[static_cast<size_t>(n)] = 5.0 * sinc * win;
  }
  std::vector<double> hi(x.size() * up, 0.0);
  for (size_t i = 0; i < x.size(); ++i) hi[i * up] = x[i];
  const int64_t n_out = static_cast<int64_t>(x.size()) * up / down;
  std::vector<double> y(static_cast<size_t>(n_out), 0.0);
  for (int64_t o = 0; o < n_out; ++o) {
    double acc = 0.0;
    for (int k = 0; k < taps; ++k) {
      const int64_t ui = o * down - half + k;
      if (ui < 0 || ui >= static_cast<int64_t>(hi.size())) continue;
      acc += h[static_cast<size_t>(k)] * hi[static_cast<size_t>(ui)];
    }
    y[static_cast<size_t>(o)] = acc;
  }
  return y;
}

double oracle_stoi(const Waveform& clean, const Waveform& degraded) {
  const int frame = 256, hop = 128, nfft = 512, bands = 15, seg = 30;
  std::vector<double> xs = oracle_resample(clean.samples);
  std::vector<double> ys = oracle_resample(degraded.samples);

  std::vector<double> win(frame);
  for (int i = 0; i < frame; ++i) win[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * kPi * i / frame));

  const int n_frames = static_cast<int>((xs.size() - frame) / hop) + 1;
  std::vector<double> fe(static_cast<size_t>(n_frames));
  double max_e = 0.0;
  for (int m = 0; m < n_frames; ++m) {
    double e = 0.0;
    for (int i = 0; i < frame; ++i) {
      const double v = xs[static_cast<size_t>(m * hop + i)] * win[static_cast<size_t>(i)];
      e += v * v;
    }
    fe[static_cast<size_t>(m)] = e;
    max_e = std::max(max_e, e);
  }
  std::vector<int> kept;
  for (int m = 0; m < n_frames; ++m)
    if (fe[static_cast<size_t>(m)] > max_e * std::pow(10.0, -4.0)) kept.push_back(m);

  const int M = static_cast<int>(kept.size());
  std::vector<double> X(static_cast<size_t>(bands) * M), Y(static_cast<size_t>(bands) * M);
  for (int mi = 0; mi < M; ++mi) {
    const int m = kept[static_cast<size_t>(mi)];
    for (int j = 0; j < bands; ++j) {
      const double cf = 150.0 * std::pow(2.0, j / 3.0);
      const int blo = static_cast<int>(std::ceil(cf / std::pow(2.0, 1.0 / 6.0) * nfft / 10000.0));
      const int bhi = std::min(nfft / 2, static_cast<int>(std::floor(cf * std::pow(2.0, 1.0 / 6.0) * nfft / 10000.0)));
      double ex = 0.0, ey = 0.0;
      for (int b = blo; b <= bhi; ++b) {
        std::complex<double> ax(0.0, 0.0), ay(0.0, 0.0);
        for (int i = 0; i < frame; ++i) {
          const double ang = -2.0 * kPi * b * i / nfft;
          const std::complex<double> w(std::cos(ang), std::sin(ang));
          ax += xs[static_cast<size_t>(m * hop + i)] * win[static_cast<size_t>(i)] * w;
          ay += ys[static_cast<size_t>(m * hop + i)] * win[static_cast<size_t>(i)] * w;
        }
        ex += std::norm(ax);
        ey += std::norm(ay);
      }
      X[static_cast<size_t>(j) * M + mi] = std::sqrt(ex);
      Y[static_cast<size_t>(j) * M + mi] = std::sqrt(ey);
    }
  }

  const double clip = std::pow(10.0, 15.0 / 20.0);
  double acc = 0.0;
  int count = 0;
  for (int m = seg; m <= M; ++m)
    for (int j = 0; j < bands; ++j) {
      std::vector<double> xv(seg), yv(seg);
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < seg; ++i) {
        xv[static_cast<size_t>(i)] = X[static_cast<size_t>(j) * M + (m - seg + i)];
        yv[static_cast<size_t>(i)] = Y[static_cast<size_t>(j) * M + (m - seg + i)];
        nx += xv[static_cast<size_t>(i)] * xv[static_cast<size_t>(i)];
        ny += yv[static_cast<size_t>(i)] * yv[static_cast<size_t>(i)];
      }
      const double alpha = ny > 0.0 ? std::sqrt(nx / ny) : 0.0;
      for (int i = 0; i < seg; ++i)
        yv[static_cast<size_t>(i)] = std::min(alpha * yv[static_cast<size_t>(i)], (1.0 + clip) * xv[static_cast<size_t>(i)]);
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < seg; ++i) {
        mx += xv[static_cast<size_t>(i)];
        my += yv[static_cast<size_t>(i)];
      }
      mx /= seg;
      my /= seg;
      double num = 0.0, dx = 0.0, dy = 0.0;
      for (int i = 0; i < seg; ++i) {
        num += (xv[static_cast<size_t>(i)] - mx) * (yv[static_cast<size_t>(i)] - my);
        dx += (xv[static_cast<size_t>(i)] - mx) * (xv[static_cast<size_t>(i)] - mx);
        dy += (yv[static_cast<size_t>(i)] - my) * (yv[static_cast<size_t>(i)] - my);
      }
      const double denom = std::sqrt(dx * dy);
      acc += denom > 1e-20 ? num / denom : 0.0;
      ++count;
    }
  return acc / count;
}

Waveform white_noise(uint64_t seed, size_t n, double amp) {
  Rng rng(seed);
  Waveform w;
  w.samples.resize(n);
  for (auto& v : w.samples) v = amp * rng.normal();
  return w;
}

Waveform mix(const Waveform& a, const Waveform& b, double gain_b) {
  Waveform m = a;
  for (size_t i = 0; i < m.size(); ++i) m.samples[i] += gain_b * b.samples[i];
  return m;
}

}  // namespace

TEST_CASE("stoi matches the independent oracle across SNRs") {
  Waveform speech = synth_speech(100, 1.0);
  Waveform noise = white_noise(7, speech.size(), 0.05);
  for (double g : {0.0, 0.5, 1.0, 3.0}) {
    Waveform deg = mix(speech, noise, g);
    const double ours = stoi(speech, deg);
    const double ref = oracle_stoi(speech, deg);
    CHECK(std::fabs(ours - ref) < 1e-8);
  }
}

TEST_CASE("stoi of a signal with itself is one") {
  Waveform speech = synth_speech(3, 1.0);
  CHECK(std::fabs(stoi(speech, speech) - 1.0) <= 1e-6);
}

TEST_CASE("stoi is invariant to degraded-signal scaling") {
  Waveform speech = synth_speech(5, 1.0);
  Waveform deg = mix(speech, white_noise(9, speech.size(), 0.05), 1.0);
  const double base = stoi(speech, deg);
  for (double c : {0.25, 4.0, 64.0}) {
    Waveform scaled = deg;
    for (auto& v : scaled.samples) v *= c;
    CHECK(std::fabs(stoi(speech, scaled) - base) <= 1e-6);
  }
}

TEST_CASE("stoi of speech against pure noise is low") {
  Waveform speech = synth_speech(11, 1.0);
  Waveform noise = white_noise(13, speech.size(), 0.1);
  CHECK(stoi(speech, noise) < 0.25);
}

TEST_CASE("stoi decreases as noise increases") {
  Waveform speech = synth_speech(17, 1.0);
  Waveform noise = white_noise(19, speech.size(), 0.05);
  double prev = 1.1;
  for (double g : {0.2, 1.0, 5.0}) {
    const double s = stoi(speech, mix(speech, noise, g));
    CHECK(s < prev);
    prev = s;
  }
}

TEST_CASE("stoi input validation") {
  Waveform speech = synth_speech(1, 1.0);
  Waveform shorter;
  shorter.samples.assign(1000, 0.0);
  CHECK_THROWS_AS((void)stoi(speech, shorter), std::invalid_argument);
  Waveform tiny;
  tiny.samples.assign(1000, 0.1);
  CHECK_THROWS_AS((void)stoi(tiny, tiny), std::invalid_argument);
}

TEST_CASE("si_sdr closed-form behavior") {
  Waveform ref = synth_speech(23, 1.0);
  // identity and pure scaling hit the cap
  CHECK(si_sdr(ref, ref) == 100.0);
  Waveform scaled = ref;
  for (auto& v : scaled.samples) v *= 3.7;
  CHECK(si_sdr(ref, scaled) == 100.0);

  // orthogonal additive noise: SI-SDR == 10 log10(||s||^2 / ||n||^2) exactly
  // (projection removes any reference-parallel component)
  Waveform noise = white_noise(29, ref.size(), 0.02);
  // orthogonalize the noise against the reference
  double rs = 0.0, rn = 0.0;
  for (size_t i = 0; i < ref.size(); ++i) {
    rs += ref.samples[i] * ref.samples[i];
    rn += ref.samples[i] * noise.samples[i];
  }
  for (size_t i = 0; i < ref.size(); ++i) noise.samples[i] -= rn / rs * ref.samples[i];
  Waveform est = mix(ref, noise, 1.0);
  double nn = 0.0;
  for (double v : noise.samples) nn += v * v;
  const double expect = 10.0 * std::log10(rs / nn);
  CHECK(si_sdr(ref, est) == doctest::Approx(expect).epsilon(1e-9));

  // scale invariance for noisy estimates as well
  Waveform est_scaled = est;
  for (auto& v : est_scaled.samples) v *= 0.35;
  CHECK(si_sdr(ref, est_scaled) == doctest::Approx(si_sdr(ref, est)).epsilon(1e-9));

  Waveform silent;
  silent.samples.assign(ref.size(), 0.0);
  CHECK_THROWS_AS((void)si_sdr(silent, ref), std::invalid_argument);
}

TEST_CASE("evaluation report aggregation and formats") {
  EvalReport rep;
  rep.rows.push_back({0.0, "white", 2, 0.6, 0.8, 1.0, 6.0});
  rep.rows.push_back({-5.0, "pink", 1, 0.3, 0.5, -4.0, 2.0});
  CHECK(rep.mean_stoi_noisy() == doctest::Approx((0.6 * 2 + 0.3) / 3.0).epsilon(1e-12));
  CHECK(rep.mean_stoi_enh() == doctest::Approx((0.8 * 2 + 0.5) / 3.0).epsilon(1e-12));
  CHECK(rep.mean_sisdr_noisy() == doctest::Approx((1.0 * 2 - 4.0) / 3.0).epsilon(1e-12));
  CHECK(rep.mean_sisdr_enh() == doctest::Approx((6.0 * 2 + 2.0) / 3.0).epsilon(1e-12));
  const std::string table = rep.to_table();
  CHECK(table.find("stoi_enh") != std::string::npos);
  CHECK(table.find("white") != std::string::npos);
  const std::string jsonl = rep.to_jsonl();
  CHECK(jsonl.find("\"noise_family\":\"pink\"") != std::string::npos);
}

TEST_CASE("evaluate_corpus groups by condition and scores a passthrough") {
  namespace fs = std::filesystem;
  const std::string dir = "/tmp/avse_test_metrics_corpus";
  std::filesystem::remove_all(dir);
  SynthSpec spec;
  spec.n_train = 1;
  spec.n_val = 1;
  spec.n_test = 4;
  spec.seed = 31;
  write_corpus(dir, build_corpus(spec));

  EnhanceFn passthrough = [](const Waveform& noisy, const std::vector<VideoSegment>&) {
    return noisy;
  };
  EvalReport rep = evaluate_corpus(passthrough, dir, "test");
  int total = 0;
  for (const auto& r : rep.rows) {
    total += r.n;
    // a passthrough scores identically in both columns
    CHECK(r.stoi_enh == doctest::Approx(r.stoi_noisy).epsilon(1e-12));
    CHECK(r.sisdr_enh == doctest::Approx(r.sisdr_noisy).epsilon(1e-12));
  }
  CHECK(total == 4);
  std::filesystem::remove_all(dir);
}
