#include "avse/metrics.hpp"

#include "avse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <sstream>

namespace avse {

namespace {

constexpr double kPi = 3.14159265358979323846;

// --- STOI internals (Taal et al. definition, classic variant) ---

constexpr int kStoiRate = 10000;
constexpr int kStoiFrame = 256;
constexpr int kStoiHop = 128;
constexpr int kStoiFft = 512;
constexpr int kStoiBands = 15;
constexpr int kStoiSegFrames = 30;        // 384 ms at 10 kHz / 128 hop
constexpr double kStoiDynRange = 40.0;    // silent-frame threshold, dB
constexpr double kStoiBeta = -15.0;       // clipping SDR bound, dB

// Polyphase 16 kHz -> 10 kHz (up 5, down 8) with a windowed-sinc lowpass.
std::vector<double> resample_16k_to_10k(const std::vector<double>& x) {
  constexpr int up = 5, down = 8;
  constexpr int taps = 161;  // symmetric FIR at the upsampled (80 kHz) rate
  constexpr int half = taps / 2;
  const double fc = 1.0 / 16.0;  // 5 kHz of 80 kHz
  static const std::vector<double> h = [] {
    std::vector<double> v(taps);
    for (int n = 0; n < taps; ++n) {
      double m = n - half;
      double sinc = m == 0.0 ? 2.0 * (1.0 / 16.0)
                             : std::sin(2.0 * kPi * (1.0 / 16.0) * m) / (kPi * m);
      double win = 0.5 * (1.0 - std::cos(2.0 * kPi * n / (taps - 1)));
      v[static_cast<size_t>(n)] = 5.0 * sinc * win;  // gain compensates upsampling
    }
    return v;
  }();
  (void)fc;
  const int64_t n_out = static_cast<int64_t>(x.size()) * up / down;
  std::vector<double> y(static_cast<size_t>(n_out), 0.0);
  for (int64_t o = 0; o < n_out; ++o) {
    const int64_t pos = o * down;  // index in the upsampled stream
    double acc = 0.0;
    // the upsampled stream is x interleaved with zeros, so only taps landing
    // on multiples of `up` contribute
    for (int k = 0; k < taps; ++k) {
      int64_t ui = pos - half + k;
      if (ui < 0 || ui % up != 0) continue;
      int64_t xi = ui / up;
      if (xi >= static_cast<int64_t>(x.size())) continue;
      acc += h[static_cast<size_t>(k)] * x[static_cast<size_t>(xi)];
    }
    y[static_cast<size_t>(o)] = acc;
  }
  return y;
}

void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * kPi / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        auto u = a[i + j];
        auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

struct StoiFrames {
  // band energies [kStoiBands x M]
  std::vector<double> x, y;
  int frames = 0;
  double& xb(int j, int m) { return x[static_cast<size_t>(j) * frames + m]; }
  double& yb(int j, int m) { return y[static_cast<size_t>(j) * frames + m]; }
};

// Removes frames whose clean energy is > 40 dB below the loudest frame, then
// computes one-third octave band energies of both signals.
StoiFrames stoi_band_energies(const std::vector<double>& xs, const std::vector<double>& ys) {
  static const std::vector<double> win = hann_window(kStoiFrame);

  const int n_frames =
      xs.size() < kStoiFrame ? 0 : static_cast<int>((xs.size() - kStoiFrame) / kStoiHop) + 1;
  std::vector<int> kept;
  double max_e = -1.0;
  std::vector<double> energies(static_cast<size_t>(n_frames));
  for (int m = 0; m < n_frames; ++m) {
    double e = 0.0;
    for (int i = 0; i < kStoiFrame; ++i) {
      double v = xs[static_cast<size_t>(m * kStoiHop + i)] * win[static_cast<size_t>(i)];
      e += v * v;
    }
    energies[static_cast<size_t>(m)] = e;
    max_e = std::max(max_e, e);
  }
  const double thresh = max_e * std::pow(10.0, -kStoiDynRange / 10.0);
  for (int m = 0; m < n_frames; ++m)
    if (energies[static_cast<size_t>(m)] > thresh) kept.push_back(m);

  // one-third octave bands, centers 150 * 2^(k/3)
  static const auto band_bins = [] {
    std::vector<std::pair<int, int>> bb(kStoiBands);
    for (int k = 0; k < kStoiBands; ++k) {
      double cf = 150.0 * std::pow(2.0, k / 3.0);
      double lo = cf / std::pow(2.0, 1.0 / 6.0);
      double hi = cf * std::pow(2.0, 1.0 / 6.0);
      int blo = static_cast<int>(std::ceil(lo * kStoiFft / kStoiRate));
      int bhi = static_cast<int>(std::floor(hi * kStoiFft / kStoiRate));
      bb[static_cast<size_t>(k)] = {blo, std::min(bhi, kStoiFft / 2)};
    }
    return bb;
  }();

  StoiFrames out;
  out.frames = static_cast<int>(kept.size());
  out.x.assign(static_cast<size_t>(kStoiBands) * out.frames, 0.0);
  out.y.assign(static_cast<size_t>(kStoiBands) * out.frames, 0.0);
  std::vector<std::complex<double>> fx(kStoiFft), fy(kStoiFft);
  for (int mi = 0; mi < out.frames; ++mi) {
    const int m = kept[static_cast<size_t>(mi)];
    std::fill(fx.begin(), fx.end(), std::complex<double>(0));
    std::fill(fy.begin(), fy.end(), std::complex<double>(0));
    for (int i = 0; i < kStoiFrame; ++i) {
      fx[static_cast<size_t>(i)] = xs[static_cast<size_t>(m * kStoiHop + i)] * win[static_cast<size_t>(i)];
      fy[static_cast<size_t>(i)] = ys[static_cast<size_t>(m * kStoiHop + i)] * win[static_cast<size_t>(i)];
    }
    fft_radix2(fx);
    fft_radix2(fy);
    for (int j = 0; j < kStoiBands; ++j) {
      double ex = 0.0, ey = 0.0;
      for (int b = band_bins[static_cast<size_t>(j)].first;
           b <= band_bins[static_cast<size_t>(j)].second; ++b) {
        ex += std::norm(fx[static_cast<size_t>(b)]);
        ey += std::norm(fy[static_cast<size_t>(b)]);
      }
      out.xb(j, mi) = std::sqrt(ex);
      out.yb(j, mi) = std::sqrt(ey);
    }
  }
  return out;
}

}  // namespace

double stoi(const Waveform& clean, const Waveform& degraded) {
  if (clean.size() != degraded.size())
    throw std::invalid_argument("stoi: inputs must have equal length");
  if (clean.size() < static_cast<size_t>(kSampleRate) * 384 / 1000)
    throw std::invalid_argument("stoi: input shorter than 384 ms");

  std::vector<double> xs = resample_16k_to_10k(clean.samples);
  std::vector<double> ys = resample_16k_to_10k(degraded.samples);
  StoiFrames bands = stoi_band_energies(xs, ys);
  if (bands.frames < kStoiSegFrames)
    throw std::invalid_argument("stoi: too few active frames after silence removal");

  const double clip = std::pow(10.0, -kStoiBeta / 20.0);  // 10^(15/20)
  double acc = 0.0;
  int64_t count = 0;
  std::vector<double> xv(kStoiSegFrames), yv(kStoiSegFrames);
  for (int m = kStoiSegFrames; m <= bands.frames; ++m) {
    for (int j = 0; j < kStoiBands; ++j) {
      double nx = 0.0, ny = 0.0;
      for (int i = 0; i < kStoiSegFrames; ++i) {
        xv[static_cast<size_t>(i)] = bands.xb(j, m - kStoiSegFrames + i);
        yv[static_cast<size_t>(i)] = bands.yb(j, m - kStoiSegFrames + i);
        nx += xv[static_cast<size_t>(i)] * xv[static_cast<size_t>(i)];
        ny += yv[static_cast<size_t>(i)] * yv[static_cast<size_t>(i)];
      }
      const double alpha = ny > 0.0 ? std::sqrt(nx / ny) : 0.0;
      double mx = 0.0, my = 0.0;
      for (int i = 0; i < kStoiSegFrames; ++i) {
        yv[static_cast<size_t>(i)] =
            std::min(alpha * yv[static_cast<size_t>(i)], (1.0 + clip) * xv[static_cast<size_t>(i)]);
        mx += xv[static_cast<size_t>(i)];
        my += yv[static_cast<size_t>(i)];
      }
      mx /= kStoiSegFrames;
      my /= kStoiSegFrames;
      double num = 0.0, dx = 0.0, dy = 0.0;
      for (int i = 0; i < kStoiSegFrames; ++i) {
        double a = xv[static_cast<size_t>(i)] - mx;
        double b = yv[static_cast<size_t>(i)] - my;
        num += a * b;
        dx += a * a;
        dy += b * b;
      }
      double denom = std::sqrt(dx * dy);
      acc += denom > 1e-20 ? num / denom : 0.0;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double si_sdr(const Waveform& reference, const Waveform& estimate) {
  if (reference.size() != estimate.size())
    throw std::invalid_argument("si_sdr: inputs must have equal length");
  double ss = 0.0, es = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    ss += reference.samples[i] * reference.samples[i];
    es += estimate.samples[i] * reference.samples[i];
  }
  if (ss <= 0.0) throw std::invalid_argument("si_sdr: silent reference");
  const double alpha = es / ss;
  double sig = 0.0, err = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    double t = alpha * reference.samples[i];
    sig += t * t;
    double d = t - estimate.samples[i];
    err += d * d;
  }
  if (err <= 0.0 || sig / err > 1e10) return 100.0;
  return std::min(100.0, 10.0 * std::log10(sig / err));
}

// ---------------------------------------------------------------------------
// corpus evaluation

std::string EvalReport::to_table() const {
  std::ostringstream os;
  if (!header_note.empty()) os << "# " << header_note << "\n";
  os << "condition\tn\tstoi_noisy\tstoi_enh\tsisdr_noisy\tsisdr_enh\n";
  os.setf(std::ios::fixed);
  os.precision(4);
  for (const auto& r : rows)
    os << r.snr_db << "dB/" << r.noise_family << "\t" << r.n << "\t" << r.stoi_noisy << "\t"
       << r.stoi_enh << "\t" << r.sisdr_noisy << "\t" << r.sisdr_enh << "\n";
  return os.str();
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto& r : rows)
    os << "{\"snr_db\":" << r.snr_db << ",\"noise_family\":\"" << r.noise_family
       << "\",\"n\":" << r.n << ",\"stoi_noisy\":" << r.stoi_noisy << ",\"stoi_enh\":"
       << r.stoi_enh << ",\"sisdr_noisy\":" << r.sisdr_noisy << ",\"sisdr_enh\":"
       << r.sisdr_enh << "}\n";
  return os.str();
}

namespace {
double weighted_mean(const std::vector<EvalRow>& rows, double EvalRow::* field) {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    acc += r.*field * r.n;
    n += r.n;
  }
  return n > 0 ? acc / n : 0.0;
}
}  // namespace

double EvalReport::mean_stoi_noisy() const { return weighted_mean(rows, &EvalRow::stoi_noisy); }
double EvalReport::mean_stoi_enh() const { return weighted_mean(rows, &EvalRow::stoi_enh); }
double EvalReport::mean_sisdr_noisy() const { return weighted_mean(rows, &EvalRow::sisdr_noisy); }
double EvalReport::mean_sisdr_enh() const { return weighted_mean(rows, &EvalRow::sisdr_enh); }

EvalReport evaluate_corpus(const EnhanceFn& enhance, const std::string& corpus_dir,
                           const std::string& split) {
  auto examples = list_split(corpus_dir, split);
  struct Acc {
    int n = 0;
    double sn = 0, se = 0, dn = 0, de = 0;
  };
  std::map<std::pair<double, std::string>, Acc> groups;
  for (const auto& p : examples) {
    Waveform clean = read_wav(p.clean);
    Waveform noisy = read_wav(p.noisy);
    auto video = read_video_features(p.video);
    ExampleMeta meta = read_meta(p.meta);
    Waveform enh = enhance(noisy, video);
    auto& g = groups[{meta.snr_db, meta.noise_family}];
    ++g.n;
    g.sn += stoi(clean, noisy);
    g.se += stoi(clean, enh);
    g.dn += si_sdr(clean, noisy);
    g.de += si_sdr(clean, enh);
  }
  EvalReport rep;
  rep.header_note =
      "enhanced audio reconstructed via mel pseudo-inverse with noisy phase; "
      "SI-SDR replaces PESQ";
  for (const auto& [key, g] : groups) {
    EvalRow r;
    r.snr_db = key.first;
    r.noise_family = key.second;
    r.n = g.n;
    r.stoi_noisy = g.sn / g.n;
    r.stoi_enh = g.se / g.n;
    r.sisdr_noisy = g.dn / g.n;
    r.sisdr_enh = g.de / g.n;
    rep.rows.push_back(r);
  }
  return rep;
}

}  // namespace avse
