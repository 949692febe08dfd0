// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 7 and 8 run real toy training; the whole binary is sized
// to finish on a single desktop core.

#include "avse/datagen.hpp"
#include "avse/gradsuite.hpp"
#include "avse/metrics.hpp"
#include "avse/model.hpp"
#include "avse/sta.hpp"
#include "avse/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace avse;
namespace fs = std::filesystem;

namespace {

bool g_all_ok = true;

void report(int id, bool pass, const std::string& what) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, what.c_str());
  std::fflush(stdout);
  if (!pass) g_all_ok = false;
}

Tensor randn(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  std::vector<double> d(static_cast<size_t>(shape_size(shape)));
  for (auto& v : d) v = scale * rng.normal();
  return Tensor::from_data(std::move(shape), std::move(d));
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// --- criterion 1: soft-threshold law, exact ---------------------------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  const int n = 100000;
  std::vector<double> xs(n), taus(n);
  for (int i = 0; i < n; ++i) {
    xs[static_cast<size_t>(i)] = rng.normal() * 3.0;
    taus[static_cast<size_t>(i)] = std::fabs(rng.normal());
  }
  Tensor x = Tensor::from_data({n}, xs);
  Tensor tau = Tensor::from_data({n}, taus);
  Tensor y = soft_threshold(x, tau);
  int violations = 0;
  for (int i = 0; i < n; ++i) {
    const double xv = xs[static_cast<size_t>(i)], tv = taus[static_cast<size_t>(i)];
    const double yv = y.data()[static_cast<size_t>(i)];
    // reference law, evaluated independently in 64-bit
    const double ref = std::fabs(xv) > tv ? (xv > 0.0 ? xv - tv : xv + tv) : 0.0;
    if (yv != ref) ++violations;                               // exact equality
    if (std::fabs(yv) > std::fabs(xv)) ++violations;           // shrinkage
    if (yv * xv < 0.0) ++violations;                           // sign preserved
    if ((std::fabs(xv) <= tv) != (yv == 0.0)) ++violations;    // dead zone iff
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "soft-threshold law exact on 1e5 pairs, %d violations, %.2f s", violations, secs);
  report(1, violations == 0 && secs < 5.0, buf);
}

// --- criterion 2: threshold boundedness --------------------------------------

void criterion_2() {
  Rng init(202);
  int violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    Rng child = init.child(static_cast<uint64_t>(trial));
    StaUnit unit(16, 4, child);
    Rng rng(5000 + static_cast<uint64_t>(trial));
    Tensor x = randn({2, 16, 4, 5}, rng);
    Tensor tau = unit.threshold(x);
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 16; ++c) {
        double avg = 0.0;
        for (int i = 0; i < 20; ++i)
          avg += std::fabs(x.data()[static_cast<size_t>((b * 16 + c) * 20 + i)]);
        avg /= 20.0;
        const double t = tau.data()[b * 16 + c];
        if (t < 0.0 || t > avg + 1e-12) ++violations;
      }
  }
  double max_dev = 0.0;
  StaUnit zero = StaUnit::zero_init(16, 4);
  Rng rng(303);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor x = randn({2, 16, 4, 5}, rng);
    Tensor tau = zero.threshold(x);
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 16; ++c) {
        double avg = 0.0;
        for (int i = 0; i < 20; ++i)
          avg += std::fabs(x.data()[static_cast<size_t>((b * 16 + c) * 20 + i)]);
        avg /= 20.0;
        max_dev = std::max(max_dev, std::fabs(tau.data()[b * 16 + c] - 0.5 * avg));
      }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "threshold in [0, Avg|X|] on 1e3 maps (%d violations); zero-init dev %.2e",
                violations, max_dev);
  report(2, violations == 0 && max_dev <= 1e-12, buf);
}

// --- criterion 3: gradient suite ---------------------------------------------

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteReport rep = run_gradient_suite(12345);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char buf[160];
  std::snprintf(buf, sizeof(buf), "gradient suite: %zu checks, worst rel err %.2e, %.1f s",
                rep.entries.size(), rep.worst(), secs);
  report(3, rep.all_pass() && secs < 120.0, buf);
}

// --- criterion 4: conv adjointness -------------------------------------------

void criterion_4() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int B = static_cast<int>(rng.uniform_int(1, 3));
    const int Ci = static_cast<int>(rng.uniform_int(1, 4));
    const int Co = static_cast<int>(rng.uniform_int(1, 4));
    const int kF = static_cast<int>(rng.uniform_int(1, 3));
    const int kT = static_cast<int>(rng.uniform_int(1, 3));
    const int sf = static_cast<int>(rng.uniform_int(1, 2));
    const int st = static_cast<int>(rng.uniform_int(1, 2));
    const int pf = static_cast<int>(rng.uniform_int(0, kF - 1));
    const int pt = static_cast<int>(rng.uniform_int(0, kT - 1));
    int F = static_cast<int>(rng.uniform_int(4, 12));
    while ((F + 2 * pf - kF) < 0 || (F + 2 * pf - kF) % sf != 0) ++F;
    int T = static_cast<int>(rng.uniform_int(4, 12));
    while ((T + 2 * pt - kT) < 0 || (T + 2 * pt - kT) % st != 0) ++T;
    // unit-variance-normalized inputs keep the inner products O(1)
    Tensor x = randn({B, Ci, F, T}, rng, 0.1);
    Tensor k = randn({Co, Ci, kF, kT}, rng, 0.1);
    Tensor Ax = conv2d(x, k, {sf, st}, {pf, pt});
    Tensor y = randn(Ax.shape(), rng, 0.1);
    Tensor Aty = conv2d_transpose(y, k, {sf, st}, {pf, pt});
    double lhs = 0.0, rhs = 0.0;
    for (int64_t i = 0; i < Ax.size(); ++i)
      lhs += Ax.data()[static_cast<size_t>(i)] * y.data()[static_cast<size_t>(i)];
    for (int64_t i = 0; i < x.size(); ++i)
      rhs += x.data()[static_cast<size_t>(i)] * Aty.data()[static_cast<size_t>(i)];
    worst = std::max(worst, std::fabs(lhs - rhs));
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf), "conv2d adjoint identity on 100 geometries, worst |dev| %.2e",
                worst);
  report(4, worst <= 1e-10, buf);
}

// --- criterion 5: DSP contract -----------------------------------------------

void criterion_5() {
  // 200 ms -> 20 frames -> 80x20 log-mel
  Rng rng(505);
  Waveform w;
  w.samples.resize(3200);
  for (int k = 0; k < 10; ++k) {
    const double f = rng.uniform(200.0, 6000.0);
    const double a = rng.uniform(0.02, 0.08);
    for (size_t i = 0; i < w.size(); ++i)
      w.samples[i] += a * std::sin(2.0 * 3.14159265358979323846 * f * static_cast<double>(i) / kSampleRate);
  }
  ComplexSpectrogram s = stft(w);
  const bool frames_ok = s.frames == 20 && log_mel(s).size() == 80u * 20u;

  // round trip on a longer signal
  Waveform longw;
  longw.samples.resize(16000);
  for (int k = 0; k < 10; ++k) {
    const double f = rng.uniform(200.0, 6000.0);
    const double a = rng.uniform(0.02, 0.08);
    const double p = rng.uniform(0.0, 6.28);
    for (size_t i = 0; i < longw.size(); ++i)
      longw.samples[i] += a * std::sin(2.0 * 3.14159265358979323846 * f * static_cast<double>(i) / kSampleRate + p);
  }
  Waveform rt = istft(stft(longw));
  const double rt_snr = snr_db(longw.samples, rt.samples, 2 * kHop, longw.size() - 2 * kHop);

  // SNR-exact mixing
  double worst_mix = 0.0;
  Waveform noise;
  noise.samples.resize(24000);
  for (auto& v : noise.samples) v = 0.05 * rng.normal();
  for (double snr : {-10.0, -3.0, 0.0, 7.5}) {
    Rng mrng(600 + static_cast<uint64_t>(snr * 10 + 1000));
    MixResult mix = mix_at_snr(longw, noise, snr, mrng);
    double pc = 0.0, pn = 0.0;
    for (size_t i = 0; i < longw.size(); ++i) {
      const double nv = mix.mixture.samples[i] - longw.samples[i];
      pc += longw.samples[i] * longw.samples[i];
      pn += nv * nv;
    }
    worst_mix = std::max(worst_mix, std::fabs(10.0 * std::log10(pc / pn) - snr));
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "stft 200 ms -> %d frames, mel 80x20 %s, round trip %.1f dB, mix SNR dev %.2e dB",
                s.frames, frames_ok ? "ok" : "WRONG", rt_snr, worst_mix);
  report(5, frames_ok && rt_snr > 40.0 && worst_mix < 1e-6, buf);
}

// --- criterion 6: STOI sanity ------------------------------------------------

void criterion_6() {
  Waveform speech = synth_speech(606, 1.0);
  const double self = stoi(speech, speech);

  Waveform deg = speech;
  Rng rng(607);
  for (auto& v : deg.samples) v += 0.03 * rng.normal();
  const double base = stoi(speech, deg);
  double scale_dev = 0.0;
  for (double c : {0.25, 8.0}) {
    Waveform scaled = deg;
    for (auto& v : scaled.samples) v *= c;
    scale_dev = std::max(scale_dev, std::fabs(stoi(speech, scaled) - base));
  }

  Waveform noise;
  noise.samples.resize(speech.size());
  for (auto& v : noise.samples) v = 0.1 * rng.normal();
  const double vs_noise = stoi(speech, noise);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "stoi(x,x)=%.8f, scale dev %.2e, stoi(speech, noise)=%.3f", self, scale_dev,
                vs_noise);
  report(6, std::fabs(self - 1.0) <= 1e-6 && scale_dev <= 1e-6 && vs_noise < 0.25, buf);
}

// --- criterion 7: toy enhancement --------------------------------------------

void criterion_7(const std::string& tmp) {
  const std::string dir = tmp + "/corpus_toy";
  SynthSpec spec;  // defaults: 500 train / 50 val / 60 test, 1 s utterances
  spec.seed = 707;
  write_corpus(dir, build_corpus(spec));

  TrainConfig cfg;
  cfg.corpus_dir = dir;
  cfg.max_epochs = 4;
  cfg.seed = 708;
  cfg.model.seed = 708;
  cfg.quiet = true;
  const double cpu0 = cpu_seconds();
  TrainResult res = train(cfg);
  const double cpu_min = (cpu_seconds() - cpu0) / 60.0;

  Model model(res.best.config);
  restore_checkpoint(res.best, model);
  EvalReport rep = evaluate_corpus(make_enhancer(model, res.best.norm_mean, res.best.norm_std), dir);

  // held-out means at 0 dB test SNR
  double sn = 0.0, se = 0.0, dn = 0.0, de = 0.0;
  int n = 0;
  for (const auto& r : rep.rows)
    if (r.snr_db == 0.0) {
      sn += r.stoi_noisy * r.n;
      se += r.stoi_enh * r.n;
      dn += r.sisdr_noisy * r.n;
      de += r.sisdr_enh * r.n;
      n += r.n;
    }
  sn /= n; se /= n; dn /= n; de /= n;
  const double d_sisdr = de - dn;
  const double d_stoi = se - sn;
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "toy training %.1f CPU-min, %lld steps; 0 dB held-out: SI-SDR %+.2f dB "
                "(%.2f -> %.2f), STOI %+.3f (%.3f -> %.3f)",
                cpu_min, static_cast<long long>(res.steps_run), d_sisdr, dn, de, d_stoi, sn, se);
  report(7, cpu_min <= 30.0 && d_sisdr >= 5.0 && d_stoi >= 0.05, buf);
  fs::remove_all(dir);
}

// --- criterion 8: ablation ordering ------------------------------------------

void criterion_8(const std::string& tmp) {
  const std::string dir = tmp + "/corpus_ablate";
  SynthSpec spec;
  spec.n_train = 60;
  spec.n_val = 12;
  spec.n_test = 12;
  spec.seed = 808;
  write_corpus(dir, build_corpus(spec));

  const uint64_t seeds[3] = {1, 2, 3};
  std::vector<double> val_sta, val_plain, stoi_sta, stoi_plain;
  for (uint64_t seed : seeds) {
    for (bool sta : {true, false}) {
      TrainConfig cfg;
      cfg.corpus_dir = dir;
      cfg.max_epochs = 1000;
      cfg.max_steps = 150;  // equal step budget for both arms
      cfg.seed = seed;
      cfg.model.seed = seed;
      cfg.model.sta_enabled = sta;
      cfg.quiet = true;
      TrainResult res = train(cfg);
      Model model(res.best.config);
      restore_checkpoint(res.best, model);
      EvalReport rep =
          evaluate_corpus(make_enhancer(model, res.best.norm_mean, res.best.norm_std), dir);
      (sta ? val_sta : val_plain).push_back(res.best_val_loss);
      (sta ? stoi_sta : stoi_plain).push_back(rep.mean_stoi_enh());
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double mv_sta = median(val_sta), mv_plain = median(val_plain);
  const double ms_sta = median(stoi_sta), ms_plain = median(stoi_plain);
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "3-seed medians at equal steps: val loss %.4f (+STA) vs %.4f (-STA); "
                "test STOI %.4f (+STA) vs %.4f (-STA)",
                mv_sta, mv_plain, ms_sta, ms_plain);
  report(8, mv_sta <= mv_plain && ms_sta >= ms_plain - 0.01, buf);
  fs::remove_all(dir);
}

// --- criterion 9: determinism & persistence ----------------------------------

void criterion_9(const std::string& tmp) {
  const std::string dir = tmp + "/corpus_det";
  SynthSpec spec;
  spec.n_train = 6;
  spec.n_val = 3;
  spec.n_test = 2;
  spec.video_dim = 8;
  spec.seed = 909;
  write_corpus(dir, build_corpus(spec));

  TrainConfig cfg;
  cfg.model = ModelConfig::tiny(true, 9);
  cfg.corpus_dir = dir;
  cfg.batch_size = 8;
  cfg.max_epochs = 10;
  cfg.max_steps = 10;
  cfg.seed = 99;
  cfg.quiet = true;
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  bool trace_ok = a.loss_trace.size() == 10 && a.loss_trace == b.loss_trace;  // bitwise

  // checkpoint round trip: forward outputs bitwise identical
  Model model(a.best.config);
  restore_checkpoint(a.best, model);
  Checkpoint rt = deserialize_checkpoint(serialize_checkpoint(a.best));
  Model model2(rt.config);
  restore_checkpoint(rt, model2);
  Rng rng(910);
  Tensor noisy = randn({2, 1, 80, 20}, rng);
  Tensor video = randn({2, 5, 8}, rng);
  Tensor ya = model.forward(noisy, video);
  Tensor yb = model2.forward(noisy, video);
  bool ckpt_ok = true;
  for (int64_t i = 0; i < ya.size(); ++i)
    if (ya.data()[static_cast<size_t>(i)] != yb.data()[static_cast<size_t>(i)]) ckpt_ok = false;

  // interrupted training: an aborted save (stale .tmp) leaves the previous
  // checkpoint readable
  const std::string path = tmp + "/det.ckpt";
  save_checkpoint_file(path, a.best);
  {
    std::ofstream junk(path + ".tmp", std::ios::binary);
    junk << "partial write";
  }
  bool safe_ok = true;
  try {
    Checkpoint prev = load_checkpoint_file(path);
    safe_ok = prev.best_val_loss == a.best.best_val_loss;
  } catch (...) {
    safe_ok = false;
  }
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "10-step trace bitwise %s, checkpoint round trip %s, interrupted save %s",
                trace_ok ? "identical" : "DIFFERS", ckpt_ok ? "bitwise" : "DIFFERS",
                safe_ok ? "recoverable" : "LOST");
  report(9, trace_ok && ckpt_ok && safe_ok, buf);
  fs::remove_all(dir);
  fs::remove(path);
  fs::remove(path + ".tmp");
}

}  // namespace

int main() {
  const std::string tmp = (fs::temp_directory_path() / "avse_acceptance").string();
  fs::create_directories(tmp);
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7(tmp);
  criterion_8(tmp);
  criterion_9(tmp);
  fs::remove_all(tmp);
  std::printf("%s\n", g_all_ok ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return g_all_ok ? 0 : 1;
}
