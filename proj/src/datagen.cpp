#include "avse/datagen.hpp"

#include "avse/wav.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace avse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr uint64_t kProjectionSeed = 0x417653452d50524full;  // fixed across corpora

}  // namespace

const char* noise_family_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::kWhite: return "white";
    case NoiseFamily::kPink: return "pink";
    default: return "tone_cluster";
  }
}

void SynthSpec::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw std::invalid_argument("SynthSpec: counts must be >= 1");
  if (utterance_len < 0.5) throw std::invalid_argument("SynthSpec: utterance_len < 0.5 s");
  if (snr_train_lo > snr_train_hi)
    throw std::invalid_argument("SynthSpec: SNR range not well-ordered");
  if (snr_eval.empty()) throw std::invalid_argument("SynthSpec: empty eval SNR list");
  if (video_dim < 8) throw std::invalid_argument("SynthSpec: video_dim must be >= 8");
}

Waveform synth_speech(uint64_t seed, double len_seconds) {
  if (len_seconds < 0.5) throw std::invalid_argument("synth_speech: length < 0.5 s");
  Rng root(seed);
  Rng rng = root.child(1);
  const size_t n = static_cast<size_t>(len_seconds * kSampleRate);

  const double f0_base = rng.uniform(100.0, 260.0);
  const double f0_rate1 = rng.uniform(0.4, 1.5), f0_ph1 = rng.uniform(0.0, 2 * kPi);
  const double f0_rate2 = rng.uniform(1.5, 3.0), f0_ph2 = rng.uniform(0.0, 2 * kPi);
  const int harmonics = static_cast<int>(rng.uniform_int(6, 10));

  // two slowly drifting resonance peaks shaping the harmonic amplitudes
  const double c1 = rng.uniform(600.0, 1200.0), bw1 = rng.uniform(150.0, 300.0);
  const double c2 = rng.uniform(1500.0, 3500.0), bw2 = rng.uniform(250.0, 500.0);
  const double drift_rate = rng.uniform(0.3, 1.0), drift_ph = rng.uniform(0.0, 2 * kPi);

  const double syll_rate = rng.uniform(2.0, 6.0);
  const double syll_ph = rng.uniform(0.0, 2 * kPi);

  std::vector<double> phase(static_cast<size_t>(harmonics), 0.0);
  for (auto& p : phase) p = rng.uniform(0.0, 2 * kPi);

  Waveform w;
  w.samples.resize(n);
  double peak = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    double f0 = f0_base * (1.0 + 0.12 * std::sin(2 * kPi * f0_rate1 * t + f0_ph1) +
                           0.06 * std::sin(2 * kPi * f0_rate2 * t + f0_ph2));
    f0 = std::clamp(f0, 80.0, 300.0);
    const double drift = 1.0 + 0.08 * std::sin(2 * kPi * drift_rate * t + drift_ph);
    double s = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      const double fh = (h + 1) * f0;
      if (fh >= 7800.0) break;
      phase[static_cast<size_t>(h)] += 2 * kPi * fh / kSampleRate;
      const double d1 = (fh - c1 * drift) / bw1;
      const double d2 = (fh - c2 * drift) / bw2;
      const double res = 0.25 + std::exp(-d1 * d1) + std::exp(-d2 * d2);
      const double amp = h == 0 ? 2.0 : 0.6 / (h + 1);
      s += amp * res * std::sin(phase[static_cast<size_t>(h)]);
    }
    const double env_raw = 0.5 * (1.0 + std::sin(2 * kPi * syll_rate * t + syll_ph));
    const double env = 0.08 + env_raw * env_raw;
    w.samples[i] = s * env;
    peak = std::max(peak, std::fabs(w.samples[i]));
  }
  if (peak > 0.0)
    for (auto& v : w.samples) v *= 0.5 / peak;
  return w;
}

namespace {

// 8 raw per-frame features of the clean signal, before projection:
// [log energy, F0 estimate / 300, d(log energy), 5 mel-grouped band levels]
std::vector<std::array<double, 8>> clean_frame_features(const Waveform& clean, int n_frames) {
  ComplexSpectrogram s = stft(clean);
  const auto& fb = mel_filterbank();

  std::vector<std::array<double, 8>> feats(static_cast<size_t>(n_frames));
  double prev_loge = 0.0;
  for (int fr = 0; fr < n_frames; ++fr) {
    auto& f = feats[static_cast<size_t>(fr)];
    const size_t start = static_cast<size_t>(fr) * kFrameLen;

    double energy = 0.0;
    for (size_t i = start; i < start + kFrameLen && i < clean.size(); ++i)
      energy += clean.samples[i] * clean.samples[i];
    f[0] = std::log(energy / kFrameLen + 1e-8);

    // autocorrelation F0 estimate over 80-300 Hz lags
    double best = -1.0;
    int best_lag = kSampleRate / 300;
    for (int lag = kSampleRate / 300; lag <= kSampleRate / 80; ++lag) {
      double acc = 0.0;
      for (int i = 0; i + lag < kFrameLen; ++i) {
        size_t a = start + static_cast<size_t>(i);
        size_t b = a + static_cast<size_t>(lag);
        if (b >= clean.size()) break;
        acc += clean.samples[a] * clean.samples[b];
      }
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    f[1] = (static_cast<double>(kSampleRate) / best_lag) / 300.0;
    f[2] = fr == 0 ? 0.0 : f[0] - prev_loge;
    prev_loge = f[0];

    // 5 band levels from mel-weighted magnitudes, averaged over the 4 STFT
    // frames covering this 40 ms video frame
    for (int band = 0; band < 5; ++band) {
      double acc = 0.0;
      for (int m = band * 16; m < (band + 1) * 16; ++m)
        for (int dt = 0; dt < 4; ++dt) {
          int t = fr * 4 + dt;
          if (t >= s.frames) break;
          double me = 0.0;
          for (int i = 0; i < kNumBins; ++i)
            me += fb[static_cast<size_t>(m) * kNumBins + i] * std::abs(s.at(i, t));
          acc += me;
        }
      f[static_cast<size_t>(3 + band)] = std::log(acc / 64.0 + 1e-8);
    }
  }
  return feats;
}

}  // namespace

std::vector<VideoSegment> synth_video(const Waveform& clean, int dim, uint64_t jitter_seed) {
  const int frames_total = static_cast<int>((clean.size() + kHop - 1) / kHop);
  const int chunks = frames_total / kChunkFrames;
  const int n_frames = 5 * chunks;
  if (n_frames < 1) throw std::invalid_argument("synth_video: clean signal too short");

  auto feats = clean_frame_features(clean, n_frames);

  // fixed projection and bias, shared by every corpus
  Rng proj_rng(kProjectionSeed);
  std::vector<double> P(static_cast<size_t>(dim) * 8), bias(static_cast<size_t>(dim));
  for (auto& v : P) v = proj_rng.normal() / std::sqrt(8.0);
  for (auto& v : bias) v = 0.1 * proj_rng.normal();

  Rng jitter(jitter_seed);
  std::vector<VideoSegment> segs(static_cast<size_t>(chunks));
  for (int c = 0; c < chunks; ++c) {
    auto& seg = segs[static_cast<size_t>(c)];
    seg.dim = dim;
    seg.embeddings.resize(5 * static_cast<size_t>(dim));
    for (int j = 0; j < 5; ++j) {
      const auto& f = feats[static_cast<size_t>(c * 5 + j)];
      for (int d = 0; d < dim; ++d) {
        double acc = bias[static_cast<size_t>(d)];
        for (int r = 0; r < 8; ++r) acc += P[static_cast<size_t>(d) * 8 + r] * f[static_cast<size_t>(r)];
        seg.embeddings[static_cast<size_t>(j) * dim + d] = acc + 0.05 * jitter.normal();
      }
    }
  }
  return segs;
}

Waveform synth_noise(NoiseFamily family, uint64_t params_seed, uint64_t real_seed,
                     size_t n_samples) {
  Rng params(params_seed);
  Rng rng(real_seed);
  Waveform w;
  w.samples.resize(n_samples);
  switch (family) {
    case NoiseFamily::kWhite: {
      const double amp = params.uniform(0.05, 0.3);
      for (auto& v : w.samples) v = amp * rng.normal();
      break;
    }
    case NoiseFamily::kPink: {
      const double pole = params.uniform(0.92, 0.985);
      const double amp = params.uniform(0.1, 0.5);
      double state = 0.0;
      for (auto& v : w.samples) {
        state = pole * state + (1.0 - pole) * rng.normal();
        v = amp * state * 8.0;
      }
      break;
    }
    default: {  // amplitude-modulated tone cluster ("babble proxy")
      const int tones = static_cast<int>(params.uniform_int(3, 6));
      std::vector<double> freq(static_cast<size_t>(tones)), am_rate(static_cast<size_t>(tones));
      for (int k = 0; k < tones; ++k) {
        freq[static_cast<size_t>(k)] = params.uniform(300.0, 4000.0);
        am_rate[static_cast<size_t>(k)] = params.uniform(1.0, 8.0);
      }
      const double amp = params.uniform(0.05, 0.2);
      std::vector<double> ph(static_cast<size_t>(tones)), am_ph(static_cast<size_t>(tones));
      for (int k = 0; k < tones; ++k) {
        ph[static_cast<size_t>(k)] = rng.uniform(0.0, 2 * kPi);
        am_ph[static_cast<size_t>(k)] = rng.uniform(0.0, 2 * kPi);
      }
      for (size_t i = 0; i < n_samples; ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        double s = 0.0;
        for (int k = 0; k < tones; ++k) {
          const double am =
              0.5 * (1.0 + std::sin(2 * kPi * am_rate[static_cast<size_t>(k)] * t +
                                    am_ph[static_cast<size_t>(k)]));
          s += am * std::sin(2 * kPi * freq[static_cast<size_t>(k)] * t +
                             ph[static_cast<size_t>(k)]);
        }
        w.samples[i] = amp * (s + 0.05 * rng.normal());
      }
    }
  }
  return w;
}

namespace {

constexpr int kTrainNoiseParams = 8;  // parameter draws per family, train/val pool
constexpr int kTestNoiseParams = 4;   // held-out pool

uint64_t noise_param_seed(const Rng& root, bool test_pool, NoiseFamily fam, int idx) {
  const uint64_t base = test_pool ? 0x7E570000 : 0x7121A000;
  return root.child(base + static_cast<uint64_t>(fam) * 64 + static_cast<uint64_t>(idx)).seed();
}

AvExample make_example(const SynthSpec& spec, const Rng& root, uint64_t tag, bool test_split,
                       double snr_db_fixed) {
  Rng ex = root.child(tag);
  AvExample e;
  e.seed = ex.seed();
  e.clean = synth_speech(ex.child(1).seed(), spec.utterance_len);
  e.video = synth_video(e.clean, spec.video_dim, ex.child(2).seed());

  Rng pick = ex.child(3);
  e.noise_family = static_cast<NoiseFamily>(pick.uniform_int(0, 2));
  const int pool = test_split ? kTestNoiseParams : kTrainNoiseParams;
  const int pidx = static_cast<int>(pick.uniform_int(0, pool - 1));
  const uint64_t pseed = noise_param_seed(root, test_split, e.noise_family, pidx);

  const size_t noise_len = e.clean.size() + e.clean.size() / 2;
  Waveform noise = synth_noise(e.noise_family, pseed, ex.child(4).seed(), noise_len);

  Rng mix_rng = ex.child(5);
  e.snr_db = test_split ? snr_db_fixed
                        : mix_rng.uniform(spec.snr_train_lo, spec.snr_train_hi);
  e.noisy = mix_at_snr(e.clean, noise, e.snr_db, mix_rng).mixture;
  return e;
}

}  // namespace

Corpus build_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng root(spec.seed);
  Corpus c;
  for (int i = 0; i < spec.n_train; ++i)
    c.train.push_back(make_example(spec, root, 1000000 + static_cast<uint64_t>(i), false, 0));
  for (int i = 0; i < spec.n_val; ++i)
    c.val.push_back(make_example(spec, root, 2000000 + static_cast<uint64_t>(i), false, 0));
  for (int i = 0; i < spec.n_test; ++i) {
    const double snr = spec.snr_eval[static_cast<size_t>(i) % spec.snr_eval.size()];
    c.test.push_back(make_example(spec, root, 3000000 + static_cast<uint64_t>(i), true, snr));
  }
  return c;
}

// ---------------------------------------------------------------------------
// on-disk corpus

void write_video_features(const std::string& path, const std::vector<VideoSegment>& segments) {
  if (segments.empty()) throw std::invalid_argument("write_video_features: no segments");
  const int dim = segments[0].dim;
  const uint32_t n_frames = static_cast<uint32_t>(segments.size() * 5);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_video_features: cannot open " + path);
  const char magic[4] = {'A', 'V', 'V', 'F'};
  uint32_t version = 1, d32 = static_cast<uint32_t>(dim);
  f.write(magic, 4);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&n_frames), 4);
  f.write(reinterpret_cast<const char*>(&d32), 4);
  for (const auto& seg : segments)
    for (double v : seg.embeddings) {
      float fv = static_cast<float>(v);
      f.write(reinterpret_cast<const char*>(&fv), 4);
    }
  if (!f) throw std::runtime_error("write_video_features: write failed for " + path);
}

std::vector<VideoSegment> read_video_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_video_features: cannot open " + path);
  char magic[4];
  uint32_t version = 0, n_frames = 0, dim = 0;
  f.read(magic, 4);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&n_frames), 4);
  f.read(reinterpret_cast<char*>(&dim), 4);
  if (!f || std::memcmp(magic, "AVVF", 4) != 0)
    throw std::runtime_error("read_video_features: bad header in " + path);
  if (version != 1)
    throw std::runtime_error("read_video_features: unsupported version in " + path);
  if (n_frames % 5 != 0)
    throw std::runtime_error("read_video_features: frame count not a multiple of 5 in " + path);
  std::vector<VideoSegment> segs(n_frames / 5);
  for (auto& seg : segs) {
    seg.dim = static_cast<int>(dim);
    seg.embeddings.resize(5 * static_cast<size_t>(dim));
    for (auto& v : seg.embeddings) {
      float fv;
      f.read(reinterpret_cast<char*>(&fv), 4);
      v = static_cast<double>(fv);
    }
  }
  if (!f) throw std::runtime_error("read_video_features: truncated file " + path);
  return segs;
}

namespace {

void write_example(const fs::path& dir, const AvExample& e) {
  fs::create_directories(dir);
  write_wav((dir / "clean.wav").string(), e.clean);
  write_wav((dir / "noisy.wav").string(), e.noisy);
  write_video_features((dir / "video.f32").string(), e.video);
  json meta{{"snr_db", e.snr_db},
            {"noise_family", noise_family_name(e.noise_family)},
            {"seed", e.seed}};
  std::ofstream mf(dir / "meta.json", std::ios::trunc);
  mf << meta.dump(2) << "\n";
  if (!mf) throw std::runtime_error("write_example: cannot write meta.json in " + dir.string());
}

}  // namespace

void write_corpus(const std::string& dir, const Corpus& corpus) {
  char name[16];
  auto write_split = [&](const char* split, const std::vector<AvExample>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
      std::snprintf(name, sizeof(name), "ex%05zu", i);
      write_example(fs::path(dir) / split / name, v[i]);
    }
  };
  write_split("train", corpus.train);
  write_split("val", corpus.val);
  write_split("test", corpus.test);
}

std::vector<ExamplePaths> list_split(const std::string& dir, const std::string& split) {
  fs::path base = fs::path(dir) / split;
  if (!fs::is_directory(base))
    throw std::runtime_error("list_split: missing directory " + base.string());
  std::vector<std::string> names;
  for (auto& entry : fs::directory_iterator(base))
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  std::vector<ExamplePaths> out;
  for (auto& n : names) {
    fs::path d = base / n;
    out.push_back({(d / "clean.wav").string(), (d / "noisy.wav").string(),
                   (d / "video.f32").string(), (d / "meta.json").string()});
  }
  return out;
}

ExampleMeta read_meta(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_meta: cannot open " + path);
  json j = json::parse(f);
  ExampleMeta m;
  m.snr_db = j.at("snr_db").get<double>();
  m.noise_family = j.at("noise_family").get<std::string>();
  m.seed = j.at("seed").get<uint64_t>();
  return m;
}

}  // namespace avse
