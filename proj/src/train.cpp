#include "avse/train.hpp"

#include "avse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace avse {

void TrainConfig::validate() const {
  model.validate();
  if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
  if (corpus_dir.empty()) throw std::invalid_argument("TrainConfig: corpus_dir not set");
}

ChunkDataset load_chunks(const std::string& corpus_dir, const std::string& split) {
  ChunkDataset ds;
  for (const auto& p : list_split(corpus_dir, split)) {
    Waveform clean = read_wav(p.clean);
    Waveform noisy = read_wav(p.noisy);
    auto video = read_video_features(p.video);
    ComplexSpectrogram sc = stft(clean);
    ComplexSpectrogram sn = stft(noisy);
    auto clean_chunks = chunk(log_mel(sc), sc.frames);
    auto noisy_chunks = chunk(log_mel(sn), sn.frames);
    const size_t n = std::min(clean_chunks.size(), video.size());
    for (size_t i = 0; i < n; ++i) {
      ChunkSample s;
      s.clean_mel = clean_chunks[i].values;
      s.noisy_mel = noisy_chunks[i].values;
      s.video = video[i].embeddings;
      ds.samples.push_back(std::move(s));
      ds.video_dim = video[i].dim;
    }
  }
  if (ds.samples.empty())
    throw std::runtime_error("load_chunks: no usable chunks in " + corpus_dir + "/" + split);
  return ds;
}

std::pair<double, double> mel_statistics(const ChunkDataset& ds) {
  double mean = 0.0;
  int64_t n = 0;
  for (const auto& s : ds.samples)
    for (double v : s.noisy_mel) {
      mean += v;
      ++n;
    }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (const auto& s : ds.samples)
    for (double v : s.noisy_mel) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  return {mean, std::max(std::sqrt(var), 1e-6)};
}

namespace {

struct Batch {
  Tensor noisy, clean, video;
};

Batch make_batch(const ChunkDataset& ds, const std::vector<size_t>& idx, size_t begin,
                 size_t end, double mean, double stddev) {
  const int B = static_cast<int>(end - begin);
  const int D = ds.video_dim;
  std::vector<double> xn(static_cast<size_t>(B) * 80 * 20);
  std::vector<double> xc(static_cast<size_t>(B) * 80 * 20);
  std::vector<double> xv(static_cast<size_t>(B) * 5 * D);
  for (int b = 0; b < B; ++b) {
    const auto& s = ds.samples[idx[begin + static_cast<size_t>(b)]];
    for (size_t i = 0; i < s.noisy_mel.size(); ++i) {
      xn[static_cast<size_t>(b) * 1600 + i] = (s.noisy_mel[i] - mean) / stddev;
      xc[static_cast<size_t>(b) * 1600 + i] = (s.clean_mel[i] - mean) / stddev;
    }
    std::copy(s.video.begin(), s.video.end(), xv.begin() + static_cast<size_t>(b) * 5 * D);
  }
  Batch out;
  out.noisy = Tensor::from_data({B, 1, 80, 20}, std::move(xn));
  out.clean = Tensor::from_data({B, 1, 80, 20}, std::move(xc));
  out.video = Tensor::from_data({B, 5, D}, std::move(xv));
  return out;
}

double eval_loss(const Model& model, const ChunkDataset& ds, int batch_size, double mean,
                 double stddev) {
  std::vector<size_t> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  double acc = 0.0;
  int64_t count = 0;
  for (size_t b = 0; b < idx.size(); b += static_cast<size_t>(batch_size)) {
    size_t e = std::min(idx.size(), b + static_cast<size_t>(batch_size));
    Batch batch = make_batch(ds, idx, b, e, mean, stddev);
    Tensor loss = mse_loss(model.forward(batch.noisy, batch.video), batch.clean);
    acc += loss.item() * static_cast<double>(e - b);
    count += static_cast<int64_t>(e - b);
  }
  return acc / static_cast<double>(count);
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  ChunkDataset train_ds = load_chunks(cfg.corpus_dir, "train");
  ChunkDataset val_ds = load_chunks(cfg.corpus_dir, "val");
  if (train_ds.video_dim != cfg.model.video_dim)
    throw std::runtime_error("train: corpus video_dim " + std::to_string(train_ds.video_dim) +
                             " does not match model video_dim " +
                             std::to_string(cfg.model.video_dim));
  auto [mean, stddev] = mel_statistics(train_ds);

  Model model(cfg.model);
  Adam opt(model.parameters(), cfg.lr);
  Rng order_rng(cfg.seed);

  TrainResult res;
  res.best_val_loss = std::numeric_limits<double>::infinity();
  int64_t step = 0;
  int epochs_since_best = 0;
  bool stop = false;

  for (int epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::vector<size_t> idx(train_ds.samples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng shuffle_rng = order_rng.child(static_cast<uint64_t>(epoch));
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1],
                idx[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);

    for (size_t b = 0; b < idx.size() && !stop; b += static_cast<size_t>(cfg.batch_size)) {
      size_t e = std::min(idx.size(), b + static_cast<size_t>(cfg.batch_size));
      Batch batch = make_batch(train_ds, idx, b, e, mean, stddev);
      opt.zero_grad();
      Tensor loss = mse_loss(model.forward(batch.noisy, batch.video), batch.clean);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw std::runtime_error("train: loss diverged (non-finite) at step " +
                                 std::to_string(step));
      backward(loss);
      opt.clip_grad_norm(cfg.grad_clip_norm);
      opt.step();
      ++step;
      res.loss_trace.emplace_back(step, lv);
      if (!cfg.quiet && step % 20 == 0)
        std::fprintf(stderr, "epoch %d step %lld loss %.6f\n", epoch,
                     static_cast<long long>(step), lv);
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
    }

    const double vl = eval_loss(model, val_ds, cfg.batch_size, mean, stddev);
    res.val_losses.push_back(vl);
    if (!cfg.quiet)
      std::fprintf(stderr, "epoch %d val_loss %.6f\n", epoch, vl);
    if (vl < res.best_val_loss) {
      res.best_val_loss = vl;
      epochs_since_best = 0;
      res.best = make_checkpoint(model, &opt);
      res.best.norm_mean = mean;
      res.best.norm_std = stddev;
      res.best.train_step = step;
      res.best.best_val_loss = vl;
      res.best.rng_state = order_rng.seed();
      if (!cfg.checkpoint_out.empty()) save_checkpoint_file(cfg.checkpoint_out, res.best);
    } else if (++epochs_since_best >= cfg.patience) {
      stop = true;
    }
  }
  res.steps_run = step;
  if (!res.best.tensors.empty() && cfg.checkpoint_out.empty()) {
    // nothing to do; caller holds the in-memory checkpoint
  }
  if (res.best.tensors.empty()) {
    // no epoch completed an improvement (shouldn't happen); snapshot final state
    res.best = make_checkpoint(model, &opt);
    res.best.norm_mean = mean;
    res.best.norm_std = stddev;
    res.best.train_step = step;
    res.best.best_val_loss = res.best_val_loss;
  }
  if (!cfg.loss_trace_out.empty()) write_loss_trace(cfg.loss_trace_out, res.loss_trace);
  return res;
}

void write_loss_trace(const std::string& path,
                      const std::vector<std::pair<int64_t, double>>& trace) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("write_loss_trace: cannot open " + path);
  for (auto& [step, loss] : trace) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%lld %.17g\n", static_cast<long long>(step), loss);
    f << buf;
  }
}

Waveform enhance(const Model& model, double norm_mean, double norm_std, const Waveform& noisy,
                 const std::vector<VideoSegment>& video) {
  ComplexSpectrogram s = stft(noisy);
  std::vector<double> mel = log_mel(s);
  auto chunks = chunk(mel, s.frames);
  const int n = static_cast<int>(chunks.size());
  if (static_cast<int>(video.size()) != n)
    throw std::invalid_argument("enhance: video has " + std::to_string(video.size()) +
                                " segments, expected " + std::to_string(n));
  if (n == 0) return noisy;  // shorter than one chunk: passed through unprocessed

  const int D = video[0].dim;
  std::vector<double> xn(static_cast<size_t>(n) * 1600);
  std::vector<double> xv(static_cast<size_t>(n) * 5 * D);
  for (int c = 0; c < n; ++c) {
    for (size_t i = 0; i < 1600; ++i)
      xn[static_cast<size_t>(c) * 1600 + i] = (chunks[static_cast<size_t>(c)].values[i] - norm_mean) / norm_std;
    std::copy(video[static_cast<size_t>(c)].embeddings.begin(),
              video[static_cast<size_t>(c)].embeddings.end(),
              xv.begin() + static_cast<size_t>(c) * 5 * D);
  }
  Tensor pred = model.forward(Tensor::from_data({n, 1, 80, 20}, std::move(xn)),
                              Tensor::from_data({n, 5, D}, std::move(xv)));

  std::vector<LogMelChunk> out_chunks(static_cast<size_t>(n));
  auto pd = pred.data();
  for (int c = 0; c < n; ++c) {
    out_chunks[static_cast<size_t>(c)].values.resize(1600);
    for (size_t i = 0; i < 1600; ++i)
      out_chunks[static_cast<size_t>(c)].values[i] =
          pd[static_cast<size_t>(c) * 1600 + i] * norm_std + norm_mean;
  }
  std::vector<double> enh_mel = concat_chunks(out_chunks);
  Waveform enh = mel_to_waveform(enh_mel, n * kChunkFrames, s);

  Waveform out;
  out.samples.resize(noisy.size());
  const size_t copied = std::min(out.samples.size(), enh.samples.size());
  std::copy_n(enh.samples.begin(), copied, out.samples.begin());
  for (size_t i = copied; i < out.samples.size(); ++i) out.samples[i] = noisy.samples[i];
  return out;
}

EnhanceFn make_enhancer(const Model& model, double norm_mean, double norm_std) {
  return [&model, norm_mean, norm_std](const Waveform& noisy,
                                       const std::vector<VideoSegment>& video) {
    return enhance(model, norm_mean, norm_std, noisy, video);
  };
}

}  // namespace avse
