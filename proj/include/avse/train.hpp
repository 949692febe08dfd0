#pragma once

// Training loop and end-to-end enhancement: chunk-level batching over an
// on-disk corpus, MSE on normalized log-mel, Adam with gradient clipping,
// early stopping on validation loss, and crash-safe best-checkpoint writes.

#include <string>
#include <utility>
#include <vector>

#include "avse/datagen.hpp"
#include "avse/metrics.hpp"
#include "avse/model.hpp"

namespace avse {

struct TrainConfig {
  ModelConfig model;
  double lr = 1e-3;
  int batch_size = 16;
  int max_epochs = 20;
  int patience = 10;
  double grad_clip_norm = 5.0;
  uint64_t seed = 0;
  std::string corpus_dir;
  int64_t max_steps = 0;  // 0 = unlimited; used for equal-budget ablation runs
  std::string checkpoint_out;   // optional; best checkpoint, write-then-rename
  std::string loss_trace_out;   // optional; "step loss" per line
  bool quiet = false;

  void validate() const;
};

struct ChunkSample {
  std::vector<double> noisy_mel;  // 80x20 row-major
  std::vector<double> clean_mel;
  std::vector<double> video;      // 5xD row-major
};

struct ChunkDataset {
  std::vector<ChunkSample> samples;
  int video_dim = 0;
};

ChunkDataset load_chunks(const std::string& corpus_dir, const std::string& split);

// Global mean/std of the noisy log-mel over a dataset.
std::pair<double, double> mel_statistics(const ChunkDataset& ds);

struct TrainResult {
  Checkpoint best;
  std::vector<std::pair<int64_t, double>> loss_trace;
  std::vector<double> val_losses;  // one per epoch
  double best_val_loss = 0.0;
  int64_t steps_run = 0;
};

TrainResult train(const TrainConfig& cfg);

// Full enhancement path: chunk the noisy log-mel, run the model, reassemble,
// reconstruct with the noisy phase. The trailing partial chunk is passed
// through unprocessed; output length equals input length.
Waveform enhance(const Model& model, double norm_mean, double norm_std, const Waveform& noisy,
                 const std::vector<VideoSegment>& video);

// Adapter for metrics::evaluate_corpus.
EnhanceFn make_enhancer(const Model& model, double norm_mean, double norm_std);

// Writes "step loss" lines.
void write_loss_trace(const std::string& path,
                      const std::vector<std::pair<int64_t, double>>& trace);

}  // namespace avse
