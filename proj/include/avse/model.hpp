#pragma once

// The audio-visual convolution recurrent network: a strided convolutional
// audio encoder over 80x20 log-mel chunks, a per-level visual projection
// matched shape-for-shape to the audio maps, concatenation fusion at every
// level, a two-layer LSTM bottleneck over the 20 time steps, and a
// deconvolutional decoder whose skip connections are gated by soft-threshold
// attention units when enabled. Output is the predicted clean log-mel chunk.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "avse/sta.hpp"
#include "avse/tensor.hpp"

namespace avse {

struct ModelConfig {
  std::vector<int> enc_channels{16, 32, 64, 128};
  int kernel_f = 3, kernel_t = 3;      // encoder kernels
  int lstm_hidden = 256;
  int lstm_layers = 2;
  int video_dim = 64;
  bool sta_enabled = true;
  int sta_reduction = 4;
  uint64_t seed = 0;
  int mel_bands = 80;
  int chunk_frames = 20;

  int levels() const { return static_cast<int>(enc_channels.size()); }
  int freq_at(int level) const { return mel_bands >> level; }  // level 0 = input

  void validate() const;

  // Tiny configuration used by gradient checks.
  static ModelConfig tiny(bool sta, uint64_t seed);
};

class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // noisy:[B,1,80,20], video:[B,5,D] -> [B,1,80,20].
  Tensor forward(const Tensor& noisy, const Tensor& video) const;

  // Per-level encoder/fusion surfaces, exposed for tests and diagnostics.
  std::vector<Tensor> audio_encoder(const Tensor& x) const;
  std::vector<Tensor> video_encoder(const Tensor& v) const;
  Tensor fuse_level(int level, const Tensor& a, const Tensor& v) const;  // level 1..L
  Tensor bottleneck(const Tensor& a_deep, const Tensor& v_deep) const;
  Tensor decoder(const Tensor& bneck, const std::vector<Tensor>& fused) const;

  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  int64_t parameter_count() const;

  // Copies values into existing parameters by name; throws on unknown or
  // missing names or shape mismatch.
  void load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state);

 private:
  ModelConfig cfg_;
  // level l in 1..L is stored at index l-1
  std::vector<Tensor> enc_k_, enc_b_;
  std::vector<Tensor> vproj_w_, vproj_b_;
  std::vector<Tensor> fuse_k_, fuse_b_;
  std::vector<Tensor> lstm_wx_, lstm_wh_, lstm_b_;
  Tensor lstm_proj_w_, lstm_proj_b_;
  std::vector<StaUnit> sta_;
  std::vector<Tensor> dec_k_, dec_b_;      // decoder convolutions after concat
  std::vector<Tensor> up_k_, up_b_;        // transposed convolutions (freq x2)
  Tensor out_k_, out_b_;
};

// ---------------------------------------------------------------------------
// checkpoint container

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  ModelConfig config;
  double norm_mean = 0.0;  // log-mel normalization, computed on the train split
  double norm_std = 1.0;
  int64_t train_step = 0;
  int64_t adam_t = 0;
  uint64_t rng_state = 0;  // data-order stream position
  double best_val_loss = 0.0;
  // named tensors: model parameters plus optimizer moments ("adam.m/…", "adam.v/…")
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
  std::vector<std::pair<std::string, std::vector<int>>> tensor_shapes;

  void put_tensor(const std::string& name, std::vector<int> shape, std::vector<double> data);
  const std::vector<double>* find_tensor(const std::string& name) const;
};

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes);

// Write-new-then-rename so an interrupted save leaves the previous file intact.
void save_checkpoint_file(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint_file(const std::string& path);

// Snapshot of a model (and optionally optimizer moments) into a checkpoint.
Checkpoint make_checkpoint(const Model& model, const Adam* opt = nullptr);
// Restores parameters (and optimizer moments when opt != nullptr).
void restore_checkpoint(const Checkpoint& c, Model& model, Adam* opt = nullptr);

std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(const std::string& text);

}  // namespace avse
