// Command-line front-end: synthetic corpus generation, training, enhancement,
// evaluation, gradient verification, and the STA ablation comparison.

#include <CLI11.hpp>

#include "avse/datagen.hpp"
#include "avse/gradsuite.hpp"
#include "avse/metrics.hpp"
#include "avse/model.hpp"
#include "avse/train.hpp"
#include "avse/wav.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace avse;

// Flat key=value config text; unknown keys are rejected.
std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  while (std::getline(f, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto notspace = [](unsigned char c) { return !std::isspace(c); };
    line.erase(line.begin(), std::find_if(line.begin(), line.end(), notspace));
    line.erase(std::find_if(line.rbegin(), line.rend(), notspace).base(), line.end());
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: malformed line: " + line);
    auto strip = [&](std::string s) {
      s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
      s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
      return s;
    };
    out.emplace_back(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  return out;
}

SynthSpec parse_synth_spec(const std::string& path) {
  SynthSpec s;
  for (auto& [k, v] : parse_kv_file(path)) {
    if (k == "n_train") s.n_train = std::stoi(v);
    else if (k == "n_val") s.n_val = std::stoi(v);
    else if (k == "n_test") s.n_test = std::stoi(v);
    else if (k == "utterance_len") s.utterance_len = std::stod(v);
    else if (k == "snr_train_lo") s.snr_train_lo = std::stod(v);
    else if (k == "snr_train_hi") s.snr_train_hi = std::stod(v);
    else if (k == "video_dim") s.video_dim = std::stoi(v);
    else if (k == "seed") s.seed = std::stoull(v);
    else throw std::runtime_error("synth spec: unknown key: " + k);
  }
  return s;
}

void apply_train_config(TrainConfig& cfg, const std::string& path) {
  for (auto& [k, v] : parse_kv_file(path)) {
    if (k == "lr") cfg.lr = std::stod(v);
    else if (k == "batch_size") cfg.batch_size = std::stoi(v);
    else if (k == "max_epochs") cfg.max_epochs = std::stoi(v);
    else if (k == "patience") cfg.patience = std::stoi(v);
    else if (k == "grad_clip_norm") cfg.grad_clip_norm = std::stod(v);
    else if (k == "max_steps") cfg.max_steps = std::stoll(v);
    else if (k == "lstm_hidden") cfg.model.lstm_hidden = std::stoi(v);
    else if (k == "video_dim") cfg.model.video_dim = std::stoi(v);
    else if (k == "sta_reduction") cfg.model.sta_reduction = std::stoi(v);
    else if (k == "sta_enabled") cfg.model.sta_enabled = std::stoi(v) != 0;
    else if (k == "enc_channels") {
      cfg.model.enc_channels.clear();
      std::istringstream vs(v);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.model.enc_channels.push_back(std::stoi(tok));
    } else throw std::runtime_error("train config: unknown key: " + k);
  }
}

int cmd_synth_data(const std::string& config, const std::string& out, uint64_t seed,
                   bool seed_set) {
  SynthSpec spec = config.empty() ? SynthSpec{} : parse_synth_spec(config);
  if (seed_set) spec.seed = seed;
  Corpus corpus = build_corpus(spec);
  write_corpus(out, corpus);
  std::printf("wrote corpus to %s (train %zu, val %zu, test %zu examples)\n", out.c_str(),
              corpus.train.size(), corpus.val.size(), corpus.test.size());
  return 0;
}

int cmd_train(const std::string& config, const std::string& corpus, const std::string& out,
              uint64_t seed, bool no_sta, bool quiet) {
  TrainConfig cfg;
  if (!config.empty()) apply_train_config(cfg, config);
  cfg.corpus_dir = corpus;
  cfg.checkpoint_out = out;
  cfg.loss_trace_out = out + ".trace";
  cfg.seed = seed;
  cfg.model.seed = seed;
  if (no_sta) cfg.model.sta_enabled = false;
  cfg.quiet = quiet;
  TrainResult res = train(cfg);
  if (cfg.checkpoint_out.empty()) save_checkpoint_file("model.ckpt", res.best);
  std::printf("trained %lld steps, best validation loss %.6f, checkpoint %s\n",
              static_cast<long long>(res.steps_run), res.best_val_loss,
              out.empty() ? "model.ckpt" : out.c_str());
  return 0;
}

int cmd_enhance(const std::string& ckpt_path, const std::string& noisy_path,
                const std::string& video_path, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint_file(ckpt_path);
  Model model(ckpt.config);
  restore_checkpoint(ckpt, model);
  Waveform noisy = read_wav(noisy_path);
  auto video = read_video_features(video_path);
  Waveform out = enhance(model, ckpt.norm_mean, ckpt.norm_std, noisy, video);
  write_wav(out_path, out);
  std::printf("wrote %s (%zu samples)\n", out_path.c_str(), out.size());
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& corpus,
                 const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint_file(ckpt_path);
  Model model(ckpt.config);
  restore_checkpoint(ckpt, model);
  EvalReport rep =
      evaluate_corpus(make_enhancer(model, ckpt.norm_mean, ckpt.norm_std), corpus, "test");
  std::cout << rep.to_table();
  if (!out_path.empty()) {
    std::ofstream f(out_path, std::ios::trunc);
    f << rep.to_jsonl();
    if (!f) throw std::runtime_error("evaluate: cannot write " + out_path);
  }
  return 0;
}

int cmd_grad_check(uint64_t seed) {
  GradSuiteReport rep = run_gradient_suite(seed);
  for (const auto& e : rep.entries)
    std::printf("%-20s max_rel_err %.3e (tol %.0e) %s\n", e.name.c_str(), e.max_rel_err,
                e.tolerance, e.pass ? "ok" : "FAIL");
  std::printf("max rel err overall: %.3e\n", rep.worst());
  return rep.all_pass() ? 0 : 2;
}

int cmd_ablate(const std::string& config, const std::string& corpus, uint64_t seed,
               bool quiet) {
  struct Arm {
    const char* name;
    bool sta;
    double val_loss, stoi_score, sisdr;
  };
  Arm arms[2] = {{"AV-CRN", false, 0, 0, 0}, {"AV-CRN+STA", true, 0, 0, 0}};
  for (auto& arm : arms) {
    TrainConfig cfg;
    if (!config.empty()) apply_train_config(cfg, config);
    cfg.corpus_dir = corpus;
    cfg.seed = seed;
    cfg.model.seed = seed;
    cfg.model.sta_enabled = arm.sta;
    cfg.quiet = quiet;
    TrainResult res = train(cfg);
    arm.val_loss = res.best_val_loss;
    Model model(res.best.config);
    restore_checkpoint(res.best, model);
    EvalReport rep = evaluate_corpus(
        make_enhancer(model, res.best.norm_mean, res.best.norm_std), corpus, "test");
    arm.stoi_score = rep.mean_stoi_enh();
    arm.sisdr = rep.mean_sisdr_enh();
    if (arm.sta) {
      std::printf("unprocessed           STOI %.4f  SI-SDR %7.2f dB\n",
                  rep.mean_stoi_noisy(), rep.mean_sisdr_noisy());
    }
  }
  for (const auto& arm : arms)
    std::printf("%-21s STOI %.4f  SI-SDR %7.2f dB  val_loss %.6f\n", arm.name,
                arm.stoi_score, arm.sisdr, arm.val_loss);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual speech enhancement with soft-threshold attention"};
  app.require_subcommand(1);

  std::string config, corpus, checkpoint, out, noisy_path, video_path;
  uint64_t seed = 0;
  bool no_sta = false, quiet = false;

  auto* synth = app.add_subcommand("synth-data", "generate a synthetic AV corpus");
  synth->add_option("--config", config, "synth spec file (key = value)");
  synth->add_option("--out", out, "corpus output directory")->required();
  auto* synth_seed = synth->add_option("--seed", seed, "corpus seed");

  auto* tr = app.add_subcommand("train", "train a model on a corpus");
  tr->add_option("--config", config, "train config file (key = value)");
  tr->add_option("--corpus", corpus, "corpus directory")->required();
  tr->add_option("--out", out, "checkpoint output path")->required();
  tr->add_option("--seed", seed, "training seed");
  tr->add_flag("--no-sta", no_sta, "disable soft-threshold attention (ablation arm)");
  tr->add_flag("--quiet", quiet, "suppress progress output");

  auto* enh = app.add_subcommand("enhance", "enhance a noisy wav file");
  enh->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  enh->add_option("--noisy", noisy_path, "noisy input wav")->required();
  enh->add_option("--video", video_path, "video feature file (.f32)")->required();
  enh->add_option("--out", out, "enhanced output wav")->required();

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on a corpus test split");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--corpus", corpus, "corpus directory")->required();
  ev->add_option("--out", out, "also write line-delimited records here");

  auto* gc = app.add_subcommand("grad-check", "run the finite-difference gradient suite");
  gc->add_option("--seed", seed, "suite seed");

  auto* ab = app.add_subcommand("ablate", "train and compare both ablation arms");
  ab->add_option("--config", config, "train config file");
  ab->add_option("--corpus", corpus, "corpus directory")->required();
  ab->add_option("--seed", seed, "training seed");
  ab->add_flag("--quiet", quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(config, out, seed, synth_seed->count() > 0);
    if (tr->parsed()) return cmd_train(config, corpus, out, seed, no_sta, quiet);
    if (enh->parsed()) return cmd_enhance(checkpoint, noisy_path, video_path, out);
    if (ev->parsed()) return cmd_evaluate(checkpoint, corpus, out);
    if (gc->parsed()) return cmd_grad_check(seed);
    if (ab->parsed()) return cmd_ablate(config, corpus, seed, quiet);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
