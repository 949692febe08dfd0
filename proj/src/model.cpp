#include "avse/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace avse {

void ModelConfig::validate() const {
  if (enc_channels.size() < 2)
    throw std::invalid_argument("ModelConfig: need at least 2 encoder levels");
  if (mel_bands % (1 << levels()) != 0)
    throw std::invalid_argument("ModelConfig: mel_bands must divide down the stride chain");
  if (lstm_hidden < 1 || lstm_layers < 1 || video_dim < 1 || sta_reduction < 1)
    throw std::invalid_argument("ModelConfig: invalid dimensions");
}

ModelConfig ModelConfig::tiny(bool sta, uint64_t seed) {
  ModelConfig c;
  c.enc_channels = {4, 8};
  c.lstm_hidden = 16;
  c.video_dim = 8;
  c.sta_enabled = sta;
  c.seed = seed;
  return c;
}

namespace {

Tensor uniform_param(std::vector<int> shape, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  std::vector<double> d(static_cast<size_t>(shape_size(shape)));
  for (auto& v : d) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(d), true);
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  const int L = cfg_.levels();
  const int kf = cfg_.kernel_f, kt = cfg_.kernel_t;
  const int T = cfg_.chunk_frames;
  (void)T;

  for (int l = 1; l <= L; ++l) {
    const int cin = l == 1 ? 1 : cfg_.enc_channels[static_cast<size_t>(l - 2)];
    const int cout = cfg_.enc_channels[static_cast<size_t>(l - 1)];
    Rng r = rng.child(100 + static_cast<uint64_t>(l));
    enc_k_.push_back(uniform_param({cout, cin, kf, kt}, cin * kf * kt, r));
    enc_b_.push_back(Tensor::zeros({cout}, true));

    const int feat = cout * cfg_.freq_at(l);
    Rng rv = rng.child(200 + static_cast<uint64_t>(l));
    vproj_w_.push_back(uniform_param({feat, cfg_.video_dim}, cfg_.video_dim, rv));
    vproj_b_.push_back(Tensor::zeros({feat}, true));

    Rng rf = rng.child(300 + static_cast<uint64_t>(l));
    fuse_k_.push_back(uniform_param({cout, 2 * cout, 1, 1}, 2 * cout, rf));
    fuse_b_.push_back(Tensor::zeros({cout}, true));
  }

  const int cL = cfg_.enc_channels.back();
  const int feat_deep = cL * cfg_.freq_at(L);
  const int H = cfg_.lstm_hidden;
  for (int i = 0; i < cfg_.lstm_layers; ++i) {
    const int in = i == 0 ? 2 * feat_deep : H;
    Rng r = rng.child(400 + static_cast<uint64_t>(i));
    lstm_wx_.push_back(uniform_param({4 * H, in}, in, r));
    Rng r2 = rng.child(450 + static_cast<uint64_t>(i));
    lstm_wh_.push_back(uniform_param({4 * H, H}, H, r2));
    lstm_b_.push_back(Tensor::zeros({4 * H}, true));
  }
  Rng rp = rng.child(500);
  lstm_proj_w_ = uniform_param({feat_deep, H}, H, rp);
  lstm_proj_b_ = Tensor::zeros({feat_deep}, true);

  // decoder, level l = L down to 1 (stored deep-first)
  for (int l = L; l >= 1; --l) {
    const int cl = cfg_.enc_channels[static_cast<size_t>(l - 1)];
    const int cout = l > 1 ? cfg_.enc_channels[static_cast<size_t>(l - 2)] : cl;
    if (cfg_.sta_enabled) {
      Rng rs = rng.child(600 + static_cast<uint64_t>(l));
      sta_.emplace_back(cl, cfg_.sta_reduction, rs);
    }
    Rng rd = rng.child(700 + static_cast<uint64_t>(l));
    dec_k_.push_back(uniform_param({cout, 2 * cl, kf, kt}, 2 * cl * kf * kt, rd));
    dec_b_.push_back(Tensor::zeros({cout}, true));
    // transpose kernel 2x3, stride (2,1), pad (0,1): F doubles, T preserved
    Rng ru = rng.child(800 + static_cast<uint64_t>(l));
    up_k_.push_back(uniform_param({cout, cout, 2, 3}, cout * 2 * 3, ru));
    up_b_.push_back(Tensor::zeros({cout}, true));
  }
  Rng ro = rng.child(900);
  out_k_ = uniform_param({1, cfg_.enc_channels[0], 1, 1}, cfg_.enc_channels[0], ro);
  out_b_ = Tensor::zeros({1}, true);
}

std::vector<Tensor> Model::audio_encoder(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != cfg_.mel_bands ||
      x.dim(3) != cfg_.chunk_frames)
    throw std::invalid_argument("audio_encoder: expected [B,1," +
                                std::to_string(cfg_.mel_bands) + "," +
                                std::to_string(cfg_.chunk_frames) + "], got " +
                                shape_str(x.shape()));
  std::vector<Tensor> maps;
  Tensor h = x;
  for (int l = 1; l <= cfg_.levels(); ++l) {
    h = elu(add_channel_bias(
        conv2d(h, enc_k_[static_cast<size_t>(l - 1)], {2, 1}, {1, 1}),
        enc_b_[static_cast<size_t>(l - 1)]));
    maps.push_back(h);
  }
  return maps;
}

std::vector<Tensor> Model::video_encoder(const Tensor& v) const {
  if (v.rank() != 3 || v.dim(1) != 5 || v.dim(2) != cfg_.video_dim)
    throw std::invalid_argument("video_encoder: expected [B,5," +
                                std::to_string(cfg_.video_dim) + "], got " +
                                shape_str(v.shape()));
  const int B = v.dim(0);
  const int T = cfg_.chunk_frames;
  Tensor up = repeat_time(v, T / 5);  // [B,20,D]
  Tensor flat = reshape(up, {B * T, cfg_.video_dim});
  std::vector<Tensor> maps;
  for (int l = 1; l <= cfg_.levels(); ++l) {
    const int cl = cfg_.enc_channels[static_cast<size_t>(l - 1)];
    const int fl = cfg_.freq_at(l);
    Tensor y = linear(flat, vproj_w_[static_cast<size_t>(l - 1)],
                      vproj_b_[static_cast<size_t>(l - 1)]);
    maps.push_back(elu(unflatten_per_time(reshape(y, {B, T, cl * fl}), cl, fl)));
  }
  return maps;
}

Tensor Model::fuse_level(int level, const Tensor& a, const Tensor& v) const {
  if (level < 1 || level > cfg_.levels())
    throw std::invalid_argument("fuse_level: level out of range");
  if (a.shape() != v.shape())
    throw std::invalid_argument("fuse_level: audio " + shape_str(a.shape()) +
                                " vs visual " + shape_str(v.shape()));
  return elu(add_channel_bias(
      conv2d(concat_channels(a, v), fuse_k_[static_cast<size_t>(level - 1)], {1, 1}, {0, 0}),
      fuse_b_[static_cast<size_t>(level - 1)]));
}

Tensor Model::bottleneck(const Tensor& a_deep, const Tensor& v_deep) const {
  if (a_deep.shape() != v_deep.shape())
    throw std::invalid_argument("bottleneck: stream shape mismatch");
  const int B = a_deep.dim(0);
  const int cL = cfg_.enc_channels.back();
  const int fL = cfg_.freq_at(cfg_.levels());
  const int T = cfg_.chunk_frames;
  Tensor seq = concat_last(flatten_per_time(a_deep), flatten_per_time(v_deep));  // [B,T,2CF]
  for (int i = 0; i < cfg_.lstm_layers; ++i)
    seq = lstm_layer(seq, lstm_wx_[static_cast<size_t>(i)], lstm_wh_[static_cast<size_t>(i)],
                     lstm_b_[static_cast<size_t>(i)]);
  Tensor proj = linear(reshape(seq, {B * T, cfg_.lstm_hidden}), lstm_proj_w_, lstm_proj_b_);
  return unflatten_per_time(reshape(proj, {B, T, cL * fL}), cL, fL);
}

Tensor Model::decoder(const Tensor& bneck, const std::vector<Tensor>& fused) const {
  const int L = cfg_.levels();
  if (static_cast<int>(fused.size()) != L)
    throw std::invalid_argument("decoder: expected " + std::to_string(L) + " skip maps");
  Tensor h = bneck;
  for (int i = 0; i < L; ++i) {  // i = 0 is the deepest level (l = L - i)
    const Tensor& skip_raw = fused[static_cast<size_t>(L - 1 - i)];
    if (skip_raw.shape() != h.shape() && skip_raw.dim(1) != h.dim(1))
      throw std::invalid_argument("decoder: skip shape " + shape_str(skip_raw.shape()) +
                                  " incompatible with " + shape_str(h.shape()));
    Tensor skip = cfg_.sta_enabled ? sta_[static_cast<size_t>(i)].forward(skip_raw) : skip_raw;
    h = concat_channels(h, skip);
    h = elu(add_channel_bias(conv2d(h, dec_k_[static_cast<size_t>(i)], {1, 1}, {1, 1}),
                             dec_b_[static_cast<size_t>(i)]));
    h = elu(add_channel_bias(
        conv2d_transpose(h, up_k_[static_cast<size_t>(i)], {2, 1}, {0, 1}),
        up_b_[static_cast<size_t>(i)]));
  }
  return add_channel_bias(conv2d(h, out_k_, {1, 1}, {0, 0}), out_b_);  // linear output
}

Tensor Model::forward(const Tensor& noisy, const Tensor& video) const {
  if (noisy.dim(0) != video.dim(0))
    throw std::invalid_argument("forward: batch size mismatch");
  std::vector<Tensor> a = audio_encoder(noisy);
  std::vector<Tensor> v = video_encoder(video);
  std::vector<Tensor> fused;
  for (int l = 1; l <= cfg_.levels(); ++l)
    fused.push_back(fuse_level(l, a[static_cast<size_t>(l - 1)], v[static_cast<size_t>(l - 1)]));
  Tensor b = bottleneck(a.back(), v.back());
  return decoder(b, fused);
}

std::vector<std::pair<std::string, Tensor>> Model::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const int L = cfg_.levels();
  for (int l = 1; l <= L; ++l) {
    std::string p = "enc" + std::to_string(l);
    out.emplace_back(p + ".k", enc_k_[static_cast<size_t>(l - 1)]);
    out.emplace_back(p + ".b", enc_b_[static_cast<size_t>(l - 1)]);
    out.emplace_back("vproj" + std::to_string(l) + ".w", vproj_w_[static_cast<size_t>(l - 1)]);
    out.emplace_back("vproj" + std::to_string(l) + ".b", vproj_b_[static_cast<size_t>(l - 1)]);
    out.emplace_back("fuse" + std::to_string(l) + ".k", fuse_k_[static_cast<size_t>(l - 1)]);
    out.emplace_back("fuse" + std::to_string(l) + ".b", fuse_b_[static_cast<size_t>(l - 1)]);
  }
  for (int i = 0; i < cfg_.lstm_layers; ++i) {
    std::string p = "lstm" + std::to_string(i);
    out.emplace_back(p + ".wx", lstm_wx_[static_cast<size_t>(i)]);
    out.emplace_back(p + ".wh", lstm_wh_[static_cast<size_t>(i)]);
    out.emplace_back(p + ".b", lstm_b_[static_cast<size_t>(i)]);
  }
  out.emplace_back("lstm_proj.w", lstm_proj_w_);
  out.emplace_back("lstm_proj.b", lstm_proj_b_);
  for (int i = 0; i < L; ++i) {
    const int l = L - i;
    if (cfg_.sta_enabled)
      for (auto& [n, t] : sta_[static_cast<size_t>(i)].named_parameters(
               "sta" + std::to_string(l)))
        out.emplace_back(n, t);
    out.emplace_back("dec" + std::to_string(l) + ".k", dec_k_[static_cast<size_t>(i)]);
    out.emplace_back("dec" + std::to_string(l) + ".b", dec_b_[static_cast<size_t>(i)]);
    out.emplace_back("up" + std::to_string(l) + ".k", up_k_[static_cast<size_t>(i)]);
    out.emplace_back("up" + std::to_string(l) + ".b", up_b_[static_cast<size_t>(i)]);
  }
  out.emplace_back("out.k", out_k_);
  out.emplace_back("out.b", out_b_);
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [n, t] : named_parameters()) out.push_back(t);
  return out;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (auto& p : parameters()) n += p.size();
  return n;
}

void Model::load_state(const std::vector<std::pair<std::string, std::vector<double>>>& state) {
  auto named = named_parameters();
  for (auto& [n, d] : state) {
    bool known = false;
    for (auto& [name, param] : named)
      if (name == n) {
        known = true;
        break;
      }
    if (!known) throw std::runtime_error("load_state: unknown tensor " + n);
  }
  for (auto& [name, param] : named) {
    const std::vector<double>* found = nullptr;
    for (auto& [n, d] : state)
      if (n == name) {
        found = &d;
        break;
      }
    if (!found) throw std::runtime_error("load_state: missing tensor " + name);
    if (found->size() != static_cast<size_t>(param.size()))
      throw std::runtime_error("load_state: size mismatch for " + name);
    std::copy(found->begin(), found->end(), param.data().begin());
  }
}

// ---------------------------------------------------------------------------
// config text form

std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "enc_channels=";
  for (size_t i = 0; i < cfg.enc_channels.size(); ++i)
    os << (i ? "," : "") << cfg.enc_channels[i];
  os << "\nkernel_f=" << cfg.kernel_f << "\nkernel_t=" << cfg.kernel_t
     << "\nlstm_hidden=" << cfg.lstm_hidden << "\nlstm_layers=" << cfg.lstm_layers
     << "\nvideo_dim=" << cfg.video_dim << "\nsta_enabled=" << (cfg.sta_enabled ? 1 : 0)
     << "\nsta_reduction=" << cfg.sta_reduction << "\nseed=" << cfg.seed
     << "\nmel_bands=" << cfg.mel_bands << "\nchunk_frames=" << cfg.chunk_frames << "\n";
  return os.str();
}

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("parse_config: malformed line: " + line);
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "enc_channels") {
      cfg.enc_channels.clear();
      std::istringstream vs(val);
      std::string tok;
      while (std::getline(vs, tok, ',')) cfg.enc_channels.push_back(std::stoi(tok));
    } else if (key == "kernel_f") cfg.kernel_f = std::stoi(val);
    else if (key == "kernel_t") cfg.kernel_t = std::stoi(val);
    else if (key == "lstm_hidden") cfg.lstm_hidden = std::stoi(val);
    else if (key == "lstm_layers") cfg.lstm_layers = std::stoi(val);
    else if (key == "video_dim") cfg.video_dim = std::stoi(val);
    else if (key == "sta_enabled") cfg.sta_enabled = std::stoi(val) != 0;
    else if (key == "sta_reduction") cfg.sta_reduction = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "mel_bands") cfg.mel_bands = std::stoi(val);
    else if (key == "chunk_frames") cfg.chunk_frames = std::stoi(val);
    else throw std::runtime_error("parse_config: unknown key: " + key);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// checkpoint serialization
//
// Byte layout (all integers little-endian):
//   magic "AVSECKPT" (8 bytes), u32 version
//   u32 config text length, config text (key=value lines)
//   f64 norm_mean, f64 norm_std, i64 train_step, i64 adam_t, u64 rng_state,
//   f64 best_val_loss
//   u32 tensor count; per tensor: u32 name length, name bytes, u32 rank,
//   u32 extents[rank], f64 values (row-major)

namespace {

constexpr char kMagic[8] = {'A', 'V', 'S', 'E', 'C', 'K', 'P', 'T'};

template <typename T>
void put_le(std::vector<uint8_t>& b, T v) {
  for (size_t i = 0; i < sizeof(T); ++i)
    b.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}
void put_f64(std::vector<uint8_t>& b, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_le(b, u);
}

struct Reader {
  const std::vector<uint8_t>& b;
  size_t pos = 0;
  void need(size_t n) const {
    if (pos + n > b.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  template <typename T>
  T get_le() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(b[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f64() {
    uint64_t u = get_le<uint64_t>();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  std::string get_str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void Checkpoint::put_tensor(const std::string& name, std::vector<int> shape,
                            std::vector<double> data) {
  tensors.emplace_back(name, std::move(data));
  tensor_shapes.emplace_back(name, std::move(shape));
}

const std::vector<double>* Checkpoint::find_tensor(const std::string& name) const {
  for (auto& [n, d] : tensors)
    if (n == name) return &d;
  return nullptr;
}

std::vector<uint8_t> serialize_checkpoint(const Checkpoint& c) {
  std::vector<uint8_t> b;
  b.insert(b.end(), kMagic, kMagic + 8);
  put_le<uint32_t>(b, Checkpoint::kVersion);
  std::string cfg = serialize_config(c.config);
  put_le<uint32_t>(b, static_cast<uint32_t>(cfg.size()));
  b.insert(b.end(), cfg.begin(), cfg.end());
  put_f64(b, c.norm_mean);
  put_f64(b, c.norm_std);
  put_le<int64_t>(b, c.train_step);
  put_le<int64_t>(b, c.adam_t);
  put_le<uint64_t>(b, c.rng_state);
  put_f64(b, c.best_val_loss);
  put_le<uint32_t>(b, static_cast<uint32_t>(c.tensors.size()));
  for (size_t i = 0; i < c.tensors.size(); ++i) {
    const auto& [name, data] = c.tensors[i];
    const auto& shape = c.tensor_shapes[i].second;
    put_le<uint32_t>(b, static_cast<uint32_t>(name.size()));
    b.insert(b.end(), name.begin(), name.end());
    put_le<uint32_t>(b, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_le<uint32_t>(b, static_cast<uint32_t>(d));
    for (double v : data) put_f64(b, v);
  }
  return b;
}

Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r{bytes};
  r.need(12);
  if (std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic bytes");
  r.pos = 8;
  uint32_t version = r.get_le<uint32_t>();
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  Checkpoint c;
  uint32_t cfg_len = r.get_le<uint32_t>();
  c.config = parse_config(r.get_str(cfg_len));
  c.norm_mean = r.get_f64();
  c.norm_std = r.get_f64();
  c.train_step = r.get_le<int64_t>();
  c.adam_t = r.get_le<int64_t>();
  c.rng_state = r.get_le<uint64_t>();
  c.best_val_loss = r.get_f64();
  uint32_t n = r.get_le<uint32_t>();
  for (uint32_t i = 0; i < n; ++i) {
    uint32_t name_len = r.get_le<uint32_t>();
    std::string name = r.get_str(name_len);
    uint32_t rank = r.get_le<uint32_t>();
    std::vector<int> shape(rank);
    int64_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<int>(r.get_le<uint32_t>());
      count *= shape[d];
    }
    std::vector<double> data(static_cast<size_t>(count));
    for (auto& v : data) v = r.get_f64();
    c.put_tensor(name, std::move(shape), std::move(data));
  }
  return c;
}

void save_checkpoint_file(const std::string& path, const Checkpoint& c) {
  std::vector<uint8_t> bytes = serialize_checkpoint(c);
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Model& model, const Adam* opt) {
  Checkpoint c;
  c.config = model.config();
  for (auto& [name, t] : model.named_parameters())
    c.put_tensor(name, t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  if (opt) {
    c.adam_t = opt->t();
    auto named = model.named_parameters();
    auto& m = const_cast<Adam*>(opt)->moment1();
    auto& v = const_cast<Adam*>(opt)->moment2();
    for (size_t i = 0; i < named.size(); ++i) {
      c.put_tensor("adam.m/" + named[i].first, named[i].second.shape(), m[i]);
      c.put_tensor("adam.v/" + named[i].first, named[i].second.shape(), v[i]);
    }
  }
  return c;
}

void restore_checkpoint(const Checkpoint& c, Model& model, Adam* opt) {
  std::vector<std::pair<std::string, std::vector<double>>> state;
  for (auto& [name, t] : model.named_parameters()) {
    const auto* d = c.find_tensor(name);
    if (!d) throw std::runtime_error("restore_checkpoint: missing tensor " + name);
    state.emplace_back(name, *d);
  }
  model.load_state(state);
  if (opt) {
    opt->set_t(c.adam_t);
    auto named = model.named_parameters();
    for (size_t i = 0; i < named.size(); ++i) {
      const auto* m = c.find_tensor("adam.m/" + named[i].first);
      const auto* v = c.find_tensor("adam.v/" + named[i].first);
      if (!m || !v)
        throw std::runtime_error("restore_checkpoint: missing optimizer state for " +
                                 named[i].first);
      opt->moment1()[i] = *m;
      opt->moment2()[i] = *v;
    }
  }
}

}  // namespace avse
