#include "avse/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace avse {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}
uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}
void wr_u32(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}
void wr_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xff));
  b.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_wav: cannot open " + path);
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw std::runtime_error("read_wav: " + path + " is not a RIFF/WAVE file");

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const uint8_t* data_ptr = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    const uint8_t* hdr = buf.data() + pos;
    uint32_t sz = rd_u32(hdr + 4);
    const uint8_t* body = hdr + 8;
    if (pos + 8 + sz > buf.size()) break;
    if (std::memcmp(hdr, "fmt ", 4) == 0 && sz >= 16) {
      format = rd_u16(body);
      channels = rd_u16(body + 2);
      rate = rd_u32(body + 4);
      bits = rd_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_ptr = body;
      data_len = sz;
    }
    pos += 8 + sz + (sz & 1);
  }
  if (!have_fmt || !data_ptr) throw std::runtime_error("read_wav: " + path + " missing fmt/data chunk");
  if (format != 1) throw std::runtime_error("read_wav: " + path + " is not PCM (format tag " + std::to_string(format) + ")");
  if (channels != 1) throw std::runtime_error("read_wav: " + path + " has " + std::to_string(channels) + " channels, need mono");
  if (rate != static_cast<uint32_t>(kSampleRate))
    throw std::runtime_error("read_wav: " + path + " sample rate " + std::to_string(rate) + ", need 16000");
  if (bits != 16) throw std::runtime_error("read_wav: " + path + " has " + std::to_string(bits) + " bits per sample, need 16");

  Waveform w;
  w.samples.resize(data_len / 2);
  for (size_t i = 0; i < w.samples.size(); ++i) {
    int16_t v = static_cast<int16_t>(rd_u16(data_ptr + 2 * i));
    w.samples[i] = static_cast<double>(v) / 32768.0;
  }
  return w;
}

void write_wav(const std::string& path, const Waveform& w) {
  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  std::vector<uint8_t> b;
  b.reserve(44 + 2 * n);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  wr_u32(b, 36 + 2 * n);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  wr_u32(b, 16);
  wr_u16(b, 1);                    // PCM
  wr_u16(b, 1);                    // mono
  wr_u32(b, kSampleRate);
  wr_u32(b, kSampleRate * 2);      // byte rate
  wr_u16(b, 2);                    // block align
  wr_u16(b, 16);                   // bits
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  wr_u32(b, 2 * n);
  for (double s : w.samples) {
    double c = std::clamp(s, -1.0, 1.0);
    int16_t v = static_cast<int16_t>(std::lrint(c * 32767.0));
    wr_u16(b, static_cast<uint16_t>(v));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_wav: cannot open " + path);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!f) throw std::runtime_error("write_wav: write failed for " + path);
}

}  // namespace avse
