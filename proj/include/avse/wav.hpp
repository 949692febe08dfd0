#pragma once

// RIFF/WAVE I/O restricted to what the pipeline accepts: PCM, 16-bit signed
// little-endian, mono, 16000 Hz. Anything else is rejected with a descriptive
// error.

#include <string>

#include "avse/dsp.hpp"

namespace avse {

Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& w);

}  // namespace avse
