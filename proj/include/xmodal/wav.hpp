#pragma once

#include <filesystem>
#include <string>

#include "xmodal/dsp.hpp"

namespace xmodal {

/// Reads a mono 16-bit PCM RIFF/WAVE file. Samples are scaled by 1/32768.
/// Multi-channel or non-PCM16 input raises InvalidInput; unreadable or
/// truncated files raise IoError.
AudioClip read_wav(const std::filesystem::path& path, std::string id = {});

/// Writes a mono 16-bit PCM file (samples clamped to [-1, 1], rounded to the
/// nearest code). Written to a temporary name and renamed into place.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

/// Quantizes samples exactly as write_wav does, so in-memory synthetic clips
/// can match what a later read_wav returns.
double quantize_pcm16(double sample);

}  // namespace xmodal
