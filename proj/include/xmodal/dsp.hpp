#pragma once

#include <complex>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

struct AudioClip {
    std::string id;
    std::vector<double> samples;
    int sample_rate = 16000;

    double duration_seconds() const {
        return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

struct DspConfig {
    int n_fft = 512;
    int win_length = 400;  // 25 ms at 16 kHz
    int hop_length = 160;  // 10 ms at 16 kHz
    int n_mels = 64;
    double f_min = 0.0;
    double f_max = 8000.0;
    double floor_epsilon = 1e-10;
    int sample_rate = 16000;

    /// Throws InvalidConfig.
    void validate() const;
    int n_bins() const { return n_fft / 2 + 1; }

    friend bool operator==(const DspConfig&, const DspConfig&) = default;
};

/// Log-power mel spectrogram, rows are frames and columns mel bands.
struct MelSpectrogram {
    Matrix values;
    double hop_seconds = 0.0;
    int n_mels = 0;

    std::size_t n_frames() const { return values.rows(); }
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Frames are placed at t*hop and cover win_length samples; signals shorter
/// than one window are reflect-padded at the end to win_length.
std::size_t stft_frame_count(std::size_t n_samples, const DspConfig& cfg);

Matrix stft_magnitude(const AudioClip& clip, const DspConfig& cfg);
/// Triangular HTK-mel filters, shape [n_mels x n_fft/2+1], unnormalized.
Matrix mel_filterbank(const DspConfig& cfg);
std::vector<double> mel_center_frequencies(const DspConfig& cfg);
MelSpectrogram log_mel(const AudioClip& clip, const DspConfig& cfg);

/// Non-overlapping windows; the last partial window is zero-padded. Segment k
/// is named "<id>#k".
std::vector<AudioClip> frame_segments(const AudioClip& clip, double window_seconds = 1.0);

/// Reusable log-mel extractor with cached window, filterbank and FFT tables.
/// Immutable after construction, so one instance can serve many threads.
class MelFrontend {
public:
    explicit MelFrontend(DspConfig cfg);

    const DspConfig& config() const noexcept { return cfg_; }
    const Matrix& filterbank() const noexcept { return filterbank_; }

    Matrix magnitude(const AudioClip& clip) const;
    MelSpectrogram log_mel(const AudioClip& clip) const;

private:
    std::vector<double> padded_signal(const AudioClip& clip) const;
    void spectrum(const double* frame, std::vector<std::complex<double>>& work) const;

    DspConfig cfg_;
    std::vector<double> window_;  // Hann of win_length, centered in n_fft
    Matrix filterbank_;
    std::vector<std::pair<std::size_t, std::size_t>> filter_support_;  // [first, last) nonzero bins
    bool radix2_ = false;
    std::vector<std::complex<double>> twiddles_;
    std::vector<std::size_t> bit_reverse_;
};

}  // namespace xmodal
