#include "xmodal/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xmodal/errors.hpp"

namespace xmodal {

void DspConfig::validate() const {
    if (sample_rate <= 0) throw InvalidConfig("sample_rate must be positive");
    if (n_mels < 1) throw InvalidConfig("n_mels must be >= 1");
    if (hop_length < 1) throw InvalidConfig("hop_length must be >= 1");
    if (!(hop_length <= win_length && win_length <= n_fft))
        throw InvalidConfig("require hop_length <= win_length <= n_fft");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0))
        throw InvalidConfig("require 0 <= f_min < f_max <= sample_rate/2");
    if (!(floor_epsilon > 0.0)) throw InvalidConfig("floor_epsilon must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t stft_frame_count(std::size_t n_samples, const DspConfig& cfg) {
    const auto win = static_cast<std::size_t>(cfg.win_length);
    const auto hop = static_cast<std::size_t>(cfg.hop_length);
    const std::size_t len = std::max(n_samples, win);
    return 1 + (len - win) / hop;
}

namespace {

std::vector<double> mel_edges_hz(const DspConfig& cfg) {
    const double lo = hz_to_mel(cfg.f_min);
    const double hi = hz_to_mel(cfg.f_max);
    std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double m = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(edges.size() - 1);
        edges[i] = mel_to_hz(m);
    }
    return edges;
}

}  // namespace

std::vector<double> mel_center_frequencies(const DspConfig& cfg) {
    cfg.validate();
    auto edges = mel_edges_hz(cfg);
    return {edges.begin() + 1, edges.end() - 1};
}

Matrix mel_filterbank(const DspConfig& cfg) {
    cfg.validate();
    const auto edges = mel_edges_hz(cfg);
    const std::size_t n_bins = static_cast<std::size_t>(cfg.n_bins());
    Matrix fb(static_cast<std::size_t>(cfg.n_mels), n_bins);
    for (std::size_t m = 0; m < fb.rows(); ++m) {
        const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
        bool any = false;
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
            const double up = (f - left) / (center - left);
            const double down = (right - f) / (right - center);
            const double w = std::max(0.0, std::min(up, down));
            fb(m, k) = w;
            any = any || w > 0.0;
        }
        if (!any)
            throw InvalidConfig("mel filter " + std::to_string(m) +
                                " covers no FFT bin; reduce n_mels or raise n_fft");
    }
    return fb;
}

MelFrontend::MelFrontend(DspConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const auto n_fft = static_cast<std::size_t>(cfg_.n_fft);
    const auto win = static_cast<std::size_t>(cfg_.win_length);
    window_.assign(n_fft, 0.0);
    const std::size_t offset = (n_fft - win) / 2;
    for (std::size_t n = 0; n < win; ++n)
        window_[offset + n] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(win));
    filterbank_ = mel_filterbank(cfg_);
    for (std::size_t m = 0; m < filterbank_.rows(); ++m) {
        std::size_t first = filterbank_.cols(), last = 0;
        for (std::size_t k = 0; k < filterbank_.cols(); ++k) {
            if (filterbank_(m, k) > 0.0) {
                first = std::min(first, k);
                last = k + 1;
            }
        }
        filter_support_.emplace_back(first, last);
    }

    radix2_ = (n_fft & (n_fft - 1)) == 0;
    if (radix2_) {
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n_fft) ++bits;
        bit_reverse_.resize(n_fft);
        for (std::size_t i = 0; i < n_fft; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            bit_reverse_[i] = r;
        }
        twiddles_.resize(n_fft / 2);
        for (std::size_t k = 0; k < n_fft / 2; ++k)
            twiddles_[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                               static_cast<double>(n_fft));
    } else {
        twiddles_.resize(n_fft);
        for (std::size_t k = 0; k < n_fft; ++k)
            twiddles_[k] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) /
                                               static_cast<double>(n_fft));
    }
}

std::vector<double> MelFrontend::padded_signal(const AudioClip& clip) const {
    if (clip.samples.empty()) throw InvalidInput("empty waveform for clip '" + clip.id + "'");
    if (clip.sample_rate != cfg_.sample_rate)
        throw InvalidInput("clip '" + clip.id + "' has sample rate " + std::to_string(clip.sample_rate) +
                           " but the frontend expects " + std::to_string(cfg_.sample_rate));
    std::vector<double> x = clip.samples;
    const auto win = static_cast<std::size_t>(cfg_.win_length);
    if (x.size() < win) {
        // Reflect about the last sample; a single sample is replicated.
        const std::size_t n = x.size();
        x.reserve(win);
        std::size_t i = 0;
        while (x.size() < win) {
            if (n == 1) {
                x.push_back(x[0]);
                continue;
            }
            const std::size_t period = 2 * (n - 1);
            const std::size_t pos = (n - 1 + 1 + i) % period;
            x.push_back(pos < n ? x[pos] : x[period - pos]);
            ++i;
        }
    }
    return x;
}

void MelFrontend::spectrum(const double* frame, std::vector<std::complex<double>>& work) const {
    const auto n = static_cast<std::size_t>(cfg_.n_fft);
    work.assign(n, {});
    if (radix2_) {
        for (std::size_t i = 0; i < n; ++i) work[bit_reverse_[i]] = frame[i] * window_[i];
        for (std::size_t len = 2; len <= n; len <<= 1) {
            const std::size_t half = len / 2, stride = n / len;
            for (std::size_t start = 0; start < n; start += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    const auto t = twiddles_[j * stride] * work[start + j + half];
                    work[start + j + half] = work[start + j] - t;
                    work[start + j] += t;
                }
            }
        }
        return;
    }
    const std::size_t n_bins = n / 2 + 1;
    for (std::size_t k = 0; k < n_bins; ++k) {
        std::complex<double> acc{};
        for (std::size_t i = 0; i < n; ++i) acc += frame[i] * window_[i] * twiddles_[(k * i) % n];
        work[k] = acc;
    }
}

Matrix MelFrontend::magnitude(const AudioClip& clip) const {
    const auto x = padded_signal(clip);
    const auto n_fft = static_cast<std::size_t>(cfg_.n_fft);
    const auto win = static_cast<std::size_t>(cfg_.win_length);
    const auto hop = static_cast<std::size_t>(cfg_.hop_length);
    const std::size_t frames = stft_frame_count(clip.samples.size(), cfg_);
    const std::size_t n_bins = n_fft / 2 + 1;
    const std::size_t offset = (n_fft - win) / 2;

    Matrix mag(frames, n_bins);
    std::vector<double> frame(n_fft, 0.0);
    std::vector<std::complex<double>> work;
    for (std::size_t t = 0; t < frames; ++t) {
        std::fill(frame.begin(), frame.end(), 0.0);
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(t * hop), win,
                    frame.begin() + static_cast<std::ptrdiff_t>(offset));
        spectrum(frame.data(), work);
        for (std::size_t k = 0; k < n_bins; ++k) mag(t, k) = std::abs(work[k]);
    }
    return mag;
}

MelSpectrogram MelFrontend::log_mel(const AudioClip& clip) const {
    const Matrix mag = magnitude(clip);
    const std::size_t n_mels = filterbank_.rows();
    const std::size_t n_bins = filterbank_.cols();
    MelSpectrogram out;
    out.n_mels = cfg_.n_mels;
    out.hop_seconds = static_cast<double>(cfg_.hop_length) / cfg_.sample_rate;
    out.values = Matrix(mag.rows(), n_mels);
    std::vector<double> power(n_bins);
    for (std::size_t t = 0; t < mag.rows(); ++t) {
        for (std::size_t k = 0; k < n_bins; ++k) power[k] = mag(t, k) * mag(t, k);
        for (std::size_t m = 0; m < n_mels; ++m) {
            double acc = 0.0;
            const auto [first, last] = filter_support_[m];
            for (std::size_t k = first; k < last; ++k) acc += filterbank_(m, k) * power[k];
            out.values(t, m) = std::log(std::max(acc, cfg_.floor_epsilon));
        }
    }
    return out;
}

Matrix stft_magnitude(const AudioClip& clip, const DspConfig& cfg) { return MelFrontend(cfg).magnitude(clip); }

MelSpectrogram log_mel(const AudioClip& clip, const DspConfig& cfg) { return MelFrontend(cfg).log_mel(clip); }

std::vector<AudioClip> frame_segments(const AudioClip& clip, double window_seconds) {
    if (!(window_seconds > 0.0)) throw InvalidInput("window_seconds must be positive");
    if (clip.samples.empty()) throw InvalidInput("clip '" + clip.id + "' has no samples");
    if (clip.sample_rate <= 0) throw InvalidInput("clip '" + clip.id + "' has invalid sample rate");
    const auto window = static_cast<std::size_t>(std::llround(window_seconds * clip.sample_rate));
    if (window == 0) throw InvalidInput("window shorter than one sample");
    const std::size_t count = (clip.samples.size() + window - 1) / window;
    std::vector<AudioClip> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        AudioClip seg;
        seg.id = clip.id + "#" + std::to_string(k);
        seg.sample_rate = clip.sample_rate;
        seg.samples.assign(window, 0.0);
        const std::size_t begin = k * window;
        const std::size_t end = std::min(begin + window, clip.samples.size());
        std::copy(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                  clip.samples.begin() + static_cast<std::ptrdiff_t>(end), seg.samples.begin());
        out.push_back(std::move(seg));
    }
    return out;
}

}  // namespace xmodal
