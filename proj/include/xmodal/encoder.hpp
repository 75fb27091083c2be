#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xmodal/dsp.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// How normalization layers behave outside training.
enum class NormInference {
    Running,   // running statistics gathered during training
    Instance,  // per-input statistics, same as training
};

struct EncoderConfig {
    int embed_dim = 512;
    int n_blocks = 4;
    int base_channels = 16;
    std::uint64_t seed = 0;
    int n_mels = 64;
    NormInference norm_inference = NormInference::Instance;
    double norm_momentum = 0.1;
    double norm_eps = 1e-5;

    void validate() const;
    /// Smallest time/frequency extent the downsampling path accepts.
    std::size_t min_input_extent() const { return std::size_t{1} << (n_blocks - 1); }

    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct Embedding {
    std::vector<double> values;

    Embedding() = default;
    explicit Embedding(std::vector<double> v) : values(std::move(v)) {}
    std::size_t dim() const noexcept { return values.size(); }

    friend bool operator==(const Embedding&, const Embedding&) = default;
};

/// Trainable weights plus non-trainable normalization buffers.
struct EncoderParams {
    EncoderConfig config;
    ParamSet weights;
    ParamSet buffers;

    friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

EncoderParams init_encoder(const EncoderConfig& cfg);

/// Inference pass (normalization per cfg.norm_inference).
Embedding encode_clip(const MelSpectrogram& mel, const EncoderParams& params);

/// One embedding per 1 s segment of the clip, in time order.
std::vector<Embedding> encode_frames(const AudioClip& clip, const EncoderParams& params, const DspConfig& cfg);
std::vector<Embedding> encode_frames(const AudioClip& clip, const EncoderParams& params, const MelFrontend& frontend);

Embedding pool_mean(std::span<const Embedding> embeddings);

/// Activations cached by a training-mode forward pass.
struct EncoderTape {
    struct Map {
        std::size_t c = 0, h = 0, w = 0;
        std::vector<double> v;
    };
    struct NormCache {
        std::vector<double> xhat;
        std::vector<double> mean;
        std::vector<double> var;
        std::vector<double> inv_std;
    };
    struct Block {
        Map input;
        NormCache norm1;
        Map hidden;  // relu(norm1(conv1(input)))
        NormCache norm2;
        Map output;  // relu(input + norm2(conv2(hidden)))
    };
    Map input;
    NormCache stem_norm;
    Map stem_out;
    std::vector<Block> blocks;
    std::vector<double> pooled;
};

/// Training-mode forward pass (instance statistics). Pure in `params`.
Embedding encode_train(const Matrix& mel, const EncoderParams& params, EncoderTape& tape);

/// Accumulates d(loss)/d(weights) into `grads` (layout of params.weights)
/// given d(loss)/d(embedding).
void encode_backward(const EncoderTape& tape, const EncoderParams& params, std::span<const double> d_embedding,
                     ParamSet& grads);

/// Folds the instance statistics recorded in `tape` into the running buffers.
void update_running_stats(EncoderParams& params, const EncoderTape& tape);

}  // namespace xmodal
