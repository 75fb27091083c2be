#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/contrastive.hpp"
#include "xmodal/encoder.hpp"
#include "xmodal/projection.hpp"

namespace xmodal {

/// Everything the distillation objective trains: the audio encoder, the
/// teacher-side projection f, the audio-side projection g, and the logit
/// scale. f and g have separate parameters.
struct DistillModel {
    EncoderParams encoder;
    ProjectionMLP f;
    ProjectionMLP g;
    Temperature temperature;

    friend bool operator==(const DistillModel&, const DistillModel&) = default;
};

DistillModel init_model(const EncoderConfig& encoder, const TrainConfig& train);

/// Zeroed gradient buffers named "encoder.*", "f.*", "g.*" and
/// "temperature.log_scale".
ParamSet gradient_layout(const DistillModel& model);

struct AdamState {
    std::uint64_t step = 0;
    ParamSet m;
    ParamSet v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState init_adam(const DistillModel& model);

/// One bias-corrected Adam update of every trainable tensor. A fixed
/// temperature is left untouched; a learnable one is clamped afterwards.
void adam_update(DistillModel& model, const ParamSet& grads, AdamState& state, double learning_rate,
                 const TrainConfig& cfg);

}  // namespace xmodal
