#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "xmodal/contrastive.hpp"
#include "xmodal/dsp.hpp"
#include "xmodal/encoder.hpp"

namespace xmodal {

enum class ProjectionInit {
    Identity,  // exact identity MLPs (hidden = 2 * embed_dim)
    Random,    // fan-in uniform, hidden = projection_hidden or embed_dim
};

struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int plateau_patience = 5;
    double plateau_factor = 0.5;
    int early_stop_patience = 10;
    int max_epochs = 100;
    double crop_seconds = 5.0;
    std::uint64_t seed = 0;
    LossDirection loss_direction = LossDirection::Symmetric;
    bool learnable_temperature = true;
    double initial_logit_scale = 1.0 / 0.07;
    ProjectionInit projection_init = ProjectionInit::Identity;
    int projection_hidden = 0;  // 0 -> embed_dim (random init only)
    /// Learning-rate multiplier for the f and g projections.
    double projection_lr_scale = 0.01;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

enum class ProbeTask { MultiClass, MultiLabel };

struct ProbeConfig {
    int hidden_dim = 512;
    ProbeTask task = ProbeTask::MultiClass;
    double lr = 1e-3;
    int max_epochs = 100;
    int batch_size = 64;
    std::uint64_t seed = 0;
    int n_trials = 3;

    void validate() const;
    friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

/// Every tunable in one place. `seed` is the global seed; resolved() copies
/// it into each component so that sub-configs stay self-contained.
struct RunConfig {
    DspConfig dsp;
    EncoderConfig encoder;
    TrainConfig train;
    ProbeConfig probe;
    std::uint64_t seed = 0;

    RunConfig resolved() const;
    void validate() const;

    /// Key-sorted compact JSON of every field.
    std::string canonical_json() const;
    /// FNV-1a 64 of canonical_json(), hex encoded.
    std::string content_hash() const;

    /// Applies one "section.key" assignment; throws InvalidConfig on unknown
    /// keys or malformed values.
    void set(const std::string& key, const std::string& value);

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Parses "key = value" lines ('#' comments, blank lines ignored).
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Writes every field in the same key-value format, sorted by key.
std::string format_run_config(const RunConfig& cfg);

const char* to_string(LossDirection d);
const char* to_string(ProjectionInit p);
const char* to_string(ProbeTask t);
const char* to_string(NormInference n);

}  // namespace xmodal
