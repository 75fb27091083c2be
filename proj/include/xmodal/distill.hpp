#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/dsp.hpp"
#include "xmodal/embeddings.hpp"
#include "xmodal/manifest.hpp"
#include "xmodal/model.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

/// Mean of per-frame teacher vectors (e.g. 150 video frames of a 5 s clip).
Embedding pool_teacher_frames(std::span<const Embedding> frames);

/// Contiguous crop of round(crop_seconds * sample_rate) samples. The offset
/// is uniform over [0, len - crop]; shorter clips start at 0 and are
/// zero-padded at the end. `offset_out` receives the chosen offset.
AudioClip sample_crop(const AudioClip& clip, double crop_seconds, Rng& rng, std::size_t* offset_out = nullptr);

/// Crop at a fixed offset, zero-padded when the clip runs out.
AudioClip crop_at(const AudioClip& clip, std::size_t offset, std::size_t length);

/// Assembles the audio/teacher pair matrices by running the encoder in
/// inference mode over `clips`.
PairBatch make_pair_batch(std::span<const AudioClip> clips, const EncoderParams& encoder, const MelFrontend& frontend,
                          const TeacherStore& teacher, unsigned threads = 1);

/// One Adam update on every trainable tensor from the CX loss of `clips`.
/// Returns the pre-update loss. A single-clip batch has zero loss and is
/// left untouched. Teacher ids are resolved before anything is modified.
double distill_step(std::span<const AudioClip> clips, DistillModel& model, AdamState& adam,
                    const TeacherStore& teacher, const MelFrontend& frontend, const TrainConfig& cfg,
                    double learning_rate, unsigned threads = 1);

struct EpochRecord {
    int epoch = 0;  // 0 is the untrained model
    std::optional<double> train_loss;  // absent for epoch 0
    double valid_loss = 0.0;
    double learning_rate = 0.0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Complete resumable training state; this is what a checkpoint stores.
struct TrainState {
    RunConfig config;  // resolved
    DistillModel model;
    AdamState adam;
    int epoch = 0;  // completed epochs
    double learning_rate = 0.0;
    double best_valid_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_without_improvement = 0;
    int plateau_counter = 0;
    bool stopped_early = false;
    std::string shuffle_rng;
    std::string crop_rng;
    std::vector<EpochRecord> history;

    friend bool operator==(const TrainState&, const TrainState&) = default;
};

TrainState init_train_state(const RunConfig& config);

struct TrainOptions {
    unsigned threads = 1;
    /// Continue from this state instead of starting fresh.
    const TrainState* resume = nullptr;
    /// Best-so-far snapshot matching `resume`; needed when resume's best epoch
    /// is not its current epoch.
    const TrainState* resume_best = nullptr;
    /// Called after the initial validation and after every epoch.
    std::function<void(const TrainState&)> on_epoch;
};

struct TrainResult {
    TrainState best;
    TrainState last;
};

/// Mean CX loss over batch_size chunks of `clips` (crop at offset 0,
/// inference-mode encoder), weighted by batch size. Single-clip remainder
/// batches are skipped.
double validation_loss(std::span<const AudioClip> clips, const DistillModel& model, const TeacherStore& teacher,
                       const MelFrontend& frontend, const RunConfig& config, unsigned threads = 1);

/// Epoch loop with shuffled batches, per-epoch validation, reduce-on-plateau
/// and early stopping. `best` holds the lowest-validation-loss state.
TrainResult train(const RunConfig& config, std::span<const AudioClip> train_clips,
                  std::span<const AudioClip> valid_clips, const TeacherStore& teacher,
                  const TrainOptions& options = {});

TrainResult train(const RunConfig& config, const DatasetManifest& train_manifest,
                  const DatasetManifest& valid_manifest, const TeacherStore& teacher,
                  const TrainOptions& options = {});

/// Loads every clip of the manifest, checking sample rates.
std::vector<AudioClip> load_clips(const DatasetManifest& manifest, unsigned threads = 1);

}  // namespace xmodal
