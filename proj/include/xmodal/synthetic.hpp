#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xmodal/dsp.hpp"
#include "xmodal/embeddings.hpp"
#include "xmodal/manifest.hpp"

namespace xmodal {

struct SyntheticConfig {
    int n_clips = 64;
    int n_classes = 4;
    double clip_seconds = 2.0;
    int sample_rate = 16000;
    int dim = 512;
    /// Norm of the isotropic noise added to a unit class direction.
    double teacher_noise = 0.5;
    /// Extra multi-event clips with onset/offset annotations.
    int event_clips = 0;
    double event_clip_seconds = 6.0;
    int n_folds = 5;
    std::uint64_t seed = 0;
};

/// Everything gen-synthetic produces, in memory. Audio samples are already
/// quantized to 16-bit so they equal what the written WAVs read back as.
struct SyntheticDataset {
    DatasetManifest manifest;
    std::vector<AudioClip> clips;  // record order
    EmbeddingTable teacher;        // one row per clip
    EmbeddingTable labels;         // class centroids of the teacher rows
    std::vector<std::vector<double>> class_directions;
};

/// Per class: three pure tones in class-exclusive frequency slots, an
/// amplitude-modulation rate and a coloured noise floor, jittered per clip;
/// a random unit teacher direction plus noise. Splits are stratified
/// 70/15/15 per class.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

/// Writes audio/<clip>.wav, manifest.jsonl, {train,valid,test}.jsonl,
/// teacher.xmeb and labels.xmeb. A non-empty directory raises Refuse unless
/// `force` is set.
void write_synthetic(const SyntheticDataset& data, const std::filesystem::path& out_dir, bool force);

}  // namespace xmodal
