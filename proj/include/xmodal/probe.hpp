#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xmodal/config.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Per-sample class indices; one entry per sample for multi-class, any
/// number (including none) for multi-label.
using LabelSets = std::vector<std::vector<std::size_t>>;

/// Two-layer MLP on standardized frozen embeddings.
struct ProbeModel {
    ProbeTask task = ProbeTask::MultiClass;
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t n_classes = 0;
    std::vector<double> feature_mean;
    std::vector<double> feature_scale;  // 1 / std, 1 for constant features
    ParamSet params;                    // l1.weight [h x in], l1.bias, l2.weight [C x h], l2.bias

    friend bool operator==(const ProbeModel&, const ProbeModel&) = default;
};

/// Trains one probe with Adam on softmax cross-entropy (multi-class) or
/// per-class sigmoid BCE (multi-label). Initialization and minibatch order
/// come from the "probe-trial-<trial>" stream of cfg.seed.
ProbeModel train_probe(const Matrix& x, const LabelSets& labels, std::size_t n_classes, const ProbeConfig& cfg,
                       int trial = 0);

/// Class probabilities [N x C]: softmax rows or independent sigmoids.
Matrix probe_scores(const ProbeModel& model, const Matrix& x);
std::vector<std::size_t> probe_predict(const ProbeModel& model, const Matrix& x);

/// Trains cfg.n_trials probes (trial seeds 0..n-1) and evaluates each on the
/// evaluation split: ACC for multi-class, mAP for multi-label.
EvalReport evaluate_probe(const Matrix& train_x, const LabelSets& train_labels, const Matrix& eval_x,
                          const LabelSets& eval_labels, std::span<const std::string> classes, const ProbeConfig& cfg,
                          unsigned threads = 1);

/// Per class c with n_c samples (stratum = first label) keeps
/// ceil(percentage * n_c / 100) samples drawn with `rng`. Returns sorted
/// indices. Classes without samples raise InvalidInput.
std::vector<std::size_t> stratified_subsample(const LabelSets& labels, std::size_t n_classes, double percentage,
                                              Rng& rng);

std::vector<double> default_sweep_percentages();

/// One evaluate_probe per percentage on a stratified subsample (stream
/// "subsample-<percentage>"). Metric per point is the trial mean.
EvalReport data_efficiency_sweep(const Matrix& train_x, const LabelSets& train_labels, const Matrix& eval_x,
                                 const LabelSets& eval_labels, std::span<const std::string> classes,
                                 const ProbeConfig& cfg, std::vector<double> percentages = default_sweep_percentages(),
                                 unsigned threads = 1);

/// "percentage,mean,std" header plus one row per sweep point.
std::string sweep_csv(const EvalReport& sweep);

}  // namespace xmodal
