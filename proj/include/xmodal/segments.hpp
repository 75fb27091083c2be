#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmodal/encoder.hpp"
#include "xmodal/eval.hpp"
#include "xmodal/manifest.hpp"

namespace xmodal {

struct SegmentCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    double f1() const;
    SegmentCounts& operator+=(const SegmentCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const SegmentCounts&, const SegmentCounts&) = default;
};

/// Bin k of a clip covers [k*res, (k+1)*res). A segment activates every bin
/// it overlaps; same-label segments merge. Counts are micro-summed over
/// (clip, label, bin). F1 is 0 when no bin is active on either side.
SegmentCounts segment_counts(std::span<const SegmentAnnotation> reference, std::span<const SegmentAnnotation> predicted,
                             double resolution = 0.1);

EvalReport segment_f1(std::span<const SegmentAnnotation> reference, std::span<const SegmentAnnotation> predicted,
                      double resolution = 0.1);

/// Frame-level embeddings at a 1 s hop, keyed by clip id, plus clip
/// durations used to cap predicted segments.
struct SegmentCorpus {
    std::map<std::string, std::vector<Embedding>> frames;
    std::map<std::string, double> durations;
    double frame_seconds = 1.0;
};

/// Frames [first, last] overlapping [onset, offset), clamped to `n_frames`.
std::pair<std::size_t, std::size_t> overlapping_frames(double onset, double offset, std::size_t n_frames,
                                                       double frame_seconds = 1.0);

/// Query embedding = mean of the query clip's frames overlapping the query.
/// Every other frame of every clip with cosine >= threshold is active; runs
/// of active frames become predicted segments with the query's label.
/// `clips` restricts the searched clips (all when empty).
std::vector<SegmentAnnotation> segment_retrieval(const SegmentAnnotation& query, const SegmentCorpus& corpus,
                                                 double threshold, std::span<const std::string> clips = {});

/// Runs every annotation of `queries` as a query against the clips in
/// `clips` and micro-sums bin counts against the same-label annotations of
/// those clips, excluding the query itself.
SegmentCounts evaluate_segment_queries(std::span<const SegmentAnnotation> queries,
                                       std::span<const SegmentAnnotation> annotations, const SegmentCorpus& corpus,
                                       double threshold, std::span<const std::string> clips,
                                       double resolution = 0.1);

/// {-1.0, -0.95, ..., 1.0}.
std::vector<double> default_threshold_grid();

struct ThresholdSelection {
    double threshold = 0.0;
    std::vector<double> grid;
    std::vector<double> mean_f1;                // per grid point, averaged over folds
    std::vector<std::vector<double>> fold_f1;   // [fold][grid point]
    std::vector<std::vector<std::string>> folds;
    /// Mean over folds of the F1 on fold k at the threshold chosen from the
    /// other folds.
    double held_out_f1 = 0.0;
};

/// Clips are shuffled with the "segment-folds" stream of `seed` and dealt
/// round-robin into `folds` groups; each fold is evaluated on its own clips.
/// Returns the grid argmax of the mean fold F1, ties going to the lowest
/// threshold.
ThresholdSelection select_threshold_cv(std::span<const SegmentAnnotation> annotations, const SegmentCorpus& corpus,
                                       int folds = 5, std::uint64_t seed = 0,
                                       std::vector<double> grid = default_threshold_grid(), unsigned threads = 1,
                                       double resolution = 0.1);

}  // namespace xmodal
