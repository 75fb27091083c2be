#include "xmodal/segments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "xmodal/errors.hpp"
#include "xmodal/parallel.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

double SegmentCounts::f1() const {
    const std::size_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

using Interval = std::pair<long long, long long>;  // [first bin, end bin)
using Key = std::pair<std::string, std::string>;   // (clip, label)

// Tolerance for grid-aligned times that land a rounding error off a bin edge.
constexpr double kEdgeTol = 1e-9;

Interval to_bins(const SegmentAnnotation& s, double resolution) {
    const auto first = static_cast<long long>(std::floor(s.onset / resolution + kEdgeTol));
    auto end = static_cast<long long>(std::ceil(s.offset / resolution - kEdgeTol));
    if (end <= first) end = first + 1;
    return {first, end};
}

std::map<Key, std::vector<Interval>> merged_bins(std::span<const SegmentAnnotation> segs, double resolution) {
    std::map<Key, std::vector<Interval>> raw;
    for (const auto& s : segs) {
        if (!(s.onset < s.offset)) throw InvalidInput("segment with onset >= offset in clip '" + s.clip_id + "'");
        raw[{s.clip_id, s.label}].push_back(to_bins(s, resolution));
    }
    for (auto& [key, v] : raw) {
        std::sort(v.begin(), v.end());
        std::vector<Interval> merged;
        for (const auto& iv : v) {
            if (!merged.empty() && iv.first <= merged.back().second)
                merged.back().second = std::max(merged.back().second, iv.second);
            else
                merged.push_back(iv);
        }
        v = std::move(merged);
    }
    return raw;
}

long long total_bins(const std::vector<Interval>& v) {
    long long n = 0;
    for (const auto& [a, b] : v) n += b - a;
    return n;
}

long long overlap_bins(const std::vector<Interval>& x, const std::vector<Interval>& y) {
    long long n = 0;
    std::size_t i = 0, j = 0;
    while (i < x.size() && j < y.size()) {
        const long long lo = std::max(x[i].first, y[j].first);
        const long long hi = std::min(x[i].second, y[j].second);
        if (hi > lo) n += hi - lo;
        if (x[i].second < y[j].second) ++i;
        else ++j;
    }
    return n;
}

}  // namespace

SegmentCounts segment_counts(std::span<const SegmentAnnotation> reference, std::span<const SegmentAnnotation> predicted,
                             double resolution) {
    if (!(resolution > 0.0)) throw InvalidInput("segment resolution must be positive");
    const auto ref = merged_bins(reference, resolution);
    const auto pred = merged_bins(predicted, resolution);
    static const std::vector<Interval> kNone;
    std::set<Key> keys;
    for (const auto& [k, v] : ref) keys.insert(k);
    for (const auto& [k, v] : pred) keys.insert(k);
    SegmentCounts c;
    for (const auto& k : keys) {
        const auto ri = ref.find(k);
        const auto pi = pred.find(k);
        const auto& r = ri == ref.end() ? kNone : ri->second;
        const auto& p = pi == pred.end() ? kNone : pi->second;
        const long long tp = overlap_bins(r, p);
        c.tp += static_cast<std::size_t>(tp);
        c.fn += static_cast<std::size_t>(total_bins(r) - tp);
        c.fp += static_cast<std::size_t>(total_bins(p) - tp);
    }
    return c;
}

EvalReport segment_f1(std::span<const SegmentAnnotation> reference, std::span<const SegmentAnnotation> predicted,
                      double resolution) {
    const SegmentCounts c = segment_counts(reference, predicted, resolution);
    EvalReport r;
    r.task = "segment_f1";
    r.metrics["f1"] = c.f1();
    r.details["tp"] = c.tp;
    r.details["fp"] = c.fp;
    r.details["fn"] = c.fn;
    r.details["resolution"] = resolution;
    return r;
}

std::pair<std::size_t, std::size_t> overlapping_frames(double onset, double offset, std::size_t n_frames,
                                                       double frame_seconds) {
    if (n_frames == 0) throw InvalidInput("clip has no frames");
    const double a = onset / frame_seconds, b = offset / frame_seconds;
    auto first = static_cast<long long>(std::floor(a + kEdgeTol));
    auto last = static_cast<long long>(std::ceil(b - kEdgeTol)) - 1;
    const auto max_index = static_cast<long long>(n_frames) - 1;
    first = std::clamp(first, 0LL, max_index);
    last = std::clamp(std::max(last, first), 0LL, max_index);
    return {static_cast<std::size_t>(first), static_cast<std::size_t>(last)};
}

namespace {

// Cosine of every searchable frame to one query; NaN marks excluded frames.
struct QueryScores {
    std::vector<std::string> clips;
    std::vector<std::vector<double>> sims;
};

std::vector<std::string> search_clips(const SegmentCorpus& corpus, std::span<const std::string> clips) {
    if (clips.empty()) {
        std::vector<std::string> all;
        for (const auto& [id, f] : corpus.frames) all.push_back(id);
        return all;
    }
    for (const auto& id : clips)
        if (!corpus.frames.count(id)) throw InvalidInput("clip '" + id + "' has no frame embeddings");
    return {clips.begin(), clips.end()};
}

QueryScores score_query(const SegmentAnnotation& query, const SegmentCorpus& corpus,
                        const std::vector<std::string>& clips) {
    const auto it = corpus.frames.find(query.clip_id);
    if (it == corpus.frames.end()) throw InvalidInput("query clip '" + query.clip_id + "' has no frame embeddings");
    const auto& own = it->second;
    const auto [first, last] = overlapping_frames(query.onset, query.offset, own.size(), corpus.frame_seconds);
    const Embedding q = pool_mean(std::span<const Embedding>(own.data() + first, last - first + 1));

    QueryScores out;
    out.clips = clips;
    for (const auto& id : clips) {
        const auto& frames = corpus.frames.at(id);
        std::vector<double> s(frames.size());
        for (std::size_t k = 0; k < frames.size(); ++k) {
            if (id == query.clip_id && k >= first && k <= last) s[k] = std::numeric_limits<double>::quiet_NaN();
            else s[k] = cosine_similarity(q, frames[k]);
        }
        out.sims.push_back(std::move(s));
    }
    return out;
}

std::vector<SegmentAnnotation> predictions(const QueryScores& scores, const SegmentCorpus& corpus,
                                           const std::string& label, double threshold) {
    std::vector<SegmentAnnotation> out;
    for (std::size_t c = 0; c < scores.clips.size(); ++c) {
        const auto& id = scores.clips[c];
        const auto& s = scores.sims[c];
        const auto dur_it = corpus.durations.find(id);
        const double duration = dur_it != corpus.durations.end()
                                    ? dur_it->second
                                    : static_cast<double>(s.size()) * corpus.frame_seconds;
        std::size_t k = 0;
        while (k < s.size()) {
            if (!(s[k] >= threshold)) {  // NaN (excluded) is never active
                ++k;
                continue;
            }
            const std::size_t start = k;
            while (k < s.size() && s[k] >= threshold) ++k;
            const double onset = static_cast<double>(start) * corpus.frame_seconds;
            const double offset = std::min(static_cast<double>(k) * corpus.frame_seconds, duration);
            if (onset < offset) out.push_back(SegmentAnnotation{id, onset, offset, label});
        }
    }
    return out;
}

std::vector<SegmentAnnotation> query_reference(const SegmentAnnotation& query,
                                               std::span<const SegmentAnnotation> annotations,
                                               const std::set<std::string>& clip_set) {
    std::vector<SegmentAnnotation> ref;
    bool skipped_self = false;
    for (const auto& a : annotations) {
        if (a.label != query.label || !clip_set.count(a.clip_id)) continue;
        if (!skipped_self && a == query) {
            skipped_self = true;
            continue;
        }
        ref.push_back(a);
    }
    return ref;
}

}  // namespace

std::vector<SegmentAnnotation> segment_retrieval(const SegmentAnnotation& query, const SegmentCorpus& corpus,
                                                 double threshold, std::span<const std::string> clips) {
    const auto ids = search_clips(corpus, clips);
    return predictions(score_query(query, corpus, ids), corpus, query.label, threshold);
}

SegmentCounts evaluate_segment_queries(std::span<const SegmentAnnotation> queries,
                                       std::span<const SegmentAnnotation> annotations, const SegmentCorpus& corpus,
                                       double threshold, std::span<const std::string> clips, double resolution) {
    const auto ids = search_clips(corpus, clips);
    const std::set<std::string> clip_set(ids.begin(), ids.end());
    SegmentCounts total;
    for (const auto& q : queries) {
        const auto pred = predictions(score_query(q, corpus, ids), corpus, q.label, threshold);
        const auto ref = query_reference(q, annotations, clip_set);
        total += segment_counts(ref, pred, resolution);
    }
    return total;
}

std::vector<double> default_threshold_grid() {
    std::vector<double> grid;
    for (int i = -20; i <= 20; ++i) grid.push_back(static_cast<double>(i) * 0.05);
    return grid;
}

ThresholdSelection select_threshold_cv(std::span<const SegmentAnnotation> annotations, const SegmentCorpus& corpus,
                                       int folds, std::uint64_t seed, std::vector<double> grid, unsigned threads,
                                       double resolution) {
    if (folds < 1) throw InvalidInput("folds must be positive");
    if (grid.empty()) throw InvalidInput("threshold grid is empty");
    std::sort(grid.begin(), grid.end());

    std::vector<std::string> clips;
    std::set<std::string> seen;
    for (const auto& a : annotations)
        if (seen.insert(a.clip_id).second) clips.push_back(a.clip_id);
    if (clips.size() < static_cast<std::size_t>(folds))
        throw InvalidInput("need at least " + std::to_string(folds) + " annotated clips, have " +
                           std::to_string(clips.size()));

    Rng rng = seeded_rng(seed, "segment-folds");
    rng.shuffle(clips);
    ThresholdSelection sel;
    sel.grid = grid;
    sel.folds.resize(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < clips.size(); ++i) sel.folds[i % sel.folds.size()].push_back(clips[i]);

    sel.fold_f1.assign(sel.folds.size(), std::vector<double>(grid.size(), 0.0));
    parallel_for(sel.folds.size(), threads, [&](std::size_t f) {
        const auto& ids = sel.folds[f];
        const std::set<std::string> clip_set(ids.begin(), ids.end());
        std::vector<const SegmentAnnotation*> queries;
        for (const auto& a : annotations)
            if (clip_set.count(a.clip_id)) queries.push_back(&a);
        std::vector<QueryScores> scores;
        std::vector<std::vector<SegmentAnnotation>> refs;
        for (const auto* q : queries) {
            scores.push_back(score_query(*q, corpus, ids));
            refs.push_back(query_reference(*q, annotations, clip_set));
        }
        for (std::size_t t = 0; t < grid.size(); ++t) {
            SegmentCounts c;
            for (std::size_t i = 0; i < queries.size(); ++i)
                c += segment_counts(refs[i], predictions(scores[i], corpus, queries[i]->label, grid[t]), resolution);
            sel.fold_f1[f][t] = c.f1();
        }
    });

    auto argmax = [&](auto&& value_at) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < grid.size(); ++t)
            if (value_at(t) > value_at(best)) best = t;
        return best;
    };
    sel.mean_f1.assign(grid.size(), 0.0);
    for (std::size_t t = 0; t < grid.size(); ++t) {
        for (const auto& row : sel.fold_f1) sel.mean_f1[t] += row[t];
        sel.mean_f1[t] /= static_cast<double>(sel.folds.size());
    }
    sel.threshold = grid[argmax([&](std::size_t t) { return sel.mean_f1[t]; })];

    if (sel.folds.size() == 1) {
        sel.held_out_f1 = sel.fold_f1[0][argmax([&](std::size_t t) { return sel.fold_f1[0][t]; })];
        return sel;
    }
    double held = 0.0;
    for (std::size_t k = 0; k < sel.folds.size(); ++k) {
        const std::size_t t = argmax([&](std::size_t g) {
            double s = 0.0;
            for (std::size_t f = 0; f < sel.folds.size(); ++f)
                if (f != k) s += sel.fold_f1[f][g];
            return s;
        });
        held += sel.fold_f1[k][t];
    }
    sel.held_out_f1 = held / static_cast<double>(sel.folds.size());
    return sel;
}

}  // namespace xmodal
