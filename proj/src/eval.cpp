#include "xmodal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmodal/errors.hpp"
#include "xmodal/parallel.hpp"

namespace xmodal {

using nlohmann::json;

TrialSummary TrialSummary::of(std::vector<double> values) {
    TrialSummary t;
    const SummaryStats s = summarize(values);
    t.values = std::move(values);
    t.mean = s.mean;
    t.std = s.std;
    return t;
}

namespace {

bool is_unit_metric(const std::string& name) {
    for (const char* prefix : {"acc", "map", "mrr", "f1", "ap"})
        if (name.rfind(prefix, 0) == 0) return true;
    return false;
}

}  // namespace

void EvalReport::validate() const {
    auto check = [](const std::string& name, double v) {
        if (!std::isfinite(v)) throw InvalidInput("metric '" + name + "' is not finite");
        if (is_unit_metric(name) && (v < 0.0 || v > 1.0))
            throw InvalidInput("metric '" + name + "' = " + std::to_string(v) + " outside [0, 1]");
    };
    for (const auto& [k, v] : metrics) check(k, v);
    for (const auto& [cls, m] : per_class)
        for (const auto& [k, v] : m) check(k, v);
    for (const auto& [k, t] : trials)
        for (double v : t.values) check(k, v);
}

json EvalReport::to_json() const {
    json j = json::object();
    j["task"] = task;
    j["metrics"] = metrics;
    j["per_class"] = per_class;
    json tj = json::object();
    for (const auto& [k, t] : trials) tj[k] = {{"values", t.values}, {"mean", t.mean}, {"std", t.std}};
    j["trials"] = std::move(tj);
    j["config_hash"] = config_hash;
    j["details"] = details;
    return j;
}

std::string EvalReport::to_json_string() const { return to_json().dump(2) + "\n"; }

LabelEmbeddingTable::LabelEmbeddingTable(const EmbeddingTable& table) {
    for (std::size_t i = 0; i < table.count(); ++i) add(table.ids()[i], table.embedding(i));
}

void LabelEmbeddingTable::add(const std::string& name, Embedding e) {
    if (!entries_.empty() && e.dim() != dim()) throw InvalidInput("label '" + name + "' has a different dimension");
    if (!entries_.emplace(name, std::move(e)).second) throw DuplicateId("label '" + name + "' appears twice");
}

std::vector<std::string> zero_shot_classify(std::span<const Embedding> audio, const LabelEmbeddingTable& labels) {
    if (labels.size() == 0) throw InvalidInput("label embedding table is empty");
    std::vector<std::string> out;
    out.reserve(audio.size());
    for (std::size_t i = 0; i < audio.size(); ++i) {
        if (audio[i].dim() != labels.dim())
            throw InvalidInput("audio embedding " + std::to_string(i) + " has dimension " +
                               std::to_string(audio[i].dim()) + ", labels have " + std::to_string(labels.dim()));
        const std::string* best = nullptr;
        double best_sim = -2.0;
        for (const auto& [name, e] : labels.entries()) {
            const double sim = cosine_similarity(audio[i], e);
            if (sim > best_sim) {
                best_sim = sim;
                best = &name;
            }
        }
        out.push_back(*best);
    }
    return out;
}

json confusion_json(const ConfusionMatrix& m, std::span<const std::string> classes) {
    return {{"classes", std::vector<std::string>(classes.begin(), classes.end())}, {"counts", m}};
}

EvalReport zero_shot_report(std::span<const Embedding> audio, std::span<const std::string> refs,
                            const LabelEmbeddingTable& labels) {
    if (audio.size() != refs.size()) throw InvalidInput("embedding and label counts differ");
    const auto preds = zero_shot_classify(audio, labels);
    std::vector<std::string> classes;
    for (const auto& [name, e] : labels.entries()) classes.push_back(name);

    EvalReport r;
    r.task = "zero_shot";
    r.metrics["acc"] = accuracy(preds, refs);
    const ConfusionMatrix cm = confusion_matrix(preds, refs, classes);
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const auto support = std::accumulate(cm[c].begin(), cm[c].end(), std::size_t{0});
        if (support == 0) continue;
        r.per_class[classes[c]]["acc"] = static_cast<double>(cm[c][c]) / static_cast<double>(support);
        r.per_class[classes[c]]["support"] = static_cast<double>(support);
    }
    r.details["confusion"] = confusion_json(cm, classes);
    r.details["n_clips"] = audio.size();
    return r;
}

const char* to_string(RetrievalDirection d) {
    return d == RetrievalDirection::AudioToImage ? "audio_to_image" : "image_to_audio";
}

std::vector<std::vector<bool>> retrieval_rankings(std::span<const Embedding> queries, std::span<const Embedding> corpus,
                                                  std::span<const std::string> query_labels,
                                                  std::span<const std::string> corpus_labels,
                                                  const RetrievalOptions& options) {
    if (queries.size() != query_labels.size()) throw InvalidInput("query embedding and label counts differ");
    if (corpus.size() != corpus_labels.size()) throw InvalidInput("corpus embedding and label counts differ");
    if (queries.empty()) throw InvalidInput("no queries");
    if (corpus.empty()) throw InvalidInput("empty corpus");
    const bool use_ids = options.exclude_self && !options.query_ids.empty();
    if (use_ids && (options.query_ids.size() != queries.size() || options.corpus_ids.size() != corpus.size()))
        throw InvalidInput("self-match exclusion needs one id per query and corpus item");
    const std::size_t dim = queries.front().dim();
    for (const auto& e : queries)
        if (e.dim() != dim) throw InvalidInput("queries have mixed dimensions");
    for (const auto& e : corpus)
        if (e.dim() != dim) throw InvalidInput("corpus dimension differs from query dimension");

    std::vector<std::vector<bool>> rankings(queries.size());
    parallel_for(queries.size(), options.threads, [&](std::size_t q) {
        std::vector<std::size_t> items;
        std::vector<double> scores(corpus.size());
        for (std::size_t j = 0; j < corpus.size(); ++j) {
            if (use_ids && options.query_ids[q] == options.corpus_ids[j]) continue;
            scores[j] = cosine_similarity(queries[q], corpus[j]);
            items.push_back(j);
        }
        if (items.empty()) throw InvalidInput("query " + std::to_string(q) + " has no corpus items after exclusion");
        std::stable_sort(items.begin(), items.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        auto& flags = rankings[q];
        flags.reserve(items.size());
        for (std::size_t j : items) flags.push_back(corpus_labels[j] == query_labels[q]);
    });
    return rankings;
}

EvalReport cross_modal_retrieval(std::span<const Embedding> queries, std::span<const Embedding> corpus,
                                 std::span<const std::string> query_labels, std::span<const std::string> corpus_labels,
                                 const RetrievalOptions& options) {
    const auto rankings = retrieval_rankings(queries, corpus, query_labels, corpus_labels, options);
    EvalReport r;
    r.task = "cross_modal_retrieval";
    r.metrics["mrr"] = mean_reciprocal_rank(rankings);
    r.details["direction"] = to_string(options.direction);
    r.details["aggregation"] = "micro";
    r.details["exclude_self"] = options.exclude_self && !options.query_ids.empty();
    r.details["n_queries"] = queries.size();
    r.details["n_corpus"] = corpus.size();
    return r;
}

}  // namespace xmodal
