#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmodal/embeddings.hpp"
#include "xmodal/encoder.hpp"
#include "xmodal/metrics.hpp"

namespace xmodal {

struct TrialSummary {
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0;

    static TrialSummary of(std::vector<double> values);
};

/// Result of one evaluation. Serialized as key-sorted JSON.
struct EvalReport {
    std::string task;
    std::map<std::string, double> metrics;
    std::map<std::string, std::map<std::string, double>> per_class;
    std::map<std::string, TrialSummary> trials;
    std::string config_hash;
    nlohmann::json details = nlohmann::json::object();

    /// Checks that ACC/mAP/MRR/F1-style metrics lie in [0, 1].
    void validate() const;
    nlohmann::json to_json() const;
    std::string to_json_string() const;
};

/// Class name -> label embedding; iteration is in lexicographic name order.
class LabelEmbeddingTable {
public:
    LabelEmbeddingTable() = default;
    explicit LabelEmbeddingTable(const EmbeddingTable& table);

    void add(const std::string& name, Embedding e);
    std::size_t size() const noexcept { return entries_.size(); }
    std::size_t dim() const noexcept { return entries_.empty() ? 0 : entries_.begin()->second.dim(); }
    const std::map<std::string, Embedding>& entries() const noexcept { return entries_; }

private:
    std::map<std::string, Embedding> entries_;
};

/// Per clip, the label with the highest cosine; ties go to the
/// lexicographically smallest name.
std::vector<std::string> zero_shot_classify(std::span<const Embedding> audio, const LabelEmbeddingTable& labels);

EvalReport zero_shot_report(std::span<const Embedding> audio, std::span<const std::string> refs,
                            const LabelEmbeddingTable& labels);

enum class RetrievalDirection { AudioToImage, ImageToAudio };
const char* to_string(RetrievalDirection d);

struct RetrievalOptions {
    RetrievalDirection direction = RetrievalDirection::AudioToImage;
    /// Drop corpus items whose id equals the query id. Needs both id lists.
    bool exclude_self = true;
    std::vector<std::string> query_ids;
    std::vector<std::string> corpus_ids;
    unsigned threads = 1;
};

/// Relevance flags of the corpus ranked by descending cosine (stable in
/// corpus index) for each query.
std::vector<std::vector<bool>> retrieval_rankings(std::span<const Embedding> queries, std::span<const Embedding> corpus,
                                                  std::span<const std::string> query_labels,
                                                  std::span<const std::string> corpus_labels,
                                                  const RetrievalOptions& options);

/// Micro MRR (mean over queries) with relevance = equal labels.
EvalReport cross_modal_retrieval(std::span<const Embedding> queries, std::span<const Embedding> corpus,
                                 std::span<const std::string> query_labels, std::span<const std::string> corpus_labels,
                                 const RetrievalOptions& options = {});

nlohmann::json confusion_json(const ConfusionMatrix& m, std::span<const std::string> classes);

}  // namespace xmodal
