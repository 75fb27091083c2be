#include "xmodal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "xmodal/errors.hpp"

namespace xmodal {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw InvalidInput("cosine of vectors with dimensions " + std::to_string(a.size()) + " and " +
                           std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    if (!(na > 0.0) || !(nb > 0.0)) throw InvalidInput("cosine similarity of a zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const Embedding& a, const Embedding& b) { return cosine_similarity(a.values, b.values); }

namespace {

template <typename T>
double accuracy_impl(std::span<const T> preds, std::span<const T> refs) {
    if (preds.size() != refs.size()) throw InvalidInput("predictions and references differ in length");
    if (preds.empty()) throw InvalidInput("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == refs[i];
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

double accuracy(std::span<const std::string> preds, std::span<const std::string> refs) {
    return accuracy_impl(preds, refs);
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> refs) {
    return accuracy_impl(preds, refs);
}

double mean_reciprocal_rank(const std::vector<std::vector<bool>>& rankings) {
    if (rankings.empty()) throw InvalidInput("MRR over an empty query set");
    double sum = 0.0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        const auto& r = rankings[q];
        if (r.empty()) throw InvalidInput("query " + std::to_string(q) + " has an empty corpus");
        const auto it = std::find(r.begin(), r.end(), true);
        if (it != r.end()) sum += 1.0 / static_cast<double>(std::distance(r.begin(), it) + 1);
    }
    return sum / static_cast<double>(rankings.size());
}

std::optional<double> average_precision(std::span<const double> scores, const std::vector<bool>& relevant) {
    if (scores.size() != relevant.size()) throw InvalidInput("scores and relevance differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (!relevant[order[r]]) continue;
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    if (hits == 0) return std::nullopt;
    return sum / static_cast<double>(hits);
}

std::vector<std::optional<double>> per_class_average_precision(const Matrix& scores, const Matrix& refs) {
    if (scores.rows() != refs.rows() || scores.cols() != refs.cols())
        throw InvalidInput("score and reference matrices differ in shape");
    std::vector<std::optional<double>> out(scores.cols());
    std::vector<double> col(scores.rows());
    std::vector<bool> rel(scores.rows());
    for (std::size_t c = 0; c < scores.cols(); ++c) {
        for (std::size_t i = 0; i < scores.rows(); ++i) {
            col[i] = scores(i, c);
            rel[i] = refs(i, c) != 0.0;
        }
        out[c] = average_precision(col, rel);
    }
    return out;
}

double mean_average_precision(const Matrix& scores, const Matrix& refs) {
    const auto aps = per_class_average_precision(scores, refs);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& ap : aps) {
        if (!ap) continue;
        sum += *ap;
        ++n;
    }
    if (n == 0) throw InvalidInput("mAP undefined: no class has a positive");
    return sum / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(std::span<const std::string> preds, std::span<const std::string> refs,
                                 std::span<const std::string> classes) {
    if (preds.size() != refs.size()) throw InvalidInput("predictions and references differ in length");
    std::map<std::string, std::size_t> index;
    for (std::size_t c = 0; c < classes.size(); ++c) index.emplace(classes[c], c);
    auto lookup = [&](const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw InvalidInput("unknown class '" + name + "'");
        return it->second;
    };
    ConfusionMatrix m(classes.size(), std::vector<std::size_t>(classes.size(), 0));
    for (std::size_t i = 0; i < preds.size(); ++i) m[lookup(refs[i])][lookup(preds[i])] += 1;
    return m;
}

SummaryStats summarize(std::span<const double> values) {
    SummaryStats s;
    if (values.empty()) return s;
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

}  // namespace xmodal
