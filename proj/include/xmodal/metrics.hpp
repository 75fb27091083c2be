#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/encoder.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// dot(a,b) / (|a||b|), clamped to [-1, 1]. Zero vectors raise InvalidInput.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const Embedding& a, const Embedding& b);

/// Fraction of positions where preds[i] == refs[i].
double accuracy(std::span<const std::string> preds, std::span<const std::string> refs);
double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> refs);

/// Mean over queries of 1/rank of the first relevant item (0 when a query
/// has none). Each inner vector is one query's relevance in ranked order.
double mean_reciprocal_rank(const std::vector<std::vector<bool>>& rankings);

/// Average precision of one score column; items ranked by descending score
/// with ties broken by index. Empty when there are no positives.
std::optional<double> average_precision(std::span<const double> scores, const std::vector<bool>& relevant);

/// Per-class AP over the columns of `scores` [N x C] against binary `refs`.
std::vector<std::optional<double>> per_class_average_precision(const Matrix& scores, const Matrix& refs);

/// Unweighted mean of the per-class APs of classes with at least one
/// positive; all-empty input raises InvalidInput.
double mean_average_precision(const Matrix& scores, const Matrix& refs);

/// counts[i][j] = references of class i predicted as class j.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;
ConfusionMatrix confusion_matrix(std::span<const std::string> preds, std::span<const std::string> refs,
                                 std::span<const std::string> classes);

/// Mean and sample standard deviation (0 for fewer than two values).
struct SummaryStats {
    double mean = 0.0;
    double std = 0.0;
};
SummaryStats summarize(std::span<const double> values);

}  // namespace xmodal
