#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xmodal/projection.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Learnable logit scale s = exp(log_scale), kept within [1/100, 100].
struct Temperature {
    static constexpr double kMinScale = 0.01;
    static constexpr double kMaxScale = 100.0;

    double log_scale = std::log(1.0 / 0.07);
    bool learnable = true;

    double scale() const { return std::exp(log_scale); }
    void clamp();

    static Temperature fixed(double scale);

    friend bool operator==(const Temperature&, const Temperature&) = default;
};

enum class LossDirection {
    Symmetric,  // mean of row-wise and column-wise cross-entropy
    RowsOnly,   // A_i against all B_j
};

/// Contrastive loss with in-batch negatives over S = s * cos(A_i, B_j).
/// Rows are L2-normalized internally; a zero row raises InvalidInput.
double info_nce(const Matrix& a, const Matrix& b, const Temperature& temp,
                LossDirection direction = LossDirection::Symmetric);

struct InfoNceGrad {
    double loss = 0.0;
    Matrix d_a;
    Matrix d_b;
    double d_log_scale = 0.0;
};

InfoNceGrad info_nce_grad(const Matrix& a, const Matrix& b, const Temperature& temp,
                          LossDirection direction = LossDirection::Symmetric);

struct PairBatch {
    Matrix audio;
    Matrix teacher;
    std::vector<std::string> clip_ids;

    void validate() const;
};

/// CX loss: info_nce(f(teacher), audio) + info_nce(teacher, g(audio)).
double cx_loss(const PairBatch& batch, const ProjectionMLP& f, const ProjectionMLP& g, const Temperature& temp,
               LossDirection direction = LossDirection::Symmetric);

/// Gradients to every trainable input of the CX loss. The teacher side is
/// treated as a constant: no gradient is produced for it.
struct CxGrad {
    double loss = 0.0;
    Matrix d_audio;
    ParamSet d_f;
    ParamSet d_g;
    double d_log_scale = 0.0;
};

CxGrad cx_loss_grad(const PairBatch& batch, const ProjectionMLP& f, const ProjectionMLP& g, const Temperature& temp,
                    LossDirection direction = LossDirection::Symmetric);

}  // namespace xmodal
