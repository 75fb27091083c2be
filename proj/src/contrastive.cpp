#include "xmodal/contrastive.hpp"

#include <algorithm>

#include "xmodal/errors.hpp"

namespace xmodal {

void Temperature::clamp() {
    log_scale = std::clamp(log_scale, std::log(kMinScale), std::log(kMaxScale));
}

Temperature Temperature::fixed(double scale) {
    if (!(scale > 0.0)) throw InvalidConfig("logit scale must be positive");
    Temperature t;
    t.log_scale = std::log(scale);
    t.learnable = false;
    return t;
}

void PairBatch::validate() const {
    if (audio.rows() == 0) throw InvalidInput("pair batch is empty");
    if (audio.rows() != teacher.rows()) throw InvalidInput("audio and teacher batches differ in size");
    if (!clip_ids.empty() && clip_ids.size() != audio.rows()) throw InvalidInput("clip id count mismatch");
}

namespace {

struct Normalized {
    Matrix unit;
    std::vector<double> norms;
};

Normalized normalize_rows(const Matrix& x, const char* which) {
    Normalized out{Matrix(x.rows(), x.cols()), std::vector<double>(x.rows())};
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double ss = 0.0;
        for (double v : x.row(i)) ss += v * v;
        const double n = std::sqrt(ss);
        if (!(n > 0.0) || !std::isfinite(n))
            throw InvalidInput(std::string("row ") + std::to_string(i) + " of " + which +
                               " has zero or non-finite norm");
        out.norms[i] = n;
        for (std::size_t k = 0; k < x.cols(); ++k) out.unit(i, k) = x(i, k) / n;
    }
    return out;
}

Matrix logits(const Matrix& a, const Matrix& b, double scale) {
    const std::size_t n = a.rows(), d = a.cols();
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) dot += a(i, k) * b(j, k);
            s(i, j) = scale * dot;
        }
    }
    return s;
}

double log_sum_exp_row(const Matrix& s, std::size_t i) {
    double m = s(i, 0);
    for (std::size_t j = 1; j < s.cols(); ++j) m = std::max(m, s(i, j));
    double acc = 0.0;
    for (std::size_t j = 0; j < s.cols(); ++j) acc += std::exp(s(i, j) - m);
    return m + std::log(acc);
}

double log_sum_exp_col(const Matrix& s, std::size_t j) {
    double m = s(0, j);
    for (std::size_t i = 1; i < s.rows(); ++i) m = std::max(m, s(i, j));
    double acc = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) acc += std::exp(s(i, j) - m);
    return m + std::log(acc);
}

void check_pair(const Matrix& a, const Matrix& b) {
    if (a.rows() == 0) throw InvalidInput("info_nce needs at least one pair");
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw InvalidInput("info_nce operands must have identical shapes");
}

struct Forward {
    Normalized na, nb;
    Matrix s;
    std::vector<double> row_lse, col_lse;
    double loss = 0.0;
};

Forward forward(const Matrix& a, const Matrix& b, const Temperature& temp, LossDirection direction) {
    check_pair(a, b);
    Forward f{normalize_rows(a, "A"), normalize_rows(b, "B"), {}, {}, {}, 0.0};
    f.s = logits(f.na.unit, f.nb.unit, temp.scale());
    const std::size_t n = a.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    double rows = 0.0;
    f.row_lse.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        f.row_lse[i] = log_sum_exp_row(f.s, i);
        rows += f.row_lse[i] - f.s(i, i);
    }
    rows *= inv_n;
    if (direction == LossDirection::RowsOnly) {
        f.loss = rows;
        return f;
    }
    double cols = 0.0;
    f.col_lse.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        f.col_lse[j] = log_sum_exp_col(f.s, j);
        cols += f.col_lse[j] - f.s(j, j);
    }
    cols *= inv_n;
    f.loss = 0.5 * (rows + cols);
    return f;
}

// d/dx of x/|x| applied to the upstream gradient, row by row.
Matrix normalize_backward(const Normalized& n, const Matrix& d_unit) {
    Matrix d(d_unit.rows(), d_unit.cols());
    for (std::size_t i = 0; i < d.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d.cols(); ++k) dot += n.unit(i, k) * d_unit(i, k);
        for (std::size_t k = 0; k < d.cols(); ++k) d(i, k) = (d_unit(i, k) - n.unit(i, k) * dot) / n.norms[i];
    }
    return d;
}

}  // namespace

double info_nce(const Matrix& a, const Matrix& b, const Temperature& temp, LossDirection direction) {
    return forward(a, b, temp, direction).loss;
}

InfoNceGrad info_nce_grad(const Matrix& a, const Matrix& b, const Temperature& temp, LossDirection direction) {
    Forward f = forward(a, b, temp, direction);
    const std::size_t n = a.rows(), d = a.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double scale = temp.scale();
    const double row_w = direction == LossDirection::Symmetric ? 0.5 * inv_n : inv_n;

    Matrix g(n, n);  // dL/dS
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double v = row_w * (std::exp(f.s(i, j) - f.row_lse[i]) - (i == j ? 1.0 : 0.0));
            if (direction == LossDirection::Symmetric)
                v += 0.5 * inv_n * (std::exp(f.s(i, j) - f.col_lse[j]) - (i == j ? 1.0 : 0.0));
            g(i, j) = v;
        }
    }

    InfoNceGrad out;
    out.loss = f.loss;
    Matrix d_ua(n, d), d_ub(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double gij = g(i, j) * scale;
            out.d_log_scale += g(i, j) * f.s(i, j);
            for (std::size_t k = 0; k < d; ++k) {
                d_ua(i, k) += gij * f.nb.unit(j, k);
                d_ub(j, k) += gij * f.na.unit(i, k);
            }
        }
    }
    out.d_a = normalize_backward(f.na, d_ua);
    out.d_b = normalize_backward(f.nb, d_ub);
    return out;
}

double cx_loss(const PairBatch& batch, const ProjectionMLP& f, const ProjectionMLP& g, const Temperature& temp,
               LossDirection direction) {
    batch.validate();
    const Matrix ft = project(f, batch.teacher);
    const Matrix ga = project(g, batch.audio);
    return info_nce(ft, batch.audio, temp, direction) + info_nce(batch.teacher, ga, temp, direction);
}

CxGrad cx_loss_grad(const PairBatch& batch, const ProjectionMLP& f, const ProjectionMLP& g, const Temperature& temp,
                    LossDirection direction) {
    batch.validate();
    CxGrad out;
    out.d_f = f.params.zeros_like();
    out.d_g = g.params.zeros_like();

    ProjectionCache f_cache, g_cache;
    const Matrix ft = project(f, batch.teacher, f_cache);
    const Matrix ga = project(g, batch.audio, g_cache);

    const InfoNceGrad l1 = info_nce_grad(ft, batch.audio, temp, direction);
    const InfoNceGrad l2 = info_nce_grad(batch.teacher, ga, temp, direction);
    out.loss = l1.loss + l2.loss;
    out.d_log_scale = l1.d_log_scale + l2.d_log_scale;

    project_backward(f, f_cache, l1.d_a, out.d_f);  // gradient w.r.t. the teacher is dropped
    out.d_audio = project_backward(g, g_cache, l2.d_b, out.d_g);
    for (std::size_t k = 0; k < out.d_audio.data().size(); ++k) out.d_audio.data()[k] += l1.d_b.data()[k];
    return out;
}

}  // namespace xmodal
