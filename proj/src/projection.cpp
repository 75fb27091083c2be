#include "xmodal/projection.hpp"

#include <cmath>

#include "xmodal/errors.hpp"

namespace xmodal {

ProjectionMLP ProjectionMLP::random(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Rng& rng) {
    if (in_dim == 0 || hidden_dim == 0 || out_dim == 0) throw InvalidConfig("projection dimensions must be positive");
    ProjectionMLP m{in_dim, hidden_dim, out_dim, {}};
    auto layer = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        Tensor w({rows, cols}), b({rows});
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        for (auto& v : b.data) v = rng.uniform(-bound, bound);
        m.params.add(name + ".weight", std::move(w));
        m.params.add(name + ".bias", std::move(b));
    };
    layer("l1", hidden_dim, in_dim);
    layer("l2", out_dim, hidden_dim);
    return m;
}

ProjectionMLP ProjectionMLP::identity(std::size_t dim) {
    if (dim == 0) throw InvalidConfig("projection dimension must be positive");
    ProjectionMLP m{dim, 2 * dim, dim, {}};
    Tensor w1({2 * dim, dim}), w2({dim, 2 * dim});
    for (std::size_t i = 0; i < dim; ++i) {
        w1.data[i * dim + i] = 1.0;
        w1.data[(dim + i) * dim + i] = -1.0;
        w2.data[i * 2 * dim + i] = 1.0;
        w2.data[i * 2 * dim + dim + i] = -1.0;
    }
    m.params.add("l1.weight", std::move(w1));
    m.params.add("l1.bias", Tensor({2 * dim}));
    m.params.add("l2.weight", std::move(w2));
    m.params.add("l2.bias", Tensor({dim}));
    return m;
}

namespace {

// y = x W^T + b
Matrix affine(const Matrix& x, const Tensor& w, const Tensor& b) {
    const std::size_t rows = w.shape[0], cols = w.shape[1];
    Matrix y(x.rows(), rows);
    for (std::size_t n = 0; n < x.rows(); ++n) {
        const auto xr = x.row(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* wr = w.data.data() + r * cols;
            double s = b.data[r];
            for (std::size_t c = 0; c < cols; ++c) s += wr[c] * xr[c];
            y(n, r) = s;
        }
    }
    return y;
}

}  // namespace

Matrix project(const ProjectionMLP& mlp, const Matrix& x, ProjectionCache& cache) {
    if (x.cols() != mlp.in_dim)
        throw InvalidInput("projection expects " + std::to_string(mlp.in_dim) + " inputs, got " +
                           std::to_string(x.cols()));
    Matrix h = affine(x, mlp.params.at("l1.weight"), mlp.params.at("l1.bias"));
    for (auto& v : h.data()) v = v > 0.0 ? v : 0.0;
    Matrix y = affine(h, mlp.params.at("l2.weight"), mlp.params.at("l2.bias"));
    cache.input = x;
    cache.hidden = std::move(h);
    return y;
}

Matrix project(const ProjectionMLP& mlp, const Matrix& x) {
    ProjectionCache cache;
    return project(mlp, x, cache);
}

Matrix project_backward(const ProjectionMLP& mlp, const ProjectionCache& cache, const Matrix& d_out,
                        ParamSet& grads) {
    const auto& w1 = mlp.params.at("l1.weight");
    const auto& w2 = mlp.params.at("l2.weight");
    auto& dw1 = grads.at("l1.weight");
    auto& db1 = grads.at("l1.bias");
    auto& dw2 = grads.at("l2.weight");
    auto& db2 = grads.at("l2.bias");
    const std::size_t N = d_out.rows(), H = mlp.hidden_dim, I = mlp.in_dim, O = mlp.out_dim;
    if (d_out.cols() != O || cache.hidden.rows() != N) throw InvalidInput("projection gradient shape mismatch");

    Matrix d_hidden(N, H);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t o = 0; o < O; ++o) {
            const double g = d_out(n, o);
            if (g == 0.0) continue;
            db2.data[o] += g;
            const double* w2r = w2.data.data() + o * H;
            double* dw2r = dw2.data.data() + o * H;
            for (std::size_t h = 0; h < H; ++h) {
                dw2r[h] += g * cache.hidden(n, h);
                d_hidden(n, h) += g * w2r[h];
            }
        }
        for (std::size_t h = 0; h < H; ++h)
            if (!(cache.hidden(n, h) > 0.0)) d_hidden(n, h) = 0.0;
    }

    Matrix d_in(N, I);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t h = 0; h < H; ++h) {
            const double g = d_hidden(n, h);
            if (g == 0.0) continue;
            db1.data[h] += g;
            const double* w1r = w1.data.data() + h * I;
            double* dw1r = dw1.data.data() + h * I;
            for (std::size_t i = 0; i < I; ++i) {
                dw1r[i] += g * cache.input(n, i);
                d_in(n, i) += g * w1r[i];
            }
        }
    }
    return d_in;
}

}  // namespace xmodal
