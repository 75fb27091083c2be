#pragma once

#include <cstddef>

#include "xmodal/rng.hpp"
#include "xmodal/tensor.hpp"

namespace xmodal {

/// Two affine layers with a ReLU between them: in -> hidden -> out.
/// Parameters are "l1.weight" [hidden x in], "l1.bias", "l2.weight"
/// [out x hidden], "l2.bias".
struct ProjectionMLP {
    std::size_t in_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t out_dim = 0;
    ParamSet params;

    static ProjectionMLP random(std::size_t in_dim, std::size_t hidden_dim, std::size_t out_dim, Rng& rng);
    /// Exact identity for every input: l1 = [I; -I], l2 = [I, -I], zero
    /// biases, so relu(x) - relu(-x) = x. Hidden width is 2 * dim.
    static ProjectionMLP identity(std::size_t dim);

    friend bool operator==(const ProjectionMLP&, const ProjectionMLP&) = default;
};

struct ProjectionCache {
    Matrix input;
    Matrix hidden;  // post-ReLU
};

Matrix project(const ProjectionMLP& mlp, const Matrix& x);
Matrix project(const ProjectionMLP& mlp, const Matrix& x, ProjectionCache& cache);

/// Accumulates parameter gradients into `grads` (layout of mlp.params) and
/// returns d(loss)/d(input).
Matrix project_backward(const ProjectionMLP& mlp, const ProjectionCache& cache, const Matrix& d_out,
                        ParamSet& grads);

}  // namespace xmodal
