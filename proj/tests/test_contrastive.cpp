#include <doctest.h>

#include <cmath>

#include "xmodal/contrastive.hpp"
#include "xmodal/distill.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/projection.hpp"
#include "xmodal/rng.hpp"

using namespace xmodal;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (auto& v : m.data()) v = rng.normal();
    return m;
}

// Brute-force symmetric InfoNCE straight from the definition.
double oracle_info_nce(const Matrix& a, const Matrix& b, double scale) {
    const std::size_t n = a.rows();
    auto norm = [](std::span<const double> r) {
        double s = 0.0;
        for (double v : r) s += v * v;
        return std::sqrt(s);
    };
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) d += a(i, k) * b(j, k);
            s(i, j) = scale * d / (norm(a.row(i)) * norm(b.row(j)));
        }
    double rows = 0.0, cols = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double zr = 0.0, zc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            zr += std::exp(s(i, j));
            zc += std::exp(s(j, i));
        }
        rows += std::log(zr) - s(i, i);
        cols += std::log(zc) - s(i, i);
    }
    return 0.5 * (rows + cols) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("single pair has zero loss") {
    Rng rng = seeded_rng(1, "nce");
    const Matrix a = random_matrix(1, 8, rng);
    const Matrix b = random_matrix(1, 8, rng);
    CHECK(info_nce(a, b, Temperature{}) == 0.0);
    CHECK(info_nce_grad(a, b, Temperature{}).loss == 0.0);
}

TEST_CASE("identical rows give log N") {
    for (std::size_t n : {2u, 4u, 8u, 16u}) {
        Matrix a(n, 5, 0.7);
        CHECK(info_nce(a, a, Temperature{}) == doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
    }
}

TEST_CASE("orthonormal pair at unit scale has the closed form") {
    const Matrix a = Matrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
    const double want = std::log(1.0 + std::exp(-1.0));
    CHECK(info_nce(a, a, Temperature::fixed(1.0)) == doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(0.31326).epsilon(1e-5));
}

TEST_CASE("info_nce matches the brute-force definition") {
    Rng rng = seeded_rng(2, "nce");
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(7), d = 1 + rng.uniform_int(16);
        const Matrix a = random_matrix(n, d, rng), b = random_matrix(n, d, rng);
        Temperature t;
        t.log_scale = rng.uniform(-2.0, 4.0);
        CHECK(info_nce(a, b, t) == doctest::Approx(oracle_info_nce(a, b, t.scale())).epsilon(1e-12));
    }
}

TEST_CASE("info_nce symmetry, permutation and scale invariance") {
    Rng rng = seeded_rng(3, "nce");
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(7), d = 2 + rng.uniform_int(10);
        const Matrix a = random_matrix(n, d, rng), b = random_matrix(n, d, rng);
        const Temperature t;
        const double base = info_nce(a, b, t);
        CHECK(base >= 0.0);
        CHECK(info_nce(b, a, t) == base);

        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        rng.shuffle(perm);
        Matrix pa(n, d), pb(n, d), sa = a;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < d; ++k) {
                pa(i, k) = a(perm[i], k);
                pb(i, k) = b(perm[i], k);
            }
        CHECK(info_nce(pa, pb, t) == doctest::Approx(base).epsilon(1e-12));

        for (std::size_t i = 0; i < n; ++i) {
            const double s = rng.uniform(0.1, 10.0);
            for (auto& v : sa.row(i)) v *= s;
        }
        CHECK(std::abs(info_nce(sa, b, t) - base) < 1e-9);
    }
}

TEST_CASE("aligned orthonormal batch approaches zero loss as the scale grows") {
    Matrix a(4, 4);
    for (std::size_t i = 0; i < 4; ++i) a(i, i) = 1.0;
    double prev = info_nce(a, a, Temperature::fixed(1.0));
    for (double s : {5.0, 20.0, 100.0}) {
        const double l = info_nce(a, a, Temperature::fixed(s));
        CHECK(l < prev);
        prev = l;
    }
    CHECK(prev < 1e-40);
}

TEST_CASE("zero rows are rejected") {
    Matrix a(2, 3, 1.0), b(2, 3, 1.0);
    a(1, 0) = a(1, 1) = a(1, 2) = 0.0;
    CHECK_THROWS_AS(info_nce(a, b, Temperature{}), InvalidInput);
    CHECK_THROWS_AS(info_nce(Matrix(2, 3, 1.0), Matrix(3, 3, 1.0), Temperature{}), InvalidInput);
}

TEST_CASE("temperature clamps to its bounds") {
    Temperature t;
    CHECK(t.scale() == doctest::Approx(1.0 / 0.07));
    t.log_scale = 10.0;
    t.clamp();
    CHECK(t.scale() == doctest::Approx(100.0));
    t.log_scale = -10.0;
    t.clamp();
    CHECK(t.scale() == doctest::Approx(0.01));
}

TEST_CASE("rows-only direction uses only the row cross-entropy") {
    Rng rng = seeded_rng(4, "nce");
    const Matrix a = random_matrix(5, 6, rng), b = random_matrix(5, 6, rng);
    const Temperature t;
    const double rows = info_nce(a, b, t, LossDirection::RowsOnly);
    const double cols = info_nce(b, a, t, LossDirection::RowsOnly);
    CHECK(info_nce(a, b, t) == doctest::Approx(0.5 * (rows + cols)).epsilon(1e-12));
}

TEST_CASE("projection matches an explicit two-layer oracle") {
    Rng rng = seeded_rng(5, "proj");
    const ProjectionMLP mlp = ProjectionMLP::random(6, 9, 4, rng);
    const Matrix x = random_matrix(3, 6, rng);
    const Matrix y = project(mlp, x);
    const auto& w1 = mlp.params.at("l1.weight");
    const auto& b1 = mlp.params.at("l1.bias");
    const auto& w2 = mlp.params.at("l2.weight");
    const auto& b2 = mlp.params.at("l2.bias");
    for (std::size_t r = 0; r < 3; ++r) {
        std::vector<double> h(9);
        for (std::size_t j = 0; j < 9; ++j) {
            double s = b1[j];
            for (std::size_t k = 0; k < 6; ++k) s += w1[j * 6 + k] * x(r, k);
            h[j] = std::max(0.0, s);
        }
        for (std::size_t o = 0; o < 4; ++o) {
            double s = b2[o];
            for (std::size_t j = 0; j < 9; ++j) s += w2[o * 9 + j] * h[j];
            CHECK(y(r, o) == doctest::Approx(s).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(project(mlp, random_matrix(2, 5, rng)), InvalidInput);
}

TEST_CASE("zero input through a zero-bias projection is zero") {
    const ProjectionMLP id = ProjectionMLP::identity(7);
    CHECK(id.hidden_dim == 14);
    const Matrix y = project(id, Matrix(3, 7, 0.0));
    for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("cx_loss with identity projections doubles info_nce") {
    Rng rng = seeded_rng(6, "cx");
    PairBatch batch{random_matrix(6, 8, rng), random_matrix(6, 8, rng), {"a", "b", "c", "d", "e", "f"}};
    const auto f = ProjectionMLP::identity(8), g = ProjectionMLP::identity(8);
    const Temperature t;
    CHECK(cx_loss(batch, f, g, t) == doctest::Approx(2.0 * info_nce(batch.teacher, batch.audio, t)).epsilon(1e-12));

    PairBatch one{random_matrix(1, 8, rng), random_matrix(1, 8, rng), {"x"}};
    CHECK(cx_loss(one, f, g, t) == 0.0);
}

TEST_CASE("pair batches must be consistent") {
    PairBatch b{Matrix(2, 3, 1.0), Matrix(2, 3, 1.0), {"a"}};
    CHECK_THROWS_AS(b.validate(), InvalidInput);
    PairBatch empty;
    CHECK_THROWS_AS(empty.validate(), InvalidInput);
}

TEST_CASE("teacher frame pooling is the per-coordinate mean") {
    Rng rng = seeded_rng(7, "pool");
    std::vector<Embedding> same(150, Embedding({0.25, -1.5, 3.0}));
    CHECK(pool_teacher_frames(same) == same.front());
    std::vector<Embedding> frames;
    for (int i = 0; i < 150; ++i) frames.push_back(Embedding({rng.normal(), rng.normal()}));
    const Embedding m = pool_teacher_frames(frames);
    for (std::size_t k = 0; k < 2; ++k) {
        double s = 0.0;
        for (const auto& f : frames) s += f.values[k];
        CHECK(std::abs(m.values[k] - s / 150.0) < 1e-12);
    }
    CHECK_THROWS_AS(pool_teacher_frames({}), InvalidInput);
}
