#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "semica/tensor_decomp.hpp"

using namespace semica;
using Catch::Matchers::WithinAbs;

namespace {

CumulantTensor4 orthogonal_tensor(const Matrix& V, const Vector& weights) {
    CumulantTensor4 T(static_cast<int>(V.rows()));
    for (int j = 0; j < V.cols(); ++j) T.add_symmetric_rank1(weights(j), V.col(j));
    return T;
}

Matrix random_orthonormal(int n, int m, std::uint64_t seed) {
    Matrix G = detail::gaussian_matrix(n, m, 1.0, seed);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ() * Matrix::Identity(n, m);
    return Q;
}

// smallest angle between v and +-w
double column_angle(const Vector& v, const Vector& w) {
    Vector a = v / v.norm(), b = w / w.norm();
    return std::min((a - b).norm(), (a + b).norm());  // ~ angle for small angles
}

Matrix chain_reduced_mixing() {
    Matrix C(2, 2);
    C << 1, 0, 0.5, 1;
    return C;
}

}  // namespace

TEST_CASE("power_step", "[tensor]") {
    Matrix V = Matrix::Identity(2, 2);
    Vector w(2);
    w << 2.0, 1.0;
    const CumulantTensor4 T = orthogonal_tensor(V, w);

    SECTION("basis directions are fixed points") {
        PowerStep s1 = power_step(T, Vector::Unit(2, 0));
        CHECK((s1.v - Vector::Unit(2, 0)).norm() < 1e-15);
        CHECK_THAT(s1.lambda, WithinAbs(2.0, 1e-15));

        PowerStep s2 = power_step(T, Vector::Unit(2, 1));
        CHECK((s2.v - Vector::Unit(2, 1)).norm() < 1e-15);
        CHECK_THAT(s2.lambda, WithinAbs(1.0, 1e-15));
    }
    SECTION("diagonal start contracts toward the heavier component") {
        Vector v = Vector::Constant(2, 1.0 / std::sqrt(2.0));
        PowerStep s = power_step(T, v);
        Vector expected(2);
        expected << 2.0, 1.0;
        expected /= expected.norm();  // (2,1)/sqrt(5)
        CHECK((s.v - expected).cwiseAbs().maxCoeff() < 1e-15);
        CHECK_THAT(s.lambda, WithinAbs(3.0 / 4.0, 1e-15));  // (2+1) * (1/sqrt(2))^4
    }
    SECTION("output stays unit norm") {
        std::mt19937_64 rng(3);
        Vector v = detail::random_unit(rng, 2);
        for (int it = 0; it < 50; ++it) {
            PowerStep s = power_step(T, v);
            CHECK(std::abs(s.v.norm() - 1.0) < 1e-14);
            v = s.v;
        }
    }
    SECTION("zero tensor is degenerate") {
        CHECK_THROWS_AS(power_step(CumulantTensor4(2), Vector::Unit(2, 0)), std::runtime_error);
    }
}

TEST_CASE("decompose_symmetric4 on orthogonal tensors", "[tensor]") {
    SECTION("equal weights on the standard basis") {
        const CumulantTensor4 T = orthogonal_tensor(Matrix::Identity(3, 3), Vector::Constant(3, 3.0));
        const CpFactors cp = decompose_symmetric4(T, 3, {.L = 10, .seed = 1});
        CHECK(cp.residual < 1e-8);
        std::vector<bool> found(3, false);
        for (int j = 0; j < 3; ++j) {
            CHECK_THAT(cp.weights(j), WithinAbs(3.0, 1e-8));
            for (int b = 0; b < 3; ++b)
                if (column_angle(cp.columns.col(j), Vector::Unit(3, b)) < 1e-8) found[b] = true;
        }
        CHECK((found[0] && found[1] && found[2]));
    }
    SECTION("zero tensor flags a degenerate component") {
        const CpFactors cp = decompose_symmetric4(CumulantTensor4(2), 1, {.L = 3, .seed = 2});
        CHECK_FALSE(cp.converged[0]);
        CHECK(cp.weights(0) == 0.0);
        CHECK_THAT(cp.columns.col(0).norm(), WithinAbs(1.0, 1e-12));
    }
    SECTION("whitened chain cumulant") {
        const Matrix C = chain_reduced_mixing();
        const Whitener wh = whiten(C * C.transpose(), 2);
        const CumulantTensor4 M4w = whiten_cumulant(model_cumulant(C, Vector::Constant(2, 3.0)), wh);
        const CpFactors cp = decompose_symmetric4(M4w, 2, {.L = 10, .seed = 3});
        CHECK(cp.residual < 1e-8);
        const Matrix V = wh.W.transpose() * C;
        for (int j = 0; j < 2; ++j) {
            CHECK_THAT(cp.weights(j), WithinAbs(3.0, 1e-8));
            const double angle = std::min(column_angle(cp.columns.col(j), V.col(0)),
                                          column_angle(cp.columns.col(j), V.col(1)));
            CHECK(angle < 1e-8);
        }
    }
}

TEST_CASE("orthogonal recovery with distinct weights", "[tensor][property]") {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const int m = 2 + static_cast<int>(seed % 3);  // 2..4
        const Matrix V = random_orthonormal(m + 1, m, seed);
        Vector w(m);
        for (int j = 0; j < m; ++j) w(j) = 1.0 + 1.5 * j;  // distinct, positive
        const CumulantTensor4 T = orthogonal_tensor(V, w);
        const CpFactors cp = decompose_symmetric4(T, m, {.L = 20, .seed = seed});

        CHECK(cp.residual < 1e-8);  // deflation soundness
        for (int j = 0; j < m; ++j) {
            // components come out in decreasing |weight| order
            const int src = m - 1 - j;
            CHECK_THAT(cp.weights(j), WithinAbs(w(src), 1e-8));
            CHECK(column_angle(cp.columns.col(j), V.col(src)) < 1e-8);
        }
    }
}

TEST_CASE("negative weights are recovered by magnitude", "[tensor]") {
    const Matrix V = random_orthonormal(3, 2, 11);
    Vector w(2);
    w << -2.0, 1.0;
    const CpFactors cp = decompose_symmetric4(orthogonal_tensor(V, w), 2, {.L = 15, .seed = 4});
    CHECK_THAT(cp.weights(0), WithinAbs(-2.0, 1e-8));
    CHECK_THAT(cp.weights(1), WithinAbs(1.0, 1e-8));
    CHECK(column_angle(cp.columns.col(0), V.col(0)) < 1e-8);
    CHECK(column_angle(cp.columns.col(1), V.col(1)) < 1e-8);
}

TEST_CASE("model_cumulant", "[tensor]") {
    SECTION("zero weights give the zero tensor") {
        Matrix C = Matrix::Random(3, 2);
        CHECK(model_cumulant(C, Vector::Zero(2)).frobenius_norm() == 0.0);
    }
    SECTION("single basis column") {
        const CumulantTensor4 T = model_cumulant(Vector::Unit(2, 0), Vector::Constant(1, 3.0));
        CHECK(T(0, 0, 0, 0) == 3.0);
        CHECK(T(0, 0, 0, 1) == 0.0);
        CHECK(T(1, 1, 1, 1) == 0.0);
    }
    SECTION("matches the population chain cumulant") {
        const Matrix C = chain_reduced_mixing();
        const CumulantTensor4 T = model_cumulant(C, Vector::Constant(2, 3.0));
        // entry (0,0,0,0): 3*1 + 3*0 ; entry (1,1,1,1): 3*(0.5^4) + 3*1
        CHECK_THAT(T(0, 0, 0, 0), WithinAbs(3.0, 1e-15));
        CHECK_THAT(T(1, 1, 1, 1), WithinAbs(3.0 * 0.0625 + 3.0, 1e-15));
        CHECK_THAT(T(0, 0, 0, 1), WithinAbs(3.0 * 0.5, 1e-15));
    }
}

TEST_CASE("recover_ica_mixing", "[tensor]") {
    SECTION("noiseless chain data at N = 1e5") {
        SemIcaModel model;
        model.n = 2;
        model.m = 2;
        model.A = Matrix::Identity(2, 2);
        model.B = Matrix::Zero(2, 2);
        model.B(1, 0) = 0.5;
        model.latent = LatentSpec{LatentFamily::Laplace, 1.0, 1.0};
        const Matrix C = reduced_mixing(model);

        Dataset d = sample_observational(model, 100000, 31);
        const IcaMixing est = recover_ica_mixing(d, 2, {.decomp = {.seed = 5}});
        REQUIRE(est.k_effective == 2);
        const double deg = 3.0 * M_PI / 180.0;
        for (int j = 0; j < 2; ++j) {
            REQUIRE(est.identified[j]);
            const double angle = std::min(column_angle(est.columns.col(j), C.col(0)),
                                          column_angle(est.columns.col(j), C.col(1)));
            CHECK(angle < deg);
        }
    }
    SECTION("single latent column direction") {
        Matrix H = sample_latents(LatentSpec{LatentFamily::Laplace, 0.0, 1.0}, 1, 100000, 33);
        Vector c(3);
        c << 1.0, -2.0, 0.5;
        Dataset d;
        d.samples = H * c.transpose();
        const IcaMixing est = recover_ica_mixing(d, 1, {.decomp = {.seed = 6}});
        CHECK(column_angle(est.columns.col(0), c) < M_PI / 180.0);
    }
    SECTION("pure latents come back as the basis") {
        Dataset d;
        d.samples = sample_latents(LatentSpec{LatentFamily::Laplace, 0.0, 1.0}, 3, 100000, 35);
        const IcaMixing est = recover_ica_mixing(d, 3, {.decomp = {.seed = 7}});
        for (int j = 0; j < 3; ++j) {
            double best = 1e9;
            for (int b = 0; b < 3; ++b)
                best = std::min(best, column_angle(est.columns.col(j), Vector::Unit(3, b)));
            CHECK(best < 5.0 * M_PI / 180.0);
        }
    }
    SECTION("same seed gives bitwise identical output") {
        const SemIcaModel model = random_model(3, 2, 41);
        Dataset d = sample_observational(model, 20000, 43);
        const IcaMixing a = recover_ica_mixing(d, 2, {.decomp = {.seed = 8}});
        const IcaMixing b = recover_ica_mixing(d, 2, {.decomp = {.seed = 8}});
        CHECK(a.columns == b.columns);
        CHECK(a.weights == b.weights);
    }
}

// Brute-force oracle: search unit-circle component pairs at 0.001 rad
// resolution, fitting the two weights by least squares for each pair.
TEST_CASE("2-d decomposition agrees with a grid-search oracle", "[tensor][oracle]") {
    const Matrix C = (Matrix(2, 2) << 1.0, -0.3, 0.4, 1.1).finished();
    const Vector kappa = Vector::Constant(2, 3.0);
    const Matrix sigma = C * C.transpose();
    const CumulantTensor4 M4 = model_cumulant(C, kappa);

    const IcaMixing est = recover_ica_from_moments(sigma, M4, 2, {.decomp = {.seed = 9}});
    const Whitener wh = whiten(sigma, 2);
    const CumulantTensor4 M4w = whiten_cumulant(M4, wh);

    // oracle in the whitened plane
    auto packed = [&](double theta) {
        Vector u(2);
        u << std::cos(theta), std::sin(theta);
        CumulantTensor4 t(2);
        t.add_symmetric_rank1(1.0, u);
        return t;
    };
    auto dot_packed = [](const CumulantTensor4& a, const CumulantTensor4& b) {
        double s = 0.0;
        a.for_each_sorted([&](int i, int j, int k, int l, double v) {
            s += CumulantTensor4::multiplicity(i, j, k, l) * v * b(i, j, k, l);
        });
        return s;
    };
    const double step = 0.001;
    const int K = static_cast<int>(M_PI / step);
    std::vector<CumulantTensor4> basis;
    basis.reserve(K);
    for (int t = 0; t < K; ++t) basis.push_back(packed(t * step));

    double best_err = std::numeric_limits<double>::infinity();
    double best_t1 = 0, best_t2 = 0;
    const double target_sq = dot_packed(M4w, M4w);
    for (int t1 = 0; t1 < K; ++t1)
        for (int t2 = t1 + 1; t2 < K; ++t2) {
            // least-squares weights for || M4w - w1 B1 - w2 B2 ||
            const double g11 = dot_packed(basis[t1], basis[t1]);
            const double g22 = dot_packed(basis[t2], basis[t2]);
            const double g12 = dot_packed(basis[t1], basis[t2]);
            const double b1 = dot_packed(basis[t1], M4w);
            const double b2 = dot_packed(basis[t2], M4w);
            const double det = g11 * g22 - g12 * g12;
            if (std::abs(det) < 1e-12) continue;
            const double w1 = (g22 * b1 - g12 * b2) / det;
            const double w2 = (g11 * b2 - g12 * b1) / det;
            const double err = target_sq - (w1 * b1 + w2 * b2);
            if (err < best_err) {
                best_err = err;
                best_t1 = t1 * step;
                best_t2 = t2 * step;
            }
        }

    // compare the estimated whitened components against the oracle angles
    for (int j = 0; j < 2; ++j) {
        Vector v = wh.W.transpose() * est.columns.col(j);
        v /= v.norm();
        double theta = std::atan2(v(1), v(0));
        if (theta < 0) theta += M_PI;
        if (theta >= M_PI) theta -= M_PI;
        const double d1 = std::min(std::abs(theta - best_t1), M_PI - std::abs(theta - best_t1));
        const double d2 = std::min(std::abs(theta - best_t2), M_PI - std::abs(theta - best_t2));
        CHECK(std::min(d1, d2) < 0.01);
    }
}
