#include <catch2/catch_amalgamated.hpp>

#include "semica/pipeline.hpp"

using namespace semica;
using Catch::Matchers::WithinAbs;

namespace {

SemIcaModel two_var_chain(double noise_std = 0.0) {
    SemIcaModel model;
    model.n = 2;
    model.m = 2;
    model.A = Matrix::Identity(2, 2);
    model.B = Matrix::Zero(2, 2);
    model.B(1, 0) = 0.5;
    model.noise_std = noise_std;
    model.latent = LatentSpec{LatentFamily::Laplace, 1.0, 1.0};
    return model;
}

std::vector<Dataset> draw_all(const SemIcaModel& model, const Dataset& obs, int N,
                              std::uint64_t seed, const std::vector<int>& targets,
                              double lambda_factor = 10.0) {
    std::vector<Dataset> out;
    for (int i : targets) {
        const double sd =
            std::sqrt((obs.samples.col(i).array() - obs.samples.col(i).mean()).square().mean());
        out.push_back(sample_interventional(model, Intervention{i, lambda_factor * sd}, N,
                                            detail::mix_seed(seed, 0x700 + static_cast<std::uint64_t>(i))));
    }
    return out;
}

}  // namespace

TEST_CASE("exact-moment recovery is numerically exact", "[pipeline]") {
    for (int n = 2; n <= 5; ++n) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            const SemIcaModel model = random_model(n, n, seed * 13);
            const Matrix C = reduced_mixing(model);
            std::vector<std::pair<int, Matrix>> D_list;
            for (int i = 0; i < n; ++i) D_list.emplace_back(i, response_matrix(model, i));

            const RecoveryResult result = recover_from_population(C, D_list);
            CHECK((result.B_hat - model.B).cwiseAbs().maxCoeff() < 1e-9);
            CHECK((result.A_hat - model.A).cwiseAbs().maxCoeff() < 1e-9);
            for (double r : result.rank1_ratios) CHECK(r < 1e-10);
            const RecoveryMetrics metrics = evaluate(model, result);
            CHECK(metrics.mse_B < 1e-18);
            CHECK(metrics.order_correct);
        }
    }
}

TEST_CASE("pipeline on noiseless chain data", "[pipeline]") {
    const SemIcaModel model = two_var_chain();
    const int N = 100000;
    std::vector<double> mses;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Dataset obs = sample_observational(model, N, detail::mix_seed(seed, 0xa));
        std::vector<Dataset> intvs = draw_all(model, obs, N, seed, {0, 1});
        PipelineOptions opts;
        opts.restarts = 5;
        opts.seed = seed;
        RecoveryResult result = recover_pipeline(obs, intvs, 2, opts);
        mses.push_back(evaluate(model, result).mse_B);
    }
    std::sort(mses.begin(), mses.end());
    CHECK(mses[2] < 1e-3);  // median over 5 seeds
}

TEST_CASE("pipeline handles a single variable", "[pipeline]") {
    SemIcaModel model;
    model.n = 1;
    model.m = 1;
    model.A = Matrix::Constant(1, 1, 1.0);
    model.B = Matrix::Zero(1, 1);
    model.latent = LatentSpec{LatentFamily::Laplace, 1.0, 1.0};
    Dataset obs = sample_observational(model, 20000, 1);

    PipelineOptions opts;
    opts.restarts = 2;
    const RecoveryResult result = recover_pipeline(obs, {}, 1, opts);
    CHECK(result.B_hat(0, 0) == 0.0);
    CHECK(result.causal_order == std::vector<int>{0});
}

TEST_CASE("missing interventions fall back to basis columns", "[pipeline]") {
    SemIcaModel model;
    model.n = 3;
    model.m = 3;
    model.A = Matrix::Identity(3, 3);
    model.B = Matrix::Zero(3, 3);
    model.B(1, 0) = 0.8;
    model.B(2, 1) = -0.6;
    model.latent = LatentSpec{LatentFamily::Laplace, 1.0, 1.0};
    model.noise_std = std::sqrt(1e-3);
    const int N = 50000;
    Dataset obs = sample_observational(model, N, 5);

    SECTION("dropping the last variable in causal order costs nothing") {
        std::vector<Dataset> intvs = draw_all(model, obs, N, 6, {0, 1});
        PipelineOptions opts;
        opts.restarts = 5;
        const RecoveryResult result = recover_pipeline(obs, intvs, 3, opts);
        CHECK_FALSE(result.identified[2]);
        CHECK(evaluate(model, result).mse_B < 0.01);
    }
    SECTION("no interventions at all gives the zero fallback") {
        PipelineOptions opts;
        opts.restarts = 2;
        const RecoveryResult result = recover_pipeline(obs, {}, 3, opts);
        CHECK(result.B_hat.isZero(0));
        const double expected = model.B.squaredNorm() / 9.0;
        CHECK_THAT(evaluate(model, result).mse_B, Catch::Matchers::WithinRel(expected, 1e-9));
    }
}

TEST_CASE("pipeline is deterministic given the seed", "[pipeline]") {
    const SemIcaModel model = two_var_chain(std::sqrt(1e-3));
    const int N = 20000;
    Dataset obs = sample_observational(model, N, 9);
    std::vector<Dataset> intvs = draw_all(model, obs, N, 10, {0, 1});

    PipelineOptions opts;
    opts.restarts = 3;
    opts.seed = 42;
    const RecoveryResult a = recover_pipeline(obs, intvs, 2, opts);
    const RecoveryResult b = recover_pipeline(obs, intvs, 2, opts);
    CHECK(a.A_hat == b.A_hat);
    CHECK(a.B_hat == b.B_hat);
    CHECK(a.objective_final == b.objective_final);
}

TEST_CASE("evaluate", "[pipeline]") {
    const SemIcaModel model = two_var_chain();

    SECTION("ground truth scores perfectly") {
        RecoveryResult result;
        result.A_hat = model.A;
        result.B_hat = model.B;
        result.causal_order = {0, 1};
        const RecoveryMetrics metrics = evaluate(model, result);
        CHECK(metrics.mse_B == 0.0);
        CHECK(metrics.mse_A < 1e-25);
        CHECK(metrics.order_correct);
    }
    SECTION("single entry offset") {
        RecoveryResult result;
        result.A_hat = model.A;
        result.B_hat = model.B;
        result.B_hat(1, 0) += 0.1;
        result.causal_order = {0, 1};
        CHECK_THAT(evaluate(model, result).mse_B, WithinAbs(0.01 / 4.0, 1e-15));
    }
    SECTION("column permutation is absorbed") {
        RecoveryResult result;
        result.A_hat = model.A;
        result.A_hat.col(0).swap(result.A_hat.col(1));
        result.B_hat = model.B;
        result.causal_order = {0, 1};
        CHECK(evaluate(model, result).mse_A < 1e-25);
    }
    SECTION("bad order is detected") {
        RecoveryResult result;
        result.A_hat = model.A;
        result.B_hat = model.B;
        result.causal_order = {1, 0};  // violates 0 -> 1
        CHECK_FALSE(evaluate(model, result).order_correct);
    }
}

TEST_CASE("recovery result JSON carries the diagnostics", "[pipeline]") {
    const SemIcaModel model = two_var_chain();
    const Matrix C = reduced_mixing(model);
    std::vector<std::pair<int, Matrix>> D_list;
    for (int i = 0; i < 2; ++i) D_list.emplace_back(i, response_matrix(model, i));
    RecoveryResult result = recover_from_population(C, D_list);
    result.metrics = evaluate(model, result);

    const nlohmann::json j = to_json(result);
    CHECK(j.at("causal_order").get<std::vector<int>>() == result.causal_order);
    CHECK(j.at("rank1_ratios").size() == 2);
    CHECK(j.at("metrics").at("order_correct").get<bool>());
    CHECK(j.at("B_hat").at("rows").get<int>() == 2);
}
