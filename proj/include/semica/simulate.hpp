#pragma once

// Seeded data generation: latent draws, observational and interventional
// sample sets, and random valid models for experiments. Every sampler is a
// pure function of (inputs, seed).

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>

#include "semica/model.hpp"

namespace semica {

struct Dataset {
    Matrix samples;  // N x n, rows are realizations
    std::optional<Intervention> intervention;  // nullopt = observational
    std::uint64_t seed = 0;

    int N() const { return static_cast<int>(samples.rows()); }
    int n() const { return static_cast<int>(samples.cols()); }
};

namespace detail {

// splitmix64 step, used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline double sample_laplace(std::mt19937_64& rng, double mean, double scale) {
    std::uniform_real_distribution<double> unif(-0.5, 0.5);
    const double u = unif(rng);
    // inverse CDF; u is bounded away from +-0.5 with probability 1
    return mean - scale * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
}

}  // namespace detail

// N x m i.i.d. latent draws. Laplace uses scale 1/sqrt(2), Rademacher +-1,
// Uniform a symmetric interval of half-width sqrt(3); all three have unit
// variance before the optional variance rescale.
inline Matrix sample_latents(const LatentSpec& spec, int m, int N, std::uint64_t seed) {
    if (N < 1 || m < 1) throw std::invalid_argument("sample_latents: N and m must be >= 1");
    if (!(spec.variance > 0.0)) throw std::invalid_argument("sample_latents: variance must be positive");
    std::mt19937_64 rng(detail::mix_seed(seed, 0x1a7e57));
    const double sd = std::sqrt(spec.variance);
    Matrix H(N, m);
    switch (spec.family) {
        case LatentFamily::Laplace: {
            const double scale = sd / std::sqrt(2.0);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < m; ++j) H(i, j) = detail::sample_laplace(rng, spec.mean, scale);
            break;
        }
        case LatentFamily::Rademacher: {
            std::bernoulli_distribution coin(0.5);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < m; ++j) H(i, j) = spec.mean + (coin(rng) ? sd : -sd);
            break;
        }
        case LatentFamily::Uniform: {
            const double half = sd * std::sqrt(3.0);
            std::uniform_real_distribution<double> unif(-half, half);
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < m; ++j) H(i, j) = spec.mean + unif(rng);
            break;
        }
    }
    return H;
}

namespace detail {

inline Matrix gaussian_matrix(int N, int n, double sd, std::uint64_t seed) {
    Matrix E(N, n);
    if (sd == 0.0) {
        E.setZero();
        return E;
    }
    std::mt19937_64 rng(mix_seed(seed, 0x90a55));
    std::normal_distribution<double> gauss(0.0, sd);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < n; ++j) E(i, j) = gauss(rng);
    return E;
}

}  // namespace detail

// Rows are X = C h + (I-B)^{-1} eps with i.i.d. Gaussian eps.
inline Dataset sample_observational(const SemIcaModel& model, int N, std::uint64_t seed) {
    const Matrix C = reduced_mixing(model);
    const Matrix H = sample_latents(model.latent, model.m, N, seed);
    Dataset out;
    out.samples = H * C.transpose();
    if (model.noise_std > 0.0) {
        Matrix E = detail::gaussian_matrix(N, model.n, model.noise_std, seed);
        // (I-B)^{-1} eps per row  <=>  E * G^T with G the unit lower inverse
        Matrix G = unit_lower_solve(model.B, Matrix::Identity(model.n, model.n));
        out.samples += E * G.transpose();
    }
    out.intervention = std::nullopt;
    out.seed = seed;
    return out;
}

// Rows are Y_i = D_i h + value * (I-B_i)^{-1} e_i + (I-B_i)^{-1} eps_i with
// the structural noise of the clamped equation removed (eps_i(i) = 0).
// Column iv.target of the result is bitwise the constant iv.value.
inline Dataset sample_interventional(const SemIcaModel& model, const Intervention& iv, int N,
                                     std::uint64_t seed) {
    if (iv.target < 0 || iv.target >= model.n)
        throw std::invalid_argument("sample_interventional: target out of range");
    auto [Ai, Bi] = intervened_matrices(model, iv.target);
    const Matrix Di = unit_lower_solve(Bi, Ai);
    const Matrix H = sample_latents(model.latent, model.m, N, seed);
    const Vector shift = iv.value * unit_lower_solve(Bi, Matrix::Identity(model.n, model.n)).col(iv.target);

    Dataset out;
    out.samples = H * Di.transpose();
    out.samples.rowwise() += shift.transpose();
    if (model.noise_std > 0.0) {
        Matrix E = detail::gaussian_matrix(N, model.n, model.noise_std, seed);
        E.col(iv.target).setZero();
        Matrix Gi = unit_lower_solve(Bi, Matrix::Identity(model.n, model.n));
        out.samples += E * Gi.transpose();
    }
    out.samples.col(iv.target).setConstant(iv.value);  // exact by construction; pin bitwise
    out.intervention = iv;
    out.seed = seed;
    return out;
}

struct RandomModelOptions {
    double edge_prob = 0.5;
    double weight_lo = 0.5;
    double weight_hi = 1.5;
    double noise_std = 0.0;
    LatentSpec latent{LatentFamily::Laplace, 1.0, 1.0};
    double rank_tol = defaults::rank_tol;
    int max_regeneration = 100;
};

// Random valid model: B strictly lower triangular with Bernoulli(edge_prob)
// edges, A dense, all weights of magnitude in [weight_lo, weight_hi] with
// random sign. A is regenerated until it is well conditioned.
inline SemIcaModel random_model(int n, int m, std::uint64_t seed,
                                const RandomModelOptions& opts = {}) {
    if (m > n || n < 1 || m < 1) throw std::invalid_argument("random_model: need 1 <= m <= n");
    if (!(opts.weight_lo > 0.0) || !(opts.weight_hi > opts.weight_lo))
        throw std::invalid_argument("random_model: need 0 < weight_lo < weight_hi");

    std::mt19937_64 rng(detail::mix_seed(seed, 0x30de1));
    std::uniform_real_distribution<double> mag(opts.weight_lo, opts.weight_hi);
    std::bernoulli_distribution coin(0.5), edge(opts.edge_prob);
    auto weight = [&] { return (coin(rng) ? 1.0 : -1.0) * mag(rng); };

    SemIcaModel model;
    model.n = n;
    model.m = m;
    model.noise_std = opts.noise_std;
    model.latent = opts.latent;
    model.B = Matrix::Zero(n, n);
    for (int i = 1; i < n; ++i)
        for (int j = 0; j < i; ++j)
            if (edge(rng)) model.B(i, j) = weight();

    for (int attempt = 0; attempt < opts.max_regeneration; ++attempt) {
        model.A.resize(n, m);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) model.A(i, j) = weight();
        Eigen::JacobiSVD<Matrix> svd(model.A);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) > opts.rank_tol * sv(0)) return model;
    }
    throw std::runtime_error("random_model: could not generate a full-rank A");
}

// --- dataset files: CSV of samples plus a JSON sidecar with the tag ---

inline void write_dataset_csv(const Dataset& data, const std::string& csv_path,
                              const std::string& sidecar_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot open " + csv_path);
    for (int j = 0; j < data.n(); ++j) csv << (j ? "," : "") << "x" << (j + 1);
    csv << "\n";
    char buf[32];
    for (int i = 0; i < data.N(); ++i) {
        for (int j = 0; j < data.n(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", data.samples(i, j));
            csv << (j ? "," : "") << buf;
        }
        csv << "\n";
    }
    nlohmann::json side{{"seed", data.seed}, {"N", data.N()}};
    if (data.intervention) {
        side["intervention_target"] = data.intervention->target;
        side["value"] = data.intervention->value;
    } else {
        side["intervention_target"] = nullptr;
        side["value"] = nullptr;
    }
    std::ofstream sj(sidecar_path);
    if (!sj) throw std::runtime_error("cannot open " + sidecar_path);
    sj << side.dump(2) << "\n";
}

inline Dataset read_dataset_csv(const std::string& csv_path, const std::string& sidecar_path) {
    std::ifstream csv(csv_path);
    if (!csv) throw std::runtime_error("cannot open " + csv_path);
    std::string line;
    if (!std::getline(csv, line)) throw std::runtime_error("empty dataset file " + csv_path);
    int n = 1;
    for (char c : line)
        if (c == ',') ++n;
    std::vector<double> values;
    int rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        size_t pos = 0;
        for (int j = 0; j < n; ++j) {
            size_t next = line.find(',', pos);
            values.push_back(std::stod(line.substr(pos, next - pos)));
            pos = (next == std::string::npos) ? line.size() : next + 1;
        }
        ++rows;
    }
    Dataset out;
    out.samples.resize(rows, n);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < n; ++j) out.samples(i, j) = values[static_cast<size_t>(i * n + j)];

    std::ifstream sj(sidecar_path);
    if (!sj) throw std::runtime_error("cannot open " + sidecar_path);
    nlohmann::json side = nlohmann::json::parse(sj);
    out.seed = side.value("seed", std::uint64_t{0});
    if (!side.at("intervention_target").is_null())
        out.intervention = Intervention{side.at("intervention_target").get<int>(),
                                        side.at("value").get<double>()};
    return out;
}

}  // namespace semica
