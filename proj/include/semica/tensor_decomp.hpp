#pragma once

// Weighted rank-1 decomposition of symmetric 4th-order tensors via the
// robust tensor power method (multi-start + deflation), and the ICA mixing
// recovery pipeline built on it.

#include <cstdint>

#include "semica/cumulants.hpp"

namespace semica {

// Weighted rank-1 terms: T ~ sum_j weights(j) * columns.col(j)^{(x4)}.
struct CpFactors {
    Vector weights;               // signed kurtosis-like weights
    Matrix columns;               // unit-norm components, dim x m
    std::vector<bool> converged;  // per component
    double residual = 0.0;        // Frobenius norm of the deflated remainder
};

struct PowerStep {
    Vector v;       // unit
    double lambda;  // T(v,v,v,v) at the input v
};

// One alternating power update: u = T(.,v,v,v), lambda = <u,v>, v' = u/|u|
// with the sign fixed so <v',v> >= 0.
inline PowerStep power_step(const CumulantTensor4& T, const Vector& v) {
    Vector u = T.contract3(v);
    const double lambda = u.dot(v);
    const double norm = u.norm();
    if (norm < 1e-14) throw std::runtime_error("power_step: degenerate direction");
    Vector vn = u / norm;
    if (vn.dot(v) < 0.0) vn = -vn;
    return {std::move(vn), lambda};
}

struct DecompOptions {
    int L = 30;            // random initializations per component
    int max_iter = 200;
    double tol = 1e-10;
    std::uint64_t seed = 0;
};

namespace detail {

inline Vector random_unit(std::mt19937_64& rng, int dim) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vector v(dim);
    for (;;) {
        for (int i = 0; i < dim; ++i) v(i) = gauss(rng);
        const double norm = v.norm();
        if (norm > 1e-12) return v / norm;
    }
}

// Initialization from the leading singular vector of the square unfolding.
inline Vector spectral_init(const CumulantTensor4& T) {
    const int dim = T.dim();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(T.square_unfolding());
    const auto& ev = eig.eigenvalues();
    const int pick = std::abs(ev(0)) > std::abs(ev(ev.size() - 1)) ? 0 : static_cast<int>(ev.size()) - 1;
    Matrix slab(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) slab(i, j) = eig.eigenvectors()(i * dim + j, pick);
    Eigen::JacobiSVD<Matrix> svd(slab, Eigen::ComputeThinU);
    return svd.matrixU().col(0);
}

}  // namespace detail

// Greedy rank-1 extraction: per component, run the power iteration from the
// spectral init plus L random unit starts, keep the candidate with largest
// |lambda| (ties to the earliest start), then deflate. Components that never
// produced a usable candidate are flagged with weight 0.
inline CpFactors decompose_symmetric4(const CumulantTensor4& T, int m,
                                      const DecompOptions& opts = {}) {
    const int dim = T.dim();
    if (m < 1 || m > dim) throw std::invalid_argument("decompose_symmetric4: need 1 <= m <= dim");
    if (opts.L < 1) throw std::invalid_argument("decompose_symmetric4: need L >= 1");

    CumulantTensor4 work = T;
    CpFactors out;
    out.weights = Vector::Zero(m);
    out.columns = Matrix::Zero(dim, m);
    out.converged.assign(m, false);

    for (int comp = 0; comp < m; ++comp) {
        std::mt19937_64 rng(detail::mix_seed(opts.seed, 0xdec0 + static_cast<std::uint64_t>(comp)));
        Vector best_v;
        double best_lambda = 0.0;
        bool best_converged = false;
        bool have = false;

        for (int init = 0; init <= opts.L; ++init) {
            Vector v;
            try {
                v = (init == 0) ? detail::spectral_init(work) : detail::random_unit(rng, dim);
            } catch (const std::exception&) {
                continue;
            }
            bool converged = false;
            try {
                for (int it = 0; it < opts.max_iter; ++it) {
                    PowerStep step = power_step(work, v);
                    const double delta = (step.v - v).norm();
                    v = std::move(step.v);
                    if (delta < opts.tol) {
                        converged = true;
                        break;
                    }
                }
            } catch (const std::exception&) {
                continue;  // degenerate direction; drop this start
            }
            const double lambda = work.contract3(v).dot(v);
            if (!have || std::abs(lambda) > std::abs(best_lambda)) {
                have = true;
                best_v = v;
                best_lambda = lambda;
                best_converged = converged;
            }
        }

        if (!have || best_lambda == 0.0) {
            // nothing left to extract; keep a unit placeholder column
            out.columns(comp % dim, comp) = 1.0;
            out.converged[comp] = false;
            continue;
        }
        // largest-magnitude entry positive, for reproducibility
        int imax = 0;
        best_v.cwiseAbs().maxCoeff(&imax);
        if (best_v(imax) < 0.0) best_v = -best_v;

        out.columns.col(comp) = best_v;
        out.weights(comp) = best_lambda;
        out.converged[comp] = best_converged;
        work.add_symmetric_rank1(-best_lambda, best_v);
    }
    out.residual = work.frobenius_norm();
    return out;
}

// Model cumulant of a mixing matrix: sum_j kappa(j) * C.col(j)^{(x4)}.
inline CumulantTensor4 model_cumulant(const Matrix& C, const Vector& kappa) {
    if (kappa.size() != C.cols()) throw std::invalid_argument("model_cumulant: dimension mismatch");
    CumulantTensor4 T(static_cast<int>(C.rows()));
    for (int j = 0; j < C.cols(); ++j) T.add_symmetric_rank1(kappa(j), C.col(j));
    return T;
}

struct IcaOptions {
    DecompOptions decomp;
    double noise_var = 0.0;        // subtracted from the covariance spectrum
    double eig_floor_rel = defaults::eig_floor_rel;
    bool allow_rank_deficient = true;  // shrink k below m instead of failing
};

// ICA mixing estimate. Columns are unit-norm (or zero when unidentified);
// weights carry both the component kurtosis and the 4th power of the column
// scale, so that sum_j weights(j) * (W^T columns.col(j))^{(x4)} reproduces
// the whitened cumulant.
struct IcaMixing {
    Matrix columns;                // n x m
    Vector weights;
    std::vector<bool> identified;  // false for columns lost to rank deficiency
    std::vector<bool> converged;
    int k_effective = 0;
    Whitener whitener;
};

// Decomposition from precomputed moments: whiten -> whitened cumulant ->
// power-method decomposition -> unwhitened columns. When the (noise-adjusted)
// covariance has rank below m, only that many components are recoverable;
// the remaining columns come back zero and flagged.
inline IcaMixing recover_ica_from_moments(const Matrix& sigma, const CumulantTensor4& M4, int m,
                                          const IcaOptions& opts = {}) {
    const int n = static_cast<int>(sigma.rows());
    if (m < 1 || m > n) throw std::invalid_argument("recover_ica_from_moments: need 1 <= m <= n");

    int k = std::min(m, effective_rank(sigma, opts.noise_var, opts.eig_floor_rel));
    if (k < 1)
        throw std::runtime_error("recover_ica_from_moments: no signal above the eigenvalue floor");
    if (k < m && !opts.allow_rank_deficient)
        throw std::runtime_error("recover_ica_from_moments: covariance rank below m");

    IcaMixing out;
    out.whitener = whiten(sigma, k, opts.noise_var, opts.eig_floor_rel);
    out.k_effective = k;
    const CpFactors cp = decompose_symmetric4(whiten_cumulant(M4, out.whitener), k, opts.decomp);

    out.columns = Matrix::Zero(n, m);
    out.weights = Vector::Zero(m);
    out.identified.assign(m, false);
    out.converged.assign(m, false);
    for (int j = 0; j < k; ++j) {
        Vector c = out.whitener.unwhiten * cp.columns.col(j);
        const double scale = c.norm();
        if (scale < 1e-14) continue;
        c /= scale;
        int imax = 0;
        c.cwiseAbs().maxCoeff(&imax);
        if (c(imax) < 0.0) c = -c;
        out.columns.col(j) = c;
        out.weights(j) = cp.weights(j) * scale * scale * scale * scale;
        out.identified[j] = true;
        out.converged[j] = cp.converged[j];
    }
    return out;
}

// Full data pipeline: center -> covariance -> 4th cumulant -> decomposition.
inline IcaMixing recover_ica_mixing(const Dataset& data, int m, const IcaOptions& opts = {}) {
    if (m < 1 || m > data.n()) throw std::invalid_argument("recover_ica_mixing: need 1 <= m <= n");
    const Dataset centered = center(data);
    return recover_ica_from_moments(empirical_covariance(centered), empirical_cumulant4(centered),
                                    m, opts);
}

}  // namespace semica
