#pragma once

// End-to-end recovery: ICA estimates of C and the response matrices, causal
// order, alignment, rank-1 assembly, and joint refinement, with restarts
// keeping the lowest final objective. Also the exact-moment path that feeds
// population matrices straight into alignment/assembly.

#include "semica/recovery.hpp"

namespace semica {

struct RecoveryMetrics {
    double mse_B = std::numeric_limits<double>::quiet_NaN();
    double mse_A = std::numeric_limits<double>::quiet_NaN();
    double amax_B = std::numeric_limits<double>::quiet_NaN();
    double amax_A = std::numeric_limits<double>::quiet_NaN();
    bool order_correct = false;
};

struct RecoveryResult {
    Matrix A_hat;  // n x m
    Matrix B_hat;  // n x n, strictly lower triangular in causal_order coordinates
    std::vector<int> causal_order;
    std::vector<int> targets;
    std::vector<ColumnAlignment> alignments;  // per intervention, vs C_hat
    std::vector<double> rank1_ratios;         // sigma2/sigma1 per intervention
    std::vector<double> objective_trace;      // from the winning restart
    double objective_final = 0.0;
    std::vector<bool> identified;             // per variable: G column recovered
    std::vector<std::string> flags;
    RecoveryMetrics metrics;
};

struct PipelineOptions {
    int restarts = 20;
    std::uint64_t seed = 0;
    double threshold_z = 6.0;
    IcaOptions ica;
    AlignOptions align;
    double g_floor = defaults::g_floor;
    double triangular_tol = defaults::triangular_tol_noisy;
    RefineOptions refine;
    bool skip_refine = false;
};

namespace detail {

struct Moments {
    Matrix sigma;
    CumulantTensor4 M4;
};

inline Moments dataset_moments(const Dataset& data) {
    Dataset c = center(data);
    return {empirical_covariance(c), empirical_cumulant4(c)};
}

inline std::vector<int> positions(const std::vector<int>& order) {
    std::vector<int> pos(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) pos[order[r]] = static_cast<int>(r);
    return pos;
}

inline Matrix permute_rows(const Matrix& M, const std::vector<int>& order) {
    Matrix out(M.rows(), M.cols());
    for (int r = 0; r < M.rows(); ++r) out.row(r) = M.row(order[r]);
    return out;
}
inline Matrix unpermute_rows(const Matrix& M, const std::vector<int>& order) {
    Matrix out(M.rows(), M.cols());
    for (int r = 0; r < M.rows(); ++r) out.row(order[r]) = M.row(r);
    return out;
}
inline Matrix permute_both(const Matrix& M, const std::vector<int>& order) {
    Matrix out(M.rows(), M.cols());
    for (int r = 0; r < M.rows(); ++r)
        for (int c = 0; c < M.cols(); ++c) out(r, c) = M(order[r], order[c]);
    return out;
}
inline Matrix unpermute_both(const Matrix& M, const std::vector<int>& order) {
    Matrix out(M.rows(), M.cols());
    for (int r = 0; r < M.rows(); ++r)
        for (int c = 0; c < M.cols(); ++c) out(order[r], order[c]) = M(r, c);
    return out;
}

}  // namespace detail

// Full data-driven pipeline over one observational and any number of
// single-variable interventional datasets (at most one per variable).
// Variables without interventional data get standard-basis G columns and are
// flagged as unidentified.
inline RecoveryResult recover_pipeline(const Dataset& obs, const std::vector<Dataset>& intvs,
                                       int m, const PipelineOptions& opts = {}) {
    const int n = obs.n();
    if (m < 1 || m > n) throw std::invalid_argument("recover_pipeline: need 1 <= m <= n");

    std::vector<int> targets;
    for (const auto& d : intvs) {
        if (!d.intervention) throw std::invalid_argument("recover_pipeline: untagged dataset");
        const int i = d.intervention->target;
        if (i < 0 || i >= n) throw std::invalid_argument("recover_pipeline: target out of range");
        if (std::find(targets.begin(), targets.end(), i) != targets.end())
            throw std::invalid_argument("recover_pipeline: duplicate intervention target");
        targets.push_back(i);
    }

    // causal order from mean shifts (partial coverage allowed)
    EffectMatrix effects(n);
    for (std::size_t t = 0; t < intvs.size(); ++t) {
        const int i = targets[t];
        effects.covered[i] = true;
        std::vector<bool> aff = detect_affected(obs, intvs[t], opts.threshold_z);
        for (int j = 0; j < n; ++j) effects.affected[j][i] = aff[j];
    }
    const std::vector<int> order = causal_order_from_effects(effects);
    const std::vector<int> pos = detail::positions(order);

    // moments once per dataset; refinement targets in the ordered frame
    const detail::Moments mom_obs = detail::dataset_moments(obs);
    std::vector<detail::Moments> mom_int;
    mom_int.reserve(intvs.size());
    for (const auto& d : intvs) mom_int.push_back(detail::dataset_moments(d));

    const CumulantTensor4 M4_obs_ord = mom_obs.M4.permuted(order);
    std::vector<CumulantTensor4> M4_int_ord;
    M4_int_ord.reserve(intvs.size());
    for (const auto& mi : mom_int) M4_int_ord.push_back(mi.M4.permuted(order));

    std::vector<int> targets_ord(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) targets_ord[t] = pos[targets[t]];

    RecoveryResult best;
    double best_obj = std::numeric_limits<double>::infinity();
    std::string last_error;
    int successes = 0;

    for (int r = 0; r < std::max(1, opts.restarts); ++r) {
        try {
            const std::uint64_t seed_r = detail::mix_seed(opts.seed, 7000 + static_cast<std::uint64_t>(r));
            IcaOptions ica = opts.ica;
            ica.decomp.seed = detail::mix_seed(seed_r, 0);
            IcaMixing C_est = recover_ica_from_moments(mom_obs.sigma, mom_obs.M4, m, ica);

            std::vector<IcaMixing> D_est;
            std::vector<Matrix> D_cols;
            for (std::size_t t = 0; t < intvs.size(); ++t) {
                ica.decomp.seed = detail::mix_seed(seed_r, 1 + static_cast<std::uint64_t>(t));
                D_est.push_back(recover_ica_from_moments(mom_int[t].sigma, mom_int[t].M4, m, ica));
                D_cols.push_back(D_est.back().columns);
            }

            AlignOptions al = opts.align;
            al.weights_C = C_est.weights;
            al.weights_D.clear();
            for (const auto& de : D_est) al.weights_D.push_back(de.weights);
            std::vector<ColumnAlignment> aligns = align_columns(C_est.columns, D_cols, al);

            std::vector<Matrix> alignedD;
            for (std::size_t t = 0; t < D_cols.size(); ++t)
                alignedD.push_back(apply_alignment(D_cols[t], aligns[t]));

            std::vector<Rank1System> systems =
                rank1_differences(C_est.columns, alignedD, targets, opts.g_floor);
            AssembledAB assembled = assemble_AB(systems, C_est.columns, order,
                                                opts.triangular_tol, /*strict=*/false);

            JointState state;
            state.A = detail::permute_rows(assembled.A_hat, order);
            state.B = detail::permute_both(assembled.B_hat, order);
            state.C = detail::permute_rows(C_est.columns, order);
            state.targets = targets_ord;
            for (const auto& Dm : alignedD) state.D.push_back(detail::permute_rows(Dm, order));

            const Vector kappa = C_est.weights;
            RefineOutcome refined;
            if (opts.skip_refine) {
                refined.state = state;
                refined.trace = {objective_eq7(state, M4_obs_ord, M4_int_ord, kappa)};
            } else {
                refined = joint_refine(state, M4_obs_ord, M4_int_ord, kappa, opts.refine);
            }

            const double obj = refined.trace.back();
            if (!(obj < best_obj)) continue;
            best_obj = obj;

            best = RecoveryResult{};
            best.A_hat = detail::unpermute_rows(refined.state.A, order);
            best.B_hat = detail::unpermute_both(refined.state.B, order);
            best.causal_order = order;
            best.targets = targets;
            best.alignments = std::move(aligns);
            for (const auto& sys : systems) best.rank1_ratios.push_back(sys.ratio);
            best.objective_trace = std::move(refined.trace);
            best.objective_final = obj;
            best.identified = assembled.identified;
            best.flags = assembled.triangular_flags;
            if (refined.solver_fault) best.flags.push_back("refine: solver fault");
            ++successes;
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    if (successes == 0 && best_obj == std::numeric_limits<double>::infinity()) {
        if (!last_error.empty()) throw std::runtime_error("recover_pipeline: " + last_error);
        throw std::runtime_error("recover_pipeline: all restarts failed");
    }
    return best;
}

// Exact-moment path: population C and response matrices injected directly,
// bypassing estimation. The causal order is read off the support of the
// rank-1 differences.
inline RecoveryResult recover_from_population(const Matrix& C,
                                              const std::vector<std::pair<int, Matrix>>& D_list,
                                              const PipelineOptions& opts = {}) {
    const int n = static_cast<int>(C.rows());
    EffectMatrix effects(n);
    std::vector<int> targets;
    std::vector<Matrix> D_mats;
    for (const auto& [i, D] : D_list) {
        targets.push_back(i);
        D_mats.push_back(D);
        effects.covered[i] = true;
        const Matrix F = C - D;
        const double scale = F.norm();
        for (int j = 0; j < n; ++j)
            if (j != i) effects.affected[j][i] = F.row(j).norm() > 1e-9 * std::max(scale, 1e-30);
    }
    const std::vector<int> order = causal_order_from_effects(effects);

    AlignOptions al = opts.align;
    al.mode = AlignMode::Exact;
    std::vector<ColumnAlignment> aligns = align_columns(C, D_mats, al);
    std::vector<Matrix> alignedD;
    for (std::size_t t = 0; t < D_mats.size(); ++t)
        alignedD.push_back(apply_alignment(D_mats[t], aligns[t]));
    std::vector<Rank1System> systems = rank1_differences(C, alignedD, targets, opts.g_floor);
    AssembledAB assembled =
        assemble_AB(systems, C, order, defaults::triangular_tol_exact, /*strict=*/true);

    RecoveryResult out;
    out.A_hat = assembled.A_hat;
    out.B_hat = assembled.B_hat;
    out.causal_order = order;
    out.targets = targets;
    out.alignments = std::move(aligns);
    for (const auto& sys : systems) out.rank1_ratios.push_back(sys.ratio);
    out.identified = assembled.identified;
    out.flags = assembled.triangular_flags;

    const Matrix I = Matrix::Identity(n, n);
    double obj = ((I - out.B_hat) * C - out.A_hat).squaredNorm();
    for (std::size_t t = 0; t < targets.size(); ++t) {
        Matrix Ai = out.A_hat, Bi = out.B_hat;
        Ai.row(targets[t]).setZero();
        Bi.row(targets[t]).setZero();
        obj += ((I - Bi) * alignedD[t] - Ai).squaredNorm();
    }
    out.objective_final = obj;
    out.objective_trace = {obj};
    return out;
}

// --- evaluation against ground truth ------------------------------------------

namespace detail {

// err(perm) with the optimal signed scale per column; also reports the
// aligned estimate for max-norm metrics.
inline double alignment_error(const Matrix& A, const Matrix& A_hat, const std::vector<int>& perm,
                              Matrix* aligned_out = nullptr) {
    double err = 0.0;
    Matrix aligned = Matrix::Zero(A.rows(), A.cols());
    for (int j = 0; j < A.cols(); ++j) {
        const Vector& a = A.col(j);
        const Vector ahat = A_hat.col(perm[j]);
        const double denom = ahat.squaredNorm();
        const double coef = denom > 1e-28 ? a.dot(ahat) / denom : 0.0;
        aligned.col(j) = coef * ahat;
        err += (a - aligned.col(j)).squaredNorm();
    }
    if (aligned_out) *aligned_out = aligned;
    return err;
}

}  // namespace detail

inline RecoveryMetrics evaluate(const SemIcaModel& model, const RecoveryResult& result) {
    RecoveryMetrics metrics;
    const int n = model.n;
    if (result.B_hat.rows() != n || result.A_hat.rows() != n)
        throw std::invalid_argument("evaluate: dimension mismatch");

    Matrix dB = model.B - result.B_hat;
    metrics.mse_B = dB.squaredNorm() / (static_cast<double>(n) * n);
    metrics.amax_B = dB.cwiseAbs().maxCoeff();

    // column alignment for A: exhaustive for small m, greedy otherwise
    const int m = model.m;
    const int mh = static_cast<int>(result.A_hat.cols());
    Matrix A_hat = result.A_hat;
    if (mh != m) {  // pad/truncate for misspecified runs
        Matrix padded = Matrix::Zero(n, std::max(m, mh));
        padded.leftCols(mh) = A_hat;
        A_hat = padded.leftCols(std::max(m, mh));
    }
    const int mm = static_cast<int>(A_hat.cols());
    Matrix A = Matrix::Zero(n, mm);
    A.leftCols(m) = model.A;

    std::vector<int> best_perm(mm);
    std::iota(best_perm.begin(), best_perm.end(), 0);
    double best_err = std::numeric_limits<double>::infinity();
    if (mm <= 7) {
        std::vector<int> perm = best_perm;
        do {
            const double err = detail::alignment_error(A, A_hat, perm);
            if (err < best_err) {
                best_err = err;
                best_perm = perm;
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
    } else {
        std::vector<bool> used(mm, false);
        for (int j = 0; j < mm; ++j) {
            int pick = -1;
            double best = -1.0;
            for (int k = 0; k < mm; ++k) {
                if (used[k]) continue;
                const double na = A.col(j).norm(), nh = A_hat.col(k).norm();
                const double c = (na > 1e-14 && nh > 1e-14)
                                     ? std::abs(A.col(j).dot(A_hat.col(k))) / (na * nh)
                                     : 0.0;
                if (c > best) { best = c; pick = k; }
            }
            used[pick] = true;
            best_perm[j] = pick;
        }
        best_err = detail::alignment_error(A, A_hat, best_perm);
    }
    Matrix aligned;
    detail::alignment_error(A, A_hat, best_perm, &aligned);
    metrics.mse_A = best_err / (static_cast<double>(n) * m);
    metrics.amax_A = (A - aligned).cwiseAbs().maxCoeff();

    // order_correct: every true edge j -> i has j before i
    std::vector<int> pos = detail::positions(result.causal_order);
    metrics.order_correct = true;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (model.B(i, j) != 0.0 && pos[j] >= pos[i]) metrics.order_correct = false;
    return metrics;
}

// --- result serialization ------------------------------------------------------

inline nlohmann::json to_json(const RecoveryResult& r) {
    auto mat = [](const Matrix& M) {
        std::vector<double> v;
        for (int i = 0; i < M.rows(); ++i)
            for (int j = 0; j < M.cols(); ++j) v.push_back(M(i, j));
        return nlohmann::json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", v}};
    };
    nlohmann::json j{{"A_hat", mat(r.A_hat)},
                     {"B_hat", mat(r.B_hat)},
                     {"causal_order", r.causal_order},
                     {"targets", r.targets},
                     {"rank1_ratios", r.rank1_ratios},
                     {"objective_trace", r.objective_trace},
                     {"objective_final", r.objective_final},
                     {"identified", r.identified},
                     {"flags", r.flags}};
    if (std::isfinite(r.metrics.mse_B))
        j["metrics"] = {{"mse_B", r.metrics.mse_B},
                        {"mse_A", r.metrics.mse_A},
                        {"amax_B", r.metrics.amax_B},
                        {"amax_A", r.metrics.amax_A},
                        {"order_correct", r.metrics.order_correct}};
    return j;
}

}  // namespace semica
