#pragma once

// Causal-discovery core: causal order from single-variable interventions,
// column alignment across response-matrix estimates, rank-1 recovery of the
// unit-lower-triangular G = (I-B)^{-1}, assembly of (A, B), and joint
// block-coordinate refinement of the combined linear + cumulant objective.

#include <functional>
#include <limits>

#include "semica/tensor_decomp.hpp"

namespace semica {

// affected(j,i): X_j shifted under Do(X_i). Diagonal excluded.
struct EffectMatrix {
    std::vector<std::vector<bool>> affected;
    std::vector<bool> covered;  // which targets have interventional data

    explicit EffectMatrix(int n)
        : affected(n, std::vector<bool>(n, false)), covered(n, false) {}
    int n() const { return static_cast<int>(affected.size()); }
};

// Two-sample mean-shift test per coordinate against the observational set.
// Coordinate j != target is flagged when |mean difference| exceeds
// threshold_z standard errors.
inline std::vector<bool> detect_affected(const Dataset& obs, const Dataset& intv,
                                         double threshold_z) {
    if (!intv.intervention) throw std::invalid_argument("detect_affected: missing intervention tag");
    if (obs.n() != intv.n()) throw std::invalid_argument("detect_affected: dimension mismatch");
    const int n = obs.n();
    const int target = intv.intervention->target;

    auto col_stats = [](const Matrix& X, int j) {
        const double mean = X.col(j).mean();
        const double var = (X.col(j).array() - mean).square().sum() / X.rows();
        return std::pair<double, double>(mean, var);
    };
    std::vector<bool> out(n, false);
    for (int j = 0; j < n; ++j) {
        if (j == target) continue;
        auto [mo, vo] = col_stats(obs.samples, j);
        auto [mi, vi] = col_stats(intv.samples, j);
        const double se = std::sqrt(vo / obs.N() + vi / intv.N());
        const double floor = 1e-12 * (1.0 + std::abs(mo));
        out[j] = std::abs(mi - mo) > threshold_z * se + floor;
    }
    return out;
}

namespace detail {

inline std::string cycle_to_string(const std::vector<int>& cyc) {
    std::string s;
    for (int v : cyc) s += std::to_string(v) + " -> ";
    s += std::to_string(cyc.front());
    return s;
}

// Topological order of the ancestor relation, ancestors first, ties broken
// by ascending variable index. ancestors_of[j] lists known ancestors of j.
inline std::vector<int> ancestors_first_order(const std::vector<std::vector<int>>& ancestors_of) {
    const int n = static_cast<int>(ancestors_of.size());
    std::vector<int> order;
    std::vector<bool> placed(n, false);
    for (int step = 0; step < n; ++step) {
        int pick = -1;
        for (int v = 0; v < n && pick < 0; ++v) {
            if (placed[v]) continue;
            bool ready = true;
            for (int p : ancestors_of[v])
                if (!placed[p]) { ready = false; break; }
            if (ready) pick = v;
        }
        if (pick < 0) {
            // walk the remaining graph to name one cycle
            std::vector<int> path;
            std::vector<int> state(n, 0);
            std::function<bool(int)> dfs = [&](int v) -> bool {
                state[v] = 1;
                path.push_back(v);
                for (int p : ancestors_of[v]) {
                    if (placed[p]) continue;
                    if (state[p] == 1) {
                        auto it = std::find(path.begin(), path.end(), p);
                        path.erase(path.begin(), it);
                        return true;
                    }
                    if (state[p] == 0 && dfs(p)) return true;
                }
                state[v] = 2;
                path.pop_back();
                return false;
            };
            for (int v = 0; v < n; ++v)
                if (!placed[v] && state[v] == 0 && dfs(v))
                    throw std::runtime_error("causal_order: effect relation has a cycle: " +
                                             cycle_to_string(path));
            throw std::runtime_error("causal_order: effect relation has a cycle");
        }
        placed[pick] = true;
        order.push_back(pick);
    }
    return order;
}

}  // namespace detail

inline std::vector<int> causal_order_from_effects(const EffectMatrix& effects) {
    const int n = effects.n();
    std::vector<std::vector<int>> ancestors_of(n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i)
            if (i != j && effects.covered[i] && effects.affected[j][i]) ancestors_of[j].push_back(i);
    return detail::ancestors_first_order(ancestors_of);
}

// Causal order from one interventional dataset per variable.
inline std::vector<int> causal_order(const Dataset& obs, const std::vector<Dataset>& intvs,
                                     double threshold_z) {
    const int n = obs.n();
    EffectMatrix effects(n);
    for (const auto& d : intvs) {
        if (!d.intervention) throw std::invalid_argument("causal_order: missing intervention tag");
        const int i = d.intervention->target;
        effects.covered[i] = true;
        std::vector<bool> aff = detect_affected(obs, d, threshold_z);
        for (int j = 0; j < n; ++j) effects.affected[j][i] = aff[j];
    }
    for (int i = 0; i < n; ++i)
        if (!effects.covered[i])
            throw std::invalid_argument("causal_order: no interventional data for variable " +
                                        std::to_string(i));
    return causal_order_from_effects(effects);
}

// --- column alignment --------------------------------------------------------

enum class AlignMode { Exact, Greedy };

struct AlignOptions {
    AlignMode mode = AlignMode::Exact;
    int exact_limit = 7;  // fall back to greedy above this m
    double parallel_tol = 1e-12;
    bool early_exit = true;  // stop the exact search at a numerically zero residual
    // Component weights from the decomposition; when present, the relative
    // column scale is (|w_D|/|w_C|)^{1/4} (the same latent keeps its kurtosis
    // across interventions, so the weight ratio isolates the scale).
    std::optional<Vector> weights_C;
    std::vector<std::optional<Vector>> weights_D;
};

namespace detail {

inline void check_distinct_columns(const Matrix& M, double parallel_tol, const char* label) {
    for (int a = 0; a < M.cols(); ++a) {
        const double na = M.col(a).norm();
        if (na < 1e-14) continue;
        for (int b = a + 1; b < M.cols(); ++b) {
            const double nb = M.col(b).norm();
            if (nb < 1e-14) continue;
            Vector u = M.col(a) / na, v = M.col(b) / nb;
            const double angle = std::min((u - v).norm(), (u + v).norm());
            if (angle < parallel_tol)
                throw std::runtime_error(std::string("align_columns: ambiguous assignment, ") +
                                         label + " columns " + std::to_string(a) + " and " +
                                         std::to_string(b) + " are parallel");
        }
    }
}

// Residual energy beyond the best rank-1 approximation of F.
inline double rank1_tail(const Matrix& F) {
    const double total = F.squaredNorm();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(F.transpose() * F);
    const double top = eig.eigenvalues().maxCoeff();
    return std::max(total - top, 0.0);
}

inline std::vector<double> scales_from_weights(const Vector& wC, const Vector& wD,
                                               const std::vector<int>& perm) {
    std::vector<double> scales(perm.size(), 1.0);
    for (std::size_t j = 0; j < perm.size(); ++j) {
        const double c = std::abs(wC(static_cast<int>(j)));
        const double d = std::abs(wD(perm[j]));
        if (c > 1e-30) scales[j] = std::pow(d / c, 0.25);
    }
    return scales;
}

}  // namespace detail

// Resolves the permutation/sign/scale indeterminacy of each response-matrix
// estimate against C_hat. Exact mode searches all m! * 2^m candidates for
// the one minimizing the rank-1 residual of C_hat - aligned(D); greedy mode
// is a max-|cosine| assignment with sign from the cosine and scale from the
// projection ratio.
inline std::vector<ColumnAlignment> align_columns(const Matrix& C_hat,
                                                  const std::vector<Matrix>& D_hats,
                                                  const AlignOptions& opts = {}) {
    const int m = static_cast<int>(C_hat.cols());
    detail::check_distinct_columns(C_hat, opts.parallel_tol, "C_hat");

    const bool use_exact = opts.mode == AlignMode::Exact && m <= opts.exact_limit;
    std::vector<ColumnAlignment> out;
    out.reserve(D_hats.size());

    for (std::size_t d = 0; d < D_hats.size(); ++d) {
        const Matrix& D = D_hats[d];
        if (D.rows() != C_hat.rows() || D.cols() != m)
            throw std::invalid_argument("align_columns: dimension mismatch");
        detail::check_distinct_columns(D, opts.parallel_tol, "D_hat");

        const bool have_w = opts.weights_C.has_value() && d < opts.weights_D.size() &&
                            opts.weights_D[d].has_value();

        if (use_exact) {
            std::vector<int> perm(m);
            std::iota(perm.begin(), perm.end(), 0);
            ColumnAlignment best = ColumnAlignment::identity(m);
            double best_res = std::numeric_limits<double>::infinity();
            const double exit_tol = 1e-24 * (C_hat.squaredNorm() + 1.0);
            bool done = false;
            do {
                std::vector<double> scales =
                    have_w ? detail::scales_from_weights(*opts.weights_C, *opts.weights_D[d], perm)
                           : std::vector<double>(m, 1.0);
                for (unsigned mask = 0; mask < (1u << m); ++mask) {
                    ColumnAlignment al;
                    al.perm = perm;
                    al.scales = scales;
                    al.signs.resize(m);
                    for (int j = 0; j < m; ++j) al.signs[j] = (mask >> j) & 1u ? -1.0 : 1.0;
                    const double res = detail::rank1_tail(C_hat - apply_alignment(D, al));
                    if (res < best_res) {
                        best_res = res;
                        best = al;
                        if (opts.early_exit && res < exit_tol) { done = true; break; }
                    }
                }
            } while (!done && std::next_permutation(perm.begin(), perm.end()));
            out.push_back(best);
        } else {
            // greedy max-|cosine| assignment
            ColumnAlignment al = ColumnAlignment::identity(m);
            std::vector<bool> used_c(m, false), used_d(m, false);
            for (int round = 0; round < m; ++round) {
                int bc = -1, bd = -1;
                double best = -1.0;
                for (int j = 0; j < m; ++j) {
                    if (used_c[j]) continue;
                    const double ncol = C_hat.col(j).norm();
                    for (int k = 0; k < m; ++k) {
                        if (used_d[k]) continue;
                        const double nd = D.col(k).norm();
                        double cosv = 0.0;
                        if (ncol > 1e-14 && nd > 1e-14)
                            cosv = std::abs(C_hat.col(j).dot(D.col(k))) / (ncol * nd);
                        if (cosv > best) {
                            best = cosv;
                            bc = j;
                            bd = k;
                        }
                    }
                }
                used_c[bc] = used_d[bd] = true;
                al.perm[bc] = bd;
                const double dd = D.col(bd).squaredNorm();
                if (have_w) {
                    const double proj = C_hat.col(bc).dot(D.col(bd));
                    al.signs[bc] = proj < 0.0 ? -1.0 : 1.0;
                    al.scales[bc] =
                        detail::scales_from_weights(*opts.weights_C, *opts.weights_D[d], al.perm)[bc];
                } else if (dd > 1e-28) {
                    const double coef = C_hat.col(bc).dot(D.col(bd)) / dd;
                    al.signs[bc] = coef < 0.0 ? -1.0 : 1.0;
                    al.scales[bc] = std::max(std::abs(coef), 1e-30);
                } else {
                    al.signs[bc] = 1.0;
                    al.scales[bc] = 0.0;
                }
            }
            out.push_back(al);
        }
    }
    return out;
}

// --- rank-1 systems and assembly ---------------------------------------------

struct Rank1System {
    int target = 0;
    Vector g;       // n-vector with g(target) = 1
    Vector a;       // m-vector, so that C - D ~ g a^T
    double ratio;   // sigma_2 / sigma_1 diagnostic
};

namespace defaults {
inline constexpr double g_floor = 1e-6;
inline constexpr double triangular_tol_exact = 1e-8;
inline constexpr double triangular_tol_noisy = 1e-3;
}  // namespace defaults

// SVD of each difference C_hat - aligned D_i, split as g a^T with the scale
// pinned by g(i) = 1 (valid because (I-B)^{-1} has a unit diagonal).
inline std::vector<Rank1System> rank1_differences(const Matrix& C_hat,
                                                  const std::vector<Matrix>& aligned_D,
                                                  const std::vector<int>& targets,
                                                  double g_floor = defaults::g_floor) {
    if (aligned_D.size() != targets.size())
        throw std::invalid_argument("rank1_differences: targets/D size mismatch");
    std::vector<Rank1System> out;
    out.reserve(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const int i = targets[t];
        Matrix F = C_hat - aligned_D[t];
        Eigen::JacobiSVD<Matrix> svd(F, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        const double s1 = sv(0);
        const double s2 = sv.size() > 1 ? sv(1) : 0.0;
        if (s1 < 1e-300)
            throw std::runtime_error("rank1_differences: zero difference for intervention " +
                                     std::to_string(i));
        Vector u = svd.matrixU().col(0);
        if (std::abs(u(i)) < g_floor)
            throw std::runtime_error(
                "rank1_differences: no self-column signal for intervention " + std::to_string(i));
        Rank1System sys;
        sys.target = i;
        sys.g = u / u(i);
        sys.a = svd.matrixV().col(0) * (s1 * u(i));
        sys.ratio = s1 > 0.0 ? s2 / s1 : 0.0;
        out.push_back(std::move(sys));
    }
    return out;
}

struct AssembledAB {
    Matrix A_hat;  // n x m, original coordinates
    Matrix B_hat;  // n x n, strictly lower triangular in `order` coordinates
    std::vector<bool> identified;            // per variable: had a rank-1 system
    std::vector<std::string> triangular_flags;  // above-diagonal entries that were zeroed
};

// Assembles G column-wise from the recovered g vectors (missing targets
// default to standard basis columns), enforces unit lower triangularity in
// the causal order, and reads off B = I - G^{-1}, A = G^{-1} C.
inline AssembledAB assemble_AB(const std::vector<Rank1System>& systems, const Matrix& C_hat,
                               const std::vector<int>& order,
                               double triangular_tol = defaults::triangular_tol_exact,
                               bool strict = true) {
    const int n = static_cast<int>(order.size());
    if (C_hat.rows() != n) throw std::invalid_argument("assemble_AB: dimension mismatch");
    std::vector<int> pos(n);
    for (int r = 0; r < n; ++r) pos[order[r]] = r;

    AssembledAB out;
    out.identified.assign(n, false);
    Matrix G = Matrix::Identity(n, n);
    for (const auto& sys : systems) {
        if (sys.g.size() != n) throw std::invalid_argument("assemble_AB: bad g length");
        G.col(sys.target) = sys.g;
        out.identified[sys.target] = true;
    }

    // ordered frame: Gord(r,c) = G(order[r], order[c])
    Matrix Gord(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) Gord(r, c) = G(order[r], order[c]);
    for (int r = 0; r < n; ++r) {
        Gord(r, r) = 1.0;
        for (int c = r + 1; c < n; ++c) {
            if (std::abs(Gord(r, c)) > triangular_tol) {
                std::ostringstream os;
                os << "G(" << order[r] << "," << order[c] << ") = " << Gord(r, c)
                   << " above the causal diagonal";
                if (strict) throw std::runtime_error("assemble_AB: " + os.str());
                out.triangular_flags.push_back(os.str());
            }
            Gord(r, c) = 0.0;
        }
    }

    // B = I - G^{-1}; G is unit lower triangular so the inverse is too
    Matrix Ginv = Gord.triangularView<Eigen::UnitLower>().solve(Matrix::Identity(n, n));
    Matrix Bord = Matrix::Identity(n, n) - Ginv;
    for (int r = 0; r < n; ++r)
        for (int c = r; c < n; ++c) Bord(r, c) = 0.0;

    Matrix Cord(n, C_hat.cols());
    for (int r = 0; r < n; ++r) Cord.row(r) = C_hat.row(order[r]);
    Matrix Aord = Gord.triangularView<Eigen::UnitLower>().solve(Cord);

    out.A_hat.resize(n, C_hat.cols());
    out.B_hat.resize(n, n);
    for (int r = 0; r < n; ++r) {
        out.A_hat.row(order[r]) = Aord.row(r);
        for (int c = 0; c < n; ++c) out.B_hat(order[r], order[c]) = Bord(r, c);
    }
    return out;
}

// --- joint objective and refinement -------------------------------------------

// All matrices live in the canonical (causal-order) frame: B strictly lower
// triangular, row target(i) of D[i] identically zero.
struct JointState {
    Matrix A;                // n x m
    Matrix B;                // n x n strictly lower triangular
    Matrix C;                // n x m
    std::vector<Matrix> D;   // per intervention
    std::vector<int> targets;
};

inline double objective_eq7(const JointState& s, const CumulantTensor4& M4_obs,
                            const std::vector<CumulantTensor4>& M4_int, const Vector& kappa) {
    if (M4_int.size() != s.D.size())
        throw std::invalid_argument("objective_eq7: cumulant target count mismatch");
    const int n = static_cast<int>(s.A.rows());
    const Matrix I = Matrix::Identity(n, n);

    double obj = ((I - s.B) * s.C - s.A).squaredNorm();
    for (std::size_t t = 0; t < s.D.size(); ++t) {
        const int i = s.targets[t];
        Matrix Ai = s.A, Bi = s.B;
        Ai.row(i).setZero();
        Bi.row(i).setZero();
        obj += ((I - Bi) * s.D[t] - Ai).squaredNorm();
    }
    obj += (model_cumulant(s.C, kappa) - M4_obs).squared_norm();
    for (std::size_t t = 0; t < s.D.size(); ++t)
        obj += (model_cumulant(s.D[t], kappa) - M4_int[t]).squared_norm();
    return obj;
}

struct RefineOptions {
    int max_cycles = 200;
    double stop_tol = 1e-10;   // relative decrease per cycle
    int max_halvings = 20;     // backtracking for the gradient blocks
    double slack = 1e-12;      // tolerated non-monotonicity before flagging
};

struct RefineOutcome {
    JointState state;
    std::vector<double> trace;  // objective at start and after each cycle
    bool solver_fault = false;
    int cycles = 0;
};

namespace detail {

// Exact least-squares update of A given everything else (row-wise average of
// the linear-term predictions).
inline void refine_update_A(JointState& s) {
    const int n = static_cast<int>(s.A.rows());
    const Matrix I = Matrix::Identity(n, n);
    Matrix pred = (I - s.B) * s.C;
    for (int r = 0; r < n; ++r) {
        Eigen::RowVectorXd acc = pred.row(r);
        int cnt = 1;
        for (std::size_t t = 0; t < s.D.size(); ++t) {
            const int i = s.targets[t];
            if (i == r) continue;
            acc += s.D[t].row(r) - s.B.row(r) * s.D[t];
            ++cnt;
        }
        s.A.row(r) = acc / cnt;
    }
}

// Exact least-squares update of the free (strictly lower triangular) part
// of B, row by row.
inline void refine_update_B(JointState& s) {
    const int n = static_cast<int>(s.A.rows());
    const int m = static_cast<int>(s.A.cols());
    for (int r = 1; r < n; ++r) {
        const int nfree = r;  // columns 0..r-1
        // collect (M, t) pairs: minimize sum || b * M.topRows(nfree) - t ||^2
        std::vector<const Matrix*> mats;
        std::vector<Eigen::RowVectorXd> tgts;
        mats.push_back(&s.C);
        tgts.push_back(s.C.row(r) - s.A.row(r));
        for (std::size_t t = 0; t < s.D.size(); ++t) {
            if (s.targets[t] == r) continue;
            mats.push_back(&s.D[t]);
            tgts.push_back(s.D[t].row(r) - s.A.row(r));
        }
        const int rows = static_cast<int>(mats.size()) * m;
        Matrix design(rows, nfree);
        Vector rhs(rows);
        for (std::size_t q = 0; q < mats.size(); ++q) {
            design.middleRows(static_cast<int>(q) * m, m) =
                mats[q]->topRows(nfree).transpose();
            rhs.segment(static_cast<int>(q) * m, m) = tgts[q].transpose();
        }
        Vector b = design.colPivHouseholderQr().solve(rhs);
        for (int c = 0; c < nfree; ++c) s.B(r, c) = b(c);
    }
}

// Gradient of the terms touching one mixing-matrix block:
//   || L * M - T ||_F^2 + || K4(M, kappa) - M4 ||_F^2
inline Matrix mixing_block_gradient(const Matrix& M, const Matrix& L, const Matrix& T,
                                    const CumulantTensor4& M4, const Vector& kappa) {
    Matrix grad = 2.0 * L.transpose() * (L * M - T);
    CumulantTensor4 R = model_cumulant(M, kappa) - M4;
    for (int j = 0; j < M.cols(); ++j)
        grad.col(j) += 8.0 * kappa(j) * R.contract3(M.col(j));
    return grad;
}

}  // namespace detail

// Block-coordinate descent on objective_eq7. A and B take exact linear
// least-squares steps; C and each D take damped gradient steps with
// backtracking. Every block update is kept only if the full objective does
// not increase, so the per-cycle trace is non-increasing by construction.
inline RefineOutcome joint_refine(const JointState& init, const CumulantTensor4& M4_obs,
                                  const std::vector<CumulantTensor4>& M4_int, const Vector& kappa,
                                  const RefineOptions& opts = {}) {
    RefineOutcome out;
    out.state = init;
    JointState& s = out.state;
    const int n = static_cast<int>(s.A.rows());
    const Matrix I = Matrix::Identity(n, n);

    auto obj = [&] { return objective_eq7(s, M4_obs, M4_int, kappa); };
    double current = obj();
    out.trace.push_back(current);

    // strict-decrease acceptance: ties revert, so a stationary start is
    // returned unchanged and the trace never increases
    auto try_block = [&](auto&& apply, auto&& revert) {
        apply();
        const double next = obj();
        if (next < current)
            current = next;
        else
            revert();
    };

    // per-block warm-started step sizes for the gradient blocks
    double step_C = 1e-2;
    std::vector<double> step_D(s.D.size(), 1e-2);

    auto gradient_block = [&](Matrix& M, const Matrix& L, const Matrix& T,
                              const CumulantTensor4& M4, double& step, int pinned_row) {
        Matrix grad = detail::mixing_block_gradient(M, L, T, M4, kappa);
        if (pinned_row >= 0) grad.row(pinned_row).setZero();
        const double gnorm = grad.norm();
        if (gnorm < 1e-300) return;
        Matrix saved = M;
        double t = step;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            M = saved - t * grad;
            const double next = obj();
            if (next < current) {
                current = next;
                step = t * 2.0;
                return;
            }
            t *= 0.5;
        }
        M = saved;  // no improving step found
        step = std::max(t, 1e-300);
    };

    for (int cycle = 0; cycle < opts.max_cycles; ++cycle) {
        const double cycle_start = current;

        {
            Matrix savedA = s.A;
            try_block([&] { detail::refine_update_A(s); }, [&] { s.A = savedA; });
        }
        {
            Matrix savedB = s.B;
            try_block([&] { detail::refine_update_B(s); }, [&] { s.B = savedB; });
        }
        gradient_block(s.C, I - s.B, s.A, M4_obs, step_C, -1);
        for (std::size_t t = 0; t < s.D.size(); ++t) {
            const int i = s.targets[t];
            Matrix Ai = s.A, Bi = s.B;
            Ai.row(i).setZero();
            Bi.row(i).setZero();
            gradient_block(s.D[t], I - Bi, Ai, M4_int[t], step_D[t], i);
        }

        out.trace.push_back(current);
        ++out.cycles;
        if (!(current >= 0.0) || !std::isfinite(current)) {
            out.solver_fault = true;
            break;
        }
        if (cycle_start - current < opts.stop_tol * std::max(cycle_start, 1e-30)) break;
    }
    return out;
}

}  // namespace semica
