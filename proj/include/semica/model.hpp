#pragma once

// Core model algebra for linear SEMs with independent latent confounders:
//   X = A H + B X + noise,  reduced form  X = C H + noise_bar,  C = (I-B)^{-1} A.
// B is kept strictly lower triangular (canonical causal order); interventions
// on a variable zero out the corresponding rows of A and B.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace semica {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LatentFamily { Laplace, Rademacher, Uniform };

inline const char* to_string(LatentFamily f) {
    switch (f) {
        case LatentFamily::Laplace: return "laplace";
        case LatentFamily::Rademacher: return "rademacher";
        case LatentFamily::Uniform: return "uniform";
    }
    return "?";
}

inline LatentFamily latent_family_from_string(const std::string& s) {
    if (s == "laplace") return LatentFamily::Laplace;
    if (s == "rademacher") return LatentFamily::Rademacher;
    if (s == "uniform") return LatentFamily::Uniform;
    throw std::invalid_argument("unknown latent family: " + s);
}

// Distribution of one latent coordinate. All supported families are
// non-Gaussian; kappa() is the excess kurtosis E[h^4]-3 at unit variance,
// which is the weight its rank-1 term carries in the 4th-order cumulant.
struct LatentSpec {
    LatentFamily family = LatentFamily::Laplace;
    double mean = 0.0;
    double variance = 1.0;

    double kappa() const {
        switch (family) {
            case LatentFamily::Laplace: return 3.0;
            case LatentFamily::Rademacher: return -2.0;
            case LatentFamily::Uniform: return -1.2;
        }
        return 0.0;
    }
};

// Hard intervention Do(X_target = value). Observational data carries no
// Intervention (std::optional in Dataset).
struct Intervention {
    int target = 0;
    double value = 0.0;
};

// Column relabeling between two estimates of the same mixing matrix:
// result column j = signs[j] * scales[j] * (source column perm[j]).
struct ColumnAlignment {
    std::vector<int> perm;
    std::vector<double> signs;
    std::vector<double> scales;

    static ColumnAlignment identity(int m) {
        ColumnAlignment al;
        al.perm.resize(m);
        std::iota(al.perm.begin(), al.perm.end(), 0);
        al.signs.assign(m, 1.0);
        al.scales.assign(m, 1.0);
        return al;
    }
};

struct SemIcaModel {
    int n = 0;  // observables
    int m = 0;  // latent confounders
    Matrix A;   // n x m mixing matrix
    Matrix B;   // n x n observed causal matrix, strictly lower triangular canonically
    double noise_std = 0.0;
    LatentSpec latent;
};

struct ValidationReport {
    std::vector<std::string> violations;

    bool valid() const { return violations.empty(); }
    std::string summary() const {
        if (valid()) return "valid";
        std::string s;
        for (const auto& v : violations) {
            if (!s.empty()) s += "; ";
            s += v;
        }
        return s;
    }
};

namespace defaults {
inline constexpr double rank_tol = 1e-8;
inline constexpr double faithfulness_min = 0.1;
}  // namespace defaults

// Report-style check of the model assumptions: full column rank of A,
// strictly lower triangular B, and a magnitude floor on declared edges.
// Never throws; every violation is listed.
inline ValidationReport validate_model(const SemIcaModel& model,
                                       double rank_tol = defaults::rank_tol,
                                       double faithfulness_min = defaults::faithfulness_min) {
    ValidationReport report;
    auto& bad = report.violations;

    if (model.n <= 0 || model.m <= 0) bad.push_back("n and m must be positive");
    if (model.m > model.n) bad.push_back("m exceeds n");
    if (model.A.rows() != model.n || model.A.cols() != model.m)
        bad.push_back("A dimensions do not match (n, m)");
    if (model.B.rows() != model.n || model.B.cols() != model.n)
        bad.push_back("B dimensions do not match (n, n)");
    if (!bad.empty()) return report;  // dimension errors make the rest meaningless

    Eigen::JacobiSVD<Matrix> svd(model.A);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(svd.singularValues().size() - 1);
    if (!(smax > 0.0) || smin <= rank_tol * smax)
        bad.push_back("A is rank deficient (smallest singular value below tolerance)");

    for (int i = 0; i < model.n; ++i)
        for (int j = i; j < model.n; ++j)
            if (model.B(i, j) != 0.0) {
                std::ostringstream os;
                os << "B is not strictly lower triangular: B(" << i << "," << j << ") = "
                   << model.B(i, j);
                bad.push_back(os.str());
            }

    auto check_floor = [&](const Matrix& M, const char* name) {
        for (int i = 0; i < M.rows(); ++i)
            for (int j = 0; j < M.cols(); ++j) {
                const double a = std::abs(M(i, j));
                if (a != 0.0 && a < faithfulness_min) {
                    std::ostringstream os;
                    os << name << "(" << i << "," << j << ") = " << M(i, j)
                       << " is below the faithfulness floor " << faithfulness_min;
                    bad.push_back(os.str());
                }
            }
    };
    check_floor(model.A, "A");
    check_floor(model.B, "B");

    if (model.noise_std < 0.0) bad.push_back("noise_std is negative");
    if (model.latent.variance != 1.0) bad.push_back("latent variance must be 1");
    if (model.latent.kappa() == 0.0) bad.push_back("latent family has zero excess kurtosis");

    return report;
}

// Solves (I - B) X = RHS by forward substitution. B must be strictly lower
// triangular; the unit diagonal is implicit, so no divisions happen.
inline Matrix unit_lower_solve(const Matrix& B, const Matrix& rhs) {
    Matrix iminusb = Matrix::Identity(B.rows(), B.cols()) - B;
    return iminusb.template triangularView<Eigen::UnitLower>().solve(rhs);
}

// C = (I - B)^{-1} A, the effective ICA mixing of observational data.
inline Matrix reduced_mixing(const SemIcaModel& model) {
    if (model.B.rows() != model.n || model.A.rows() != model.n)
        throw std::invalid_argument("reduced_mixing: dimension mismatch");
    return unit_lower_solve(model.B, model.A);
}

// (A_i, B_i): the model coefficients after Do(X_i = .) severs X_i's parents.
// Both matrices get row i zeroed; the zero-row form keeps (I - B_i)
// invertible and still satisfies (I - B_i) D_i = A_i because row i of the
// response matrix is zero.
inline std::pair<Matrix, Matrix> intervened_matrices(const SemIcaModel& model, int i) {
    if (i < 0 || i >= model.n) throw std::invalid_argument("intervened_matrices: index out of range");
    Matrix Ai = model.A;
    Matrix Bi = model.B;
    Ai.row(i).setZero();
    Bi.row(i).setZero();
    return {std::move(Ai), std::move(Bi)};
}

// D_i = (I - B_i)^{-1} A_i. Row i of the result is exactly zero.
inline Matrix response_matrix(const SemIcaModel& model, int i) {
    auto [Ai, Bi] = intervened_matrices(model, i);
    return unit_lower_solve(Bi, Ai);
}

inline Matrix apply_alignment(const Matrix& M, const ColumnAlignment& al) {
    const int m = static_cast<int>(al.perm.size());
    if (M.cols() != m || static_cast<int>(al.signs.size()) != m ||
        static_cast<int>(al.scales.size()) != m)
        throw std::invalid_argument("apply_alignment: dimension mismatch");
    Matrix out(M.rows(), m);
    for (int j = 0; j < m; ++j) {
        const int src = al.perm[j];
        if (src < 0 || src >= m) throw std::invalid_argument("apply_alignment: bad permutation");
        out.col(j) = al.signs[j] * al.scales[j] * M.col(src);
    }
    return out;
}

// Topological order of the support of B (edge j -> i whenever B(i,j) != 0),
// ancestors first, ties broken by ascending index. Throws on cycles.
inline std::vector<int> topological_order(const Matrix& B) {
    const int n = static_cast<int>(B.rows());
    std::vector<std::vector<int>> parents(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && B(i, j) != 0.0) parents[i].push_back(j);

    std::vector<int> order;
    std::vector<bool> placed(n, false);
    for (int step = 0; step < n; ++step) {
        int pick = -1;
        for (int v = 0; v < n && pick < 0; ++v) {
            if (placed[v]) continue;
            bool ready = true;
            for (int p : parents[v])
                if (!placed[p]) { ready = false; break; }
            if (ready) pick = v;
        }
        if (pick < 0) throw std::runtime_error("topological_order: graph has a cycle");
        placed[pick] = true;
        order.push_back(pick);
    }
    return order;
}

// Permutes an arbitrary-DAG model into the canonical strictly-lower-triangular
// form. Returns the model together with the order used: order[k] is the
// original index of canonical variable k.
inline std::pair<SemIcaModel, std::vector<int>> canonicalized(const SemIcaModel& model) {
    std::vector<int> order = topological_order(model.B);
    SemIcaModel out = model;
    for (int k = 0; k < model.n; ++k) {
        out.A.row(k) = model.A.row(order[k]);
        for (int l = 0; l < model.n; ++l) out.B(k, l) = model.B(order[k], order[l]);
    }
    return {std::move(out), std::move(order)};
}

inline nlohmann::json to_json(const SemIcaModel& model) {
    auto row_major = [](const Matrix& M) {
        std::vector<double> v;
        v.reserve(static_cast<size_t>(M.size()));
        for (int i = 0; i < M.rows(); ++i)
            for (int j = 0; j < M.cols(); ++j) v.push_back(M(i, j));
        return v;
    };
    return nlohmann::json{
        {"n", model.n},
        {"m", model.m},
        {"A", row_major(model.A)},
        {"B", row_major(model.B)},
        {"noise_std", model.noise_std},
        {"latent",
         {{"family", to_string(model.latent.family)},
          {"mean", model.latent.mean},
          {"variance", model.latent.variance}}}};
}

inline SemIcaModel model_from_json(const nlohmann::json& j) {
    SemIcaModel model;
    model.n = j.at("n").get<int>();
    model.m = j.at("m").get<int>();
    if (model.n <= 0 || model.m <= 0) throw std::invalid_argument("model json: bad dimensions");
    auto fill = [](Matrix& M, const std::vector<double>& v, int rows, int cols, const char* name) {
        if (static_cast<int>(v.size()) != rows * cols)
            throw std::invalid_argument(std::string("model json: wrong length for ") + name);
        M.resize(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int jj = 0; jj < cols; ++jj) M(i, jj) = v[static_cast<size_t>(i * cols + jj)];
    };
    fill(model.A, j.at("A").get<std::vector<double>>(), model.n, model.m, "A");
    fill(model.B, j.at("B").get<std::vector<double>>(), model.n, model.n, "B");
    model.noise_std = j.at("noise_std").get<double>();
    const auto& l = j.at("latent");
    model.latent.family = latent_family_from_string(l.at("family").get<std::string>());
    model.latent.mean = l.at("mean").get<double>();
    model.latent.variance = l.at("variance").get<double>();
    return model;
}

}  // namespace semica
