#pragma once

// Second- and fourth-order statistics: empirical covariance, the 4th-order
// cumulant tensor (moment minus its three Gaussian pairings), excess
// kurtosis, and covariance whitening.

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <vector>

#include "semica/simulate.hpp"

namespace semica {

// Symmetric 4-way tensor stored packed by sorted multi-index, so index
// permutation symmetry is exact by construction. Dense scratch copies are
// used for contractions; dims stay small (packed size grows as dim^4/24).
class CumulantTensor4 {
  public:
    CumulantTensor4() = default;
    explicit CumulantTensor4(int dim) : dim_(dim) {
        if (dim < 1) throw std::invalid_argument("CumulantTensor4: dim must be >= 1");
        values_.assign(packed_size(dim), 0.0);
    }

    int dim() const { return dim_; }
    std::size_t packed_count() const { return values_.size(); }

    static std::size_t packed_size(int dim) {
        const std::size_t d = static_cast<std::size_t>(dim);
        return d * (d + 1) * (d + 2) * (d + 3) / 24;
    }

    double operator()(int i, int j, int k, int l) const {
        return values_[rank(i, j, k, l)];
    }
    double& entry_sorted(int i, int j, int k, int l) {
        // caller guarantees i <= j <= k <= l
        return values_[rank_sorted(i, j, k, l)];
    }

    // number of distinct permutations of the multi-index
    static int multiplicity(int i, int j, int k, int l) {
        std::array<int, 4> a{i, j, k, l};
        std::sort(a.begin(), a.end());
        int mult = 24;
        int run = 1;
        for (int t = 1; t < 4; ++t) {
            if (a[t] == a[t - 1]) {
                ++run;
                mult /= run;
            } else {
                run = 1;
            }
        }
        // divide by product of factorials of run lengths
        // (handled incrementally above: 24 / prod(run!) )
        return mult;
    }

    template <class F>
    void for_each_sorted(F&& f) const {
        std::size_t idx = 0;
        for (int l = 0; l < dim_; ++l)
            for (int k = 0; k <= l; ++k)
                for (int j = 0; j <= k; ++j)
                    for (int i = 0; i <= j; ++i) f(i, j, k, l, values_[idx++]);
    }
    template <class F>
    void transform_sorted(F&& f) {
        std::size_t idx = 0;
        for (int l = 0; l < dim_; ++l)
            for (int k = 0; k <= l; ++k)
                for (int j = 0; j <= k; ++j)
                    for (int i = 0; i <= j; ++i) {
                        values_[idx] = f(i, j, k, l, values_[idx]);
                        ++idx;
                    }
    }

    CumulantTensor4& operator+=(const CumulantTensor4& o) {
        check_same(o);
        for (std::size_t t = 0; t < values_.size(); ++t) values_[t] += o.values_[t];
        return *this;
    }
    CumulantTensor4& operator-=(const CumulantTensor4& o) {
        check_same(o);
        for (std::size_t t = 0; t < values_.size(); ++t) values_[t] -= o.values_[t];
        return *this;
    }
    CumulantTensor4& operator*=(double a) {
        for (double& v : values_) v *= a;
        return *this;
    }
    friend CumulantTensor4 operator-(CumulantTensor4 a, const CumulantTensor4& b) { return a -= b; }
    friend CumulantTensor4 operator+(CumulantTensor4 a, const CumulantTensor4& b) { return a += b; }
    friend CumulantTensor4 operator*(double s, CumulantTensor4 a) { return a *= s; }

    // T += w * v^{(x4)}
    void add_symmetric_rank1(double w, const Vector& v) {
        if (v.size() != dim_) throw std::invalid_argument("add_symmetric_rank1: dimension mismatch");
        std::size_t idx = 0;
        for (int l = 0; l < dim_; ++l)
            for (int k = 0; k <= l; ++k) {
                const double vkl = v(k) * v(l);
                for (int j = 0; j <= k; ++j)
                    for (int i = 0; i <= j; ++i) values_[idx++] += w * v(i) * v(j) * vkl;
            }
    }

    double frobenius_norm() const { return std::sqrt(squared_norm()); }
    double squared_norm() const {
        double s = 0.0;
        for_each_sorted([&](int i, int j, int k, int l, double v) {
            s += multiplicity(i, j, k, l) * v * v;
        });
        return s;
    }

    // u(a) = sum_{j,k,l} T(a,j,k,l) v_j v_k v_l
    Vector contract3(const Vector& v) const {
        if (v.size() != dim_) throw std::invalid_argument("contract3: dimension mismatch");
        Vector u = Vector::Zero(dim_);
        for (int a = 0; a < dim_; ++a) {
            double s = 0.0;
            for (int l = 0; l < dim_; ++l)
                for (int k = 0; k <= l; ++k) {
                    const double vkl = v(k) * v(l);
                    for (int j = 0; j <= k; ++j) {
                        // multiplicity of (j,k,l) as an unordered triple
                        int mult3 = 6;
                        if (j == k && k == l) mult3 = 1;
                        else if (j == k || k == l) mult3 = 3;
                        s += mult3 * (*this)(a, j, k, l) * v(j) * vkl;
                    }
                }
            u(a) = s;
        }
        return u;
    }

    // Multilinear image under W applied to every mode; result has dim W.cols().
    CumulantTensor4 contract_modes(const Matrix& W) const {
        if (W.rows() != dim_) throw std::invalid_argument("contract_modes: dimension mismatch");
        const int k = static_cast<int>(W.cols());
        std::vector<double> cur = to_dense();
        // Contract the leading axis (always an original mode of extent dim_),
        // writing the new axis last; four passes restore the axis order.
        for (int pass = 0; pass < 4; ++pass) {
            const std::size_t rest = cur.size() / static_cast<std::size_t>(dim_);
            std::vector<double> next(rest * static_cast<std::size_t>(k), 0.0);
            for (int a = 0; a < k; ++a)
                for (int i = 0; i < dim_; ++i) {
                    const double w = W(i, a);
                    if (w == 0.0) continue;
                    const double* src = cur.data() + static_cast<std::size_t>(i) * rest;
                    for (std::size_t r = 0; r < rest; ++r)
                        next[r * static_cast<std::size_t>(k) + static_cast<std::size_t>(a)] +=
                            w * src[r];
                }
            cur = std::move(next);
        }
        // pack, averaging over index permutations to restore exact symmetry
        CumulantTensor4 out(k);
        const std::size_t kk = static_cast<std::size_t>(k);
        for (int l = 0; l < k; ++l)
            for (int c = 0; c <= l; ++c)
                for (int b = 0; b <= c; ++b)
                    for (int a = 0; a <= b; ++a) {
                        std::array<int, 4> p{a, b, c, l};
                        double s = 0.0;
                        int cnt = 0;
                        do {
                            s += cur[((static_cast<std::size_t>(p[0]) * kk + p[1]) * kk + p[2]) * kk + p[3]];
                            ++cnt;
                        } while (std::next_permutation(p.begin(), p.end()));
                        out.entry_sorted(a, b, c, l) = s / cnt;
                    }
        return out;
    }

    // Relabels axes: out(a,b,c,d) = (*this)(perm[a], perm[b], perm[c], perm[d]).
    CumulantTensor4 permuted(const std::vector<int>& perm) const {
        if (static_cast<int>(perm.size()) != dim_)
            throw std::invalid_argument("permuted: bad permutation size");
        CumulantTensor4 out(dim_);
        out.transform_sorted([&](int i, int j, int k, int l, double) {
            return (*this)(perm[i], perm[j], perm[k], perm[l]);
        });
        return out;
    }

    std::vector<double> to_dense() const {
        const std::size_t d = static_cast<std::size_t>(dim_);
        std::vector<double> dense(d * d * d * d);
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k)
                    for (int l = 0; l < dim_; ++l)
                        dense[((static_cast<std::size_t>(i) * d + j) * d + k) * d + l] =
                            (*this)(i, j, k, l);
        return dense;
    }

    // (dim^2 x dim^2) unfolding pairing modes (1,2) against (3,4)
    Matrix square_unfolding() const {
        Matrix U(dim_ * dim_, dim_ * dim_);
        for (int i = 0; i < dim_; ++i)
            for (int j = 0; j < dim_; ++j)
                for (int k = 0; k < dim_; ++k)
                    for (int l = 0; l < dim_; ++l) U(i * dim_ + j, k * dim_ + l) = (*this)(i, j, k, l);
        return U;
    }

    nlohmann::json to_json() const {
        nlohmann::json entries = nlohmann::json::object();
        for_each_sorted([&](int i, int j, int k, int l, double v) {
            entries[std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) + "," +
                    std::to_string(l)] = v;
        });
        return nlohmann::json{{"dim", dim_}, {"packed_entries", entries}};
    }

    static CumulantTensor4 from_json(const nlohmann::json& j) {
        CumulantTensor4 out(j.at("dim").get<int>());
        for (const auto& [key, val] : j.at("packed_entries").items()) {
            int idx[4];
            std::size_t pos = 0;
            for (int t = 0; t < 4; ++t) {
                std::size_t next = key.find(',', pos);
                idx[t] = std::stoi(key.substr(pos, next - pos));
                pos = (next == std::string::npos) ? key.size() : next + 1;
            }
            out.values_[out.rank(idx[0], idx[1], idx[2], idx[3])] = val.get<double>();
        }
        return out;
    }

  private:
    void check_same(const CumulantTensor4& o) const {
        if (o.dim_ != dim_) throw std::invalid_argument("CumulantTensor4: dimension mismatch");
    }

    std::size_t rank(int i, int j, int k, int l) const {
        std::array<int, 4> a{i, j, k, l};
        for (int v : a)
            if (v < 0 || v >= dim_) throw std::out_of_range("CumulantTensor4: index out of range");
        std::sort(a.begin(), a.end());
        return rank_sorted(a[0], a[1], a[2], a[3]);
    }
    static std::size_t rank_sorted(int i, int j, int k, int l) {
        auto c2 = [](std::size_t x) { return x * (x - 1) / 2; };
        auto c3 = [](std::size_t x) { return x * (x - 1) * (x - 2) / 6; };
        auto c4 = [](std::size_t x) { return x * (x - 1) * (x - 2) * (x - 3) / 24; };
        return static_cast<std::size_t>(i) + c2(static_cast<std::size_t>(j) + 1) +
               c3(static_cast<std::size_t>(k) + 2) + c4(static_cast<std::size_t>(l) + 3);
    }

    int dim_ = 0;
    std::vector<double> values_;
};

// --- estimators -------------------------------------------------------------

inline Dataset center(const Dataset& data) {
    if (data.N() < 2) throw std::invalid_argument("center: need N >= 2");
    Dataset out = data;
    out.samples.rowwise() -= data.samples.colwise().mean();
    return out;
}

inline void require_centered(const Matrix& X) {
    const double mean_norm = X.colwise().mean().norm();
    if (mean_norm > 1e-6)
        throw std::invalid_argument("estimator requires centered data (column mean norm " +
                                    std::to_string(mean_norm) + ")");
}

// Sigma_hat = X^T X / N on centered data (biased 1/N normalization).
inline Matrix empirical_covariance(const Dataset& data) {
    if (data.N() < 2) throw std::invalid_argument("empirical_covariance: need N >= 2");
    require_centered(data.samples);
    return data.samples.transpose() * data.samples / static_cast<double>(data.N());
}

// Entry (i1,i2,i3,i4) = mean of x_{i1} x_{i2} x_{i3} x_{i4} minus the three
// covariance pairings, i.e. the empirical 4th-order cumulant of centered data.
inline CumulantTensor4 empirical_cumulant4(const Dataset& data) {
    if (data.N() < 2) throw std::invalid_argument("empirical_cumulant4: need N >= 2");
    require_centered(data.samples);
    const int n = data.n();
    const std::size_t N = static_cast<std::size_t>(data.N());
    const Matrix& X = data.samples;
    const Matrix cov = X.transpose() * X / static_cast<double>(N);

    // cache pairwise product columns when that fits comfortably in memory
    const std::size_t pairs = static_cast<std::size_t>(n) * (n + 1) / 2;
    const bool cache = pairs * N <= 50'000'000;
    std::vector<Vector> pair_cols;
    auto pair_index = [n](int a, int b) {  // a <= b
        return static_cast<std::size_t>(a) * n - static_cast<std::size_t>(a) * (a - 1) / 2 + (b - a);
    };
    if (cache) {
        pair_cols.resize(pairs);
        for (int a = 0; a < n; ++a)
            for (int b = a; b < n; ++b)
                pair_cols[pair_index(a, b)] = X.col(a).cwiseProduct(X.col(b));
    }
    auto pair_col = [&](int a, int b) {
        return cache ? pair_cols[pair_index(a, b)] : Vector(X.col(a).cwiseProduct(X.col(b)));
    };

    CumulantTensor4 T(n);
    T.transform_sorted([&](int i, int j, int k, int l, double) {
        const double m4 = pair_col(i, j).dot(pair_col(k, l)) / static_cast<double>(N);
        return m4 - (cov(i, j) * cov(k, l) + cov(i, k) * cov(j, l) + cov(i, l) * cov(j, k));
    });
    return T;
}

// m4/m2^2 - 3 on internally standardized samples.
inline double excess_kurtosis(const Vector& samples) {
    const int N = static_cast<int>(samples.size());
    if (N < 4) throw std::invalid_argument("excess_kurtosis: need N >= 4");
    Vector c = samples.array() - samples.mean();
    const double m2 = c.squaredNorm() / N;
    if (m2 == 0.0) throw std::invalid_argument("excess_kurtosis: zero variance");
    const double m4 = c.array().pow(4).sum() / N;
    return m4 / (m2 * m2) - 3.0;
}

// Linear map W with W^T Sigma W = I on the retained top-k eigenspace.
// unwhiten (= (W^+)^T, n x k) sends whitened component vectors back to the
// signal subspace: unwhiten * (W^T c) = c for c in the subspace.
struct Whitener {
    Matrix W;          // n x k
    Matrix unwhiten;   // n x k
    Vector eigenvalues;  // adjusted, descending, length k
};

namespace defaults {
inline constexpr double eig_floor_rel = 1e-10;
}

namespace detail {
inline void sign_normalize_columns(Matrix& M) {
    for (int j = 0; j < M.cols(); ++j) {
        int imax = 0;
        M.col(j).cwiseAbs().maxCoeff(&imax);
        if (M(imax, j) < 0) M.col(j) = -M.col(j);
    }
}
}  // namespace detail

// Count of eigenvalues of (Sigma - noise_var I) above the relative floor.
inline int effective_rank(const Matrix& sigma, double noise_var = 0.0,
                          double eig_floor_rel = defaults::eig_floor_rel) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    Vector adj = eig.eigenvalues().array() - noise_var;
    const double floor = eig_floor_rel * std::max(adj.maxCoeff(), 0.0);
    int cnt = 0;
    for (int i = 0; i < adj.size(); ++i)
        if (adj(i) > floor && adj(i) > 0.0) ++cnt;
    return cnt;
}

inline Whitener whiten(const Matrix& sigma, int k, double noise_var = 0.0,
                       double eig_floor_rel = defaults::eig_floor_rel) {
    const int n = static_cast<int>(sigma.rows());
    if (sigma.cols() != n) throw std::invalid_argument("whiten: covariance must be square");
    if (k < 1 || k > n) throw std::invalid_argument("whiten: need 1 <= k <= n");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
    if (eig.info() != Eigen::Success) throw std::runtime_error("whiten: eigendecomposition failed");

    Vector adj = eig.eigenvalues().array() - noise_var;  // ascending
    const double floor = eig_floor_rel * std::max(adj.maxCoeff(), 0.0);
    Whitener out;
    out.W.resize(n, k);
    out.unwhiten.resize(n, k);
    out.eigenvalues.resize(k);
    for (int j = 0; j < k; ++j) {
        const int src = n - 1 - j;  // descending
        const double lam = adj(src);
        if (!(lam > floor) || !(lam > 0.0))
            throw std::runtime_error("whiten: eigenvalue " + std::to_string(j) +
                                     " below floor (rank-deficient signal)");
        out.eigenvalues(j) = lam;
        out.W.col(j) = eig.eigenvectors().col(src) / std::sqrt(lam);
        out.unwhiten.col(j) = eig.eigenvectors().col(src) * std::sqrt(lam);
    }
    detail::sign_normalize_columns(out.W);
    detail::sign_normalize_columns(out.unwhiten);
    // keep the pair consistent after sign normalization: redo unwhiten from W
    for (int j = 0; j < k; ++j) out.unwhiten.col(j) = out.W.col(j) * out.eigenvalues(j);
    return out;
}

inline CumulantTensor4 whiten_cumulant(const CumulantTensor4& T, const Whitener& wh) {
    return T.contract_modes(wh.W);
}

}  // namespace semica
