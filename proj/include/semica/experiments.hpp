#pragma once

// Simulation harness: seeded model generation, sample-size sweeps, and the
// intervention-count / latent-count ablations, emitting deterministic CSV.

#include <atomic>
#include <chrono>
#include <thread>

#include "semica/pipeline.hpp"

namespace semica {

struct ExperimentConfig {
    int n = 3;
    int m = 3;
    std::vector<int> N_grid = {1000, 10000, 100000};
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    double noise_std = std::sqrt(1e-3);
    int restarts = 20;
    std::vector<int> targets;   // empty = all variables
    bool empty_targets = false; // force zero interventions (ablation floor)
    int m_assumed = 0;          // 0 = use m
    std::vector<int> m_assumed_grid;  // for the latent ablation
    int min_targets = 1;        // smallest subset size in the intervention ablation
    bool exact_moments = false;
    int jobs = 1;
    std::string output_path;

    // model generation
    double edge_prob = 0.5;
    double weight_lo = 0.5;
    double weight_hi = 1.5;
    std::string latent_family = "laplace";
    double latent_mean = 1.0;
    double lambda_factor = 10.0;  // intervention value = factor * observational std

    // decomposition
    int L = 30;
};

inline void validate_config(const ExperimentConfig& cfg) {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (cfg.n < 1) fail("n must be >= 1");
    if (cfg.m < 1 || cfg.m > cfg.n) fail("need 1 <= m <= n");
    if (cfg.N_grid.empty()) fail("N_grid must be nonempty");
    for (std::size_t i = 1; i < cfg.N_grid.size(); ++i)
        if (cfg.N_grid[i] <= cfg.N_grid[i - 1]) fail("N_grid must be ascending");
    for (int N : cfg.N_grid)
        if (N < 2) fail("N values must be >= 2");
    if (cfg.seeds.empty()) fail("seeds must be nonempty");
    if (cfg.restarts < 1) fail("restarts must be >= 1");
    if (cfg.m_assumed != 0 && (cfg.m_assumed < 1 || cfg.m_assumed > cfg.n))
        fail("m_assumed must be in [1, n]");
    for (int ma : cfg.m_assumed_grid)
        if (ma < 1 || ma > cfg.n) fail("m_assumed grid values must be in [1, n]");
    for (int t : cfg.targets)
        if (t < 0 || t >= cfg.n) fail("targets must be in [0, n)");
    if (cfg.min_targets < 0 || cfg.min_targets > cfg.n) fail("min_targets must be in [0, n]");
    if (cfg.noise_std < 0.0) fail("noise_std must be nonnegative");
    if (cfg.jobs < 1) fail("jobs must be >= 1");
    latent_family_from_string(cfg.latent_family);  // throws on unknown names
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("n", cfg.n);
    get("m", cfg.m);
    get("N_grid", cfg.N_grid);
    get("seeds", cfg.seeds);
    get("noise_std", cfg.noise_std);
    get("restarts", cfg.restarts);
    get("targets", cfg.targets);
    get("m_assumed", cfg.m_assumed);
    get("m_assumed_grid", cfg.m_assumed_grid);
    get("min_targets", cfg.min_targets);
    get("exact_moments", cfg.exact_moments);
    get("jobs", cfg.jobs);
    get("output_path", cfg.output_path);
    get("edge_prob", cfg.edge_prob);
    get("weight_lo", cfg.weight_lo);
    get("weight_hi", cfg.weight_hi);
    get("latent_family", cfg.latent_family);
    get("latent_mean", cfg.latent_mean);
    get("lambda_factor", cfg.lambda_factor);
    get("L", cfg.L);
    return cfg;
}

struct SweepRow {
    int n = 0, m = 0, N = 0;
    std::uint64_t seed = 0;
    int targets_count = 0;
    int m_assumed = 0;
    bool ok = false;
    double mse_B = 0, mse_A = 0, objective_final = 0;
    bool order_correct = false;
    std::string error;
    long long wall_ms = 0;
    // extra diagnostics, not part of the CSV schema
    double amax_A = 0, amax_B = 0;
    long long samples_drawn = 0;
};

inline constexpr const char* kSweepCsvHeader =
    "n,m,N,seed,targets,m_assumed,mse_B,mse_A,order_correct,objective_final,error,wall_ms";

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string row_to_csv(const SweepRow& r) {
    std::string err = r.error;
    for (char& c : err)
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    std::ostringstream os;
    os << r.n << ',' << r.m << ',' << r.N << ',' << r.seed << ',' << r.targets_count << ','
       << r.m_assumed << ',';
    if (r.ok)
        os << format_double(r.mse_B) << ',' << format_double(r.mse_A) << ','
           << (r.order_correct ? 1 : 0) << ',' << format_double(r.objective_final);
    else
        os << ",,,";
    os << ',' << err << ',' << r.wall_ms;
    return os.str();
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& os) {
    os << kSweepCsvHeader << "\n";
    for (const auto& r : rows) os << row_to_csv(r) << "\n";
}

namespace detail {

inline SemIcaModel cell_model(const ExperimentConfig& cfg, std::uint64_t seed) {
    RandomModelOptions mo;
    mo.edge_prob = cfg.edge_prob;
    mo.weight_lo = cfg.weight_lo;
    mo.weight_hi = cfg.weight_hi;
    mo.noise_std = cfg.noise_std;
    mo.latent = LatentSpec{latent_family_from_string(cfg.latent_family), cfg.latent_mean, 1.0};
    return random_model(cfg.n, cfg.m, seed, mo);
}

inline std::vector<int> cell_targets(const ExperimentConfig& cfg) {
    if (cfg.empty_targets) return {};
    if (!cfg.targets.empty()) return cfg.targets;
    std::vector<int> all(cfg.n);
    std::iota(all.begin(), all.end(), 0);
    return all;
}

}  // namespace detail

// One grid cell: generate a model, draw (|targets|+1) datasets of N samples
// (unless exact_moments), run the pipeline, evaluate against the truth.
inline SweepRow run_cell(const ExperimentConfig& cfg, int N, std::uint64_t seed) {
    SweepRow row;
    row.n = cfg.n;
    row.m = cfg.m;
    row.N = N;
    row.seed = seed;
    const std::vector<int> targets = detail::cell_targets(cfg);
    row.targets_count = static_cast<int>(targets.size());
    const int m_assumed = cfg.m_assumed > 0 ? cfg.m_assumed : cfg.m;
    row.m_assumed = m_assumed;

    const auto t0 = std::chrono::steady_clock::now();
    try {
        const SemIcaModel model = detail::cell_model(cfg, seed);

        PipelineOptions opts;
        opts.restarts = cfg.restarts;
        opts.seed = detail::mix_seed(seed, 0xcafe);
        opts.ica.decomp.L = cfg.L;
        opts.ica.noise_var = cfg.noise_std * cfg.noise_std;

        RecoveryResult result;
        if (cfg.exact_moments) {
            const Matrix C = reduced_mixing(model);
            std::vector<std::pair<int, Matrix>> D_list;
            for (int t : targets) D_list.emplace_back(t, response_matrix(model, t));
            result = recover_from_population(C, D_list, opts);
        } else {
            Dataset obs = sample_observational(model, N, detail::mix_seed(seed, 0x0b5));
            row.samples_drawn += N;
            std::vector<Dataset> intvs;
            for (std::size_t t = 0; t < targets.size(); ++t) {
                const int i = targets[t];
                const double sd = std::sqrt(
                    (obs.samples.col(i).array() - obs.samples.col(i).mean()).square().mean());
                Intervention iv{i, cfg.lambda_factor * std::max(sd, 1e-6)};
                intvs.push_back(sample_interventional(model, iv, N,
                                                      detail::mix_seed(seed, 0x1000 + static_cast<std::uint64_t>(i))));
                row.samples_drawn += N;
            }
            result = recover_pipeline(obs, intvs, m_assumed, opts);
        }
        const RecoveryMetrics metrics = evaluate(model, result);
        row.ok = true;
        row.mse_B = metrics.mse_B;
        row.mse_A = metrics.mse_A;
        row.amax_A = metrics.amax_A;
        row.amax_B = metrics.amax_B;
        row.order_correct = metrics.order_correct;
        row.objective_final = result.objective_final;
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
    row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return row;
}

namespace detail {

template <class Fn>
inline void run_indexed(int count, int jobs, Fn&& fn) {
    if (jobs <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, count);
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

// (N, seed) grid; rows come back in deterministic grid order regardless of
// the worker count.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg) {
    validate_config(cfg);
    struct Cell {
        int N;
        std::uint64_t seed;
    };
    std::vector<Cell> cells;
    for (int N : cfg.N_grid)
        for (std::uint64_t seed : cfg.seeds) cells.push_back({N, seed});
    std::vector<SweepRow> rows(cells.size());
    detail::run_indexed(static_cast<int>(cells.size()), cfg.jobs,
                        [&](int i) { rows[static_cast<std::size_t>(i)] = run_cell(cfg, cells[i].N, cells[i].seed); });
    return rows;
}

// Sweep repeated for every prefix (in canonical causal order) of the target
// set, from min_targets up to n variables.
inline std::vector<SweepRow> run_ablate_interventions(const ExperimentConfig& cfg) {
    validate_config(cfg);
    std::vector<SweepRow> rows;
    for (int k = cfg.min_targets; k <= cfg.n; ++k) {
        ExperimentConfig sub = cfg;
        sub.targets.resize(k);
        std::iota(sub.targets.begin(), sub.targets.end(), 0);
        sub.empty_targets = (k == 0);
        std::vector<SweepRow> part = run_sweep(sub);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

// Sweep repeated for each assumed latent count; the true m is used only for
// data generation and evaluation.
inline std::vector<SweepRow> run_ablate_latents(const ExperimentConfig& cfg) {
    validate_config(cfg);
    std::vector<int> grid = cfg.m_assumed_grid;
    if (grid.empty()) {
        for (int ma : {cfg.m - 1, cfg.m, cfg.m + 1})
            if (ma >= 1 && ma <= cfg.n) grid.push_back(ma);
    }
    std::vector<SweepRow> rows;
    for (int ma : grid) {
        ExperimentConfig sub = cfg;
        sub.m_assumed = ma;
        std::vector<SweepRow> part = run_sweep(sub);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

}  // namespace semica
