// Command-line driver: model generation, simulation, recovery, and the
// experiment sweeps. Exit codes: 0 success, 2 configuration error, 3 runtime
// failure. Variable indices on the command line are zero-based.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "semica/semica.hpp"

namespace fs = std::filesystem;
using namespace semica;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
}

SemIcaModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return model_from_json(nlohmann::json::parse(in));
}

// config file first, then flag overrides (flags win)
struct SweepCli {
    std::string config_path;
    std::string out_path;
    std::string n_grid_csv;
    std::string seeds_csv;
    int n = -1, m = -1, restarts = -1, jobs = -1, L = -1;
    int m_assumed = -1, min_targets = -1;
    std::string m_assumed_grid_csv;
    double noise_std = -1.0;
    bool exact_moments = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--out", out_path, "output CSV path (default stdout)");
        cmd->add_option("--n", n, "observable count");
        cmd->add_option("--m", m, "latent count");
        cmd->add_option("--N-grid", n_grid_csv, "comma-separated sample sizes");
        cmd->add_option("--seeds", seeds_csv, "comma-separated seeds");
        cmd->add_option("--restarts", restarts, "optimization restarts per cell");
        cmd->add_option("--noise-std", noise_std, "observation noise std");
        cmd->add_option("--jobs", jobs, "worker threads over grid cells");
        cmd->add_option("--L", L, "power-method initializations per component");
        cmd->add_option("--m-assumed", m_assumed, "assumed latent count");
        cmd->add_option("--m-assumed-grid", m_assumed_grid_csv,
                        "comma-separated assumed latent counts (latent ablation)");
        cmd->add_option("--min-targets", min_targets,
                        "smallest intervention subset (intervention ablation)");
        cmd->add_flag("--exact-moments", exact_moments,
                      "bypass estimation with population matrices");
    }

    template <class T>
    static std::vector<T> parse_csv_list(const std::string& s) {
        std::vector<T> out;
        std::size_t pos = 0;
        while (pos < s.size()) {
            std::size_t next = s.find(',', pos);
            out.push_back(static_cast<T>(std::stoll(s.substr(pos, next - pos))));
            pos = (next == std::string::npos) ? s.size() : next + 1;
        }
        return out;
    }

    ExperimentConfig resolve() const {
        ExperimentConfig cfg;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw std::invalid_argument("config: cannot open " + config_path);
            cfg = config_from_json(nlohmann::json::parse(in));
        }
        if (n >= 0) cfg.n = n;
        if (m >= 0) cfg.m = m;
        if (!n_grid_csv.empty()) cfg.N_grid = parse_csv_list<int>(n_grid_csv);
        if (!seeds_csv.empty()) cfg.seeds = parse_csv_list<std::uint64_t>(seeds_csv);
        if (restarts >= 0) cfg.restarts = restarts;
        if (noise_std >= 0.0) cfg.noise_std = noise_std;
        if (jobs >= 0) cfg.jobs = jobs;
        if (L >= 0) cfg.L = L;
        if (m_assumed >= 0) cfg.m_assumed = m_assumed;
        if (min_targets >= 0) cfg.min_targets = min_targets;
        if (!m_assumed_grid_csv.empty()) cfg.m_assumed_grid = parse_csv_list<int>(m_assumed_grid_csv);
        if (exact_moments) cfg.exact_moments = true;
        if (!out_path.empty()) cfg.output_path = out_path;
        return cfg;
    }
};

void emit_rows(const std::vector<SweepRow>& rows, const std::string& out_path) {
    if (out_path.empty()) {
        write_sweep_csv(rows, std::cout);
        return;
    }
    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot open " + out_path);
    write_sweep_csv(rows, out);
    std::cerr << rows.size() << " rows -> " << out_path << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SEM-ICA causal discovery from interventional data"};
    app.require_subcommand(1);

    // gen-model
    auto* gen = app.add_subcommand("gen-model", "generate a random valid model");
    int gen_n = 3, gen_m = 3;
    std::uint64_t gen_seed = 1;
    std::string gen_out = "model.json";
    double gen_edge_prob = 0.5, gen_wlo = 0.5, gen_whi = 1.5, gen_noise = std::sqrt(1e-3);
    std::string gen_family = "laplace";
    double gen_mean = 1.0;
    gen->add_option("--n", gen_n, "observable count")->required();
    gen->add_option("--m", gen_m, "latent count")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output model JSON");
    gen->add_option("--edge-prob", gen_edge_prob, "edge probability below the diagonal");
    gen->add_option("--weight-lo", gen_wlo, "minimum weight magnitude");
    gen->add_option("--weight-hi", gen_whi, "maximum weight magnitude");
    gen->add_option("--noise-std", gen_noise, "observation noise std");
    gen->add_option("--latent-family", gen_family, "laplace|rademacher|uniform");
    gen->add_option("--latent-mean", gen_mean, "latent mean");

    // simulate
    auto* sim = app.add_subcommand("simulate", "draw datasets from a model");
    std::string sim_model, sim_out_dir = ".";
    int sim_N = 10000;
    std::uint64_t sim_seed = 1;
    int sim_target = -1;
    double sim_value = 0.0;
    bool sim_value_set = false, sim_all = false;
    double sim_lambda_factor = 10.0;
    sim->add_option("--model", sim_model, "model JSON path")->required();
    sim->add_option("--N", sim_N, "samples per dataset");
    sim->add_option("--seed", sim_seed, "sampling seed");
    sim->add_option("--out-dir", sim_out_dir, "output directory");
    sim->add_option("--target", sim_target, "intervention target (zero-based)");
    sim->add_option("--value", sim_value, "intervention value")
        ->each([&](const std::string&) { sim_value_set = true; });
    sim->add_flag("--all-targets", sim_all, "observational plus one intervention per variable");
    sim->add_option("--lambda-factor", sim_lambda_factor,
                    "default intervention value, in observational stds");

    // recover
    auto* rec = app.add_subcommand("recover", "run the recovery pipeline on datasets");
    std::string rec_dir = ".", rec_out = "result.json", rec_model;
    int rec_m = -1, rec_restarts = 20, rec_L = 30;
    std::uint64_t rec_seed = 1;
    double rec_noise_var = -1.0;
    rec->add_option("--data-dir", rec_dir, "directory with obs.csv and do_<i>.csv");
    rec->add_option("--m", rec_m, "latent count to assume")->required();
    rec->add_option("--restarts", rec_restarts, "optimization restarts");
    rec->add_option("--seed", rec_seed, "restart seed");
    rec->add_option("--L", rec_L, "power-method initializations");
    rec->add_option("--noise-var", rec_noise_var, "noise variance subtracted before whitening");
    rec->add_option("--out", rec_out, "output result JSON");
    rec->add_option("--model", rec_model, "ground-truth model JSON for metrics");

    // sweeps
    auto* sweep = app.add_subcommand("sweep", "sample-size sweep over (N, seed) cells");
    SweepCli sweep_cli;
    sweep_cli.attach(sweep);
    auto* abl_int = app.add_subcommand("ablate-interventions",
                                       "sweep over intervention subset sizes");
    SweepCli abl_int_cli;
    abl_int_cli.attach(abl_int);
    auto* abl_lat = app.add_subcommand("ablate-latents", "sweep over assumed latent counts");
    SweepCli abl_lat_cli;
    abl_lat_cli.attach(abl_lat);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed()) {
            RandomModelOptions mo;
            mo.edge_prob = gen_edge_prob;
            mo.weight_lo = gen_wlo;
            mo.weight_hi = gen_whi;
            mo.noise_std = gen_noise;
            mo.latent = LatentSpec{latent_family_from_string(gen_family), gen_mean, 1.0};
            const SemIcaModel model = random_model(gen_n, gen_m, gen_seed, mo);
            write_text(gen_out, to_json(model).dump(2) + "\n");
            std::cout << "model: " << validate_model(model).summary() << " -> " << gen_out << "\n";
        } else if (sim->parsed()) {
            const SemIcaModel model = load_model(sim_model);
            const ValidationReport report = validate_model(model);
            if (!report.valid())
                throw std::invalid_argument("model is invalid: " + report.summary());
            fs::create_directories(sim_out_dir);
            auto emit = [&](const Dataset& d, const std::string& stem) {
                write_dataset_csv(d, sim_out_dir + "/" + stem + ".csv",
                                  sim_out_dir + "/" + stem + ".json");
                std::cout << stem << ": N=" << d.N() << "\n";
            };
            Dataset obs = sample_observational(model, sim_N, detail::mix_seed(sim_seed, 0x0b5));
            if (sim_all) {
                emit(obs, "obs");
                for (int i = 0; i < model.n; ++i) {
                    const double sd = std::sqrt(
                        (obs.samples.col(i).array() - obs.samples.col(i).mean()).square().mean());
                    Intervention iv{i, sim_lambda_factor * std::max(sd, 1e-6)};
                    emit(sample_interventional(model, iv, sim_N,
                                               detail::mix_seed(sim_seed, 0x1000 + static_cast<std::uint64_t>(i))),
                         "do_" + std::to_string(i));
                }
            } else if (sim_target >= 0) {
                double value = sim_value;
                if (!sim_value_set) {
                    const double sd = std::sqrt((obs.samples.col(sim_target).array() -
                                                 obs.samples.col(sim_target).mean())
                                                    .square()
                                                    .mean());
                    value = sim_lambda_factor * std::max(sd, 1e-6);
                }
                emit(sample_interventional(model, Intervention{sim_target, value}, sim_N,
                                           detail::mix_seed(sim_seed, 0x1000 + static_cast<std::uint64_t>(sim_target))),
                     "do_" + std::to_string(sim_target));
            } else {
                emit(obs, "obs");
            }
        } else if (rec->parsed()) {
            Dataset obs = read_dataset_csv(rec_dir + "/obs.csv", rec_dir + "/obs.json");
            std::vector<Dataset> intvs;
            for (int i = 0;; ++i) {
                const std::string stem = rec_dir + "/do_" + std::to_string(i);
                if (!fs::exists(stem + ".csv")) break;
                intvs.push_back(read_dataset_csv(stem + ".csv", stem + ".json"));
            }
            PipelineOptions opts;
            opts.restarts = rec_restarts;
            opts.seed = rec_seed;
            opts.ica.decomp.L = rec_L;
            if (rec_noise_var >= 0.0) opts.ica.noise_var = rec_noise_var;
            RecoveryResult result = recover_pipeline(obs, intvs, rec_m, opts);
            if (!rec_model.empty()) result.metrics = evaluate(load_model(rec_model), result);
            write_text(rec_out, to_json(result).dump(2) + "\n");
            std::cout << "objective " << result.objective_final;
            if (!rec_model.empty()) std::cout << ", mse_B " << result.metrics.mse_B;
            std::cout << " -> " << rec_out << "\n";
        } else if (sweep->parsed()) {
            const ExperimentConfig cfg = sweep_cli.resolve();
            validate_config(cfg);
            emit_rows(run_sweep(cfg), cfg.output_path);
        } else if (abl_int->parsed()) {
            const ExperimentConfig cfg = abl_int_cli.resolve();
            validate_config(cfg);
            emit_rows(run_ablate_interventions(cfg), cfg.output_path);
        } else if (abl_lat->parsed()) {
            const ExperimentConfig cfg = abl_lat_cli.resolve();
            validate_config(cfg);
            emit_rows(run_ablate_latents(cfg), cfg.output_path);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
