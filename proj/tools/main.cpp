#include <cstdlib>
#include <string>

#include "CLI11.hpp"
#include "hodsm/commands.hpp"

namespace {

int default_threads() {
    if (const char* env = std::getenv("HODSM_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"score-based diffusion ODE training and evaluation"};
    app.require_subcommand(1);

    int threads = default_threads();
    app.add_option("--threads", threads, "worker thread cap (env HODSM_THREADS)");

    std::string config_path, checkpoint, out, out_dir;
    bool analytic = false;
    uint64_t seed = 0;

    auto* train = app.add_subcommand("train", "train a score model from a run config");
    train->add_option("--config", config_path, "run config JSON")->required();

    auto* eval = app.add_subcommand("eval-nll", "mean NLL of fresh data samples under the flow ODE");
    eval->add_option("--config", config_path)->required();
    eval->add_option("--checkpoint", checkpoint);
    int eval_n = 100;
    eval->add_option("--n", eval_n, "number of data samples");
    eval->add_flag("--analytic", analytic, "use the analytic mixture score instead of a checkpoint");
    eval->add_option("--seed", seed);
    eval->add_option("--out", out, "optional per-point CSV");

    auto* diag = app.add_subcommand("diag", "score-matching/Fisher diagnostic curves and the KL decomposition");
    diag->add_option("--config", config_path)->required();
    diag->add_option("--checkpoint", checkpoint);
    int grid_points = 100, n_mc = 128;
    diag->add_option("--grid", grid_points, "time grid size");
    diag->add_option("--n-mc", n_mc, "Monte-Carlo sample count");
    diag->add_flag("--analytic", analytic);
    diag->add_option("--seed", seed);
    diag->add_option("--out-dir", out_dir)->required();

    auto* density = app.add_subcommand("density", "log-density grid of the flow ODE");
    density->add_option("--config", config_path)->required();
    density->add_option("--checkpoint", checkpoint);
    density->add_flag("--analytic", analytic);
    double lo = -1.5, hi = 1.5;
    int points = 0; // default chosen per dim below
    density->add_option("--lo", lo);
    density->add_option("--hi", hi);
    density->add_option("--points", points, "grid points per axis (default 401 in 1-D, 101 in 2-D)");
    density->add_option("--out", out)->required();

    auto* sample = app.add_subcommand("sample", "draw samples (PC sampler or flow ODE)");
    sample->add_option("--config", config_path)->required();
    sample->add_option("--checkpoint", checkpoint);
    sample->add_flag("--analytic", analytic);
    hodsm::cli::SampleFlags sf;
    sample->add_option("--sampler", sf.sampler, "pc | ode");
    sample->add_option("--n", sf.n);
    sample->add_option("--seed", sf.seed);
    sample->add_option("--pc-steps", sf.pc_steps);
    sample->add_option("--snr", sf.snr);
    sample->add_option("--corrector-steps", sf.corrector_steps);
    sample->add_option("--out", out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : hodsm::cli::kExitConfig;
    }

    if (train->parsed()) return hodsm::cli::cmd_train(config_path);
    if (eval->parsed())
        return hodsm::cli::cmd_eval_nll(config_path, checkpoint, eval_n, analytic, seed, out,
                                        threads);
    if (diag->parsed())
        return hodsm::cli::cmd_diag(config_path, checkpoint, grid_points, n_mc, analytic, seed,
                                    out_dir, threads);
    if (density->parsed()) {
        if (points == 0) points = -1; // resolved against dim inside
        return hodsm::cli::cmd_density(config_path, checkpoint, analytic, lo, hi, points, out,
                                       threads);
    }
    if (sample->parsed()) return hodsm::cli::cmd_sample(config_path, checkpoint, analytic, sf, out);
    return hodsm::cli::kExitConfig;
}
