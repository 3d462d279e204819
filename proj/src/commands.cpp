#include "hodsm/commands.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <thread>

#include "hodsm/csv.hpp"
#include "hodsm/run_config.hpp"
#include "hodsm/sampler.hpp"

namespace hodsm::cli {

namespace {

std::unique_ptr<OdeScoreSource> make_source(const RunConfig& cfg, const std::string& checkpoint,
                                            bool analytic) {
    if (analytic) {
        if (!std::holds_alternative<MixtureDensity>(cfg.dataset))
            throw ConfigError("--analytic requires a mixture dataset");
        return std::make_unique<AnalyticScoreSource>(std::get<MixtureDensity>(cfg.dataset),
                                                     cfg.schedule);
    }
    if (checkpoint.empty()) throw ConfigError("missing --checkpoint (or pass --analytic)");
    return std::make_unique<ModelScoreSource>(ScoreModel::load_checkpoint(checkpoint),
                                              cfg.schedule);
}

void ensure_parent_dir(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
}

template <typename F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// Batched likelihood evaluation, chunked and optionally threaded; results land
// in fixed slots so the output is identical for any thread count.
Eigen::VectorXd likelihood_chunked(const OdeScoreSource& src, const DiffusionSchedule& sched,
                                   const Eigen::MatrixXd& X, const OdeSolverConfig& solver,
                                   int threads) {
    const Eigen::Index n = X.rows();
    const Eigen::Index chunk = 512;
    const Eigen::Index nchunks = (n + chunk - 1) / chunk;
    Eigen::VectorXd out(n);
    std::atomic<Eigen::Index> next{0};
    auto worker = [&] {
        for (Eigen::Index c = next.fetch_add(1); c < nchunks; c = next.fetch_add(1)) {
            const Eigen::Index lo = c * chunk;
            const Eigen::Index len = std::min(chunk, n - lo);
            out.segment(lo, len) = log_likelihood(src, sched, X.middleRows(lo, len), solver);
        }
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    return out;
}

} // namespace

int cmd_train(const std::string& config_path) {
    return guarded([&] {
        const RunConfig cfg = RunConfig::from_file(config_path);
        const TrainResult result =
            train(cfg.dataset, cfg.schedule, cfg.train, cfg.model, cfg.output_dir,
                  run_metadata_line(cfg.config_text));
        if (result.abort) {
            std::cerr << "numerical abort at step " << result.abort->step << " (term "
                      << result.abort->term << ")\n";
            return kExitNumerical;
        }
        if (!result.history.empty()) {
            const LossBreakdown& b = result.history.back();
            std::cout << "final losses: j1=" << b.j1 << " j2=" << b.j2
                      << " j2_trace=" << b.j2_trace << " j3=" << b.j3 << " total=" << b.total
                      << "\n";
        } else {
            std::cout << "no training steps requested; wrote initialized checkpoint\n";
        }
        std::cout << "outputs in " << cfg.output_dir << "\n";
        return kExitOk;
    });
}

int cmd_eval_nll(const std::string& config_path, const std::string& checkpoint, int n,
                 bool analytic, uint64_t seed, const std::string& out_csv, int threads) {
    return guarded([&] {
        const RunConfig cfg = RunConfig::from_file(config_path);
        if (n < 1) throw ConfigError("eval-nll: n must be >= 1");
        auto src = make_source(cfg, checkpoint, analytic);
        Rng rng(seed);
        const Eigen::MatrixXd X = dataset_sample(cfg.dataset, n, rng);
        const Eigen::VectorXd ll = likelihood_chunked(*src, cfg.schedule, X, cfg.solver, threads);
        const double nll = -ll.mean();
        const double bpd = nll / (X.cols() * std::log(2.0));
        std::cout << "mean_nll_nats=" << nll << " bits_per_dim=" << bpd << " n=" << n << "\n";
        if (!out_csv.empty()) {
            ensure_parent_dir(out_csv);
            CsvWriter csv(out_csv, {"index", "log_likelihood"});
            for (Eigen::Index i = 0; i < ll.size(); ++i) csv.row(i, ll(i));
            csv.finish(run_metadata_line(cfg.config_text));
        }
        return kExitOk;
    });
}

int cmd_diag(const std::string& config_path, const std::string& checkpoint, int grid_points,
             int n_mc, bool analytic, uint64_t seed, const std::string& out_dir, int threads) {
    return guarded([&] {
        const RunConfig cfg = RunConfig::from_file(config_path);
        if (grid_points < 2) throw ConfigError("diag: grid must have at least 2 points");
        if (n_mc < 1) throw ConfigError("diag: n_mc must be >= 1");
        if (n_mc < 100)
            std::cerr << "warning: n_mc < 100 gives wide Monte-Carlo error bars\n";
        if (!std::holds_alternative<MixtureDensity>(cfg.dataset))
            throw ConfigError("diag requires a mixture dataset (analytic q_t)");
        const auto& q0 = std::get<MixtureDensity>(cfg.dataset);
        auto src = make_source(cfg, checkpoint, analytic);

        Eigen::VectorXd grid(grid_points);
        for (int i = 0; i < grid_points; ++i)
            grid(i) = cfg.schedule.eps_time +
                      (cfg.schedule.T - cfg.schedule.eps_time) * i / (grid_points - 1);
        grid(grid_points - 1) = cfg.schedule.T;

        const DiagTable table =
            diag_curves(*src, q0, cfg.schedule, grid, n_mc, cfg.solver, seed, threads);
        const KlDecomposition kl = kl_decomposition(table);

        std::filesystem::create_directories(out_dir);
        {
            CsvWriter csv(out_dir + "/diag_curves.csv", {"t", "l_sm", "l_fisher", "l_diff"});
            const Eigen::VectorXd sm = table.mean(table.l_sm);
            const Eigen::VectorXd fi = table.mean(table.l_fisher);
            const Eigen::VectorXd di = table.mean(table.l_diff);
            for (int i = 0; i < grid_points; ++i) csv.row(grid(i), sm(i), fi(i), di(i));
            csv.finish(run_metadata_line(cfg.config_text));
        }
        {
            CsvWriter csv(out_dir + "/kl_decomposition.csv",
                          {"j_sm", "j_diff", "j_ode", "j_fisher", "cs_bound"});
            csv.row(kl.j_sm, kl.j_diff, kl.j_ode, kl.j_fisher, kl.cs_bound);
            csv.finish(run_metadata_line(cfg.config_text));
        }
        std::cout << "j_sm=" << kl.j_sm << " j_diff=" << kl.j_diff << " j_ode=" << kl.j_ode
                  << " j_fisher=" << kl.j_fisher << " cs_bound=" << kl.cs_bound << "\n";
        return kExitOk;
    });
}

int cmd_density(const std::string& config_path, const std::string& checkpoint, bool analytic,
                double lo, double hi, int points, const std::string& out_csv, int threads) {
    return guarded([&] {
        const RunConfig cfg = RunConfig::from_file(config_path);
        auto src = make_source(cfg, checkpoint, analytic);
        const int d = src->dim();
        if (d > 2) throw ConfigError("density grids are supported for dim 1 and 2 only");
        if (points <= 0) points = d == 1 ? 401 : 101;
        if (points < 2) throw ConfigError("density: points must be >= 2");

        ensure_parent_dir(out_csv);
        if (d == 1) {
            Eigen::MatrixXd X(points, 1);
            for (int i = 0; i < points; ++i)
                X(i, 0) = lo + (hi - lo) * i / (points - 1);
            const Eigen::VectorXd ll =
                likelihood_chunked(*src, cfg.schedule, X, cfg.solver, threads);
            CsvWriter csv(out_csv, {"x", "log_p"});
            for (int i = 0; i < points; ++i) csv.row(X(i, 0), ll(i));
            csv.finish(run_metadata_line(cfg.config_text));
        } else {
            Eigen::MatrixXd X(points * points, 2);
            for (int i = 0; i < points; ++i)
                for (int j = 0; j < points; ++j) {
                    X(i * points + j, 0) = lo + (hi - lo) * i / (points - 1);
                    X(i * points + j, 1) = lo + (hi - lo) * j / (points - 1);
                }
            const Eigen::VectorXd ll =
                likelihood_chunked(*src, cfg.schedule, X, cfg.solver, threads);
            CsvWriter csv(out_csv, {"x", "y", "log_p"});
            for (Eigen::Index i = 0; i < X.rows(); ++i) csv.row(X(i, 0), X(i, 1), ll(i));
            csv.finish(run_metadata_line(cfg.config_text));
        }
        std::cout << "wrote " << out_csv << "\n";
        return kExitOk;
    });
}

int cmd_sample(const std::string& config_path, const std::string& checkpoint, bool analytic,
               const SampleFlags& flags, const std::string& out_csv) {
    return guarded([&] {
        const RunConfig cfg = RunConfig::from_file(config_path);
        auto src = make_source(cfg, checkpoint, analytic);
        if (flags.n < 1) throw ConfigError("sample: n must be >= 1");

        Eigen::MatrixXd pts;
        if (flags.sampler == "pc") {
            PcConfig pc;
            pc.n_steps = flags.pc_steps;
            pc.snr = flags.snr;
            pc.corrector_steps = flags.corrector_steps;
            pc.seed = flags.seed;
            pts = pc_sample(*src, cfg.schedule, flags.n, pc);
        } else if (flags.sampler == "ode") {
            pts = ode_sample(*src, cfg.schedule, flags.n, cfg.solver, flags.seed);
        } else {
            throw ConfigError("sample: sampler must be \"pc\" or \"ode\"");
        }

        ensure_parent_dir(out_csv);
        std::vector<std::string> cols;
        for (int j = 0; j < pts.cols(); ++j) cols.push_back("x" + std::to_string(j));
        CsvWriter csv(out_csv, cols);
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            if (pts.cols() == 1) csv.row(pts(i, 0));
            else csv.row(pts(i, 0), pts(i, 1));
        }
        csv.finish(run_metadata_line(cfg.config_text));
        std::cout << "wrote " << out_csv << "\n";
        return kExitOk;
    });
}

} // namespace hodsm::cli
