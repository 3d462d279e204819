#include "hodsm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <memory>
#include <stdexcept>

#include "hodsm/csv.hpp"

namespace hodsm {

int dataset_dim(const Dataset& ds) {
    if (std::holds_alternative<MixtureDensity>(ds)) return std::get<MixtureDensity>(ds).dim();
    return 2;
}

Eigen::MatrixXd dataset_sample(const Dataset& ds, int n, Rng& rng) {
    if (std::holds_alternative<MixtureDensity>(ds))
        return std::get<MixtureDensity>(ds).sample(n, rng);
    return std::get<CheckerboardSampler>(ds).sample(n, rng);
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (iters < 0) throw std::invalid_argument("train: iters must be >= 0");
    if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("train: lambdas must be >= 0");
    if (lr <= 0) throw std::invalid_argument("train: lr must be > 0");
}

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state,
               const TrainConfig& cfg) {
    state.step += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const Eigen::ArrayXd mhat = state.m.array() / bc1;
    const Eigen::ArrayXd vhat = state.v.array() / bc2;
    theta.array() -= cfg.lr * mhat / (vhat.sqrt() + cfg.adam_eps);
}

Batch sample_batch(const Dataset& ds, const DiffusionSchedule& sched, int batch_size, Rng& rng) {
    const int d = dataset_dim(ds);
    Batch b;
    b.x0 = dataset_sample(ds, batch_size, rng);
    b.eps = rng.gaussian_matrix(batch_size, d);
    b.t = rng.uniform_vector(batch_size, sched.eps_time, sched.T);
    b.alpha.resize(batch_size);
    b.sigma.resize(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        const auto [a, s] = sched.alpha_sigma(b.t(i));
        b.alpha(i) = a;
        b.sigma(i) = s;
    }
    b.x_t = (b.x0.array().colwise() * b.alpha.array()).matrix() +
            (b.eps.array().colwise() * b.sigma.array()).matrix();
    return b;
}

TrainResult train(const Dataset& ds, const DiffusionSchedule& sched, const TrainConfig& cfg,
                  const ScoreModelConfig& model_cfg_in, const std::string& out_dir,
                  const std::string& csv_metadata,
                  const std::function<void(long, const LossBreakdown&)>& on_step) {
    cfg.validate();
    ScoreModelConfig model_cfg = model_cfg_in;
    model_cfg.dim = dataset_dim(ds);

    TrainResult result{ScoreModel(model_cfg, cfg.seed), {}, std::nullopt};
    ScoreModel& model = result.model;

    Eigen::VectorXd theta = model.flat_params();
    AdamState adam = AdamState::init(theta.size());

    std::unique_ptr<CsvWriter> csv;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        csv = std::make_unique<CsvWriter>(
            out_dir + "/train.csv",
            std::vector<std::string>{"step", "j1", "j2", "j2_trace", "j3", "total", "wall_ms"});
    }

    ad::Tape tape;
    for (long step = 0; step < cfg.iters; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng = Rng::derive(cfg.seed, static_cast<uint64_t>(step));
        const Batch batch = sample_batch(ds, sched, cfg.batch_size, rng);

        Eigen::MatrixXd probes;
        const Eigen::MatrixXd* probes_ptr = nullptr;
        if (cfg.mode == LossMode::Estimated && (cfg.lambda1 > 0 || cfg.lambda2 > 0)) {
            probes = cfg.probe == ProbeKind::Rademacher
                         ? rng.rademacher_matrix(cfg.batch_size, model_cfg.dim)
                         : rng.gaussian_matrix(cfg.batch_size, model_cfg.dim);
            probes_ptr = &probes;
        }

        tape.clear();
        const ScoreModel::Leaves leaves = model.make_leaves(tape);
        const LossNodes nodes = build_total_loss(tape, model, leaves, batch, sched, cfg.lambda1,
                                                 cfg.lambda2, cfg.mode, probes_ptr);
        LossBreakdown bd = read_breakdown(tape, nodes, cfg.lambda1, cfg.lambda2);

        if (!std::isfinite(bd.total)) {
            std::string term = !std::isfinite(bd.j1)         ? "j1"
                               : !std::isfinite(bd.j2)       ? "j2"
                               : !std::isfinite(bd.j2_trace) ? "j2_trace"
                               : !std::isfinite(bd.j3)       ? "j3"
                                                             : "total";
            result.abort = NumericalAbort{step, term};
            break;
        }

        const auto grads = tape.grad(nodes.total, leaves.ids);
        Eigen::VectorXd flat_grad(theta.size());
        int off = 0;
        for (const auto g : grads) {
            const ad::Mat& gm = tape.val(g);
            std::memcpy(flat_grad.data() + off, gm.data(), sizeof(double) * gm.size());
            off += static_cast<int>(gm.size());
        }

        adam_step(theta, flat_grad, adam, cfg);
        model.set_flat_params(theta);

        const auto t1 = std::chrono::steady_clock::now();
        const double wall_ms =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(t1 - t0).count();
        result.history.push_back(bd);
        if (csv) csv->row(step, bd.j1, bd.j2, bd.j2_trace, bd.j3, bd.total, wall_ms);
        if (on_step) on_step(step, bd);

        if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
            ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.iters))
            model.save_checkpoint(out_dir + "/checkpoint.json");
    }

    if (!out_dir.empty()) {
        if (cfg.iters == 0 || (cfg.checkpoint_every <= 0 && !result.abort))
            model.save_checkpoint(out_dir + "/checkpoint.json");
        if (csv)
            csv->finish(csv_metadata.empty() ? "rows=" + std::to_string(result.history.size())
                                             : csv_metadata);
    }
    return result;
}

} // namespace hodsm
