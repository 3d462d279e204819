#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <variant>

#include "hodsm/losses.hpp"
#include "hodsm/mixture.hpp"
#include "hodsm/schedule.hpp"
#include "hodsm/score_model.hpp"

namespace hodsm {

enum class ProbeKind { Rademacher, Gaussian };

using Dataset = std::variant<MixtureDensity, CheckerboardSampler>;

int dataset_dim(const Dataset& ds);
Eigen::MatrixXd dataset_sample(const Dataset& ds, int n, Rng& rng);

struct TrainConfig {
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    int batch_size = 5000;
    int iters = 50000;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    uint64_t seed = 0;
    LossMode mode = LossMode::Exact;
    ProbeKind probe = ProbeKind::Rademacher;
    int checkpoint_every = 10000;

    void validate() const;
};

struct AdamState {
    Eigen::VectorXd m, v;
    long step = 0;

    static AdamState init(Eigen::Index n) {
        return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0};
    }
};

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state,
               const TrainConfig& cfg);

// Deterministic batch for a given step: x0 i.i.d. from the dataset, eps
// standard Gaussian, t ~ U[eps_time, T].
Batch sample_batch(const Dataset& ds, const DiffusionSchedule& sched, int batch_size, Rng& rng);

struct NumericalAbort {
    long step = 0;
    std::string term;
};

struct TrainResult {
    ScoreModel model;
    std::vector<LossBreakdown> history;
    std::optional<NumericalAbort> abort;
};

// Runs Adam over the combined DSM objective from a fresh random
// initialization (no lower-order pre-training). When out_dir is nonempty,
// writes train.csv and periodic checkpoints there. Deterministic per seed.
TrainResult train(const Dataset& ds, const DiffusionSchedule& sched, const TrainConfig& cfg,
                  const ScoreModelConfig& model_cfg, const std::string& out_dir = "",
                  const std::string& csv_metadata = "",
                  const std::function<void(long, const LossBreakdown&)>& on_step = nullptr);

} // namespace hodsm
