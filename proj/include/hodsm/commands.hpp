#pragma once

#include <cstdint>
#include <string>

namespace hodsm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

int cmd_train(const std::string& config_path);

int cmd_eval_nll(const std::string& config_path, const std::string& checkpoint, int n,
                 bool analytic, uint64_t seed, const std::string& out_csv, int threads);

int cmd_diag(const std::string& config_path, const std::string& checkpoint, int grid_points,
             int n_mc, bool analytic, uint64_t seed, const std::string& out_dir, int threads);

// points <= 0 selects the default grid (401 in 1-D, 101 per axis in 2-D).
int cmd_density(const std::string& config_path, const std::string& checkpoint, bool analytic,
                double lo, double hi, int points, const std::string& out_csv, int threads);

struct SampleFlags {
    std::string sampler = "pc"; // pc | ode
    int n = 1000;
    uint64_t seed = 0;
    int pc_steps = 1000;
    double snr = 0.16;
    int corrector_steps = 1;
};
int cmd_sample(const std::string& config_path, const std::string& checkpoint, bool analytic,
               const SampleFlags& flags, const std::string& out_csv);

} // namespace hodsm::cli
