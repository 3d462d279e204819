#pragma once

#include <stdexcept>
#include <string>

#include "hodsm/ode_flow.hpp"
#include "hodsm/trainer.hpp"

namespace hodsm {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The JSON-serialized union of dataset, schedule, model, train and solver
// settings plus the output directory. Validated strictly: unknown keys are
// rejected at every level.
struct RunConfig {
    Dataset dataset{MixtureDensity::mog1d()};
    DiffusionSchedule schedule = DiffusionSchedule::ve();
    ScoreModelConfig model;
    TrainConfig train;
    OdeSolverConfig solver = OdeSolverConfig::rk45();
    std::string output_dir = "run";
    std::string config_text; // canonical dump, hashed into output metadata

    static RunConfig from_file(const std::string& path);
    static RunConfig from_json_text(const std::string& text);
};

std::string run_metadata_line(const std::string& config_text);

} // namespace hodsm
