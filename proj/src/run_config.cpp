#include "hodsm/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hodsm/csv.hpp"
#include "json.hpp"

namespace hodsm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError(where + ": unknown key \"" + key + "\"");
}

double require_number(const json& j, const std::string& key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError(where + ": missing \"" + key + "\"");
    if (!j[key].is_number()) throw ConfigError(where + "." + key + ": expected a number");
    return j[key].get<double>();
}

Dataset parse_dataset(const json& j) {
    if (!j.contains("type")) throw ConfigError("dataset: missing \"type\"");
    const std::string type = j["type"].get<std::string>();
    if (type == "mixture") {
        reject_unknown(j, {"type", "weights", "means", "variances"}, "dataset");
        std::vector<double> w = j.at("weights").get<std::vector<double>>();
        std::vector<double> v = j.at("variances").get<std::vector<double>>();
        std::vector<Eigen::VectorXd> means;
        for (const auto& row : j.at("means")) {
            const auto vals = row.get<std::vector<double>>();
            means.emplace_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
        }
        try {
            return MixtureDensity(std::move(w), std::move(means), std::move(v));
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("dataset: ") + e.what());
        }
    }
    if (type == "checkerboard") {
        reject_unknown(j, {"type", "cell_size", "extent"}, "dataset");
        CheckerboardSampler cb;
        if (j.contains("cell_size")) cb.cell_size = require_number(j, "cell_size", "dataset");
        if (j.contains("extent")) cb.extent = require_number(j, "extent", "dataset");
        if (cb.cell_size <= 0 || cb.extent <= 0)
            throw ConfigError("dataset: checkerboard sizes must be positive");
        return cb;
    }
    throw ConfigError("dataset: unknown type \"" + type + "\"");
}

DiffusionSchedule parse_schedule(const json& j, double eps_time) {
    if (!j.contains("kind")) throw ConfigError("schedule: missing \"kind\"");
    const std::string kind = j["kind"].get<std::string>();
    try {
        if (kind == "ve") {
            reject_unknown(j, {"kind", "sigma_min", "sigma_max"}, "schedule");
            double smin = j.contains("sigma_min") ? require_number(j, "sigma_min", "schedule") : 0.01;
            double smax = j.contains("sigma_max") ? require_number(j, "sigma_max", "schedule") : 50.0;
            return DiffusionSchedule::ve(smin, smax, eps_time);
        }
        if (kind == "vp") {
            reject_unknown(j, {"kind", "beta_min", "beta_max"}, "schedule");
            double bmin = j.contains("beta_min") ? require_number(j, "beta_min", "schedule") : 0.1;
            double bmax = j.contains("beta_max") ? require_number(j, "beta_max", "schedule") : 20.0;
            return DiffusionSchedule::vp(bmin, bmax, eps_time);
        }
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    }
    throw ConfigError("schedule: unknown kind \"" + kind + "\"");
}

ScoreModelConfig parse_model(const json& j) {
    reject_unknown(j, {"time_frequencies", "t_hidden", "x_hidden", "joint_hidden"}, "model");
    ScoreModelConfig m;
    if (j.contains("time_frequencies")) m.time_frequencies = j["time_frequencies"].get<int>();
    if (j.contains("t_hidden")) m.t_hidden = j["t_hidden"].get<int>();
    if (j.contains("x_hidden")) m.x_hidden = j["x_hidden"].get<int>();
    if (j.contains("joint_hidden")) m.joint_hidden = j["joint_hidden"].get<int>();
    if (m.time_frequencies < 1 || m.t_hidden < 1 || m.x_hidden < 1 || m.joint_hidden < 1)
        throw ConfigError("model: widths must be positive");
    return m;
}

TrainConfig parse_train(const json& j) {
    reject_unknown(j,
                   {"lambda1", "lambda2", "batch_size", "iters", "lr", "beta1", "beta2",
                    "adam_eps", "seed", "mode", "probe", "checkpoint_every"},
                   "train");
    TrainConfig t;
    if (j.contains("lambda1")) t.lambda1 = require_number(j, "lambda1", "train");
    if (j.contains("lambda2")) t.lambda2 = require_number(j, "lambda2", "train");
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int>();
    if (j.contains("iters")) t.iters = j["iters"].get<int>();
    if (j.contains("lr")) t.lr = require_number(j, "lr", "train");
    if (j.contains("beta1")) t.beta1 = require_number(j, "beta1", "train");
    if (j.contains("beta2")) t.beta2 = require_number(j, "beta2", "train");
    if (j.contains("adam_eps")) t.adam_eps = require_number(j, "adam_eps", "train");
    if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
    if (j.contains("checkpoint_every")) t.checkpoint_every = j["checkpoint_every"].get<int>();
    if (j.contains("mode")) {
        const std::string m = j["mode"].get<std::string>();
        if (m == "exact") t.mode = LossMode::Exact;
        else if (m == "estimated") t.mode = LossMode::Estimated;
        else throw ConfigError("train.mode: expected \"exact\" or \"estimated\"");
    }
    if (j.contains("probe")) {
        const std::string p = j["probe"].get<std::string>();
        if (p == "rademacher") t.probe = ProbeKind::Rademacher;
        else if (p == "gaussian") t.probe = ProbeKind::Gaussian;
        else throw ConfigError("train.probe: expected \"rademacher\" or \"gaussian\"");
    }
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return t;
}

OdeSolverConfig parse_solver(const json& j) {
    if (!j.contains("method")) throw ConfigError("solver: missing \"method\"");
    const std::string m = j["method"].get<std::string>();
    if (m == "rk4_fixed") {
        reject_unknown(j, {"method", "steps"}, "solver");
        OdeSolverConfig s = OdeSolverConfig::rk4(500);
        if (j.contains("steps")) s.steps = j["steps"].get<int>();
        if (s.steps < 1) throw ConfigError("solver.steps: must be >= 1");
        return s;
    }
    if (m == "rk45_adaptive") {
        reject_unknown(j, {"method", "rtol", "atol"}, "solver");
        OdeSolverConfig s = OdeSolverConfig::rk45();
        if (j.contains("rtol")) s.rtol = require_number(j, "rtol", "solver");
        if (j.contains("atol")) s.atol = require_number(j, "atol", "solver");
        if (s.rtol <= 0 || s.atol <= 0) throw ConfigError("solver tolerances must be positive");
        return s;
    }
    throw ConfigError("solver: unknown method \"" + m + "\"");
}

} // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    reject_unknown(j, {"dataset", "schedule", "eps_time", "model", "train", "solver", "output_dir"},
                   "config");
    RunConfig cfg;
    double eps_time = 1e-5;
    if (j.contains("eps_time")) {
        eps_time = require_number(j, "eps_time", "config");
        if (!(eps_time > 0 && eps_time < 1)) throw ConfigError("eps_time must be in (0, 1)");
    }
    if (!j.contains("dataset")) throw ConfigError("config: missing \"dataset\"");
    if (!j.contains("schedule")) throw ConfigError("config: missing \"schedule\"");
    cfg.dataset = parse_dataset(j["dataset"]);
    cfg.schedule = parse_schedule(j["schedule"], eps_time);
    if (j.contains("model")) cfg.model = parse_model(j["model"]);
    if (j.contains("train")) cfg.train = parse_train(j["train"]);
    if (j.contains("solver")) cfg.solver = parse_solver(j["solver"]);
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    cfg.model.dim = dataset_dim(cfg.dataset);
    cfg.config_text = j.dump();
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

std::string run_metadata_line(const std::string& config_text) {
    std::ostringstream os;
    os << "config_hash=0x" << std::hex << fnv1a(config_text) << " git=" << HODSM_GIT_DESCRIBE;
    return os.str();
}

} // namespace hodsm
