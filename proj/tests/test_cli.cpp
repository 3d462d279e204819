#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hodsm/commands.hpp"
#include "hodsm/run_config.hpp"

using namespace hodsm;
namespace fs = std::filesystem;

namespace {

const char* kMogConfig = R"({
  "dataset": {"type": "mixture",
              "weights": [0.4, 0.4, 0.2],
              "means": [[-0.2222222222222222], [-0.6666666666666666], [0.4444444444444444]],
              "variances": [0.012345679012345678, 0.012345679012345678, 0.024691358024691357]},
  "schedule": {"kind": "ve", "sigma_min": 0.01, "sigma_max": 50.0},
  "eps_time": 1e-5,
  "model": {"time_frequencies": 8, "t_hidden": 16, "x_hidden": 16, "joint_hidden": 32},
  "train": {"lambda1": 0.5, "lambda2": 0.1, "batch_size": 16, "iters": 4,
            "lr": 0.001, "seed": 7, "mode": "exact", "checkpoint_every": 2},
  "solver": {"method": "rk45_adaptive", "rtol": 1e-6, "atol": 1e-8},
  "output_dir": "test_cli_run"
})";

// Wide-sigma variant for the pointwise density oracle: at sigma_max = 50 the
// terminal prior mismatch of the uncentered mixture is ~4e-2 in the grid
// tails, above the 1e-2 tolerance; 300 brings it to ~6e-3.
std::string wide_sigma_config() {
    std::string text = kMogConfig;
    const auto pos = text.find("\"sigma_max\": 50.0");
    text.replace(pos, 17, "\"sigma_max\": 300.0");
    return text;
}

std::string write_config(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    std::string path;
    explicit TempDir(std::string p) : path(std::move(p)) { fs::remove_all(path); }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("config parsing") {
    SUBCASE("valid") {
        const RunConfig cfg = RunConfig::from_json_text(kMogConfig);
        CHECK(std::holds_alternative<MixtureDensity>(cfg.dataset));
        CHECK(cfg.schedule.kind == ScheduleKind::VE);
        CHECK(cfg.train.lambda1 == 0.5);
        CHECK(cfg.model.dim == 1);
    }
    SUBCASE("unknown top-level key rejected") {
        std::string bad = kMogConfig;
        bad.insert(bad.rfind('}'), ", \"extra\": 1");
        CHECK_THROWS_AS(RunConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("unknown nested key rejected") {
        std::string bad = kMogConfig;
        const auto pos = bad.find("\"sigma_max\": 50.0");
        bad.insert(pos, "\"sigma_mid\": 1.0, ");
        CHECK_THROWS_AS(RunConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("bad mode rejected") {
        std::string bad = kMogConfig;
        const auto pos = bad.find("\"exact\"");
        bad.replace(pos, 7, "\"magic\"");
        CHECK_THROWS_AS(RunConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("weights must sum to one") {
        std::string bad = kMogConfig;
        const auto pos = bad.find("[0.4, 0.4, 0.2]");
        bad.replace(pos, 15, "[0.4, 0.4, 0.4]");
        CHECK_THROWS_AS(RunConfig::from_json_text(bad), ConfigError);
    }
    SUBCASE("checkerboard dataset") {
        const std::string text = R"({
          "dataset": {"type": "checkerboard", "cell_size": 1.0, "extent": 2.0},
          "schedule": {"kind": "vp"},
          "output_dir": "x"})";
        const RunConfig cfg = RunConfig::from_json_text(text);
        CHECK(std::holds_alternative<CheckerboardSampler>(cfg.dataset));
        CHECK(cfg.model.dim == 2);
    }
}

TEST_CASE("cmd_train writes outputs and reports exit codes") {
    TempDir dir("test_cli_run");
    const std::string cfg_path = write_config("test_cli_cfg.json", kMogConfig);

    SUBCASE("trains and writes checkpoint + csv") {
        CHECK(cli::cmd_train(cfg_path) == cli::kExitOk);
        CHECK(fs::exists("test_cli_run/checkpoint.json"));
        CHECK(fs::exists("test_cli_run/train.csv"));
        const std::string csv = slurp("test_cli_run/train.csv");
        CHECK(csv.find("config_hash=0x") != std::string::npos);
        CHECK(csv.find("git=") != std::string::npos);
    }
    SUBCASE("missing config file exits 2") {
        CHECK(cli::cmd_train("no_such_config.json") == cli::kExitConfig);
    }
    SUBCASE("invalid config exits 2") {
        const std::string bad = write_config("test_cli_bad.json", "{\"oops\": 1}");
        CHECK(cli::cmd_train(bad) == cli::kExitConfig);
        fs::remove(bad);
    }
    SUBCASE("iters=0 writes the initialized checkpoint only") {
        std::string text = kMogConfig;
        const auto pos = text.find("\"iters\": 4");
        text.replace(pos, 10, "\"iters\": 0");
        const std::string p = write_config("test_cli_cfg0.json", text);
        CHECK(cli::cmd_train(p) == cli::kExitOk);
        CHECK(fs::exists("test_cli_run/checkpoint.json"));
        fs::remove(p);
    }
    fs::remove(cfg_path);
}

TEST_CASE("eval-nll against the analytic adapter") {
    TempDir dir("test_cli_run");
    const std::string cfg_path = write_config("test_cli_cfg2.json", kMogConfig);

    SUBCASE("analytic adapter matches the MC entropy estimate of the same points") {
        CHECK(cli::cmd_eval_nll(cfg_path, "", 64, true, 5, "test_cli_run/nll.csv", 2) ==
              cli::kExitOk);
        // direct oracle over the same sample draw
        const RunConfig cfg = RunConfig::from_file(cfg_path);
        Rng rng(5);
        const auto& q0 = std::get<MixtureDensity>(cfg.dataset);
        const Eigen::MatrixXd X = q0.sample(64, rng);
        const auto qe = q0.diffuse(cfg.schedule, cfg.schedule.eps_time);
        double want = 0.0;
        for (int i = 0; i < X.rows(); ++i) want -= qe.log_pdf(X.row(i));
        want /= X.rows();

        // read back the per-point csv and average
        std::ifstream f("test_cli_run/nll.csv");
        std::string line;
        std::getline(f, line);
        double acc = 0.0;
        int n = 0;
        while (std::getline(f, line)) {
            if (line.rfind("#", 0) == 0) break;
            acc += std::stod(line.substr(line.find(',') + 1));
            ++n;
        }
        CHECK(n == 64);
        CHECK(std::abs(-acc / n - want) < 1e-2);
    }
    SUBCASE("n = 0 is a config error") {
        CHECK(cli::cmd_eval_nll(cfg_path, "", 0, true, 5, "", 1) == cli::kExitConfig);
    }
    SUBCASE("missing checkpoint without --analytic is a config error") {
        CHECK(cli::cmd_eval_nll(cfg_path, "", 16, false, 5, "", 1) == cli::kExitConfig);
    }
    fs::remove(cfg_path);
}

TEST_CASE("density grid: analytic matches log q_eps, mass near 1, deterministic") {
    TempDir dir("test_cli_run");
    const std::string cfg_path = write_config("test_cli_cfg3.json", wide_sigma_config());
    fs::create_directories("test_cli_run");

    CHECK(cli::cmd_density(cfg_path, "", true, -1.5, 1.5, 101, "test_cli_run/density.csv", 2) ==
          cli::kExitOk);
    const RunConfig cfg = RunConfig::from_file(cfg_path);
    const auto& q0 = std::get<MixtureDensity>(cfg.dataset);
    const auto qe = q0.diffuse(cfg.schedule, cfg.schedule.eps_time);

    std::ifstream f("test_cli_run/density.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "x,log_p");
    double mass = 0.0, prev_p = 0.0, prev_x = 0.0;
    bool first = true;
    int rows = 0;
    while (std::getline(f, line)) {
        if (line.rfind("#", 0) == 0) break;
        const double x = std::stod(line.substr(0, line.find(',')));
        const double lp = std::stod(line.substr(line.find(',') + 1));
        Eigen::VectorXd xv(1);
        xv << x;
        CHECK(std::abs(lp - qe.log_pdf(xv)) < 1e-2);
        if (!first) mass += 0.5 * (std::exp(lp) + prev_p) * (x - prev_x);
        prev_p = std::exp(lp);
        prev_x = x;
        first = false;
        ++rows;
    }
    CHECK(rows == 101);
    CHECK(std::abs(mass - 1.0) < 2e-2);

    // determinism: rerun and compare bytes
    const std::string once = slurp("test_cli_run/density.csv");
    CHECK(cli::cmd_density(cfg_path, "", true, -1.5, 1.5, 101, "test_cli_run/density.csv", 2) ==
          cli::kExitOk);
    CHECK(slurp("test_cli_run/density.csv") == once);
    fs::remove(cfg_path);
}

TEST_CASE("sample command writes deterministic csv") {
    TempDir dir("test_cli_run");
    const std::string cfg_path = write_config("test_cli_cfg4.json", kMogConfig);
    fs::create_directories("test_cli_run");

    cli::SampleFlags flags;
    flags.sampler = "pc";
    flags.n = 32;
    flags.seed = 9;
    flags.pc_steps = 40;
    CHECK(cli::cmd_sample(cfg_path, "", true, flags, "test_cli_run/samples.csv") == cli::kExitOk);
    const std::string once = slurp("test_cli_run/samples.csv");
    CHECK(once.find("x0") == 0);
    CHECK(cli::cmd_sample(cfg_path, "", true, flags, "test_cli_run/samples.csv") == cli::kExitOk);
    CHECK(slurp("test_cli_run/samples.csv") == once);

    flags.sampler = "bogus";
    CHECK(cli::cmd_sample(cfg_path, "", true, flags, "test_cli_run/samples.csv") ==
          cli::kExitConfig);
    fs::remove(cfg_path);
}

TEST_CASE("diag command on the analytic adapter stays at the noise floor") {
    TempDir dir("test_cli_run");
    const std::string cfg_path = write_config("test_cli_cfg5.json", kMogConfig);

    CHECK(cli::cmd_diag(cfg_path, "", 24, 16, true, 3, "test_cli_run", 2) == cli::kExitOk);
    CHECK(fs::exists("test_cli_run/diag_curves.csv"));
    CHECK(fs::exists("test_cli_run/kl_decomposition.csv"));

    std::ifstream f("test_cli_run/diag_curves.csv");
    std::string line;
    std::getline(f, line);
    CHECK(line == "t,l_sm,l_fisher,l_diff");
    int rows = 0;
    while (std::getline(f, line)) {
        if (line.rfind("#", 0) == 0) break;
        std::stringstream ss(line);
        std::string tok;
        std::getline(ss, tok, ','); // t
        std::getline(ss, tok, ',');
        CHECK(std::stod(tok) < 1e-3); // l_sm
        std::getline(ss, tok, ',');
        CHECK(std::stod(tok) < 1e-3); // l_fisher
        ++rows;
    }
    CHECK(rows == 24);

    SUBCASE("empty grid rejected") {
        CHECK(cli::cmd_diag(cfg_path, "", 0, 16, true, 3, "test_cli_run", 1) == cli::kExitConfig);
    }
    fs::remove(cfg_path);
}
