#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hodsm/ode_flow.hpp"
#include "hodsm/run_config.hpp"
#include "hodsm/sampler.hpp"
#include "hodsm/trainer.hpp"

namespace py = pybind11;
using namespace hodsm;

namespace {

DiffusionSchedule make_schedule(const std::string& kind, double a, double b, double eps_time) {
    if (kind == "ve") return DiffusionSchedule::ve(a, b, eps_time);
    if (kind == "vp") return DiffusionSchedule::vp(a, b, eps_time);
    throw std::invalid_argument("schedule kind must be 've' or 'vp'");
}

} // namespace

PYBIND11_MODULE(_hodsm, m) {
    m.doc() = "score-based diffusion ODEs trained by high-order denoising score matching";

    py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
        .def(py::init(&make_schedule), py::arg("kind"), py::arg("a"), py::arg("b"),
             py::arg("eps_time") = 1e-5)
        .def_static("ve", &DiffusionSchedule::ve, py::arg("sigma_min") = 0.01,
                    py::arg("sigma_max") = 50.0, py::arg("eps_time") = 1e-5)
        .def_static("vp", &DiffusionSchedule::vp, py::arg("beta_min") = 0.1,
                    py::arg("beta_max") = 20.0, py::arg("eps_time") = 1e-5)
        .def_readonly("eps_time", &DiffusionSchedule::eps_time)
        .def_readonly("T", &DiffusionSchedule::T)
        .def("alpha", &DiffusionSchedule::alpha)
        .def("sigma", &DiffusionSchedule::sigma)
        .def("alpha_sigma", &DiffusionSchedule::alpha_sigma)
        .def("drift", &DiffusionSchedule::drift)
        .def("diffusion", &DiffusionSchedule::diffusion)
        .def("perturb", &DiffusionSchedule::perturb)
        .def("prior_logpdf", &DiffusionSchedule::prior_logpdf);

    py::class_<MixtureDensity>(m, "MixtureDensity")
        .def(py::init<std::vector<double>, std::vector<Eigen::VectorXd>, std::vector<double>>(),
             py::arg("weights"), py::arg("means"), py::arg("variances"))
        .def_static("single", &MixtureDensity::single)
        .def_static("mog1d", &MixtureDensity::mog1d)
        .def_property_readonly("dim", &MixtureDensity::dim)
        .def("log_pdf", &MixtureDensity::log_pdf)
        .def("pdf", &MixtureDensity::pdf)
        .def("score1", &MixtureDensity::score1)
        .def("score2", &MixtureDensity::score2)
        .def("score3", &MixtureDensity::score3)
        .def("diffuse", &MixtureDensity::diffuse)
        .def("sample",
             [](const MixtureDensity& q, int n, uint64_t seed) {
                 Rng rng(seed);
                 return q.sample(n, rng);
             },
             py::arg("n"), py::arg("seed") = 0);

    py::class_<CheckerboardSampler>(m, "CheckerboardSampler")
        .def(py::init([](double cell, double extent) {
                 return CheckerboardSampler{cell, extent};
             }),
             py::arg("cell_size") = 1.0, py::arg("extent") = 2.0)
        .def("sample",
             [](const CheckerboardSampler& cb, int n, uint64_t seed) {
                 Rng rng(seed);
                 return cb.sample(n, rng);
             },
             py::arg("n"), py::arg("seed") = 0)
        .def("in_black_cell", &CheckerboardSampler::in_black_cell);

    py::class_<ScoreModelConfig>(m, "ScoreModelConfig")
        .def(py::init<>())
        .def_readwrite("dim", &ScoreModelConfig::dim)
        .def_readwrite("time_frequencies", &ScoreModelConfig::time_frequencies)
        .def_readwrite("t_hidden", &ScoreModelConfig::t_hidden)
        .def_readwrite("x_hidden", &ScoreModelConfig::x_hidden)
        .def_readwrite("joint_hidden", &ScoreModelConfig::joint_hidden);

    py::class_<ScoreModel>(m, "ScoreModel")
        .def(py::init<ScoreModelConfig, uint64_t>(), py::arg("config"), py::arg("seed"))
        .def_property_readonly("dim", &ScoreModel::dim)
        .def("param_count", &ScoreModel::param_count)
        .def("flat_params", &ScoreModel::flat_params)
        .def("set_flat_params", &ScoreModel::set_flat_params)
        .def("score", &ScoreModel::score, py::arg("schedule"), py::arg("x"), py::arg("t"))
        .def("score_jvp", &ScoreModel::score_jvp)
        .def("grad_div",
             [](const ScoreModel& m_, const DiffusionSchedule& s, const Eigen::VectorXd& x,
                double t, const Eigen::VectorXd& v) {
                 const auto gd = m_.grad_div(s, x, t, v);
                 return py::make_tuple(gd.s_jvp, gd.vjp, gd.s);
             })
        .def("full_jacobian", &ScoreModel::full_jacobian)
        .def("exact_div_grad", &ScoreModel::exact_div_grad)
        .def("save_checkpoint", &ScoreModel::save_checkpoint)
        .def_static("load_checkpoint", &ScoreModel::load_checkpoint);

    py::enum_<LossMode>(m, "LossMode")
        .value("exact", LossMode::Exact)
        .value("estimated", LossMode::Estimated);
    py::enum_<ProbeKind>(m, "ProbeKind")
        .value("rademacher", ProbeKind::Rademacher)
        .value("gaussian", ProbeKind::Gaussian);

    py::class_<LossBreakdown>(m, "LossBreakdown")
        .def_readonly("j1", &LossBreakdown::j1)
        .def_readonly("j2", &LossBreakdown::j2)
        .def_readonly("j2_trace", &LossBreakdown::j2_trace)
        .def_readonly("j3", &LossBreakdown::j3)
        .def_readonly("total", &LossBreakdown::total)
        .def("__repr__", [](const LossBreakdown& b) {
            return "LossBreakdown(j1=" + std::to_string(b.j1) + ", j2=" + std::to_string(b.j2) +
                   ", j2_trace=" + std::to_string(b.j2_trace) + ", j3=" + std::to_string(b.j3) +
                   ", total=" + std::to_string(b.total) + ")";
        });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("lambda1", &TrainConfig::lambda1)
        .def_readwrite("lambda2", &TrainConfig::lambda2)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("iters", &TrainConfig::iters)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("mode", &TrainConfig::mode)
        .def_readwrite("probe", &TrainConfig::probe)
        .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every);

    m.def(
        "train",
        [](const MixtureDensity& q0, const DiffusionSchedule& sched, const TrainConfig& cfg,
           const ScoreModelConfig& mc, const std::string& out_dir) {
            const TrainResult r = train(Dataset{q0}, sched, cfg, mc, out_dir);
            if (r.abort)
                throw std::runtime_error("training aborted at step " +
                                         std::to_string(r.abort->step) + " (" + r.abort->term +
                                         ")");
            return py::make_tuple(r.model, r.history.empty() ? LossBreakdown{}
                                                             : r.history.back());
        },
        py::arg("dataset"), py::arg("schedule"), py::arg("config"),
        py::arg("model_config") = ScoreModelConfig{}, py::arg("out_dir") = "");
    m.def(
        "train_checkerboard",
        [](const CheckerboardSampler& cb, const DiffusionSchedule& sched, const TrainConfig& cfg,
           const ScoreModelConfig& mc, const std::string& out_dir) {
            const TrainResult r = train(Dataset{cb}, sched, cfg, mc, out_dir);
            if (r.abort)
                throw std::runtime_error("training aborted at step " +
                                         std::to_string(r.abort->step) + " (" + r.abort->term +
                                         ")");
            return py::make_tuple(r.model, r.history.empty() ? LossBreakdown{}
                                                             : r.history.back());
        },
        py::arg("dataset"), py::arg("schedule"), py::arg("config"),
        py::arg("model_config") = ScoreModelConfig{}, py::arg("out_dir") = "");

    py::class_<OdeSolverConfig>(m, "OdeSolverConfig")
        .def_static("rk4", &OdeSolverConfig::rk4, py::arg("steps"))
        .def_static("rk45", &OdeSolverConfig::rk45, py::arg("rtol") = 1e-6,
                    py::arg("atol") = 1e-8);

    m.def(
        "log_likelihood",
        [](const ScoreModel& model, const DiffusionSchedule& sched, const Eigen::MatrixXd& X,
           const OdeSolverConfig& solver) {
            const ModelScoreSource src(model, sched);
            return log_likelihood(src, sched, X, solver);
        },
        py::arg("model"), py::arg("schedule"), py::arg("points"),
        py::arg("solver") = OdeSolverConfig::rk45());
    m.def(
        "log_likelihood_analytic",
        [](const MixtureDensity& q0, const DiffusionSchedule& sched, const Eigen::MatrixXd& X,
           const OdeSolverConfig& solver) {
            const AnalyticScoreSource src(q0, sched);
            return log_likelihood(src, sched, X, solver);
        },
        py::arg("q0"), py::arg("schedule"), py::arg("points"),
        py::arg("solver") = OdeSolverConfig::rk45());

    py::class_<KlDecomposition>(m, "KlDecomposition")
        .def_readonly("j_sm", &KlDecomposition::j_sm)
        .def_readonly("j_diff", &KlDecomposition::j_diff)
        .def_readonly("j_ode", &KlDecomposition::j_ode)
        .def_readonly("j_fisher", &KlDecomposition::j_fisher)
        .def_readonly("cs_bound", &KlDecomposition::cs_bound);

    m.def(
        "diag_curves",
        [](const ScoreModel& model, const MixtureDensity& q0, const DiffusionSchedule& sched,
           int grid_points, int n_mc, uint64_t seed, int threads) {
            const ModelScoreSource src(model, sched);
            Eigen::VectorXd grid(grid_points);
            for (int i = 0; i < grid_points; ++i)
                grid(i) = sched.eps_time + (sched.T - sched.eps_time) * i / (grid_points - 1);
            grid(grid_points - 1) = sched.T;
            const DiagTable table =
                diag_curves(src, q0, sched, grid, n_mc, OdeSolverConfig::rk45(), seed, threads);
            const KlDecomposition kl = kl_decomposition(table);
            return py::make_tuple(table.t, table.mean(table.l_sm), table.mean(table.l_fisher),
                                  table.mean(table.l_diff), kl);
        },
        py::arg("model"), py::arg("q0"), py::arg("schedule"), py::arg("grid_points") = 100,
        py::arg("n_mc") = 128, py::arg("seed") = 0, py::arg("threads") = 1);

    py::class_<PcConfig>(m, "PcConfig")
        .def(py::init<>())
        .def_readwrite("n_steps", &PcConfig::n_steps)
        .def_readwrite("snr", &PcConfig::snr)
        .def_readwrite("corrector_steps", &PcConfig::corrector_steps)
        .def_readwrite("seed", &PcConfig::seed);

    m.def(
        "pc_sample",
        [](const ScoreModel& model, const DiffusionSchedule& sched, int n, const PcConfig& cfg) {
            const ModelScoreSource src(model, sched);
            return pc_sample(src, sched, n, cfg);
        },
        py::arg("model"), py::arg("schedule"), py::arg("n"), py::arg("config") = PcConfig{});
    m.def(
        "ode_sample",
        [](const ScoreModel& model, const DiffusionSchedule& sched, int n,
           const OdeSolverConfig& solver, uint64_t seed) {
            const ModelScoreSource src(model, sched);
            return ode_sample(src, sched, n, solver, seed);
        },
        py::arg("model"), py::arg("schedule"), py::arg("n"),
        py::arg("solver") = OdeSolverConfig::rk45(), py::arg("seed") = 0);
}
