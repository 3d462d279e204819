"""Score-based diffusion ODEs trained by high-order denoising score matching."""

try:
    from . import _hodsm as _impl  # installed layout: extension inside the package
except ImportError:  # pragma: no cover - development layout, extension on sys.path
    import _hodsm as _impl

CheckerboardSampler = _impl.CheckerboardSampler
DiffusionSchedule = _impl.DiffusionSchedule
KlDecomposition = _impl.KlDecomposition
LossBreakdown = _impl.LossBreakdown
LossMode = _impl.LossMode
MixtureDensity = _impl.MixtureDensity
OdeSolverConfig = _impl.OdeSolverConfig
PcConfig = _impl.PcConfig
ProbeKind = _impl.ProbeKind
ScoreModel = _impl.ScoreModel
ScoreModelConfig = _impl.ScoreModelConfig
TrainConfig = _impl.TrainConfig
diag_curves = _impl.diag_curves
log_likelihood = _impl.log_likelihood
log_likelihood_analytic = _impl.log_likelihood_analytic
ode_sample = _impl.ode_sample
pc_sample = _impl.pc_sample
train = _impl.train
train_checkerboard = _impl.train_checkerboard

__all__ = [
    "CheckerboardSampler",
    "DiffusionSchedule",
    "KlDecomposition",
    "LossBreakdown",
    "LossMode",
    "MixtureDensity",
    "OdeSolverConfig",
    "PcConfig",
    "ProbeKind",
    "ScoreModel",
    "ScoreModelConfig",
    "TrainConfig",
    "diag_curves",
    "log_likelihood",
    "log_likelihood_analytic",
    "ode_sample",
    "pc_sample",
    "train",
    "train_checkerboard",
]
