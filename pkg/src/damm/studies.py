"""Monte Carlo studies at desk scale.

Each study simulates ``B`` replications from independent substreams of one
master seed, computes per-replication metrics for every compared model and
summarises them as medians. A model that raises on a replication is recorded
as a failure and left out of its median.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DammError, SpecError
from .estimation import EstimationConfig, fit_ml
from .evaluation import (
    MMR_WINDOW,
    GaussianMixturePath,
    akl,
    avg_frobenius,
    ewma_corr,
    log_score,
    mae_mse,
    mmr_rolling,
    ms_two_state_filter,
)
from .model import GasCoefficients, ModelSpec
from .score import implied_moments
from .simulation import (
    DGP_FROZEN,
    MIXFIX_COMPONENTS,
    PATTERNS,
    corr_pattern_path,
    dgp_spec,
    implied_corr_path,
    simulate_bivariate_corr,
    simulate_damm,
    simulate_dgp4,
    simulate_mixfix,
    simulate_sdmm,
    substream,
    weight_pattern_path,
)

log = logging.getLogger(__name__)

STUDIES = ("sdmm", "corr", "weights", "misspec", "logscore")
TABLE_COLUMNS = ("study", "scenario", "model", "metric", "median", "baseline", "relative", "n_ok", "n_failed")

# exceptions that count as a model failure on one replication
_MODEL_FAILURES = (DammError, ArithmeticError, np.linalg.LinAlgError)

# correlation-study variants and the blocks each one freezes
CORR_MODELS = {"DAMM": (), "DAMM-rhobar": ("corr",), "DAMM-omegabar": ("weights",)}
BASELINES = {"sdmm": "MMR", "corr": "EWMA", "weights": "MS", "logscore": "static"}


@dataclass
class StudySettings:
    """Sizes and options shared by every study."""

    study: str
    B: int = 20
    T: int = 1000
    seed: int = 0
    scenarios: tuple = ()
    models: tuple = ()
    restarts: int = 1
    max_iterations: int = 500
    akl: bool = True
    window: int = MMR_WINDOW
    logscore_window: int = 500
    refit_every: int = 250

    def __post_init__(self):
        if self.study not in STUDIES:
            raise SpecError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.B < 1 or self.T < 2:
            raise SpecError("need B >= 1 and T >= 2")
        self.scenarios = tuple(self.scenarios) or default_scenarios(self.study)
        allowed = _allowed_scenarios(self.study)
        bad = [s for s in self.scenarios if s not in allowed]
        self.models = tuple(self.models)
        if self.study == "misspec":
            unknown = [m for m in self.models if m not in DGP_FROZEN]
            if unknown:
                raise SpecError(f"unknown models {unknown}; expected a subset of {sorted(DGP_FROZEN)}")
        elif self.study == "corr":
            unknown = [m for m in self.models if m not in CORR_MODELS]
            if unknown:
                raise SpecError(f"unknown models {unknown}; expected a subset of {sorted(CORR_MODELS)}")
        elif self.models:
            raise SpecError("the models option applies to the misspec and corr studies only")
        if bad:
            raise SpecError(f"unknown scenarios {bad} for study {self.study}; expected a subset of {allowed}")

    @property
    def estimation(self) -> EstimationConfig:
        return EstimationConfig(restarts=self.restarts, max_iterations=self.max_iterations)


def _allowed_scenarios(study: str) -> tuple:
    if study in ("corr", "weights"):
        return PATTERNS
    if study == "misspec":
        return tuple(sorted(DGP_FROZEN))
    return ("SDMM",) if study == "sdmm" else ("DAMM",)


def default_scenarios(study: str) -> tuple:
    if study == "misspec":
        return ("DGP4",)
    return _allowed_scenarios(study)


# ---------------------------------------------------------------------------
# Per-replication workers. Each returns {(scenario, model, metric): value};
# a model that fails contributes NaN for its metrics.
# ---------------------------------------------------------------------------


def _fill_failed(out, scenario, model, metrics):
    for m in metrics:
        out[(scenario, model, m)] = float("nan")


def _aligned_start(T, window):
    return min(window - 1, T - 1)


def rep_sdmm(settings: StudySettings, r: int) -> dict:
    """DAMM (J=2 Gaussian, all blocks dynamic) against the rolling mixture."""
    rng = substream(settings.seed, r)
    path = simulate_sdmm(settings.T, rng)
    y = path.data
    start = _aligned_start(settings.T, settings.window)
    idx = slice(start, None)
    truth_path = GaussianMixturePath(np.column_stack([path.omega, 1 - path.omega]), path.mu, path.sigma2)
    metrics = ["omega_mae", "omega_mse", "mean_mae", "mean_mse", "variance_mae", "variance_mse"]
    if settings.akl:
        metrics.append("akl")
    out = {}
    estimates = {}
    try:
        spec = ModelSpec("uni-gaussian", J=2)
        fit = fit_ml(spec, y, settings.estimation)
        tr = fit.filter(y)
        means = tr.theta_tilde[:, [1, 3]]
        variances = np.exp(tr.theta_tilde[:, [2, 4]])
        w = tr.weights
        # component labels are arbitrary: keep the global order closest to the truth
        if np.mean(np.abs(w[idx, 1] - path.omega[idx])) < np.mean(np.abs(w[idx, 0] - path.omega[idx])):
            w, means, variances = w[:, ::-1], means[:, ::-1], variances[:, ::-1]
        estimates["DAMM"] = GaussianMixturePath(w, means, variances)
    except _MODEL_FAILURES as exc:
        log.warning("sdmm rep %d: DAMM failed (%s)", r, exc)
        _fill_failed(out, "SDMM", "DAMM", metrics)
    try:
        mmr = mmr_rolling(y, 2, settings.window)
        W, M, V = mmr.weights.copy(), mmr.means.copy(), mmr.variances.copy()
        # per window, order components by distance of their means to the true means
        swap = np.abs(M[:, 0] - path.mu[:, 1]) + np.abs(M[:, 1] - path.mu[:, 0]) < np.abs(M[:, 0] - path.mu[:, 0]) + np.abs(
            M[:, 1] - path.mu[:, 1]
        )
        for arr in (W, M, V):
            arr[swap] = arr[swap][:, ::-1]
        estimates["MMR"] = GaussianMixturePath(W[start:], M[start:], V[start:])
    except _MODEL_FAILURES as exc:
        log.warning("sdmm rep %d: MMR failed (%s)", r, exc)
        _fill_failed(out, "SDMM", "MMR", metrics)
    truth = truth_path.subset(idx)
    for model, est in estimates.items():
        if model == "DAMM":
            est = est.subset(idx)
        mean, var = est.moments()
        vals = {}
        vals["omega_mae"], vals["omega_mse"] = mae_mse(est.weights[:, 0], path.omega[idx])
        vals["mean_mae"], vals["mean_mse"] = mae_mse(mean, path.mean[idx])
        vals["variance_mae"], vals["variance_mse"] = mae_mse(var, path.variance[idx])
        if settings.akl:
            vals["akl"] = akl(truth, est)
        for m in metrics:
            out[("SDMM", model, m)] = vals[m]
    return out


def rep_corr(settings: StudySettings, r: int) -> dict:
    """Bivariate correlation patterns: restricted DAMMs against EWMA.

    The restricted variants are fitted first; their optima are extra starts
    for the unrestricted DAMM, so its likelihood is never below theirs.
    """
    out = {}
    models = settings.models or tuple(CORR_MODELS)
    # the restricted variants are always needed to start the full model
    needed = set(CORR_MODELS) if "DAMM" in models else set(models)
    order = sorted(needed, key=lambda m: (m == "DAMM", m))
    for pattern in settings.scenarios:
        rng = substream(settings.seed, r, PATTERNS.index(pattern))
        rho = corr_pattern_path(pattern, settings.T, rng)
        y = simulate_bivariate_corr(rho, rng)
        nested = []
        for model in order:
            try:
                spec = ModelSpec("mv-gaussian", d=2, J=2, frozen_blocks=frozenset(CORR_MODELS[model]))
                fit = fit_ml(
                    spec,
                    y,
                    settings.estimation,
                    fixed_blocks=("mean", "scale"),
                    fixed_state=np.zeros(spec.n_state),
                    extra_starts=nested if model == "DAMM" else (),
                )
                if model != "DAMM":
                    nested.append(fit.coefficients)
                if model in models:
                    est = implied_corr_path(fit.spec, fit.filter(y).theta_tilde)[:, 0, 1]
                    out[(pattern, model, "mae")], out[(pattern, model, "mse")] = mae_mse(est, rho)
            except _MODEL_FAILURES as exc:
                log.warning("corr rep %d %s: %s failed (%s)", r, pattern, model, exc)
                if model in models:
                    _fill_failed(out, pattern, model, ("mae", "mse"))
        try:
            out[(pattern, "EWMA", "mae")], out[(pattern, "EWMA", "mse")] = mae_mse(ewma_corr(y), rho)
        except _MODEL_FAILURES as exc:
            log.warning("corr rep %d %s: EWMA failed (%s)", r, pattern, exc)
            _fill_failed(out, pattern, "EWMA", ("mae", "mse"))
    return out


def mixfix_fixed_state() -> np.ndarray:
    """State of the weight-study components: N(-4, 6) and N(1, 3); weight slot unused."""
    c1, c2 = MIXFIX_COMPONENTS
    return np.array([0.0, c1.mean, math.log(c1.variance), c2.mean, math.log(c2.variance)])


def rep_weights(settings: StudySettings, r: int) -> dict:
    """Weight patterns with components fixed at the truth: DAMM, MS and MMR."""
    start = _aligned_start(settings.T, settings.window)
    out = {}
    for pattern in settings.scenarios:
        rng = substream(settings.seed, r, PATTERNS.index(pattern))
        omega = weight_pattern_path(pattern, settings.T, rng)
        y = simulate_mixfix(omega, rng)
        runs = {
            "DAMM": lambda: _damm_weights(y, settings),
            "MS": lambda: ms_two_state_filter(y, MIXFIX_COMPONENTS).predicted,
            "MMR": lambda: mmr_rolling(
                y,
                2,
                settings.window,
                fixed_components=([c.mean for c in MIXFIX_COMPONENTS], [c.variance for c in MIXFIX_COMPONENTS]),
            ).weights[:, 0],
        }
        for model, run in runs.items():
            try:
                est = run()
                out[(pattern, model, "mae")], out[(pattern, model, "mse")] = mae_mse(est[start:], omega[start:])
            except _MODEL_FAILURES as exc:
                log.warning("weights rep %d %s: %s failed (%s)", r, pattern, model, exc)
                _fill_failed(out, pattern, model, ("mae", "mse"))
    return out


def _damm_weights(y, settings):
    spec = ModelSpec("uni-gaussian", J=2)
    fit = fit_ml(spec, y, settings.estimation, fixed_blocks=("mean", "scale"), fixed_state=mixfix_fixed_state())
    return fit.filter(y).weights[:, 0]


def rep_misspec(settings: StudySettings, r: int) -> dict:
    """Fit DGP variants to data from each true DGP; average Frobenius error.

    The static DGP4 variant is fitted first and its levels start the others.
    """
    models = settings.models or tuple(sorted(DGP_FROZEN))
    order = sorted(models, key=lambda m: m != "DGP4")
    out = {}
    for true in settings.scenarios:
        rng = substream(settings.seed, r)
        y, truth, _ = simulate_dgp4(true, settings.T, rng)
        level = None
        for model in order:
            try:
                spec = dgp_spec(model)
                fit = fit_ml(
                    spec,
                    y,
                    settings.estimation,
                    fixed_blocks=("mean", "scale"),
                    fixed_state=np.zeros(spec.n_state),
                    level=level,
                )
                if model == "DGP4":
                    level = fit.coefficients.stationary_state()
                est = implied_corr_path(fit.spec, fit.filter(y).theta_tilde)
                out[(true, model, "frobenius")] = avg_frobenius(est, truth)
            except _MODEL_FAILURES as exc:
                log.warning("misspec rep %d %s: %s failed (%s)", r, true, model, exc)
                _fill_failed(out, true, model, ("frobenius",))
    return out


LOGSCORE_TRUTH = GasCoefficients.from_levels(
    ModelSpec("uni-gaussian", J=2),
    np.array([0.0, -1.0, 0.0, 1.0, math.log(0.5)]),
    np.array([0.05, 0.0, 0.05, 0.0, 0.05]),
    np.array([0.95, 0.0, 0.95, 0.0, 0.95]),
)

LOGSCORE_MODELS = {
    "DAMM": ModelSpec("uni-gaussian", J=2),
    "static": ModelSpec("uni-gaussian", J=2, frozen_blocks=frozenset({"weights", "mean", "scale"})),
    "gaussian": ModelSpec("uni-gaussian", J=1),
}


def rep_logscore(settings: StudySettings, r: int) -> dict:
    """Out-of-sample mean log score of dynamic and static models on simulated data."""
    rng = substream(settings.seed, r)
    spec = LOGSCORE_MODELS["DAMM"]
    y, _ = simulate_damm(spec, LOGSCORE_TRUTH, settings.T, rng)
    y = y[:, 0]
    window = min(settings.logscore_window, settings.T - 1)
    out = {}
    for model, mspec in LOGSCORE_MODELS.items():
        try:
            rep = log_score(mspec, y, window, window=window, refit_every=settings.refit_every, config=settings.estimation)
            out[("DAMM", model, "mean_log_score")] = rep.mean
        except _MODEL_FAILURES as exc:
            log.warning("logscore rep %d: %s failed (%s)", r, model, exc)
            _fill_failed(out, "DAMM", model, ("mean_log_score",))
    return out


WORKERS = {"sdmm": rep_sdmm, "corr": rep_corr, "weights": rep_weights, "misspec": rep_misspec, "logscore": rep_logscore}


# ---------------------------------------------------------------------------
# Orchestration and summary
# ---------------------------------------------------------------------------


@dataclass
class StudyResult:
    settings: StudySettings
    per_replication: list = field(default_factory=list)  # one dict per replication, in order

    def values(self, scenario, model, metric) -> np.ndarray:
        return np.array([rep.get((scenario, model, metric), np.nan) for rep in self.per_replication], dtype=float)

    def median(self, scenario, model, metric) -> float:
        v = self.values(scenario, model, metric)
        v = v[np.isfinite(v)]
        return float(np.median(v)) if v.size else float("nan")

    def keys(self) -> list:
        seen = {}
        for rep in self.per_replication:
            for k in rep:
                seen.setdefault(k, None)
        return list(seen)

    def baseline_model(self, scenario) -> str:
        if self.settings.study == "misspec":
            return scenario
        return BASELINES[self.settings.study]

    def table(self) -> list[dict]:
        """Rows in a fixed order: scenario, model, metric as first encountered."""
        rows = []
        for scenario, model, metric in self.keys():
            v = self.values(scenario, model, metric)
            ok = int(np.sum(np.isfinite(v)))
            med = self.median(scenario, model, metric)
            base_model = self.baseline_model(scenario)
            base = self.median(scenario, base_model, metric)
            rel = med / base if np.isfinite(base) and base != 0 else float("nan")
            rows.append(
                {
                    "study": self.settings.study,
                    "scenario": scenario,
                    "model": model,
                    "metric": metric,
                    "median": med,
                    "baseline": base_model,
                    "relative": rel,
                    "n_ok": ok,
                    "n_failed": v.size - ok,
                }
            )
        return rows


def _run_one(args):
    settings, r = args
    return WORKERS[settings.study](settings, r)


def run_study(settings: StudySettings, jobs: int = 1) -> StudyResult:
    """Run all replications; results are merged in replication order."""
    tasks = list(zip(itertools.repeat(settings), range(settings.B)))
    if jobs <= 1:
        reps = [_run_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reps = list(pool.map(_run_one, tasks))
    return StudyResult(settings, reps)
