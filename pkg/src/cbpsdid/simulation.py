"""Monte Carlo study machinery: data-generating processes and metrics.

Five designs toggle which working model matches the data: covariates enter
estimation as standardized nonlinear transforms Z of latent normals X, and
each design chooses whether outcomes and treatment depend on Z (model in the
data's coordinates: correctly specified) or on X (misspecified). Design 5
perturbs both models by O(n^-1/2) amounts.

Replication r of a study draws from an RNG stream keyed by (seed, r) only,
so results are identical for any thread count.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
import math
import multiprocessing

import numpy as np

from .estimators import METHODS, efficient_influence, estimate_all
from .panel import CovariateSpec, PanelDataset, build_design

PI_FLOOR = 1e-6


def f_or(w: np.ndarray) -> np.ndarray:
    """Outcome-evolution signal 210 + 27.4 w1 + 13.7 (w2 + w3 + w4)."""
    return 210.0 + 27.4 * w[:, 0] + 13.7 * (w[:, 1] + w[:, 2] + w[:, 3])


def f_ps(w: np.ndarray) -> np.ndarray:
    """Propensity index 0.75 (-w1 + 0.5 w2 - 0.25 w3 - 0.1 w4)."""
    return 0.75 * (-w[:, 0] + 0.5 * w[:, 1] - 0.25 * w[:, 2] - 0.1 * w[:, 3])


def u_direction(z: np.ndarray) -> np.ndarray:
    """Propensity misspecification direction -z1^2 + z2^2."""
    return -z[:, 0] ** 2 + z[:, 1] ** 2


def r_direction(z: np.ndarray) -> np.ndarray:
    """Outcome misspecification direction 2 z1^2 + 4 z2^2 + 3 z3^2 + z4^2."""
    return 2.0 * z[:, 0] ** 2 + 4.0 * z[:, 1] ** 2 + 3.0 * z[:, 2] ** 2 + z[:, 3] ** 2


def raw_covariates(x: np.ndarray) -> np.ndarray:
    """Nonlinear covariate transforms of latent standard normals."""
    z1 = np.exp(0.5 * x[:, 0])
    z2 = 10.0 + x[:, 1] / (1.0 + np.exp(x[:, 0]))
    z3 = (0.6 + x[:, 0] * x[:, 2] / 25.0) ** 3
    z4 = (20.0 + x[:, 0] + x[:, 3]) ** 2
    return np.column_stack([z1, z2, z3, z4])


@dataclass(frozen=True)
class StandardizationConstants:
    """Population mean/sd of the four covariate transforms, MC-estimated."""

    mean: np.ndarray
    sd: np.ndarray
    seed: int
    draws: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "sd", np.asarray(self.sd, dtype=np.float64))
        if np.any(self.sd <= 0.0):
            raise ValueError("standardization sds must be positive")

    def standardize(self, ztilde: np.ndarray) -> np.ndarray:
        return (ztilde - self.mean) / self.sd

    def save(self, path) -> None:
        payload = {
            "version": 1,
            "seed": self.seed,
            "draws": self.draws,
            "mean": [repr(v) for v in self.mean.tolist()],
            "sd": [repr(v) for v in self.sd.tolist()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "StandardizationConstants":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls(
            mean=np.array([float(v) for v in payload["mean"]]),
            sd=np.array([float(v) for v in payload["sd"]]),
            seed=int(payload["seed"]),
            draws=int(payload["draws"]),
        )


def compute_standardization(
    oracle_draws: int, seed: int, cache_path=None
) -> StandardizationConstants:
    """Estimate the transform means and sds from fresh normal draws.

    Requires at least 1e6 draws; accumulates first and second moments in
    chunks so memory stays flat. When ``cache_path`` is given the result is
    also written there (seed and draw count recorded in the file).
    """
    if oracle_draws < 10**6:
        raise ValueError("oracle_draws must be at least 1e6")
    rng = np.random.default_rng(seed)
    total = np.zeros(4)
    total_sq = np.zeros(4)
    remaining = oracle_draws
    chunk = 10**6
    while remaining > 0:
        m = min(chunk, remaining)
        zt = raw_covariates(rng.standard_normal((m, 4)))
        total += zt.sum(axis=0)
        total_sq += (zt**2).sum(axis=0)
        remaining -= m
    mean = total / oracle_draws
    var = total_sq / oracle_draws - mean**2
    consts = StandardizationConstants(
        mean=mean, sd=np.sqrt(var), seed=seed, draws=oracle_draws
    )
    if cache_path is not None:
        consts.save(cache_path)
    return consts


_DEFAULT_CONSTANTS: StandardizationConstants | None = None


def default_constants() -> StandardizationConstants:
    """Bundled constants (1e7 draws; the generating seed is recorded inside)."""
    global _DEFAULT_CONSTANTS
    if _DEFAULT_CONSTANTS is None:
        path = resources.files("cbpsdid").joinpath("data/standardization.json")
        with resources.as_file(path) as p:
            _DEFAULT_CONSTANTS = StandardizationConstants.load(p)
    return _DEFAULT_CONSTANTS


@dataclass(frozen=True)
class DgpConfig:
    """Which design to draw from, the sample size, and perturbation sizes.

    xi and delta only matter for design 5 and default to n^-0.5 there.
    """

    dgp_id: int
    n: int
    xi: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.dgp_id not in (1, 2, 3, 4, 5):
            raise ValueError(f"dgp_id must be 1..5, got {self.dgp_id}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.dgp_id == 5:
            xi = self.n**-0.5 if self.xi is None else float(self.xi)
            delta = self.n**-0.5 if self.delta is None else float(self.delta)
        else:
            xi = 0.0 if self.xi is None else float(self.xi)
            delta = 0.0 if self.delta is None else float(self.delta)
            if xi != 0.0 or delta != 0.0:
                raise ValueError("xi/delta are only meaningful for dgp_id=5")
        if not (math.isfinite(xi) and math.isfinite(delta)):
            raise ValueError("xi and delta must be finite")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class Replication:
    """One simulated panel plus the oracle quantities behind it."""

    dataset: PanelDataset
    true_att: float = 0.0
    oracle_pi: np.ndarray | None = field(default=None, repr=False)
    oracle_m: np.ndarray | None = field(default=None, repr=False)
    n_pi_clamped: int = 0


def draw_replication(cfg: DgpConfig, consts: StandardizationConstants, rng) -> Replication:
    """Draw one panel: X, then U (treatment), then v, then the three epsilons.

    The observed covariates are always the standardized Z columns; designs
    differ in whether signals are built from Z or from the latent X, and
    design 5 adds the xi/delta perturbations. Propensities are clamped to
    [1e-6, 1 - 1e-6] before treatment is assigned (active only in design 5's
    perturbed tail in practice).
    """
    n = cfg.n
    x = rng.standard_normal((n, 4))
    z = consts.standardize(raw_covariates(x))

    w_or = z if cfg.dgp_id in (1, 2, 5) else x
    w_ps = z if cfg.dgp_id in (1, 3, 5) else x
    or_signal = f_or(w_or)
    ps_index = f_ps(w_ps)

    pi = 1.0 / (1.0 + np.exp(-ps_index))
    if cfg.dgp_id == 5:
        pi = pi * np.exp(cfg.xi * u_direction(z))
    n_clamped = int(np.count_nonzero((pi < PI_FLOOR) | (pi > 1.0 - PI_FLOOR)))
    pi = np.clip(pi, PI_FLOOR, 1.0 - PI_FLOOR)

    u = rng.random(n)
    d = (pi >= u).astype(np.float64)
    v = d * or_signal + rng.standard_normal(n)
    eps0 = rng.standard_normal(n)
    eps1_0 = rng.standard_normal(n)
    eps1_1 = rng.standard_normal(n)

    if cfg.dgp_id == 5:
        r_shift = r_direction(z)
        y0 = or_signal + v + eps0 + cfg.delta * r_shift
        base1 = 2.0 * or_signal + v + 2.0 * cfg.delta * r_shift
    else:
        y0 = or_signal + v + eps0
        base1 = 2.0 * or_signal + v
    y1 = np.where(d == 1.0, base1 + eps1_1, base1 + eps1_0)

    covs = {f"Z{j + 1}": z[:, j].copy() for j in range(4)}
    dataset = PanelDataset(y0, y1, d, covs)
    # conditional mean of the outcome evolution for controls: the OR signal,
    # plus delta * r in design 5 (period-1 coefficient 2*delta minus delta)
    oracle_m = or_signal + cfg.delta * r_direction(z) if cfg.dgp_id == 5 else or_signal
    return Replication(
        dataset=dataset,
        true_att=0.0,
        oracle_pi=pi,
        oracle_m=oracle_m,
        n_pi_clamped=n_clamped,
    )


@dataclass(frozen=True)
class MetricsRow:
    """One study table row: six metrics plus bookkeeping."""

    method: str
    av_bias: float
    med_bias: float
    rmse: float
    asy_v: float
    cover: float
    cil: float
    n_used: int
    n_failed: int


@dataclass(frozen=True)
class StudyReport:
    """Per-estimator metrics for one design, plus the efficiency bound."""

    dgp_id: int
    n: int
    reps: int
    seed: int
    methods: tuple[str, ...]
    rows: tuple[MetricsRow, ...]
    bound: float
    bound_se: float
    bound_draws: int

    def row(self, method: str) -> MetricsRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def _replication_stream(seed: int, r: int):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0, r)))


def _run_one(cfg: DgpConfig, consts, seed: int, r: int, methods):
    rng = _replication_stream(seed, r)
    rep = draw_replication(cfg, consts, rng)
    ds = rep.dataset
    design = build_design(ds, CovariateSpec.all_raw(ds))
    results, failures = estimate_all(design.x, ds.dy, ds.d, methods)
    packed = {
        m: (res.tau, res.asy_var, res.covers(rep.true_att), res.ci_length)
        for m, res in results.items()
    }
    return packed, {m: type(e).__name__ for m, e in failures.items()}


def _chunk_worker(args):
    cfg, consts, seed, indices, methods = args
    return [_run_one(cfg, consts, seed, r, methods) for r in indices]


def run_study(
    cfg: DgpConfig,
    reps: int,
    seed: int,
    methods=METHODS,
    threads: int = 1,
    bound_draws: int = 10**6,
    consts: StandardizationConstants | None = None,
) -> StudyReport:
    """Run the Monte Carlo study and aggregate the table metrics.

    Estimators that fail on a replication are excluded from that method's
    row and counted; other methods keep the replication. Output is
    bit-identical for any ``threads`` value.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    methods = tuple(methods)
    if consts is None:
        consts = default_constants()

    if threads > 1 and reps > 1:
        workers = min(threads, reps)
        chunks = [
            (cfg, consts, seed, range(w, reps, workers), methods) for w in range(workers)
        ]
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            chunked = list(pool.map(_chunk_worker, chunks))
        outcomes: list = [None] * reps
        for (_, _, _, indices, _), results in zip(chunks, chunked):
            for r, res in zip(indices, results):
                outcomes[r] = res
    else:
        outcomes = [_run_one(cfg, consts, seed, r, methods) for r in range(reps)]

    rows = []
    failures_total: dict[str, int] = {}
    for method in methods:
        taus, asy_vars, covers, lengths = [], [], [], []
        n_failed = 0
        for packed, failed in outcomes:
            if method in packed:
                tau, av, cov, cil = packed[method]
                taus.append(tau)
                asy_vars.append(av)
                covers.append(cov)
                lengths.append(cil)
            else:
                n_failed += 1
        failures_total[method] = n_failed
        taus = np.asarray(taus)
        if taus.size == 0:
            rows.append(MetricsRow(method, math.nan, math.nan, math.nan, math.nan,
                                   math.nan, math.nan, 0, n_failed))
            continue
        rows.append(
            MetricsRow(
                method=method,
                av_bias=float(np.mean(taus)),
                med_bias=float(np.median(taus)),
                rmse=float(np.sqrt(np.mean(taus**2))),
                asy_v=float(np.mean(asy_vars)),
                cover=float(np.mean(covers)),
                cil=float(np.mean(lengths)),
                n_used=int(taus.size),
                n_failed=n_failed,
            )
        )

    bound, bound_se = _bound_detail(
        cfg.dgp_id, bound_draws, seed, consts, spawn_prefix=(1, 0)
    )
    return StudyReport(
        dgp_id=cfg.dgp_id,
        n=cfg.n,
        reps=reps,
        seed=seed,
        methods=methods,
        rows=tuple(rows),
        bound=bound,
        bound_se=bound_se,
        bound_draws=bound_draws,
    )


def _bound_detail(dgp_id, oracle_draws, seed, consts, spawn_prefix=None):
    if spawn_prefix is None:
        rng = np.random.default_rng(seed)
    else:
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=spawn_prefix))
    chunk = 10**6
    remaining = oracle_draws
    d_parts, pi_parts, resid_parts = [], [], []
    while remaining > 0:
        m = min(chunk, remaining)
        # design 5 is evaluated at xi = delta = 0 (the unperturbed process)
        c = DgpConfig(dgp_id=dgp_id, n=m, xi=0.0, delta=0.0)
        rep = draw_replication(c, consts, rng)
        d_parts.append(rep.dataset.d)
        pi_parts.append(rep.oracle_pi)
        resid_parts.append(rep.dataset.dy - rep.oracle_m)
        remaining -= m
    d = np.concatenate(d_parts)
    pi = np.concatenate(pi_parts)
    resid = np.concatenate(resid_parts)
    p = float(np.mean(d))
    eta = efficient_influence(pi, np.zeros_like(resid), resid, d, tau=0.0, p=p)
    eta2 = eta**2
    n = eta.shape[0]
    bound = float(np.mean(eta2))
    var_eta2 = float(np.mean(eta2**2)) - bound**2
    se = math.sqrt(max(var_eta2, 0.0) / n)
    return bound, se


def efficiency_bound(
    dgp_id: int,
    oracle_draws: int,
    seed: int,
    consts: StandardizationConstants | None = None,
) -> float:
    """MC estimate of the second moment of the efficient influence values.

    Uses the design's true propensities and true control outcome evolution
    (design 5 evaluated at xi = delta = 0); the treated share is estimated
    within the same oracle sample.
    """
    bound, _ = efficiency_bound_detail(dgp_id, oracle_draws, seed, consts)
    return bound


def efficiency_bound_detail(
    dgp_id: int,
    oracle_draws: int,
    seed: int,
    consts: StandardizationConstants | None = None,
):
    """Like `efficiency_bound` but also returns the MC standard error."""
    if consts is None:
        consts = default_constants()
    return _bound_detail(dgp_id, oracle_draws, seed, consts)
