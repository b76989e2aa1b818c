"""Monte-Carlo harness: configs, ensembles, convergence studies, reports.

Every run is reproducible from (config file, master seed) alone: member
seeds are spawned from the master seed, all noise consumed by the solvers
is a deterministic image of the sampled Brownian coefficient matrices, and
artifacts carry a manifest with the config hash.  Ensembles advance member
batches in lock step (the state arrays grow a trailing member axis), which
keeps the per-step work in BLAS instead of Python.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import averaging, models, noise, spectral
from .dynamics import (
    CoupledElementSolver,
    FullSpdeSolver,
    NumericalAbort,
    SpdeConfig,
    initial_profile,
)
from .grid import DomainGrid, build_grid
from .models import DiscreteModel, ModelDrivers, simulate_model
from .noise import QWienerSpec, sample_global_path

__all__ = [
    "ConfigError",
    "RunConfig",
    "EnsembleStats",
    "ConvergenceTable",
    "run_ensemble",
    "convergence_study",
    "compare_models",
    "fit_order",
    "write_manifest",
    "write_csv",
]


class ConfigError(ValueError):
    """Invalid run configuration; carries every violated constraint."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


@dataclass(frozen=True)
class RunConfig:
    """Fully validated description of one harness run.

    Defaults are the desk-scale configuration: minutes of laptop runtime;
    studies and acceptance checks override what they pin.
    """

    L: float = 2.0 * np.pi
    M: int = 8
    subgrid_n: int = 64
    n_modes: int = 33            # Fourier modes K+1 of the driving noise
    decay_r: float = 3.0
    q_list: Optional[tuple] = None
    master_seed: int = 2024

    alpha: float = 1.0
    sigma: float = 0.5
    gamma: float = 1.0
    dt: Optional[float] = None   # default 1e-4 h^2
    T: float = 1.0
    scheme: str = "semi_implicit"
    initial: dict = field(default_factory=lambda: {"kind": "sine", "amplitude": 0.3, "mode": 1})

    model_kinds: tuple = ("conventional_fd", "holistic")
    ensemble: int = 256
    n_fine: int = 1024
    kmax: int = 16
    n_levels: int = 6
    sweep_axis: Optional[str] = None
    sweep_values: tuple = ()
    out_dir: Optional[str] = None
    chunk_size: int = 32
    deviation_alpha: bool = False

    # -- validation ----------------------------------------------------------

    def __post_init__(self):
        errors = []
        if self.L <= 0:
            errors.append(f"L must be positive, got {self.L}")
        if self.M < 3:
            errors.append(f"M must be >= 3, got {self.M}")
        if self.subgrid_n < 8 or self.subgrid_n % 2:
            errors.append(f"subgrid_n must be even and >= 8, got {self.subgrid_n}")
        if self.n_modes < 2:
            errors.append(f"need at least 2 noise modes, got {self.n_modes}")
        if self.q_list is None and self.decay_r < 2:
            errors.append(f"decay_r must be >= 2, got {self.decay_r}")
        if self.sigma < 0:
            errors.append(f"sigma must be nonnegative, got {self.sigma}")
        if not 0 <= self.gamma <= 1:
            errors.append(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.dt is not None and self.dt <= 0:
            errors.append(f"dt must be positive, got {self.dt}")
        if self.T <= 0:
            errors.append(f"T must be positive, got {self.T}")
        if self.scheme not in ("semi_implicit", "explicit"):
            errors.append(f"unknown scheme {self.scheme!r}")
        for kind in self.model_kinds:
            if kind not in models.MODEL_KINDS + ("reference", "coupled"):
                errors.append(f"unknown model kind {kind!r}")
        if self.ensemble < 1:
            errors.append(f"ensemble size must be >= 1, got {self.ensemble}")
        if self.n_fine < 4 * self.M:
            errors.append(f"n_fine={self.n_fine} too coarse for M={self.M}")
        if self.n_fine % self.M:
            errors.append("n_fine must be a multiple of M so grid points sit on fine nodes")
        if self.sweep_axis is not None:
            if self.sweep_axis not in ("gamma", "h", "dt"):
                errors.append(f"unknown sweep axis {self.sweep_axis!r}")
            if len(self.sweep_values) < 3:
                errors.append("sweeps need at least 3 values")
        if errors:
            raise ConfigError(errors)
        if isinstance(self.q_list, list):
            object.__setattr__(self, "q_list", tuple(self.q_list))
        object.__setattr__(self, "model_kinds", tuple(self.model_kinds))
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))

    # -- derived objects -------------------------------------------------------

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def dt_value(self) -> float:
        return self.dt if self.dt is not None else 1e-4 * self.h**2

    def grid(self) -> DomainGrid:
        return build_grid(self.L, self.M, self.subgrid_n)

    def qwiener(self) -> QWienerSpec:
        if self.q_list is not None:
            return QWienerSpec(np.asarray(self.q_list, dtype=float))
        return QWienerSpec.from_decay(self.n_modes, self.decay_r)

    def spde(self, **overrides) -> SpdeConfig:
        base = dict(alpha=self.alpha, sigma=self.sigma, gamma=self.gamma,
                    dt=self.dt_value, T=self.T, scheme=self.scheme, initial=self.initial)
        base.update(overrides)
        return SpdeConfig(**base)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_list"] = None if self.q_list is None else list(self.q_list)
        d["model_kinds"] = list(self.model_kinds)
        d["sweep_values"] = list(self.sweep_values)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in sorted(unknown)])
        d = dict(d)
        for key in ("q_list", "model_kinds", "sweep_values"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
        if not isinstance(payload, dict):
            raise ConfigError(["config must be a JSON object"])
        return cls.from_dict(payload)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def fit_order(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log y against log x (the convergence order)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError("order fits need at least 3 points")
    if np.any(y <= 0):
        raise ValueError("order fits need positive error values")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# ---------------------------------------------------------------------------
# shared run machinery
# ---------------------------------------------------------------------------


@dataclass
class RunSetup:
    """Prebuilt immutable inputs shared by every ensemble member."""

    cfg: RunConfig
    grid: DomainGrid
    spec: QWienerSpec
    proj: noise.ElementNoiseProjection
    eig0: spectral.AnalyticEigenSystem
    coeffs: averaging.AveragedCoeffs
    stats: averaging.FastModeStats


def build_setup(cfg: RunConfig) -> RunSetup:
    grid = cfg.grid()
    spec = cfg.qwiener()
    eig0 = spectral.eig_gamma0(grid, cfg.n_levels)
    proj = noise.project_to_element_modes(spec, eig0, grid)
    stats = averaging.ou_stationary_stats(proj, eig0, cfg.sigma)
    coeffs = averaging.averaged_coeffs(proj, eig0, cfg.alpha, cfg.sigma, cfg.gamma)
    return RunSetup(cfg=cfg, grid=grid, spec=spec, proj=proj, eig0=eig0,
                    coeffs=coeffs, stats=stats)


def member_seeds(master_seed: int, n: int) -> list:
    """Independent, replayable per-member seed trees."""
    return np.random.SeedSequence(master_seed).spawn(n)


def member_streams(member_ss) -> tuple:
    """(path, deviation, auxiliary) seed children of one member."""
    path_ss, dev_ss, aux_ss = member_ss.spawn(3)
    return path_ss, dev_ss, aux_ss


def batch_driver_tables(setup: RunSetup, seeds, times: np.ndarray,
                        expansion=None) -> tuple[ModelDrivers, list]:
    """Driver tables for a member batch, trailing axis = member.

    Each member's tables are built exactly as a standalone run would build
    them (same stream order), then stacked; replaying one member with its
    seed reproduces its column bitwise.
    """
    paths = []
    slow, gridpoint, deviation, aux = [], [], [], []
    for ss in seeds:
        path_ss, dev_ss, aux_ss = member_streams(ss)
        path = sample_global_path(setup.spec, times, path_ss)
        d = models.build_drivers(
            setup.grid, setup.spec, setup.proj, path, dev_ss,
            stats=setup.stats, eig0=setup.eig0, expansion=expansion,
            aux_seed=aux_ss,
        )
        paths.append(path)
        slow.append(d.slow)
        gridpoint.append(d.gridpoint)
        deviation.append(d.deviation)
        if d.aux is not None:
            aux.append(d.aux)
    stack = lambda xs: np.stack(xs, axis=-1)
    drivers = ModelDrivers(
        grid=setup.grid,
        dt=np.diff(times),
        slow=stack(slow),
        gridpoint=stack(gridpoint),
        deviation=stack(deviation),
        aux=stack(aux) if aux else None,
    )
    return drivers, paths


def reference_grid_values(setup: RunSetup, paths: list, spde: SpdeConfig,
                          n_fine: int) -> np.ndarray:
    """Reference grid values u(X_j, T) for a member batch, shape (M, R).

    The fine solver advances all members in lock step from the same global
    coefficients the models consume (common random numbers).
    """
    solver = FullSpdeSolver(setup.grid.L, n_fine, setup.spec)
    u0 = initial_profile(spde.initial, setup.grid.L)(solver.x)
    R = len(paths)
    u = np.repeat(u0[:, None], R, axis=1)
    n_steps = paths[0].n_steps
    batch_incr = np.empty((setup.spec.n_modes, R))
    sq = np.sqrt(setup.spec.q)
    for i in range(n_steps):
        for r, p in enumerate(paths):
            batch_incr[:, r] = sq * p.increments[:, i]
        u = solver.step(u, spde, solver.noise_increment_batch(batch_incr))
    stride = n_fine // setup.grid.M
    idx = (stride * np.arange(1, setup.grid.M + 1)) % n_fine
    return u[idx, :]


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleStats:
    """Per-observable first and second moments with standard errors."""

    n_members: int
    observables: dict   # name -> {"mean": array, "var": array, "stderr": array}

    def mean(self, name: str) -> np.ndarray:
        return self.observables[name]["mean"]

    def var(self, name: str) -> np.ndarray:
        return self.observables[name]["var"]

    def stderr(self, name: str) -> np.ndarray:
        return self.observables[name]["stderr"]


def _summaries(samples: dict, R: int) -> EnsembleStats:
    obs = {}
    for name, arr in samples.items():
        arr = np.asarray(arr)
        mean = arr.mean(axis=-1)
        var = arr.var(axis=-1, ddof=1) if R > 1 else np.zeros_like(mean)
        obs[name] = {
            "mean": mean,
            "var": var,
            "stderr": np.sqrt(var / R) if R > 1 else np.full_like(mean, np.nan),
        }
    return EnsembleStats(n_members=R, observables=obs)


def run_ensemble(cfg: RunConfig, out_dir: Optional[Path] = None) -> EnsembleStats:
    """Run the configured models over R common-random-number members.

    Observables: final grid values per model, their squares, and pairwise
    final-time gaps between models.  Member chunks are flushed to disk as
    they finish (when out_dir is given) and picked up on resume, keyed by
    the config digest.
    """
    setup = build_setup(cfg)
    spde = setup.cfg.spde()
    times = spde.times()
    R = cfg.ensemble
    seeds = member_seeds(cfg.master_seed, R)
    needs_reference = "reference" in cfg.model_kinds
    model_kinds = [k for k in cfg.model_kinds if k not in ("reference", "coupled")]

    expansion = None
    if "gamma_reduced" in model_kinds:
        op = spectral.assemble_operator(setup.grid, min(max(cfg.gamma, 1e-3), 1.0))
        eig = spectral.eig_gamma(op, cfg.M + 2)
        expansion = spectral.expand_ground_mode(eig, setup.grid, mode="top-slow")

    U0 = initial_profile(spde.initial, setup.grid.L)(setup.grid.grid_points)

    flush_dir = None
    if out_dir is not None:
        flush_dir = Path(out_dir) / f"members_{cfg.digest()}"
        flush_dir.mkdir(parents=True, exist_ok=True)

    chunks = [seeds[i : i + cfg.chunk_size] for i in range(0, R, cfg.chunk_size)]
    collected: dict[str, list] = {}
    for ci, chunk in enumerate(chunks):
        cache = flush_dir / f"chunk_{ci:04d}.npz" if flush_dir else None
        if cache is not None and cache.exists():
            data = dict(np.load(cache))
            for k, v in data.items():
                collected.setdefault(k, []).append(v)
            continue
        drivers, paths = batch_driver_tables(setup, chunk, times, expansion=expansion)
        out: dict[str, np.ndarray] = {}
        try:
            for kind in model_kinds:
                model = DiscreteModel(kind=kind, coeffs=setup.coeffs, gamma=cfg.gamma,
                                      deviation_alpha=cfg.deviation_alpha)
                U0b = np.repeat(U0[:, None], len(chunk), axis=1)
                traj = simulate_model(model, spde, setup.grid, drivers, U0b, store=False)
                out[kind] = traj.states[-1]
            if needs_reference:
                out["reference"] = reference_grid_values(setup, paths, spde, cfg.n_fine)
        except NumericalAbort as exc:
            # replay context: members ci*chunk..ci*chunk+len-1 of this master seed
            exc.member = ci * cfg.chunk_size
            exc.seed = cfg.master_seed
            raise
        names = list(out)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                gap = np.sqrt(np.mean((out[names[a]] - out[names[b]]) ** 2, axis=0))
                out[f"gap:{names[a]}-{names[b]}"] = gap[None, :]
        if cache is not None:
            np.savez(cache, **out)
        for k, v in out.items():
            collected.setdefault(k, []).append(v)

    samples = {k: np.concatenate(v, axis=-1) for k, v in collected.items()}
    return _summaries(samples, R)


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceTable:
    """Sweep results: one row per swept value plus least-squares orders."""

    study: str
    axis: str
    values: np.ndarray
    metrics: dict          # name -> array aligned with values
    orders: dict           # name -> fitted order

    def rows(self) -> list:
        names = list(self.metrics)
        out = []
        for i, v in enumerate(self.values):
            row = {"value": float(v)}
            row.update({n: float(self.metrics[n][i]) for n in names})
            out.append(row)
        return out


def convergence_study(cfg: RunConfig, study: str, values=None) -> ConvergenceTable:
    """Run one of the named convergence studies.

    studies: "lambda0" (slow-band eigenvalue order in gamma), "expansion"
    (centre-expansion remainder order in gamma), "coeff-h" (averaged
    coefficient orders in the spacing), "coupling-gap" (pathwise gap to the
    reference as gamma -> 1), "weak-h" (weak model error in the spacing).
    """
    if values is None:
        values = cfg.sweep_values
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        raise ConfigError(["convergence studies need at least 3 sweep values"])
    if study == "lambda0":
        return _study_lambda0(cfg, values)
    if study == "expansion":
        return _study_expansion(cfg, values)
    if study == "coeff-h":
        return _study_coeff_h(cfg, values)
    if study == "coupling-gap":
        return _study_coupling_gap(cfg, values)
    if study == "weak-h":
        return _study_weak_h(cfg, values)
    raise ConfigError([f"unknown study {study!r}"])


def _study_lambda0(cfg: RunConfig, gammas: np.ndarray) -> ConvergenceTable:
    """Largest slow-band eigenvalue against gamma (kernel excluded).

    The literal smallest eigenvalue is the exact zero of the uniform kernel
    field for every coupling, so the quadratic-order statement is carried
    by the nonzero slow band; the top of the band is its cleanest member.
    """
    grid = cfg.grid()
    lam_top = []
    lam_first = []
    for g in gammas:
        eig = spectral.eig_gamma(spectral.assemble_operator(grid, g), grid.M)
        lam_top.append(eig.eigenvalues[grid.M - 1])
        lam_first.append(eig.eigenvalues[1])
    metrics = {"lambda_slow_top": np.asarray(lam_top), "lambda_slow_first": np.asarray(lam_first)}
    orders = {k: fit_order(gammas, v) for k, v in metrics.items()}
    return ConvergenceTable("lambda0", "gamma", gammas, metrics, orders)


def _study_expansion(cfg: RunConfig, gammas: np.ndarray) -> ConvergenceTable:
    grid = cfg.grid()
    rem = []
    for g in gammas:
        eig = spectral.eig_gamma(spectral.assemble_operator(grid, g), grid.M + 1)
        exp = spectral.expand_ground_mode(eig, grid, mode="top-slow")
        rem.append(exp.remainder_norm)
    metrics = {"remainder": np.asarray(rem)}
    return ConvergenceTable("expansion", "gamma", gammas, metrics,
                            {"remainder": fit_order(gammas, metrics["remainder"])})


def _study_coeff_h(cfg: RunConfig, hs: np.ndarray) -> ConvergenceTable:
    """Averaged-coefficient orders under the frozen-intensity spacing family.

    The per-mode intensities q_{j,l} are frozen from the projections at the
    coarsest spacing (q_{j,l} = q^h_{j,l} / h there) and the closed forms
    are swept with q^h = q_{j,l} h and lambda = k^2 pi^2 / h^2.
    """
    hs = np.sort(hs)[::-1]
    h_ref = hs[0]
    M_ref = max(int(round(cfg.L / h_ref)), 3)
    grid = build_grid(M_ref * h_ref, M_ref, cfg.subgrid_n)
    spec = cfg.qwiener()
    eig0 = spectral.eig_gamma0(grid, cfg.n_levels)
    proj = noise.project_to_element_modes(spec, eig0, grid)
    stats = averaging.ou_stationary_stats(proj, eig0, cfg.sigma)
    q_jl = stats.qh / h_ref
    levels = eig0.levels[stats.mode_indices].astype(float)

    hat_err, qj_val = [], []
    for h in hs:
        hat = averaging.hat_alpha_from_tables(q_jl, levels, cfg.alpha, cfg.sigma, h)
        qj = averaging.qj_from_tables(q_jl, levels, cfg.sigma, h)
        hat_err.append(np.max(np.abs(hat - cfg.alpha)))
        qj_val.append(np.max(qj))
    metrics = {"hat_alpha_gap": np.asarray(hat_err), "qj": np.asarray(qj_val)}
    orders = {k: fit_order(hs, v) for k, v in metrics.items()}
    return ConvergenceTable("coeff-h", "h", hs, metrics, orders)


def _right_half_gap(field_values: np.ndarray, ref: np.ndarray, ref_x: np.ndarray,
                    grid: DomainGrid) -> np.ndarray:
    """L2 gap over the non-overlapping right-half cover, batched over members.

    field_values: (M, 2, n+1, R); ref: (n_fine, R) on nodes ref_x.
    """
    L = grid.L
    xr = np.mod(grid.all_nodes()[:, 1, :], L)            # (M, n+1)
    xg = np.concatenate([ref_x, [L]])
    vg = np.concatenate([ref, ref[:1]], axis=0)          # (n_fine+1, R)
    idx = np.clip(np.searchsorted(xg, xr.ravel(), side="right") - 1, 0, xg.size - 2)
    w = ((xr.ravel() - xg[idx]) / (xg[idx + 1] - xg[idx]))[:, None]
    ref_nodes = (vg[idx] * (1.0 - w) + vg[idx + 1] * w).reshape(xr.shape + (-1,))
    diff = field_values[:, 1, :, :] - ref_nodes          # (M, n+1, R)
    mb = grid.mass_block
    gap2 = np.einsum("mir,ij,mjr->r", diff, mb, diff)
    return np.sqrt(np.maximum(gap2, 0.0))


def _study_coupling_gap(cfg: RunConfig, gammas: np.ndarray) -> ConvergenceTable:
    """CRN mean-square gap between the element system and the reference.

    Shared Brownian coefficients make the gamma -> 1 distributional limit a
    trackable pathwise gap; the sigma = 0 run of the same configuration
    gives the pure discretization floor.
    """
    grid = cfg.grid()
    spec = cfg.qwiener()
    R = cfg.ensemble
    spde0 = cfg.spde()
    times = spde0.times()
    n_fine = cfg.n_fine
    fine = FullSpdeSolver(grid.L, n_fine, spec)
    u0_fine = initial_profile(cfg.initial, grid.L)(fine.x)
    sq = np.sqrt(spec.q)

    seeds = member_seeds(cfg.master_seed, R)
    paths = [sample_global_path(spec, times, member_streams(ss)[0]) for ss in seeds]

    gaps = np.empty((gammas.size, R))
    det_gap = None
    for gi, g in enumerate(gammas):
        op = spectral.assemble_operator(grid, float(g))
        solver = CoupledElementSolver(op, spec, spde0.dt)
        spde = cfg.spde(gamma=float(g))
        c = np.repeat(solver.initial_reduced(spde)[:, None], R, axis=1)
        u = np.repeat(u0_fine[:, None], R, axis=1)
        batch = np.empty((spec.n_modes, R))
        for i in range(times.size - 1):
            for r, p in enumerate(paths):
                batch[:, r] = sq * p.increments[:, i]
            c = solver.step_reduced(c, spde, solver.noise_rhs_batch(batch))
            u = fine.step(u, spde, fine.noise_increment_batch(batch))
        fields = (op.Z @ c).reshape(grid.M, 2, grid.subgrid_n + 1, R)
        gaps[gi] = _right_half_gap(fields, u, fine.x, grid)
        if float(g) == 1.0 and det_gap is None:
            det_gap = _deterministic_gap(cfg, grid, spec, op, solver, fine)
    if det_gap is None:
        op = spectral.assemble_operator(grid, 1.0)
        solver = CoupledElementSolver(op, spec, spde0.dt)
        det_gap = _deterministic_gap(cfg, grid, spec, op, solver, fine)
    mean_sq = np.mean(gaps**2, axis=1)
    metrics = {
        "ms_gap": mean_sq,
        "rms_gap": np.sqrt(mean_sq),
        "det_gap": np.full(gammas.size, det_gap),
    }
    return ConvergenceTable("coupling-gap", "gamma", gammas, metrics, {})


def _deterministic_gap(cfg, grid, spec, op, solver, fine) -> float:
    """sigma = 0 discretization gap of the gamma = 1 element system."""
    spde = cfg.spde(gamma=1.0, sigma=0.0)
    times = spde.times()
    path = sample_global_path(spec, times, 0)
    c = solver.initial_reduced(spde)
    u = initial_profile(cfg.initial, grid.L)(fine.x)
    for i in range(times.size - 1):
        c = solver.step_reduced(c, spde, 0.0 * solver.noise_rhs(path, i))
        u = fine.step(u, spde, 0.0 * fine.noise_increment(path, i))
    fields = (op.Z @ c).reshape(grid.M, 2, grid.subgrid_n + 1, 1)
    return float(_right_half_gap(fields, u[:, None], fine.x, grid)[0])


def _study_weak_h(cfg: RunConfig, hs: np.ndarray) -> ConvergenceTable:
    """Weak error of the holistic model against the reference, per spacing.

    One reference ensemble (independent of h) serves every spacing; grid
    values are read at the fine nodes that coincide with each X_j.  Errors
    are RMS over grid points of the CRN-paired mean gap and of the
    variance gap at the final time.
    """
    hs = np.asarray(sorted(hs, reverse=True))
    Ms = [int(round(cfg.L / h)) for h in hs]
    if any(abs(m * h - cfg.L) > 1e-12 * cfg.L for m, h in zip(Ms, hs)):
        raise ConfigError(["sweep spacings must divide the domain length"])
    R = cfg.ensemble
    spde = cfg.spde()
    times = spde.times()
    seeds = member_seeds(cfg.master_seed, R)

    base = replace(cfg, M=Ms[0])
    setup0 = build_setup(base)
    paths = [sample_global_path(setup0.spec, times, member_streams(ss)[0]) for ss in seeds]
    ref = _reference_batch(setup0, paths, spde, cfg.n_fine)   # (n_fine, R)

    mean_err, var_err = [], []
    for M, h in zip(Ms, hs):
        sub = replace(cfg, M=M)
        setup = build_setup(sub)
        drivers, _ = _tables_from_paths(setup, seeds, paths, times)
        U0 = initial_profile(cfg.initial, setup.grid.L)(setup.grid.grid_points)
        model = DiscreteModel(kind="holistic", coeffs=setup.coeffs, gamma=1.0,
                              deviation_alpha=cfg.deviation_alpha)
        traj = simulate_model(model, spde, setup.grid,
                              drivers, np.repeat(U0[:, None], R, axis=1), store=False)
        U = traj.states[-1]                                   # (M, R)
        stride = cfg.n_fine // M
        idx = (stride * np.arange(1, M + 1)) % cfg.n_fine
        uref = ref[idx, :]
        mean_err.append(np.sqrt(np.mean(np.mean(U - uref, axis=1) ** 2)))
        var_err.append(np.sqrt(np.mean((np.var(U, axis=1, ddof=1)
                                        - np.var(uref, axis=1, ddof=1)) ** 2)))
    metrics = {"mean_gap": np.asarray(mean_err), "var_gap": np.asarray(var_err)}
    combined = metrics["mean_gap"] + metrics["var_gap"]
    metrics["combined"] = combined
    orders = {k: fit_order(hs, v) for k, v in metrics.items()}
    return ConvergenceTable("weak-h", "h", hs, metrics, orders)


def _tables_from_paths(setup: RunSetup, seeds, paths, times):
    """Driver tables from pre-sampled paths (CRN across spacings)."""
    slow, gridpoint, deviation = [], [], []
    for ss, path in zip(seeds, paths):
        _, dev_ss, _ = member_streams(ss)
        d = models.build_drivers(setup.grid, setup.spec, setup.proj, path, dev_ss)
        slow.append(d.slow)
        gridpoint.append(d.gridpoint)
        deviation.append(d.deviation)
    stack = lambda xs: np.stack(xs, axis=-1)
    drivers = ModelDrivers(grid=setup.grid, dt=np.diff(times), slow=stack(slow),
                           gridpoint=stack(gridpoint), deviation=stack(deviation))
    return drivers, paths


def _reference_batch(setup: RunSetup, paths, spde: SpdeConfig, n_fine: int) -> np.ndarray:
    solver = FullSpdeSolver(setup.grid.L, n_fine, setup.spec)
    u0 = initial_profile(spde.initial, setup.grid.L)(solver.x)
    R = len(paths)
    u = np.repeat(u0[:, None], R, axis=1)
    sq = np.sqrt(setup.spec.q)
    batch = np.empty((setup.spec.n_modes, R))
    for i in range(paths[0].n_steps):
        for r, p in enumerate(paths):
            batch[:, r] = sq * p.increments[:, i]
        u = solver.step(u, spde, solver.noise_increment_batch(batch))
    return u


# ---------------------------------------------------------------------------
# model comparison report
# ---------------------------------------------------------------------------


def compare_models(cfg: RunConfig) -> dict:
    """Weak-error report of the configured discrete models vs the reference.

    Emits per-gridpoint mean/variance errors with Monte-Carlo confidence
    intervals plus a per-term variance budget of the holistic noise terms,
    computed in closed form from the driver covariances.  Findings are
    reported, not asserted.
    """
    kinds = tuple(k for k in cfg.model_kinds if k not in ("reference", "coupled"))
    run_cfg = replace(cfg, model_kinds=kinds + ("reference",))
    stats = run_ensemble(run_cfg)
    ref_mean = stats.mean("reference")
    ref_var = stats.var("reference")
    report: dict = {
        "config_digest": cfg.digest(),
        "n_members": stats.n_members,
        "models": {},
    }
    for kind in kinds:
        m = stats.mean(kind)
        v = stats.var(kind)
        se_m = stats.stderr(kind)
        gap_key = None
        for key in stats.observables:
            if key.startswith("gap:") and {kind, "reference"} == set(key[4:].split("-")):
                gap_key = key
        report["models"][kind] = {
            "mean_error_rms": float(np.sqrt(np.mean((m - ref_mean) ** 2))),
            "mean_error_ci": float(3.0 * np.sqrt(np.mean(se_m**2))),
            "var_error_rms": float(np.sqrt(np.mean((v - ref_var) ** 2))),
            "var_error_rel": float(np.mean(np.abs(v - ref_var) / np.maximum(ref_var, 1e-300))),
            "pathwise_gap_mean": (
                float(stats.mean(gap_key)[0]) if gap_key else None
            ),
        }
    report["term_budget"] = _holistic_term_budget(cfg)
    if cfg.sigma == 0.0:
        models_equal = all(
            report["models"][k]["mean_error_rms"] == report["models"][kinds[0]]["mean_error_rms"]
            for k in kinds
        )
        report["sigma_zero_models_identical"] = models_equal
    return report


def _holistic_term_budget(cfg: RunConfig) -> dict:
    """Per-step variance of each holistic noise family, from the weights."""
    setup = build_setup(cfg)
    spec, proj, grid = setup.spec, setup.proj, setup.grid
    centre = grid.centre_mode_value
    W = proj.weights[:, 0, :] * np.sqrt(spec.q)[None, :] * centre   # (M, K+1)
    cov = W @ W.T
    var_slow = cfg.sigma**2 * np.diag(cov)
    sten = np.roll(np.eye(grid.M), 1, axis=1) - 2 * np.eye(grid.M) + np.roll(np.eye(grid.M), -1, axis=1)
    cov_sten = sten @ cov @ sten.T
    var_sten = (cfg.sigma / 4.0) ** 2 * np.diag(cov_sten)
    dev = (3.0 * np.sqrt(2.0 * setup.coeffs.qj) * centre) ** 2
    return {
        "slow_driver_variance_rate": var_slow.tolist(),
        "stencil_variance_rate": var_sten.tolist(),
        "deviation_variance_rate_unit_U": dev.tolist(),
    }


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def write_manifest(cfg: RunConfig, out_dir: Path, extra: Optional[dict] = None) -> Path:
    """JSON run manifest: config, digest, seed and library versions."""
    import scipy

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "versions": {"numpy": np.__version__, "scipy": scipy.__version__},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8")
    return path


def write_csv(path: Path, header: list, rows) -> Path:
    """UTF-8 CSV with a mandatory header row and '.' decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{x:.17g}" if isinstance(x, float) else x for x in row])
    return path
