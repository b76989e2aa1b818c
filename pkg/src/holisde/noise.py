"""Spatially correlated driving noise and its per-element projections.

The driving process is an L^2(0, L)-valued Wiener process written in the
real Fourier basis,

    W(x, t) = sum_k sqrt(q_k) beta_k(t) e_k(x),

with independent scalar Brownian motions beta_k and user-chosen variances
q_k >= 0 decaying fast enough that sum_k k q_k stays bounded at the
truncation.  Everything downstream (reference solver, coupled element
system, discrete models) consumes the *same* sampled Brownian coefficient
matrix, so comparisons between solvers are common-random-number
comparisons: pathwise gaps measure method differences, not noise draws.

Per-element drivers are obtained by projecting W onto element modes: for
element j and mode shape e_{j,l} (unit L^2(I_j) norm) the projection
coefficient sqrt(q^h_{j,l}) beta_{j,l}(t) = <W(.,t), e_{j,l}>_{I_j} is a
Brownian motion with variance rate q^h_{j,l} = sum_k q_k <e_k, e_{j,l}>^2.
The weights <e_k, e_{j,l}> are computed once by quadrature; drivers of
neighbouring elements are correlated exactly as the overlapping supports
dictate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DomainGrid

__all__ = [
    "QWienerSpec",
    "NoisePath",
    "ElementNoiseProjection",
    "fourier_basis",
    "sample_global_path",
    "project_to_element_modes",
    "element_noise_increment",
]


def fourier_basis(x: np.ndarray, n_modes: int, L: float) -> np.ndarray:
    """Evaluate the first n_modes orthonormal Fourier modes on [0, L].

    Ordering: e_0 = sqrt(1/L), e_{2m-1} = sqrt(2/L) sin(2 m pi x / L),
    e_{2m} = sqrt(2/L) cos(2 m pi x / L).  Returns shape (n_modes,) + x.shape.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_modes,) + x.shape)
    out[0] = np.sqrt(1.0 / L)
    amp = np.sqrt(2.0 / L)
    for k in range(1, n_modes):
        m = (k + 1) // 2
        arg = 2.0 * np.pi * m * x / L
        out[k] = amp * (np.sin(arg) if k % 2 else np.cos(arg))
    return out


@dataclass(frozen=True)
class QWienerSpec:
    """Mode variances q_k of the driving noise, k = 0..K.

    Validation enforces the trace condition at the truncation: either the
    coefficients have finite support (<= 8 nonzeros) or their tail must
    decay at least like (1+k)^{-2}.
    """

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        object.__setattr__(self, "q", q)
        if q.ndim != 1 or q.size < 2:
            raise ValueError("need a 1-d coefficient array with K >= 1")
        if np.any(q < 0):
            raise ValueError("noise variances q_k must be nonnegative")
        nonzero = np.nonzero(q)[0]
        if nonzero.size > 8:
            # tail decay check: fit slope of log q over the upper half
            tail = nonzero[nonzero >= q.size // 2]
            if tail.size >= 3:
                slope = np.polyfit(np.log1p(tail), np.log(q[tail]), 1)[0]
                if slope > -2.0 + 1e-9:
                    raise ValueError(
                        f"q_k tail decays like k^{slope:.2f}; need exponent <= -2 "
                        "or finite support"
                    )

    @classmethod
    def from_decay(cls, n_modes: int, r: float = 3.0) -> "QWienerSpec":
        """Power-law spectrum q_k = (1+k)^{-r}; r >= 2 keeps the trace bound."""
        if r < 2:
            raise ValueError(f"decay exponent must be >= 2, got {r}")
        k = np.arange(n_modes, dtype=float)
        return cls((1.0 + k) ** (-r))

    @property
    def n_modes(self) -> int:
        return self.q.size

    def trace_weighted(self) -> float:
        """sum_k k q_k at the truncation (the well-behavedness functional)."""
        return float(np.sum(np.arange(self.q.size) * self.q))


@dataclass(frozen=True)
class NoisePath:
    """Sampled Brownian increments of every Fourier coefficient.

    increments[k, i] ~ N(0, t_{i+1} - t_i), independent across k and i.
    Coefficient paths beta_k(t_i) are recovered exactly by cumulative
    summation; no re-sampling happens downstream.
    """

    times: np.ndarray
    increments: np.ndarray
    seed: object = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        dw = np.asarray(self.increments, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "increments", dw)
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if dw.shape[1] != t.size - 1:
            raise ValueError("increment columns must match time steps")

    @property
    def n_steps(self) -> int:
        return self.increments.shape[1]

    @property
    def n_modes(self) -> int:
        return self.increments.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.times)

    def betas(self) -> np.ndarray:
        """Coefficient paths beta_k(t_i), shape (n_modes, n_steps + 1)."""
        out = np.zeros((self.n_modes, self.n_steps + 1))
        out[:, 1:] = np.cumsum(self.increments, axis=1)
        return out

    def coarsen(self, factor: int) -> "NoisePath":
        """Pairwise-sum refinement inverse: exact coarse path from a fine one."""
        if self.n_steps % factor:
            raise ValueError("step count not divisible by coarsening factor")
        dw = self.increments.reshape(self.n_modes, -1, factor).sum(axis=2)
        return NoisePath(self.times[::factor], dw, seed=self.seed)

    def save(self, path) -> None:
        """Binary column dump (times + increment matrix) for audits."""
        np.savez_compressed(path, times=self.times, increments=self.increments,
                            seed=np.array(str(self.seed)))

    @classmethod
    def load(cls, path) -> "NoisePath":
        data = np.load(path, allow_pickle=False)
        return cls(data["times"], data["increments"], seed=str(data["seed"]))

    def field_increment(self, basis: np.ndarray, sqrt_q: np.ndarray, step: int) -> np.ndarray:
        """Increment of the noise field on pre-evaluated basis samples.

        basis has shape (n_modes, ...); returns sum_k sqrt(q_k) dbeta_k e_k.
        """
        db = sqrt_q * self.increments[:, step]
        return np.tensordot(db, basis, axes=(0, 0))


def sample_global_path(spec: QWienerSpec, times: np.ndarray, seed) -> NoisePath:
    """Draw the Brownian coefficient increments for every Fourier mode.

    Deterministic in (seed, times): the same seed gives a bitwise-identical
    increment matrix whatever consumes it afterwards.  `seed` may be an int
    or a numpy SeedSequence (used for ensemble member spawning).
    """
    times = np.asarray(times, dtype=float)
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise ValueError("time grid must be strictly increasing")
    rng = np.random.default_rng(seed)
    dw = rng.standard_normal((spec.n_modes, dt.size)) * np.sqrt(dt)[None, :]
    return NoisePath(times, dw, seed=seed)


@dataclass(frozen=True)
class ElementNoiseProjection:
    """Projection weights of the global noise onto element modes.

    weights[j, l, k] = <e_k, e_{j,l}>_{I_j} with e_{j,l} the unit-normalized
    restriction of mode l to element j; qh[j, l] = sum_k q_k weights^2 is the
    variance rate of the element-mode driver.  lam[l] holds the eigenvalue of
    mode l (used for trace bounds and the averaged coefficients).
    """

    grid: DomainGrid
    q: np.ndarray                 # (K+1,)
    weights: np.ndarray           # (M, n_modes, K+1)
    qh: np.ndarray                # (M, n_modes)
    lam: np.ndarray               # (n_modes,)
    mode_mask: np.ndarray         # (M, n_modes) False where restriction was negligible
    total_local_mass: np.ndarray  # (M,) sum_k q_k ||e_k||^2_{L2(I_j)}

    @property
    def sqrt_q(self) -> np.ndarray:
        return np.sqrt(self.q)

    # -- derived drivers ----------------------------------------------------

    def driver_increments(self, path: NoisePath, l: int) -> np.ndarray:
        """Raw projected increments sqrt(q^h_{j,l}) dbeta_{j,l}, shape (M, n_steps)."""
        w = self.weights[:, l, :] * self.sqrt_q[None, :]
        return w @ path.increments

    def unit_driver_increments(self, path: NoisePath, l: int) -> np.ndarray:
        """Increments of the unit-rate Brownian drivers dbeta_{j,l}."""
        raw = self.driver_increments(path, l)
        scale = np.sqrt(self.qh[:, l])
        scale[scale == 0] = 1.0
        return raw / scale[:, None]

    def slow_gridvalue_increments(self, path: NoisePath, beta1_variant: bool = False) -> np.ndarray:
        """sqrt(q^h_{j,0}) dbeta_{j,0} e_{j,0}(X_j): grid-value noise seen by
        the slow mode, shape (M, n_steps).

        beta1_variant applies the sqrt(2) normalization some derivations
        carry on this driver; correlations are unaffected, variances double.
        """
        out = self.driver_increments(path, 0) * self.grid.centre_mode_value
        return np.sqrt(2.0) * out if beta1_variant else out

    def predicted_driver_correlation(self, j1: int, l1: int, j2: int, l2: int) -> float:
        """Correlation of two element-mode drivers implied by the weights."""
        w1 = self.weights[self.grid.index(j1), l1, :]
        w2 = self.weights[self.grid.index(j2), l2, :]
        num = float(np.sum(self.q * w1 * w2))
        den = np.sqrt(self.qh[self.grid.index(j1), l1] * self.qh[self.grid.index(j2), l2])
        return num / den if den > 0 else 0.0

    def trace_bound(self) -> float:
        """max_j sum_l lambda_l q^h_{j,l} at the truncation."""
        return float(np.max(np.sum(self.lam[None, :] * self.qh, axis=1)))

    def fast_mass_fraction(self) -> np.ndarray:
        """Per element: sum_{l>=1} q^h_{j,l} / q^h_{j,0}."""
        return np.sum(self.qh[:, 1:], axis=1) / self.qh[:, 0]


def project_to_element_modes(
    spec: QWienerSpec,
    eig,
    grid: DomainGrid,
    min_restriction_mass: float = 1e-8,
) -> ElementNoiseProjection:
    """Compute projection weights of the Fourier modes onto element modes.

    `eig` is either the analytic decoupled eigensystem (per-element mode
    family) or a numeric coupled one (mode tuples spanning all elements);
    in the numeric case each tuple is restricted to the element and
    unit-normalized there, and tuples carrying negligible mass on an
    element are masked out (their restriction direction is noise).
    """
    M, n = grid.M, grid.subgrid_n
    mb = grid.mass_block
    nodes = grid.all_nodes()                       # (M, 2, n+1)
    basis = fourier_basis(nodes, spec.n_modes, grid.L)  # (K+1, M, 2, n+1)

    shapes, lam = eig.element_mode_shapes(grid)    # (n_modes, M, 2, n+1), (n_modes,)
    n_modes = shapes.shape[0]

    # unit-normalize every restriction under the element quadrature
    norms2 = np.einsum("lmhi,ij,lmhj->lm", shapes, mb, shapes)
    mask = norms2.T > min_restriction_mass         # (M, n_modes)
    safe = np.where(norms2 > min_restriction_mass, norms2, 1.0)
    shapes = shapes / np.sqrt(safe)[:, :, None, None]

    weights = np.einsum("kmhi,ij,lmhj->mlk", basis, mb, shapes)
    weights = np.where(mask[:, :, None], weights, 0.0)
    qh = weights**2 @ spec.q

    total = np.einsum("kmhi,ij,kmhj->m", basis, mb, basis * spec.q[:, None, None, None])
    return ElementNoiseProjection(
        grid=grid,
        q=spec.q,
        weights=weights,
        qh=qh,
        lam=np.asarray(lam, dtype=float),
        mode_mask=mask,
        total_local_mass=total,
    )


def coupled_trace_bound(spec: QWienerSpec, eig, grid: DomainGrid) -> float:
    """sum_l lambda_l * q_l over whole mode tuples, q_l = sum_k q_k <e_k, mode_l>^2.

    The tuple-level decomposition is orthonormal (unlike per-element
    restrictions of coupled tuples, which are overcomplete), so this is the
    quantity that stays bounded uniformly in the coupling strength at a
    fixed truncation.
    """
    nodes = grid.all_nodes()
    basis = fourier_basis(nodes, spec.n_modes, grid.L)
    shapes, lam = eig.element_mode_shapes(grid)
    w = np.einsum("kmhi,ij,lmhj->lk", basis, grid.mass_block, shapes)
    q_l = w**2 @ spec.q
    return float(np.sum(lam * q_l))


def element_noise_increment(
    proj: ElementNoiseProjection, path: NoisePath, step: int, gamma: float
) -> np.ndarray:
    """Per-element mode increments gamma * sqrt(q^h_{j,l}) dbeta_{j,l}.

    The leading coupling factor gamma multiplies every mode; at gamma = 0
    the element system is noise-free.  Shape (M, n_modes).
    """
    if not 0 <= step < path.n_steps:
        raise IndexError(f"step {step} outside path range")
    w = proj.weights * proj.sqrt_q[None, None, :]
    return gamma * (w @ path.increments[:, step])
