"""Hybrid delay SDE models and numerical assumption checkers.

A model bundles drift f(t, j, x, y) and diffusion g(t, j, x, y) with a
delay specification and a switching generator.  The y argument is the
state read back at the delayed time t - rho0(t).  Controlled models add
a per-mode linear feedback gain applied to the last sampled observation
(sawtooth delay).

The Lipschitz and boundedness checks are sampled diagnostics, not
certificates: they probe random points and report the worst quotient
seen.  Dissipativity is certified exactly for linear coefficients via
an eigenvalue test, and diagnosed by sampling otherwise.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NonFiniteCoefficient, NotSPD, ShapeMismatch, ValidationError
from .switching import Generator


def sawtooth_delay(t, rho):
    """Elapsed time since the last observation instant: t - floor(t/rho)*rho.

    Uses floor (not truncation), so negative t is handled correctly.
    """
    return t - math.floor(t / rho) * rho


@dataclass(frozen=True)
class DelaySpec:
    """Delay law rho0(t) with 0 <= rho0(t) <= rho."""

    variant: str  # "none" | "constant" | "sawtooth" | "tabulated"
    rho: float = 0.0
    table_times: Optional[np.ndarray] = None
    table_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in ("none", "constant", "sawtooth", "tabulated"):
            raise ValidationError(f"unknown delay variant {self.variant!r}")
        if self.variant == "none":
            if self.rho != 0.0:
                raise ValidationError("delay variant 'none' requires rho = 0")
        elif not 0.0 < self.rho <= 1.0:
            raise ValidationError(f"rho={self.rho} must lie in (0, 1]")
        if self.variant == "tabulated":
            tt = np.asarray(self.table_times, dtype=float)
            tv = np.asarray(self.table_values, dtype=float)
            if tt.shape != tv.shape or tt.ndim != 1 or tt.size < 2:
                raise ValidationError("tabulated delay needs matching 1-d sample arrays")
            if np.any(tv < 0) or np.any(tv > self.rho):
                raise ValidationError("tabulated delay values must lie in [0, rho]")
            object.__setattr__(self, "table_times", tt)
            object.__setattr__(self, "table_values", tv)

    def delay_at(self, t):
        if self.variant == "none":
            return 0.0
        if self.variant == "constant":
            return self.rho
        if self.variant == "sawtooth":
            return sawtooth_delay(t, self.rho)
        return float(np.interp(t, self.table_times, self.table_values))


@dataclass(frozen=True)
class HybridDelayModel:
    """Drift/diffusion contracts with delay and switching structure.

    drift(t, j, x, y) -> R^n and diffusion(t, j, x, y) -> R^{n x m} must be
    pure functions.  ``vectorized`` asserts that both accept a leading
    path axis on x and y, which enables the fast ensemble integrator for
    switching-free, delay-free models.
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    delay: DelaySpec
    generator: Generator
    vectorized: bool = False


@dataclass(frozen=True)
class ControlledModelSpec:
    """Uncontrolled coefficients plus sampled-observation feedback gains."""

    dim: int
    noise_dim: int
    h: Callable  # (j, x) -> R^n
    sigma: Callable  # (j, x) -> R^{n x m}
    gains: Sequence[np.ndarray]  # one n x n matrix per mode
    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValidationError(f"observation interval rho={self.rho} must lie in (0, 1]")
        gains = tuple(np.asarray(a, dtype=float) for a in self.gains)
        for a in gains:
            if a.shape != (self.dim, self.dim):
                raise ShapeMismatch(f"gain shape {a.shape} != ({self.dim}, {self.dim})")
        object.__setattr__(self, "gains", gains)


@dataclass(frozen=True)
class DissipativityCertificate:
    """Contraction certificate: weighting matrices and margin beta."""

    Q: tuple
    beta: float
    verified_on: str


@dataclass(frozen=True)
class DissipativityOutcome:
    """Result of the linear eigenvalue test; refutation names the bad mode."""

    certified: bool
    beta: float
    worst_mode: int
    certificate: Optional[DissipativityCertificate] = None


def _probe_shapes(spec, g):
    x0 = np.zeros(spec.dim)
    for j in range(1, g.n_states + 1):
        hv = np.asarray(spec.h(j, x0), dtype=float)
        if hv.reshape(-1).shape != (spec.dim,):
            raise ShapeMismatch(f"h({j}, 0) has shape {hv.shape}, expected ({spec.dim},)")
        sv = np.asarray(spec.sigma(j, x0), dtype=float)
        if sv.reshape(-1).shape != (spec.dim * spec.noise_dim,):
            raise ShapeMismatch(
                f"sigma({j}, 0) has shape {sv.shape}, expected ({spec.dim}, {spec.noise_dim})"
            )
    if len(spec.gains) != g.n_states:
        raise ShapeMismatch(f"{len(spec.gains)} gain matrices for {g.n_states} modes")


def build_controlled_model(spec, g, vectorized=False):
    """Assemble the sampled-feedback model: drift h(j,x) + A(j) y, sawtooth delay."""
    _probe_shapes(spec, g)
    gains = spec.gains

    def drift(t, j, x, y):
        return np.asarray(spec.h(j, x), dtype=float) + y @ gains[j - 1].T

    def diffusion(t, j, x, y):
        return np.asarray(spec.sigma(j, x), dtype=float)

    return HybridDelayModel(
        dim=spec.dim,
        noise_dim=spec.noise_dim,
        drift=drift,
        diffusion=diffusion,
        delay=DelaySpec(variant="sawtooth", rho=spec.rho),
        generator=g,
        vectorized=vectorized,
    )


def build_delay_free_model(spec, g, vectorized=False):
    """Continuous-observation companion: drift h(j,x) + A(j) x, no delay."""
    _probe_shapes(spec, g)
    gains = spec.gains

    def drift(t, j, x, y):
        return np.asarray(spec.h(j, x), dtype=float) + x @ gains[j - 1].T

    def diffusion(t, j, x, y):
        return np.asarray(spec.sigma(j, x), dtype=float)

    return HybridDelayModel(
        dim=spec.dim,
        noise_dim=spec.noise_dim,
        drift=drift,
        diffusion=diffusion,
        delay=DelaySpec(variant="none", rho=0.0),
        generator=g,
        vectorized=vectorized,
    )


def _eval_coeff(fn, t, j, x, y, shape):
    v = np.asarray(fn(t, j, x, y), dtype=float).reshape(shape)
    if not np.all(np.isfinite(v)):
        raise NonFiniteCoefficient(f"non-finite coefficient at t={t}, j={j}, x={x}, y={y}")
    return v


def check_lipschitz_sampled(m, probe_count, box_radius, rng, t_span=10.0):
    """Monte-Carlo lower estimate of the Lipschitz constants of f and g.

    Maximizes |f(t,j,x1,y1) - f(t,j,x2,y2)| / (|x1-x2| + |y1-y2|) over
    random probes in a box.  A diagnostic, not a certificate.
    """
    if probe_count < 100:
        raise ValidationError("probe_count must be at least 100")
    n, mm = m.dim, m.noise_dim
    nmodes = m.generator.n_states
    best_f = 0.0
    best_g = 0.0
    for _ in range(probe_count):
        t = rng.uniform(-t_span, t_span)
        j = int(rng.integers(1, nmodes + 1))
        x1, x2, y1, y2 = (rng.uniform(-box_radius, box_radius, size=n) for _ in range(4))
        denom = np.linalg.norm(x1 - x2) + np.linalg.norm(y1 - y2)
        if denom < 1e-12:
            continue
        df = _eval_coeff(m.drift, t, j, x1, y1, (n,)) - _eval_coeff(m.drift, t, j, x2, y2, (n,))
        dg = _eval_coeff(m.diffusion, t, j, x1, y1, (n, mm)) - _eval_coeff(
            m.diffusion, t, j, x2, y2, (n, mm))
        best_f = max(best_f, np.linalg.norm(df) / denom)
        best_g = max(best_g, np.linalg.norm(dg) / denom)
    return best_f, best_g


def check_bounded_at_zero(m, t_grid):
    """Per-mode sup over the grid of |f(t,j,0,0)| and |g(t,j,0,0)|."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValidationError("t_grid must be nonempty")
    zero = np.zeros(m.dim)
    out = {}
    for j in range(1, m.generator.n_states + 1):
        sup_f = 0.0
        sup_g = 0.0
        for t in t_grid:
            sup_f = max(sup_f, np.linalg.norm(_eval_coeff(m.drift, t, j, zero, zero, (m.dim,))))
            sup_g = max(
                sup_g,
                np.linalg.norm(
                    _eval_coeff(m.diffusion, t, j, zero, zero, (m.dim, m.noise_dim))),
            )
        out[j] = (sup_f, sup_g)
    return out


def _check_spd(Q):
    for q in Q:
        q = np.asarray(q, dtype=float)
        if not np.allclose(q, q.T, atol=1e-10):
            raise NotSPD("weighting matrix not symmetric")
        if np.min(np.linalg.eigvalsh(q)) <= 0:
            raise NotSPD("weighting matrix not positive definite")


def check_dissipativity_linear(F, A, G, g, Q):
    """Eigenvalue test of the contraction condition for linear coefficients.

    For drift (F_j + A_j) x and diffusion columns G_{j,l} x forms, per mode,
        M_j = Q_j (F_j + A_j) + (F_j + A_j)^T Q_j
              + sum_l G_{j,l}^T Q_j G_{j,l} + sum_i gamma_ji Q_i
    and certifies beta = -max_j lambda_max(M_j) when that value is positive.
    """
    F = [np.asarray(x, dtype=float) for x in F]
    A = [np.asarray(x, dtype=float) for x in A]
    G = [[np.asarray(c, dtype=float) for c in cols] for cols in G]
    Q = [np.asarray(q, dtype=float) for q in Q]
    n_modes = g.rates.shape[0]
    if not len(F) == len(A) == len(G) == len(Q) == n_modes:
        raise ShapeMismatch("need one F, A, G, Q entry per mode")
    _check_spd(Q)
    worst = -np.inf
    worst_mode = 1
    for j in range(n_modes):
        closed = F[j] + A[j]
        M = Q[j] @ closed + closed.T @ Q[j]
        for col in G[j]:
            M = M + col.T @ Q[j] @ col
        for i in range(n_modes):
            M = M + g.rates[j, i] * Q[i]
        lam = float(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))))
        if lam > worst:
            worst = lam
            worst_mode = j + 1
    beta = -worst
    if beta > 0:
        cert = DissipativityCertificate(Q=tuple(Q), beta=beta, verified_on="analytic-linear")
        return DissipativityOutcome(True, beta, worst_mode, cert)
    return DissipativityOutcome(False, beta, worst_mode, None)


def check_dissipativity_sampled(m, Q, probe_count, box_radius, rng, t_span=10.0):
    """Worst-case contraction margin over random probes.

    Evaluates the left side of the dissipativity inequality with drift
    arguments (j, x, x) and (j, y, y), and returns min over probes of
    -LHS / |x - y|^2.  Probes with |x - y| < 1e-12 are skipped.
    """
    if probe_count < 100:
        raise ValidationError("probe_count must be at least 100")
    Q = [np.asarray(q, dtype=float) for q in Q]
    _check_spd(Q)
    n, mm = m.dim, m.noise_dim
    rates = m.generator.rates
    n_modes = rates.shape[0]
    best = np.inf
    for _ in range(probe_count):
        t = rng.uniform(-t_span, t_span)
        j = int(rng.integers(1, n_modes + 1))
        x = rng.uniform(-box_radius, box_radius, size=n)
        y = rng.uniform(-box_radius, box_radius, size=n)
        z = x - y
        zz = float(z @ z)
        if zz < 1e-24:
            continue
        df = _eval_coeff(m.drift, t, j, x, x, (n,)) - _eval_coeff(m.drift, t, j, y, y, (n,))
        dg = _eval_coeff(m.diffusion, t, j, x, x, (n, mm)) - _eval_coeff(
            m.diffusion, t, j, y, y, (n, mm))
        lhs = 2.0 * float(z @ Q[j - 1] @ df) + float(np.trace(dg.T @ Q[j - 1] @ dg))
        for i in range(n_modes):
            lhs += rates[j - 1, i] * float(z @ Q[i] @ z)
        best = min(best, -lhs / zz)
    return best


def _cubic_drift(t, j, x, y):
    return -x**3 - x


def _zero_diffusion_1d(t, j, x, y):
    return np.zeros(np.shape(x) + (1,))


def _ou_drift(t, j, x, y):
    return -x


def _unit_diffusion_1d(t, j, x, y):
    return np.ones(np.shape(x) + (1,))


#: Named nonlinear benchmark coefficients selectable from scenario configs.
COEFFICIENT_REGISTRY = {
    "cubic": {"drift": _cubic_drift, "diffusion": _zero_diffusion_1d,
              "dim": 1, "noise_dim": 1, "vectorized": True},
    "ou": {"drift": _ou_drift, "diffusion": _unit_diffusion_1d,
           "dim": 1, "noise_dim": 1, "vectorized": True},
}


def registry_model(name, generator, delay=None, vectorized=None):
    """Build a HybridDelayModel from a named benchmark coefficient set."""
    if name not in COEFFICIENT_REGISTRY:
        raise ValidationError(f"unknown registry coefficient {name!r}")
    entry = COEFFICIENT_REGISTRY[name]
    return HybridDelayModel(
        dim=entry["dim"],
        noise_dim=entry["noise_dim"],
        drift=entry["drift"],
        diffusion=entry["diffusion"],
        delay=delay if delay is not None else DelaySpec(variant="none"),
        generator=generator,
        vectorized=entry["vectorized"] if vectorized is None else vectorized,
    )
