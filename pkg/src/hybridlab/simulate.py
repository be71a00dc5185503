"""Euler-Maruyama integration of hybrid delay SDEs.

The time mesh is the uniform base grid (absolute times i * dt, with
dt = rho / steps_per_rho when a delay is present) refined by the exact
mode-jump times.  The mode is frozen on each sub-interval at its left
endpoint, so no interval straddles a jump.  Delayed state reads use
linear interpolation in the stored history, with exact hits snapped to
stored grid values.

All randomness comes from counter-based streams keyed by
(seed, path_index), making ensembles reproducible and order-independent.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import Blowup, GridMismatch, NonFiniteCoefficient, OutOfRange, ValidationError
from .switching import ModePath, modes_on_grid, mode_at, path_streams, sample_mode_path

GRID_SNAP = 1e-9  # relative to dt: treat delayed reads this close to a node as exact


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings.  dt must equal rho / steps_per_rho for delayed models."""

    dt: float
    seed: int
    steps_per_rho: int = 1
    path_index: int = 0
    blowup_guard: float = 1e8

    @classmethod
    def for_rho(cls, rho, steps_per_rho, seed, **kw):
        return cls(dt=rho / steps_per_rho, seed=seed, steps_per_rho=steps_per_rho, **kw)


@dataclass(frozen=True)
class SegmentGrid:
    """Equally spaced samples of the state over [t - rho, t], paired with a mode."""

    rho: float
    values: np.ndarray  # (m+1, n)
    mode: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "values", v)

    @property
    def endpoint(self):
        return self.values[-1]

    def resample(self, num_points):
        """Linear resampling onto num_points equally spaced nodes."""
        old = np.linspace(-self.rho, 0.0, len(self.values))
        new = np.linspace(-self.rho, 0.0, num_points)
        cols = [np.interp(new, old, self.values[:, c]) for c in range(self.values.shape[1])]
        return SegmentGrid(rho=self.rho, values=np.stack(cols, axis=1), mode=self.mode)


@dataclass(frozen=True)
class Trajectory:
    """A sampled solution path.

    ``times``/``states`` cover [start_time - rho, t_end] when the model has
    a delay (the head is the initial segment), and [start_time, t_end]
    otherwise.  ``mode_path`` covers [start_time, t_end].
    """

    times: np.ndarray
    states: np.ndarray
    mode_path: ModePath
    model_rho: float
    start_time: float

    @property
    def end_time(self):
        return float(self.times[-1])


def _grid_index(t, dt, what):
    i = round(t / dt)
    if abs(i * dt - t) > 1e-6 * dt:
        raise GridMismatch(f"{what}={t} is not aligned to the dt={dt} grid")
    return int(i)


def _history_from_xi(xi, k, rho, dt, i0, n):
    """(times, values) of the initial segment on the k+1-point grid ending at s."""
    times = (np.arange(i0 - k, i0 + 1)) * dt
    if isinstance(xi, SegmentGrid):
        if abs(xi.rho - rho) > 1e-12:
            raise GridMismatch(f"initial segment rho={xi.rho} != model rho={rho}")
        seg = xi if len(xi.values) == k + 1 else xi.resample(k + 1)
        vals = np.array(seg.values, dtype=float)
    else:
        point = np.asarray(xi, dtype=float).reshape(n)
        vals = np.tile(point, (k + 1, 1))
    if vals.shape != (k + 1, n):
        raise GridMismatch(f"initial segment shape {vals.shape}, expected {(k + 1, n)}")
    return times, vals


def _prepare(model, s, t_end, j0, cfg, mode_path=None, rng_mode=None):
    dt = cfg.dt
    i0 = _grid_index(s, dt, "start time")
    i1 = _grid_index(t_end, dt, "end time")
    if i1 <= i0:
        raise ValidationError(f"t_end={t_end} must exceed s={s}")
    base = np.arange(i0, i1 + 1) * dt
    if mode_path is None:
        # sample over the realized grid span so float rounding of s cannot
        # push mesh nodes outside the mode-path horizon
        mode_path = sample_mode_path(model.generator, j0, float(base[0]), float(base[-1]),
                                     rng_mode)
    jumps = mode_path.jump_times
    jumps = jumps[(jumps > base[0]) & (jumps < base[-1])]
    mesh = np.union1d(base, jumps)
    step_modes = modes_on_grid(mode_path, mesh[:-1])
    deltas = np.diff(mesh)
    return mode_path, mesh, step_modes, deltas


def _delay_lookups(delay, mesh, all_times):
    """Precompute (left index, weight) for the delayed read at each step start."""
    starts = mesh[:-1]
    t_d = np.array([t - delay.delay_at(t) for t in starts])
    if np.any(t_d < all_times[0] - 1e-9):
        raise OutOfRange("delayed read before the start of the stored history")
    t_d = np.clip(t_d, all_times[0], None)
    idx = np.searchsorted(all_times, t_d, side="right") - 1
    idx = np.clip(idx, 0, len(all_times) - 2)
    span = all_times[idx + 1] - all_times[idx]
    w = (t_d - all_times[idx]) / span
    # snap near-exact hits so aligned sawtooth reads use stored values
    snap = np.min(np.diff(all_times)) * GRID_SNAP
    lo = np.abs(t_d - all_times[idx]) <= snap
    hi = np.abs(all_times[idx + 1] - t_d) <= snap
    w[lo] = 0.0
    idx[hi] += 1
    w[hi] = 0.0
    return idx, w


def _step_loop(model, mesh, step_modes, deltas, dW, hist_vals, all_times, cfg):
    """Core explicit scheme; returns the (len(all_times), n) state array."""
    n, m = model.dim, model.noise_dim
    n_hist = len(hist_vals) - 1 if len(hist_vals) else 0
    total = n_hist + len(mesh)
    states = np.empty((total, n))
    if n_hist:
        states[:n_hist] = hist_vals[:-1]
        u = np.array(hist_vals[-1], dtype=float)
    else:
        u = np.array(hist_vals[0] if len(hist_vals) else np.zeros(n), dtype=float)
    has_delay = model.delay.variant != "none"
    if has_delay:
        didx, dw_frac = _delay_lookups(model.delay, mesh, all_times)
    f, g = model.drift, model.diffusion
    guard = cfg.blowup_guard
    for i in range(len(deltas)):
        pos = n_hist + i
        states[pos] = u
        t = mesh[i]
        j = int(step_modes[i])
        if has_delay:
            k = didx[i]
            w = dw_frac[i]
            y = states[k] if w == 0.0 else (1.0 - w) * states[k] + w * states[k + 1]
        else:
            y = u
        fv = np.asarray(f(t, j, u, y), dtype=float).reshape(n)
        gv = np.asarray(g(t, j, u, y), dtype=float).reshape(n, m)
        u = u + fv * deltas[i] + gv @ dW[i]
        mag = float(np.max(np.abs(u)))
        if not mag <= guard:
            if not np.all(np.isfinite(u)):
                raise NonFiniteCoefficient(
                    f"non-finite state at t={mesh[i + 1]:.6g} (path {cfg.path_index})")
            raise Blowup(mesh[i + 1], cfg.path_index, mag)
    states[-1] = u
    return states


def integrate(m, s, xi, j0, t_end, cfg, _shared=None):
    """Integrate one path of the model from (s, xi, j0) to t_end.

    xi is either a SegmentGrid on [-rho, 0] or a constant initial value
    (replicated over the history window).  With ``_shared`` a
    (mode_path, dW-drawer) pair, the caller supplies the randomness; this
    is how the coupled integrators share noise.
    """
    rho = m.delay.rho if m.delay.variant != "none" else 0.0
    if _shared is None:
        rng_mode, rng_w = path_streams(cfg.seed, cfg.path_index)
        mode_path = None
    else:
        mode_path, rng_w = _shared
        rng_mode = None
    mode_path, mesh, step_modes, deltas = _prepare(m, s, t_end, j0, cfg, mode_path, rng_mode)
    if rho > 0.0:
        k = cfg.steps_per_rho
        if abs(k * cfg.dt - rho) > 1e-9 * rho:
            raise GridMismatch(f"dt={cfg.dt} * {k} does not equal rho={rho}")
        i0 = _grid_index(s, cfg.dt, "start time")
        hist_times, hist_vals = _history_from_xi(xi, k, rho, cfg.dt, i0, m.dim)
        all_times = np.concatenate([hist_times[:-1], mesh])
    else:
        hist_vals = np.asarray(xi.endpoint if isinstance(xi, SegmentGrid) else xi,
                               dtype=float).reshape(1, m.dim)
        all_times = mesh
    if callable(rng_w):
        dW = rng_w(deltas)
    else:
        dW = rng_w.standard_normal((len(deltas), m.noise_dim)) * np.sqrt(deltas)[:, None]
    states = _step_loop(m, mesh, step_modes, deltas, dW, hist_vals, all_times, cfg)
    return Trajectory(times=all_times, states=states, mode_path=mode_path,
                      model_rho=rho, start_time=s)


def segment_at(tr, t):
    """Resample the history window [t - rho, t] of a trajectory as a SegmentGrid."""
    rho = tr.model_rho
    if rho <= 0.0:
        raise OutOfRange("trajectory has no delay window; use the endpoint directly")
    if t - rho < tr.times[0] - 1e-9 or t > tr.times[-1] + 1e-9:
        raise OutOfRange(f"segment [{t - rho}, {t}] not covered by [{tr.times[0]}, {tr.times[-1]}]")
    dt_min = np.min(np.diff(tr.times))
    m_steps = round(rho / (tr.times[1] - tr.times[0])) if len(tr.times) > 1 else 1
    grid = np.linspace(t - rho, t, m_steps + 1)
    vals = np.empty((m_steps + 1, tr.states.shape[1]))
    idx = np.searchsorted(tr.times, grid, side="right") - 1
    idx = np.clip(idx, 0, len(tr.times) - 2)
    span = tr.times[idx + 1] - tr.times[idx]
    w = (grid - tr.times[idx]) / span
    snap = dt_min * GRID_SNAP
    w[np.abs(grid - tr.times[idx]) <= snap] = 0.0
    hi = np.abs(tr.times[idx + 1] - grid) <= snap
    idx[hi] += 1
    w[hi] = 0.0
    nxt = np.minimum(idx + 1, len(tr.times) - 1)
    vals = (1.0 - w)[:, None] * tr.states[idx] + w[:, None] * tr.states[nxt]
    return SegmentGrid(rho=rho, values=vals, mode=mode_at(tr.mode_path, t))


def integrate_pair(m, s, xi1, xi2, j0, t_end, cfg):
    """Two paths from different initial segments driven by identical noise."""
    rng_mode, rng_w = path_streams(cfg.seed, cfg.path_index)
    mode_path, mesh, step_modes, deltas = _prepare(m, s, t_end, j0, cfg, None, rng_mode)
    dW = rng_w.standard_normal((len(deltas), m.noise_dim)) * np.sqrt(deltas)[:, None]
    out = []
    for xi in (xi1, xi2):
        tr = integrate(m, s, xi, j0, t_end, cfg, _shared=(mode_path, lambda _d: dW))
        out.append(tr)
    return out[0], out[1]


def integrate_coupled_delay_limit(spec, g, s, xi, j0, t_end, cfg, models=None):
    """Sampled-feedback path and its zero-delay companion under shared noise.

    The companion starts from xi(0) and uses the continuous-observation
    drift; both paths see the same mode path and Wiener increments on the
    same mesh, so endpoint differences isolate the observation-interval
    effect.  Pass ``models`` to reuse prebuilt model pairs across paths.
    """
    from .model import build_controlled_model, build_delay_free_model

    if models is None:
        models = (build_controlled_model(spec, g), build_delay_free_model(spec, g))
    m_rho, m_zero = models
    rng_mode, rng_w = path_streams(cfg.seed, cfg.path_index)
    mode_path, mesh, step_modes, deltas = _prepare(m_rho, s, t_end, j0, cfg, None, rng_mode)
    dW = rng_w.standard_normal((len(deltas), m_rho.noise_dim)) * np.sqrt(deltas)[:, None]
    tr_rho = integrate(m_rho, s, xi, j0, t_end, cfg, _shared=(mode_path, lambda _d: dW))
    x0 = xi.endpoint if isinstance(xi, SegmentGrid) else np.asarray(xi, dtype=float)
    tr_zero = integrate(m_zero, s, x0, j0, t_end, cfg, _shared=(mode_path, lambda _d: dW))
    return tr_rho, tr_zero


def integrate_ensemble(m, s, xi, j0, t_end, cfg, n_paths):
    """Endpoints of n_paths i.i.d. paths as an (n_paths, n) array.

    For switching-free, delay-free, vectorized models all paths advance in
    lockstep; the result is bitwise identical to per-path integrate calls
    because the per-path streams and elementwise arithmetic are the same.
    """
    fast = (m.vectorized and m.delay.variant == "none" and m.generator.n_states == 1)
    if not fast:
        ends = np.empty((n_paths, m.dim))
        for p in range(n_paths):
            tr = integrate(m, s, xi, j0, t_end, replace(cfg, path_index=p))
            ends[p] = tr.states[-1]
        return ends
    dt = cfg.dt
    i0 = _grid_index(s, dt, "start time")
    i1 = _grid_index(t_end, dt, "end time")
    mesh = np.arange(i0, i1 + 1) * dt
    deltas = np.diff(mesh)
    nsteps = len(deltas)
    sqrt_d = np.sqrt(deltas)
    dW = np.empty((n_paths, nsteps, m.noise_dim))
    for p in range(n_paths):
        _, rng_w = path_streams(cfg.seed, p)
        dW[p] = rng_w.standard_normal((nsteps, m.noise_dim)) * sqrt_d[:, None]
    x0 = np.asarray(xi.endpoint if isinstance(xi, SegmentGrid) else xi, dtype=float)
    U = np.tile(x0.reshape(1, m.dim), (n_paths, 1))
    f, g = m.drift, m.diffusion
    for i in range(nsteps):
        t = mesh[i]
        fv = np.asarray(f(t, j0, U, U), dtype=float).reshape(n_paths, m.dim)
        gv = np.asarray(g(t, j0, U, U), dtype=float)
        gv = np.broadcast_to(gv, (n_paths, m.dim, m.noise_dim))
        U = U + fv * deltas[i] + np.einsum("pnm,pm->pn", gv, dW[:, i, :])
        mag = np.max(np.abs(U))
        if not mag <= cfg.blowup_guard:
            bad = int(np.argmax(np.max(np.abs(U), axis=1)))
            if not np.all(np.isfinite(U)):
                raise NonFiniteCoefficient(f"non-finite state at t={mesh[i + 1]:.6g} (path {bad})")
            raise Blowup(mesh[i + 1], bad, float(mag))
    return U
