"""Empirical measures on segment space and the bounded-Lipschitz metric.

An empirical measure is a finite weighted set of atoms: history segments
paired with a mode ("H" variant), or plain state/mode pairs ("H0"
variant, used for the zero-delay limit).  The metric between two such
measures is computed exactly on their pooled finite support by a linear
program over test-function values a_i with |a_i| <= c, pairwise slopes
bounded by L, and c + L <= 1.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import GridMismatch, LPFailure, NonFiniteCoefficient, ValidationError
from .simulate import SegmentGrid, integrate, integrate_ensemble, segment_at
from .switching import make_stream, mode_at

WEIGHT_TOL = 1e-12
DEFAULT_ATOM_CAP = 400
KB_START_STREAM = 2**62  # stream index reserved for lookback start-time draws


@dataclass(frozen=True)
class MetricSpec:
    """Distance choices: mode label difference (default) or discrete flag."""

    mode_metric: str = "label"  # "label" -> |j1 - j2|, "discrete" -> 1_{j1 != j2}

    def mode_distance(self, j1, j2):
        if self.mode_metric == "label":
            return abs(j1 - j2)
        return 0.0 if j1 == j2 else 1.0


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted finite collection of atoms on H or on R^n x S."""

    points: tuple
    weights: np.ndarray
    space_tag: str  # "H" | "H0"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError("weights must be positive and sum to 1")
        if len(self.points) != len(w):
            raise ValidationError("points and weights length mismatch")
        object.__setattr__(self, "weights", w)
        if self.space_tag == "H":
            shapes = {(p.values.shape, round(p.rho, 12)) for p in self.points}
            if len(shapes) > 1:
                raise GridMismatch("H atoms must share rho and grid resolution")
        elif self.space_tag != "H0":
            raise ValidationError(f"unknown space tag {self.space_tag!r}")

    @classmethod
    def from_segments(cls, segments, weights=None):
        n = len(segments)
        w = np.full(n, 1.0 / n) if weights is None else weights
        return cls(points=tuple(segments), weights=w, space_tag="H")

    @classmethod
    def from_state_points(cls, points, weights=None):
        pts = tuple((np.asarray(x, dtype=float).reshape(-1), int(j)) for x, j in points)
        n = len(pts)
        w = np.full(n, 1.0 / n) if weights is None else weights
        return cls(points=pts, weights=w, space_tag="H0")


def h_distance(a, b, spec):
    """Distance between two H points: sup-norm of the segment gap plus mode term."""
    if a.values.shape != b.values.shape or abs(a.rho - b.rho) > 1e-12:
        raise GridMismatch("segments live on different grids")
    seg = float(np.max(np.linalg.norm(a.values - b.values, axis=1)))
    return seg + spec.mode_distance(a.mode, b.mode)


def _pairwise_distances(points, space_tag, spec):
    n = len(points)
    if space_tag == "H":
        vals = np.stack([p.values for p in points])  # (n, m+1, d)
        modes = np.array([p.mode for p in points], dtype=float)
        diff = vals[:, None] - vals[None, :]  # (n, n, m+1, d)
        seg = np.max(np.linalg.norm(diff, axis=3), axis=2)
    else:
        vals = np.stack([p[0] for p in points])
        modes = np.array([p[1] for p in points], dtype=float)
        seg = np.linalg.norm(vals[:, None] - vals[None, :], axis=2)
    if spec.mode_metric == "label":
        md = np.abs(modes[:, None] - modes[None, :])
    else:
        md = (modes[:, None] != modes[None, :]).astype(float)
    return seg + md


def _subsample(points, weights, cap, seed):
    if len(points) <= cap:
        return points, weights
    rng = make_stream(seed, len(points))
    idx = rng.choice(len(points), size=cap, p=weights)
    return tuple(points[i] for i in idx), np.full(cap, 1.0 / cap)


def _measure_key(mu):
    if mu.space_tag == "H":
        body = b"".join(p.values.tobytes() + p.mode.to_bytes(4, "little", signed=True)
                        for p in mu.points)
    else:
        body = b"".join(p[0].tobytes() + p[1].to_bytes(4, "little", signed=True)
                        for p in mu.points)
    return mu.weights.tobytes() + body


def bl_distance(mu1, mu2, spec, atom_cap=DEFAULT_ATOM_CAP, subsample_seed=0):
    """Exact dual bounded-Lipschitz distance between two finite-support measures.

    Solves max sum_i a_i (w1_i - w2_i) over the pooled support subject to
    |a_i| <= c, |a_i - a_k| <= L d(x_i, x_k), c + L <= 1.  Supports larger
    than atom_cap are i.i.d.-subsampled first.  The call is symmetric by
    construction (arguments are canonically ordered before solving).
    """
    if mu1.space_tag != mu2.space_tag:
        raise GridMismatch("measures live on different spaces")
    if _measure_key(mu1) > _measure_key(mu2):
        mu1, mu2 = mu2, mu1
    p1, w1 = _subsample(mu1.points, mu1.weights, atom_cap, subsample_seed)
    p2, w2 = _subsample(mu2.points, mu2.weights, atom_cap, subsample_seed + 1)
    points = tuple(p1) + tuple(p2)
    delta = np.concatenate([w1, -w2])
    n = len(points)
    D = _pairwise_distances(points, mu1.space_tag, spec)
    iu, ku = np.triu_indices(n, k=1)
    npairs = len(iu)
    # variables: a_0..a_{n-1}, c, L
    rows_bound = 2 * n
    rows = rows_bound + 2 * npairs + 1
    r_idx = []
    c_idx = []
    data = []
    ar = np.arange(n)
    # a_i - c <= 0 ; -a_i - c <= 0
    r_idx.append(np.concatenate([ar, ar, n + ar, n + ar]))
    c_idx.append(np.concatenate([ar, np.full(n, n), ar, np.full(n, n)]))
    data.append(np.concatenate([np.ones(n), -np.ones(n), -np.ones(n), -np.ones(n)]))
    # a_i - a_k - L d <= 0 and a_k - a_i - L d <= 0
    base = rows_bound + np.arange(npairs)
    dvals = D[iu, ku]
    r_idx.append(np.concatenate([base, base, base]))
    c_idx.append(np.concatenate([iu, ku, np.full(npairs, n + 1)]))
    data.append(np.concatenate([np.ones(npairs), -np.ones(npairs), -dvals]))
    base2 = rows_bound + npairs + np.arange(npairs)
    r_idx.append(np.concatenate([base2, base2, base2]))
    c_idx.append(np.concatenate([ku, iu, np.full(npairs, n + 1)]))
    data.append(np.concatenate([np.ones(npairs), -np.ones(npairs), -dvals]))
    # c + L <= 1
    r_idx.append(np.array([rows - 1, rows - 1]))
    c_idx.append(np.array([n, n + 1]))
    data.append(np.array([1.0, 1.0]))
    A = sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(r_idx), np.concatenate(c_idx))),
        shape=(rows, n + 2),
    )
    b = np.zeros(rows)
    b[-1] = 1.0
    cost = np.concatenate([-delta, [0.0, 0.0]])
    bounds = [(None, None)] * n + [(0.0, None), (0.0, None)]
    res = linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise LPFailure(f"LP failed with status {res.status}: {res.message}")
    return max(0.0, -float(res.fun))


def ensemble_at(m, s, xi, j0, t, M, cfg):
    """Uniform empirical measure of M i.i.d. path states at time t.

    Atoms are (segment, mode) pairs when the model has a delay, and
    (endpoint, mode) pairs otherwise.
    """
    if M < 1:
        raise ValidationError("M must be >= 1")
    has_delay = m.delay.variant != "none"
    if has_delay:
        rho = m.delay.rho
        if t < s + rho:
            raise ValidationError(f"t={t} must be at least s + rho = {s + rho}")
        segs = []
        for p in range(M):
            tr = integrate(m, s, xi, j0, t, replace(cfg, path_index=p))
            segs.append(segment_at(tr, t))
        return EmpiricalMeasure.from_segments(segs)
    if m.vectorized and m.generator.n_states == 1:
        ends = integrate_ensemble(m, s, xi, j0, t, cfg, M)
        return EmpiricalMeasure.from_state_points([(ends[p], j0) for p in range(M)])
    pts = []
    for p in range(M):
        tr = integrate(m, s, xi, j0, t, replace(cfg, path_index=p))
        pts.append((tr.states[-1], mode_at(tr.mode_path, t)))
    return EmpiricalMeasure.from_state_points(pts)


def kb_average(m, xi, j0, t, n, starts, paths_per_start, cfg):
    """Lookback time average of transition laws, as a pooled empirical measure.

    Start times are drawn uniformly on [-n, t - rho] (snapped to the
    integration grid) so the time integral is estimated without aliasing
    against periodic structure; each start contributes paths_per_start
    independent paths.
    """
    if starts < 1:
        raise ValidationError("starts must be >= 1")
    rho = m.delay.rho if m.delay.variant != "none" else 0.0
    if t - rho <= -n:
        raise ValidationError("lookback too short: need t - rho > -n")
    rng = make_stream(cfg.seed, KB_START_STREAM)
    raw = rng.uniform(-n, t - rho, size=starts)
    taus = np.round(raw / cfg.dt) * cfg.dt
    taus = np.clip(taus, None, t - rho if rho > 0 else t - cfg.dt)
    atoms = []
    pts = []
    has_delay = rho > 0.0
    for i, tau in enumerate(taus):
        tau = round(tau / cfg.dt) * cfg.dt
        for p in range(paths_per_start):
            pc = replace(cfg, path_index=i * paths_per_start + p)
            tr = integrate(m, tau, xi, j0, t, pc)
            if has_delay:
                atoms.append(segment_at(tr, t))
            else:
                pts.append((tr.states[-1], mode_at(tr.mode_path, t)))
    if has_delay:
        return EmpiricalMeasure.from_segments(atoms)
    return EmpiricalMeasure.from_state_points(pts)


def project_T(mu):
    """Push an H measure forward to R^n x S via (segment, mode) -> (segment(0), mode).

    Atoms with identical images are merged with summed weight.
    """
    if mu.space_tag != "H":
        raise ValidationError("project_T expects an H-variant measure")
    merged = {}
    order = []
    for seg, w in zip(mu.points, mu.weights):
        x = np.asarray(seg.endpoint, dtype=float)
        key = (x.tobytes(), seg.mode)
        if key not in merged:
            merged[key] = [x, seg.mode, 0.0]
            order.append(key)
        merged[key][2] += w
    pts = [(merged[k][0], merged[k][1]) for k in order]
    w = np.array([merged[k][2] for k in order])
    w = w / w.sum()
    return EmpiricalMeasure.from_state_points(pts, weights=w)


def restrict(xi_full, rho, num_points=None):
    """Restrict a segment on [-1, 0] to [-rho, 0], resampled to num_points nodes."""
    if not 0.0 < rho <= 1.0:
        raise ValidationError(f"rho={rho} must lie in (0, 1]")
    if abs(xi_full.rho - 1.0) > 1e-12:
        raise GridMismatch("restriction expects a segment on [-1, 0]")
    m = (len(xi_full.values) - 1) if num_points is None else (num_points - 1)
    old = np.linspace(-1.0, 0.0, len(xi_full.values))
    new = np.linspace(-rho, 0.0, m + 1)
    cols = [np.interp(new, old, xi_full.values[:, c]) for c in range(xi_full.values.shape[1])]
    return SegmentGrid(rho=rho, values=np.stack(cols, axis=1), mode=xi_full.mode)


def integrate_functional(mu, phi):
    """Expectation of a bounded functional under the empirical measure."""
    total = 0.0
    for p, w in zip(mu.points, mu.weights):
        v = float(phi(p))
        if not np.isfinite(v):
            raise NonFiniteCoefficient("functional returned a non-finite value")
        total += w * v
    return total


@dataclass(frozen=True)
class TightnessReport:
    """Empirical compactness diagnostics for a segment-space measure."""

    R_grid: np.ndarray
    prob_bounded: np.ndarray  # P(||segment|| <= R) per R
    eta_grid: np.ndarray
    modulus_mean: np.ndarray  # mean modulus of continuity per eta
    modulus_q95: np.ndarray


def tightness_report(mu, R_grid, eta_grid):
    """Boundedness-in-probability and modulus-of-continuity diagnostics."""
    if mu.space_tag != "H":
        raise ValidationError("tightness_report expects an H-variant measure")
    R_grid = np.asarray(R_grid, dtype=float)
    eta_grid = np.asarray(eta_grid, dtype=float)
    norms = np.array([np.max(np.linalg.norm(p.values, axis=1)) for p in mu.points])
    w = mu.weights
    prob = np.array([float(w[norms <= R].sum()) for R in R_grid])
    rho = mu.points[0].rho
    npts = len(mu.points[0].values)
    spacing = rho / (npts - 1)
    mod_mean = []
    mod_q95 = []
    for eta in eta_grid:
        win = int(np.floor(eta / spacing + 1e-12))
        per_atom = np.zeros(len(mu.points))
        if win > 0:
            for a, p in enumerate(mu.points):
                v = p.values
                best = 0.0
                for lag in range(1, min(win, npts - 1) + 1):
                    d = np.max(np.linalg.norm(v[lag:] - v[:-lag], axis=1))
                    best = max(best, d)
                per_atom[a] = best
        mod_mean.append(float(np.sum(w * per_atom)))
        order = np.argsort(per_atom)
        cum = np.cumsum(w[order])
        q_idx = int(np.searchsorted(cum, 0.95))
        mod_q95.append(float(per_atom[order[min(q_idx, len(order) - 1)]]))
    return TightnessReport(R_grid=R_grid, prob_bounded=prob, eta_grid=eta_grid,
                           modulus_mean=np.array(mod_mean), modulus_q95=np.array(mod_q95))
