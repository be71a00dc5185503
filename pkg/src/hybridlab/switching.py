"""Exact simulation and analysis of the switching Markov chain.

The regime process is a continuous-time chain on modes {1..N} with a
rate matrix whose rows sum to zero.  Jump times are simulated exactly
(competing exponential clocks), so mode paths carry no discretization
bias into the SDE integrator.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveRate, OutOfRange, RowSumViolation, SingularSystem

ROW_SUM_TOL = 1e-12
STATIONARY_RESIDUAL_TOL = 1e-10


def make_stream(seed, stream_index):
    """Counter-based random stream keyed by (seed, stream_index).

    Streams for distinct keys are statistically independent, so path
    ensembles can be generated in any order.
    """
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), stream_index]))


def path_streams(seed, path_index):
    """(mode-chain stream, Wiener stream) for one simulated path."""
    return make_stream(seed, 2 * path_index), make_stream(seed, 2 * path_index + 1)


@dataclass(frozen=True)
class Generator:
    """Transition-rate matrix of the switching chain."""

    rates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))

    @property
    def n_states(self):
        return self.rates.shape[0]


@dataclass(frozen=True)
class ModePath:
    """Right-continuous step function of modes over [start_time, end_time].

    ``modes`` has one more entry than ``jump_times``: modes[i] is in force
    on [jump_times[i-1], jump_times[i]).
    """

    start_time: float
    end_time: float
    jump_times: np.ndarray
    modes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "jump_times", np.asarray(self.jump_times, dtype=float))
        object.__setattr__(self, "modes", np.asarray(self.modes, dtype=np.int64))


def validate_generator(g):
    """Raise unless the rate matrix is a valid irreducible-chain generator."""
    rates = g.rates
    if rates.ndim != 2 or rates.shape[0] != rates.shape[1]:
        raise RowSumViolation(1, float("nan"))
    n = rates.shape[0]
    for i in range(n):
        for j in range(n):
            if i != j and rates[i, j] <= 0.0:
                raise NonPositiveRate(i + 1, j + 1, rates[i, j])
    row_sums = rates.sum(axis=1)
    for i in range(n):
        if abs(row_sums[i]) > ROW_SUM_TOL:
            raise RowSumViolation(i + 1, row_sums[i])


def stationary_distribution(g):
    """Solve pi @ rates = 0 with sum(pi) = 1.

    The normalization replaces the last (redundant) balance equation.
    """
    rates = g.rates
    n = rates.shape[0]
    a = np.vstack([rates.T[:-1], np.ones(n)])
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    residual = np.max(np.abs(pi @ rates))
    if residual > STATIONARY_RESIDUAL_TOL or np.any(pi <= 0):
        raise SingularSystem(f"residual {residual:.3e} or nonpositive entry in {pi}")
    return pi


def sample_mode_path(g, j0, s, t_end, rng):
    """Exact (Gillespie) simulation of the chain from mode j0 over [s, t_end].

    Holding time in mode i is Exponential(-r_ii); the next mode is chosen
    with probability r_ij / (-r_ii).  A zero exit rate (the N=1 limiting
    case) yields a constant path.
    """
    if t_end <= s:
        raise OutOfRange(f"t_end={t_end} must exceed s={s}")
    rates = g.rates
    n = rates.shape[0]
    if not 1 <= j0 <= n:
        raise OutOfRange(f"mode {j0} not in 1..{n}")
    jump_times = []
    modes = [j0]
    t = s
    j = j0
    while True:
        exit_rate = -rates[j - 1, j - 1]
        if exit_rate <= 0.0:
            break
        t = t + rng.exponential(1.0 / exit_rate)
        if t >= t_end:
            break
        p = rates[j - 1].copy()
        p[j - 1] = 0.0
        p /= exit_rate
        j = int(rng.choice(n, p=p)) + 1
        jump_times.append(t)
        modes.append(j)
    return ModePath(start_time=s, end_time=t_end, jump_times=np.array(jump_times),
                    modes=np.array(modes))


def mode_at(p, t):
    """Mode in force at time t (right-continuous lookup)."""
    if t < p.start_time or t > p.end_time:
        raise OutOfRange(f"t={t} outside [{p.start_time}, {p.end_time}]")
    idx = int(np.searchsorted(p.jump_times, t, side="right"))
    return int(p.modes[idx])


def modes_on_grid(p, times):
    """Vectorized right-continuous lookup for an increasing time array."""
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < p.start_time or times[-1] > p.end_time):
        raise OutOfRange("grid extends outside the mode path horizon")
    idx = np.searchsorted(p.jump_times, times, side="right")
    return p.modes[idx]


def occupation_fractions(p):
    """Fraction of [start_time, end_time] spent in each visited mode."""
    edges = np.concatenate([[p.start_time], p.jump_times, [p.end_time]])
    holds = np.diff(edges)
    n = int(p.modes.max())
    frac = np.zeros(n)
    np.add.at(frac, p.modes - 1, holds)
    return frac / (p.end_time - p.start_time)
