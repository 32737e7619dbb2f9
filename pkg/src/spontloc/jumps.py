"""Poisson-timed scattering of a single particle: jump trajectories.

Two unravelings of the same measurement process are implemented:

``linear``
    Events are drawn from the input law (Poisson times, pointer readings from
    ``|f0|^2``, independent of the state); the state is the unnormalized
    ``U(t - t_n) G(y_n) ... G(y_1) U(t_1) eta`` and its squared norm is the
    likelihood weight of the record.
``normalized``
    Readings are drawn from the output law of the current state and the state
    is renormalized after every kick.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .lattice import HBAR, DenseOperator, WaveFunction
from .meter import ReductionKernel, _require_normalized

MODES = ("linear", "normalized")


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for trajectory ``index``; independent of scheduling order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_poisson_times(nu: float, T: float, rng: np.random.Generator) -> np.ndarray:
    """Ordered event times of a rate-``nu`` Poisson process on ``[0, T)``."""
    if not nu > 0:
        raise ValueError("rate must satisfy nu > 0")
    if T <= 0:
        return np.empty(0)
    mean = nu * T
    chunk = int(mean + 5 * np.sqrt(mean) + 10)
    times = np.cumsum(rng.exponential(1.0 / nu, size=chunk))
    while times[-1] < T:
        more = times[-1] + np.cumsum(rng.exponential(1.0 / nu, size=chunk))
        times = np.concatenate([times, more])
    return times[times < T]


def inverse_cdf_index(density: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(density)
    total = cdf[-1]
    if not total > 0:
        raise ValueError("outcome density has zero total mass")
    idx = int(np.searchsorted(cdf, rng.random() * total, side="right"))
    return min(idx, density.size - 1)


def outcome_law(kernel: ReductionKernel, vec: np.ndarray) -> np.ndarray:
    """Unnormalized weights ``||G(y) chi||^2 |f0(y)|^2 h`` on the meter grid."""
    return (np.abs(kernel.table) ** 2 @ np.abs(vec) ** 2) * kernel.packet.weights


def sample_outcome(kernel: ReductionKernel, chi: WaveFunction, rng: np.random.Generator) -> float:
    vec = _require_normalized(chi)
    return float(kernel.packet.y[inverse_cdf_index(outcome_law(kernel, vec), rng)])


@dataclass
class TrajectoryRecord:
    seed: int
    index: int
    nu: float
    horizon: float
    mode: str
    event_times: np.ndarray
    outcomes: np.ndarray
    outcome_indices: np.ndarray
    sample_times: np.ndarray
    states: np.ndarray
    weight_path: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.event_times) <= 0):
            raise ValueError("event times must be strictly increasing")
        if self.event_times.size and (self.event_times[0] < 0 or self.event_times[-1] >= self.horizon):
            raise ValueError("event times must lie in [0, T)")

    @property
    def events(self) -> list[tuple[float, float]]:
        return list(zip(self.event_times.tolist(), self.outcomes.tolist()))


def propagate_through(vec: np.ndarray, H: DenseOperator, event_times: Sequence[float],
                      sample_times: Sequence[float], kick: Callable[[int, np.ndarray], np.ndarray],
                      hbar: float = HBAR) -> np.ndarray:
    """Exact piecewise evolution with kicks at ``event_times``.

    Returns the states at ``sample_times``.  A sample taken at the same instant
    as an event sees the pre-kick state.
    """
    sample_times = np.asarray(sample_times, dtype=float)
    out = np.empty((sample_times.size, vec.size), dtype=complex)
    t_cur = 0.0
    n_events = len(event_times)
    e = 0
    for s_idx, s in enumerate(sample_times):
        while e < n_events and event_times[e] < s:
            vec = H.apply_propagator(vec, event_times[e] - t_cur, hbar)
            t_cur = event_times[e]
            vec = kick(e, vec)
            e += 1
        vec = H.apply_propagator(vec, s - t_cur, hbar)
        t_cur = s
        out[s_idx] = vec
    return out


def _check_sample_times(sample_times, T) -> np.ndarray:
    st = np.asarray(sample_times, dtype=float)
    if st.size == 0:
        raise ValueError("at least one sample time is required")
    if np.any(np.diff(st) < 0) or st[0] < 0 or st[-1] > T:
        raise ValueError("sample times must be sorted and lie in [0, T]")
    return st


def run_trajectory(config, H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction,
                   index: int = 0) -> TrajectoryRecord:
    """One seeded trajectory.  ``config`` supplies ``nu, T, mode, sample_times, seed, hbar``."""
    vec0 = _require_normalized(eta)
    mode = config.mode
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    st = _check_sample_times(config.sample_times, config.T)
    rng = trajectory_rng(config.seed, index)
    times = sample_poisson_times(config.nu, config.T, rng)
    idx = np.empty(times.size, dtype=np.int64)
    table = kernel.table
    weights = kernel.packet.weights

    if mode == "linear":
        cdf = np.cumsum(weights)

        def kick(n, vec):
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), cdf.size - 1)
            idx[n] = i
            return table[i] * vec
    else:
        def kick(n, vec):
            i = inverse_cdf_index(outcome_law(kernel, vec), rng)
            idx[n] = i
            out = table[i] * vec
            return out / np.linalg.norm(out)

    states = propagate_through(vec0, H, times, st, kick, config.hbar)
    weight_path = np.sum(np.abs(states) ** 2, axis=1) if mode == "linear" else None
    return TrajectoryRecord(config.seed, index, config.nu, config.T, mode, times,
                            kernel.packet.y[idx], idx, st, states, weight_path)


def _outcome_rows(kernel: ReductionKernel, outcomes) -> list[np.ndarray]:
    packet = kernel.packet
    rows = []
    for y in outcomes:
        pos = (y - packet.y[0]) / packet.h
        i = int(round(pos))
        if 0 <= i < packet.y.size and packet.y[i] == y:
            rows.append(kernel.table[i])
        else:
            rows.append(kernel(y))
    return rows


def chronological_reduction(events, H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction,
                            t: Optional[float] = None, sample_times=None, normalize: bool = False,
                            hbar: float = HBAR):
    """Replay a fixed record ``[(t_n, y_n), ...]`` deterministically.

    With ``sample_times`` the snapshots are returned as an array; otherwise the
    state at time ``t`` (default: last event time) is returned as a
    :class:`WaveFunction`.
    """
    events = list(events)
    times = np.array([e[0] for e in events], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("events must be strictly time-ordered")
    rows = _outcome_rows(kernel, [e[1] for e in events])

    def kick(n, vec):
        out = rows[n] * vec
        return out / np.linalg.norm(out) if normalize else out

    if sample_times is not None:
        return propagate_through(eta.vector, H, times, sample_times, kick, hbar)
    if t is None:
        t = float(times[-1]) if times.size else 0.0
    if times.size and times[-1] >= t:
        raise ValueError("all events must precede the final time t")
    vec = propagate_through(eta.vector, H, times, [t], kick, hbar)[0]
    return WaveFunction.from_vector(eta.grid, vec)


@dataclass
class EnsembleResult:
    sample_times: np.ndarray
    states: np.ndarray
    event_counts: np.ndarray
    mode: str
    records: list = field(default_factory=list)


def run_ensemble(config, H: DenseOperator, kernel: ReductionKernel, eta: WaveFunction,
                 n_trajectories: Optional[int] = None, threads: int = 1,
                 keep_records: bool = False) -> EnsembleResult:
    """Independent trajectories merged in index order (thread count does not change output)."""
    n = config.trajectories if n_trajectories is None else n_trajectories
    if n < 1:
        raise ValueError("trajectory_count must be >= 1")

    def one(i):
        return run_trajectory(config, H, kernel, eta, i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(one, range(n)))
    else:
        records = [one(i) for i in range(n)]
    states = np.stack([r.states for r in records])
    counts = np.array([r.event_times.size for r in records])
    return EnsembleResult(records[0].sample_times, states, counts, config.mode,
                          records if keep_records else [])
