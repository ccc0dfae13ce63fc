"""Event-driven simulation of the N-agent uniform reshuffling dynamics.

Events arrive on an exponential clock; at each one an unordered pair of
agents pools its money and splits it by a fresh Uniform[0,1] fraction. The
default clock gives every unordered pair rate 1/N (total rate (N-1)/2), so
a single agent jumps at rate (N-1)/N -> 1, matching the unit-rate limit
process; clock_scale="global" switches to a total rate of N for
comparison.

Randomness comes from one PCG64 stream per run, consumed in fixed-size
batches in a fixed draw order (waiting times, first index, second index,
uniform fraction), so the event stream is a pure function of the seed and
is unaffected by snapshot placement. Ensemble members should use
spawn_seeds() for documented, collision-free sub-seeds.

The coupled mode advances a second population through the very same
events (same pair, same uniform fraction) to expose the pathwise
squared-difference contraction; see simulate_coupled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .kinetic1d import Grid1D, GridDensity1D

_BATCH = 1 << 15
_SELF_CHECK_EVERY = 1_000_000
_SELF_CHECK_RTOL = 1e-9


class WealthVector:
    """Nonnegative balances of the N agents; the total is cached and conserved."""

    def __init__(self, balances):
        balances = np.asarray(balances, dtype=float)
        if balances.ndim != 1 or balances.size < 1:
            raise DataError("balances must be a nonempty 1-D array")
        if not np.all(np.isfinite(balances)):
            raise DataError("balances must be finite")
        if balances.min() < 0:
            raise DomainError(f"negative balance {balances.min()}")
        self.balances = balances.copy()
        self.total = float(balances.sum())

    @property
    def n_agents(self) -> int:
        return self.balances.size

    def copy(self) -> "WealthVector":
        return WealthVector(self.balances)

    def mean(self) -> float:
        return self.total / self.n_agents

    def moment(self, k: int) -> float:
        return float(np.mean(self.balances**k))


def exchange_step(state: WealthVector, i: int, j: int, u: float) -> WealthVector:
    """Apply one reshuffling event: agents i and j split their pool u : 1-u.

    Pure operation returning a new state; the pooled sum (hence the total)
    is conserved exactly because the second share is computed as the
    remainder.
    """
    if i == j:
        raise DomainError(f"exchange needs two distinct agents, got i = j = {i}")
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"the split fraction must lie in [0, 1], got {u}")
    n = state.n_agents
    if not (0 <= i < n and 0 <= j < n):
        raise DomainError(f"agent index out of range for N={n}")
    out = state.copy()
    pool = out.balances[i] + out.balances[j]
    out.balances[i] = u * pool
    out.balances[j] = pool - u * pool
    return out


@dataclass
class SimConfig:
    """Run parameters for simulate()/simulate_coupled()."""

    n_agents: int
    t_final: float
    seed: int = 0
    snapshot_times: tuple = ()
    clock_scale: str = "pairwise"  # or "global"

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError(f"need at least 2 agents, got {self.n_agents}")
        if not self.t_final > 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}")
        if self.clock_scale not in ("pairwise", "global"):
            raise ConfigError(f"clock_scale must be 'pairwise' or 'global', got {self.clock_scale!r}")
        times = tuple(float(t) for t in self.snapshot_times)
        if any(t < 0 or t > self.t_final for t in times) or list(times) != sorted(times):
            raise ConfigError("snapshot times must be sorted and within [0, t_final]")
        self.snapshot_times = times

    def total_rate(self) -> float:
        if self.clock_scale == "global":
            return float(self.n_agents)
        return (self.n_agents - 1) / 2.0


def spawn_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Documented sub-seed derivation for ensembles: SeedSequence(seed).spawn(n)."""
    return np.random.SeedSequence(seed).spawn(n)


def make_initial(spec: str, n: int, seed_seq=None) -> WealthVector:
    """Build an initial state from a spec string.

    constant:<v>      every agent holds v dollars
    exponential:<m>   iid exponential with mean m (needs a seed sequence)
    file:<path>       one balance per line
    """
    kind, _, arg = spec.partition(":")
    if kind == "constant":
        return WealthVector(np.full(n, float(arg)))
    if kind == "exponential":
        if seed_seq is None:
            raise ConfigError("exponential initial condition needs a seed")
        rng = np.random.default_rng(seed_seq)
        return WealthVector(rng.exponential(float(arg), n))
    if kind == "file":
        values = np.loadtxt(arg, dtype=float, ndmin=1)
        if values.size != n:
            raise ConfigError(f"file holds {values.size} balances, expected {n}")
        return WealthVector(values)
    raise ConfigError(f"unknown initial condition {spec!r}")


@dataclass
class ParticleTrajectory:
    times: list[float] = field(default_factory=list)
    snapshots: list[WealthVector] = field(default_factory=list)
    final: WealthVector | None = None
    event_count: int = 0


class _EventStream:
    """Batched draws from one generator in a fixed order (dt, i, j, u)."""

    def __init__(self, rng: np.random.Generator, n: int, rate: float):
        self.rng = rng
        self.n = n
        self.scale = 1.0 / rate
        self._refill()

    def _refill(self):
        self.dts = self.rng.exponential(self.scale, _BATCH).tolist()
        self.iis = self.rng.integers(0, self.n, _BATCH).tolist()
        self.jjs = self.rng.integers(0, self.n - 1, _BATCH).tolist()
        self.uus = self.rng.random(_BATCH).tolist()
        self.pos = 0

    def next(self):
        k = self.pos
        if k == _BATCH:
            self._refill()
            k = 0
        self.pos = k + 1
        i = self.iis[k]
        j = self.jjs[k]
        if j >= i:
            j += 1
        return self.dts[k], i, j, self.uus[k]


def _run(
    config: SimConfig,
    balances: np.ndarray,
    mirror: np.ndarray | None,
    on_snapshot,
) -> int:
    """Drive the event loop; calls on_snapshot(t) at each requested time.

    Returns the executed event count. Balance lists are mutated in place;
    every million events the running total is checked against a fresh sum.
    """
    stream = _EventStream(
        np.random.default_rng(np.random.SeedSequence(config.seed)),
        config.n_agents,
        config.total_rate(),
    )
    bal = balances.tolist()
    mir = mirror.tolist() if mirror is not None else None
    total0 = float(balances.sum())
    snaps = list(config.snapshot_times)
    n_snaps = len(snaps)
    snap_idx = 0
    t = 0.0
    events = 0
    t_final = config.t_final
    next_event = stream.next

    def flush_before(bound: float):
        # snapshots strictly before the next event see the current state
        nonlocal snap_idx
        while snap_idx < n_snaps and snaps[snap_idx] < bound:
            balances[:] = bal
            if mir is not None:
                mirror[:] = mir
            on_snapshot(snaps[snap_idx])
            snap_idx += 1

    while True:
        dt, i, j, u = next_event()
        t_next = t + dt
        if t_next > t_final:
            break
        if snap_idx < n_snaps and snaps[snap_idx] < t_next:
            flush_before(t_next)
        t = t_next
        pool = bal[i] + bal[j]
        share = u * pool
        bal[i] = share
        bal[j] = pool - share
        if mir is not None:
            pool = mir[i] + mir[j]
            share = u * pool
            mir[i] = share
            mir[j] = pool - share
        events += 1
        if events % _SELF_CHECK_EVERY == 0:
            fresh = float(np.sum(np.asarray(bal)))
            if abs(fresh - total0) > _SELF_CHECK_RTOL * max(abs(total0), 1.0):
                raise DataError(f"conservation drift {fresh - total0:.3e} after {events} events")
    flush_before(float("inf"))
    balances[:] = bal
    if mir is not None:
        mirror[:] = mir
    return events


def simulate(config: SimConfig, initial: WealthVector) -> ParticleTrajectory:
    """Run the reshuffling dynamics, snapshotting deep copies of the state.

    Each snapshot reflects the latest event at or before the requested
    time. Identical config and seed reproduce the event stream bit for bit.
    """
    if initial.n_agents != config.n_agents:
        raise ConfigError(f"initial state has {initial.n_agents} agents, config says {config.n_agents}")
    traj = ParticleTrajectory()
    work = initial.balances.copy()

    def on_snapshot(t: float):
        traj.times.append(t)
        traj.snapshots.append(WealthVector(work))

    traj.event_count = _run(config, work, None, on_snapshot)
    traj.final = WealthVector(work)
    return traj


@dataclass
class CoupledPairs:
    """Primary population plus a mirror carrying the stationary law.

    The mirror is drawn iid exponential with the given mean; shared_noise
    records that both populations must jump with the same pair and the
    same uniform fraction (the only mode simulate_coupled implements).
    """

    primary: WealthVector
    mirror: WealthVector
    shared_noise: bool = True

    def __post_init__(self):
        if self.primary.n_agents != self.mirror.n_agents:
            raise ConfigError("primary and mirror must have equal length")

    @classmethod
    def build(cls, primary: WealthVector, m1: float, seed: int) -> "CoupledPairs":
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        mirror = WealthVector(rng.exponential(m1, primary.n_agents))
        return cls(primary, mirror)


@dataclass
class CoupledSeries:
    times: np.ndarray
    msd: np.ndarray  # mean squared coordinate difference per snapshot
    mean_offset: float  # conserved difference of the population means
    msd_floor: float  # exact fixed point 2 S^2 / (N (N+1)) implied by the offset
    event_count: int = 0

    def decaying_part(self) -> np.ndarray:
        return self.msd - self.msd_floor


def simulate_coupled(config: SimConfig, pairs: CoupledPairs) -> CoupledSeries:
    """Advance primary and mirror through shared events; record E[(X - X~)^2].

    Both totals are conserved, so the difference of means S/N is a run
    constant; the squared-difference average relaxes at rate (N+1)/(3N)
    toward the exact floor 2 S^2 / (N (N+1)). The decaying_part() of the
    returned series is what contracts like exp(-t/3).
    """
    if not pairs.shared_noise:
        raise ConfigError("simulate_coupled requires the shared-noise coupling")
    if pairs.primary.n_agents != config.n_agents:
        raise ConfigError("pair size does not match the configured agent count")
    if not config.snapshot_times:
        raise ConfigError("coupled runs need snapshot times to record the series")
    n = config.n_agents
    prim = pairs.primary.balances.copy()
    mirr = pairs.mirror.balances.copy()
    s_total = float(prim.sum() - mirr.sum())
    times, msd = [], []

    def on_snapshot(t: float):
        times.append(t)
        diff = prim - mirr
        msd.append(float(np.mean(diff * diff)))

    events = _run(config, prim, mirr, on_snapshot)
    return CoupledSeries(
        times=np.array(times),
        msd=np.array(msd),
        mean_offset=s_total / n,
        msd_floor=2.0 * s_total**2 / (n * (n + 1.0)),
        event_count=events,
    )


def empirical_histogram(state: WealthVector, bin_width: float) -> GridDensity1D:
    """Density-normalized histogram with cells of the given width."""
    if not bin_width > 0:
        raise DomainError(f"bin width must be positive, got {bin_width}")
    n_bins = max(16, int(np.max(state.balances) / bin_width) + 1)
    counts = np.bincount(
        np.minimum((state.balances / bin_width).astype(int), n_bins - 1), minlength=n_bins
    )
    grid = Grid1D(n_bins * bin_width, n_bins)
    return GridDensity1D(grid, counts / (state.n_agents * bin_width))
