"""Deterministic solver for the mean-field wealth equation dq/dt = Q+[q] - q.

Densities live on a uniform midpoint grid over [0, x_max]. The gain term
Q+[q] is the law of U*(X+Y) for independent X, Y ~ q and U ~ Uniform[0,1];
on the grid it is computed as a discrete self-convolution c = q*q followed
by the tail integral of c(m)/m. Midpoint cells make both steps plain array
operations: the convolution of two midpoint-sampled densities lands exactly
on midpoints of the doubled domain, and the 1/m factor is evaluated at cell
centers so it never touches m = 0.

Mass escaping beyond x_max is dropped, not renormalized, so conservation
stays an honest diagnostic (see Trajectory.tail_loss).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, DomainError, StabilityError

# Direct convolution up to this size, FFT beyond; both paths agree to 1e-12
# and can be forced via the mode argument of gain().
_DIRECT_CONV_LIMIT = 4096

# Negative values below this threshold abort the step instead of clipping.
_NEGATIVITY_ABORT = -1e-10
_NEGATIVITY_CLIP = 1e-14


class Grid1D:
    """Uniform cell-midpoint grid on [0, x_max] with n_cells cells."""

    def __init__(self, x_max: float, n_cells: int):
        if not (x_max > 0) or n_cells < 16:
            raise ConfigError(f"need x_max > 0 and n_cells >= 16, got {x_max}, {n_cells}")
        self.x_max = float(x_max)
        self.n_cells = int(n_cells)
        self.dx = self.x_max / self.n_cells
        self.nodes = (np.arange(self.n_cells) + 0.5) * self.dx

    @classmethod
    def from_spacing(cls, x_max: float, dx: float) -> "Grid1D":
        n = int(round(x_max / dx))
        if abs(n * dx - x_max) > 1e-9 * x_max:
            raise ConfigError(f"x_max={x_max} is not a multiple of dx={dx}")
        return cls(x_max, n)

    def __eq__(self, other):
        return (
            isinstance(other, Grid1D)
            and self.n_cells == other.n_cells
            and self.x_max == other.x_max
        )

    def __repr__(self):
        return f"Grid1D(x_max={self.x_max}, n_cells={self.n_cells})"


class GridDensity1D:
    """Nonnegative density values on a Grid1D, with cached discrete moments.

    Instances are treated as immutable: every operation returns a new
    density, so snapshots never alias solver state.
    """

    def __init__(self, grid: Grid1D, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_cells,):
            raise DataError(f"expected {grid.n_cells} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("density values must be finite")
        if values.min(initial=0.0) < -_NEGATIVITY_CLIP:
            raise DomainError(f"negative density value {values.min()}")
        self.grid = grid
        self.values = np.where(values < 0, 0.0, values)
        self.values.setflags(write=False)
        self.mass = float(np.sum(self.values) * grid.dx)
        self.mean = float(np.sum(grid.nodes * self.values) * grid.dx)

    def moment(self, k: int) -> float:
        """Discrete k-th moment, sum of x^k q(x) dx."""
        return float(np.sum(self.grid.nodes**k * self.values) * self.grid.dx)

    def cdf_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-linear CDF: cell edges and cumulative masses (F(0)=0)."""
        edges = np.arange(self.grid.n_cells + 1) * self.grid.dx
        cum = np.concatenate(([0.0], np.cumsum(self.values) * self.grid.dx))
        return edges, cum

    def normalized(self) -> "GridDensity1D":
        """Rescale to exact discrete mass 1."""
        if self.mass <= 0:
            raise DomainError("cannot normalize a zero-mass density")
        return GridDensity1D(self.grid, self.values / self.mass)

    def __repr__(self):
        return f"GridDensity1D(mass={self.mass:.6g}, mean={self.mean:.6g}, {self.grid!r})"


class Equilibrium:
    """Exponential stationary state with mean m1: density exp(-x/m1)/m1."""

    def __init__(self, m1: float):
        if not m1 > 0:
            raise DomainError(f"equilibrium mean must be positive, got {m1}")
        self.m1 = float(m1)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, np.exp(-x / self.m1) / self.m1, 0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= 0, -np.expm1(-x / self.m1), 0.0)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        return -self.m1 * np.log1p(-u)

    def on_grid(self, grid: Grid1D) -> GridDensity1D:
        return GridDensity1D(grid, self.density(grid.nodes))


def uniform_density(grid: Grid1D, a: float, b: float) -> GridDensity1D:
    """Uniform[a, b] sampled on the grid (cells fully inside get 1/(b-a))."""
    if not 0 <= a < b <= grid.x_max:
        raise ConfigError(f"need 0 <= a < b <= x_max, got [{a}, {b}]")
    inside = (grid.nodes >= a) & (grid.nodes < b)
    return GridDensity1D(grid, inside / (b - a))


def dirac_density(grid: Grid1D, x0: float) -> GridDensity1D:
    """One-hot cell approximation of a point mass at x0."""
    idx = int(x0 / grid.dx)
    if not 0 <= idx < grid.n_cells:
        raise ConfigError(f"x0={x0} outside the grid")
    values = np.zeros(grid.n_cells)
    values[idx] = 1.0 / grid.dx
    return GridDensity1D(grid, values)


# ---------------------------------------------------------------------------
# gain operator and time stepping
# ---------------------------------------------------------------------------


def self_convolution(q: GridDensity1D, mode: str = "auto") -> np.ndarray:
    """Discrete c = q*q on the doubled midpoint grid, c[k] at (k+1)*dx.

    Returns 2*n_cells - 1 values; sum(c)*dx equals mass(q)^2 exactly.
    """
    v = q.values
    if mode == "direct" or (mode == "auto" and q.grid.n_cells <= _DIRECT_CONV_LIMIT):
        c = np.convolve(v, v)
    elif mode in ("fft", "auto"):
        n = 2 * v.size - 1
        nfft = 1 << (n - 1).bit_length()
        c = np.fft.irfft(np.fft.rfft(v, nfft) ** 2, nfft)[:n]
        # convolution of nonnegative sequences; FFT round-off may dip below 0
        np.maximum(c, 0.0, out=c)
    else:
        raise ConfigError(f"unknown convolution mode {mode!r}")
    return c * q.grid.dx


def gain(q: GridDensity1D, mode: str = "auto", mass_check: bool = True) -> GridDensity1D:
    """Collision gain Q+[q]: law of U*(X+Y) for X, Y iid q, U ~ Uniform[0,1].

    Computed as the tail integral over m of c(m)/m with c the discrete
    self-convolution; output mass equals mass(q)^2 up to the truncation
    tail beyond x_max. The result is nonincreasing in x by construction.
    """
    if mass_check and not 0.9 <= q.mass <= 1.1:
        raise DomainError(f"gain expects a (near-)probability density, mass={q.mass}")
    c = self_convolution(q, mode)
    shells = c / np.arange(1, c.size + 1)  # c(m)/m * dx at m = (k+1) dx
    tail = np.cumsum(shells[::-1])[::-1]
    return GridDensity1D(q.grid, tail[: q.grid.n_cells])


def rhs(q: GridDensity1D, mode: str = "auto") -> np.ndarray:
    """Right-hand side G[q] = Q+[q] - q as a signed grid function."""
    return gain(q, mode).values - q.values


def gain_tail_loss(q: GridDensity1D, mode: str = "auto") -> float:
    """Mass of Q+[q] lost to the truncation at x_max (reported, not fixed)."""
    g = gain(q, mode, mass_check=False)
    return q.mass**2 - g.mass


def _checked_step_values(values: np.ndarray, dt: float) -> tuple[np.ndarray, float]:
    """Clip tiny negatives, abort on structural ones; returns clipped mass."""
    worst = values.min(initial=0.0)
    if worst < _NEGATIVITY_ABORT:
        raise StabilityError(
            f"density went negative ({worst:.3e}); reduce dt (must satisfy dt <= 1)"
        )
    clipped = 0.0
    if worst < 0:
        neg = values < 0
        clipped = -float(values[neg].sum())
        values = np.where(neg, 0.0, values)
    return values, clipped


def step_euler(
    q: GridDensity1D, dt: float, mode: str = "auto", clip_report: list | None = None
) -> GridDensity1D:
    """One forward Euler step q + dt*(Q+[q] - q).

    dt must lie in (0, 1]; the loss term has unit rate and dt > 1 makes the
    update a non-convex combination that can go negative.
    """
    if dt > 1:
        raise StabilityError(f"dt = {dt} exceeds the unit loss rate; choose dt <= 1")
    if not dt > 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    new = q.values + dt * rhs(q, mode)
    new, clipped = _checked_step_values(new, dt)
    if clip_report is not None:
        clip_report.append(clipped)
    return GridDensity1D(q.grid, new)


@dataclass
class Trajectory:
    """Result of solve(): snapshots at requested times plus bookkeeping."""

    times: list[float] = field(default_factory=list)
    snapshots: list[GridDensity1D] = field(default_factory=list)
    final: GridDensity1D | None = None
    tail_loss: float = 0.0  # cumulative mass lost past x_max
    clipped_mass: float = 0.0  # cumulative negative mass clipped to zero

    def moment_series(self, k: int) -> np.ndarray:
        return np.array([snap.moment(k) for snap in self.snapshots])


def solve(
    q0: GridDensity1D,
    t_final: float,
    dt: float,
    snapshot_times=None,
    observers=(),
    mode: str = "auto",
) -> Trajectory:
    """Integrate dq/dt = Q+[q] - q with forward Euler from q0 to t_final.

    Snapshots record the state at the last step time <= each requested
    time (densities are immutable, so recorded snapshots never change
    under further stepping); observers are callables observer(t, q)
    invoked at the same instants. Without explicit snapshot times only
    t = 0 and t_final are recorded. t_final is rounded to the nearest
    multiple of dt.

    q0 should carry discrete mass exactly 1 (use normalized()): the mass
    flow of the equation is m' = m^2 - m, so a sampling deficit epsilon
    grows like epsilon * e^t until the sanity gate in gain() trips. The
    same amplification acts on the truncation leak (~exp(-x_max/m1) per
    unit time once the tail is populated), which bounds usable horizons at
    roughly t < x_max/m1 - log(1/tolerance). Mass is deliberately never
    renormalized mid-run; the drift is reported on the trajectory.
    """
    if not t_final > 0:
        raise ConfigError(f"t_final must be positive, got {t_final}")
    n_steps = max(1, int(round(t_final / dt)))
    if snapshot_times is None:
        snap_steps = {0, n_steps}
    else:
        snapshot_times = sorted(float(t) for t in snapshot_times)
        if snapshot_times and (snapshot_times[0] < 0 or snapshot_times[-1] > t_final + 1e-9):
            raise ConfigError("snapshot times must lie within [0, t_final]")
        snap_steps = {min(n_steps, int(math.floor(t / dt + 1e-9))) for t in snapshot_times}

    traj = Trajectory()
    clip_report: list[float] = []
    q = q0
    mass0 = q0.mass

    def record(step: int, q: GridDensity1D):
        t = step * dt
        traj.times.append(t)
        traj.snapshots.append(q)
        for obs in observers:
            obs(t, q)

    if 0 in snap_steps:
        record(0, q)
    for step in range(1, n_steps + 1):
        q = step_euler(q, dt, mode, clip_report)
        if step in snap_steps:
            record(step, q)
    traj.final = q
    traj.tail_loss = mass0 - q.mass
    traj.clipped_mass = float(sum(clip_report))
    return traj


# ---------------------------------------------------------------------------
# I/O: densities as CSV x,value with a JSON sidecar
# ---------------------------------------------------------------------------


def save_density(q: GridDensity1D, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x", "value"])
        for x, v in zip(q.grid.nodes, q.values):
            writer.writerow([repr(float(x)), repr(float(v))])
    with open(path + ".json", "w") as f:
        json.dump(
            {"x_max": q.grid.x_max, "n_cells": q.grid.n_cells, "m1": q.mean},
            f,
            indent=2,
        )
        f.write("\n")


def load_density(path: str) -> GridDensity1D:
    with open(path + ".json") as f:
        meta = json.load(f)
    grid = Grid1D(meta["x_max"], meta["n_cells"])
    values = np.empty(grid.n_cells)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["x", "value"]:
            raise DataError(f"unexpected density CSV header {header}")
        for i, row in enumerate(reader):
            values[i] = float(row[1])
    return GridDensity1D(grid, values)
