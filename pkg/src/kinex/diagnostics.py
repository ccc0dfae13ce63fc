"""Scalar functionals of the relaxation: entropy, dissipation, distances.

The dissipation functional D[q] comes in three equivalent evaluations:

* ``brute``       literal triple sum over (diagonal, cell, cell), O(M^3),
                  kept purely as an oracle and guarded to M <= 64;
* ``decomposed``  the two-term split through the diagonal average g of
                  q (x) q, literal 2-D sums, O(M^2);
* ``fast``        the same decomposition with every 2-D sum reduced to
                  sums along diagonals after one convolution, O(M log M),
                  for production-size grids.

All three share one discrete convention: the 1/(x+y) collision factor is
realized as 1/(count of in-range cells * dx) per anti-diagonal, which makes
them agree to rounding error (the count equals (x+y)/dx on every diagonal
that is not clipped by the truncation at x_max).

Wasserstein distances use the one-dimensional coupling: W1 as the exact
area between CDFs on the merged breakpoint set, W2 through inverse-CDF
evaluation on a fine u-grid with a half-resolution consistency check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DomainError, KinexError
from .kinetic1d import Equilibrium, GridDensity1D, gain, self_convolution

_DECOMPOSED_LIMIT = 2048
_BRUTE_LIMIT = 64


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x * log(y) with the 0 * log 0 convention (x = 0 contributes 0)."""
    out = np.zeros_like(x, dtype=float)
    mask = x > 0
    out[mask] = x[mask] * np.log(y[mask])
    return out


def relative_entropy(p: GridDensity1D, r: GridDensity1D) -> float:
    """Kullback-Leibler integral of p log(p / r) in nats.

    Cells where p > 0 but r = 0 violate absolute continuity; the result is
    then the +inf sentinel and a warning is emitted.
    """
    if p.grid != r.grid:
        raise ConfigError("relative_entropy needs a shared grid")
    pv, rv = p.values, r.values
    bad = (pv > 0) & (rv == 0)
    if bad.any():
        warnings.warn("absolute continuity violated; relative entropy is +inf", stacklevel=2)
        return math.inf
    return float((_xlogy(pv, pv) - _xlogy(pv, rv)).sum() * p.grid.dx)


def entropy_vs_equilibrium(q: GridDensity1D, m1: float | None = None) -> float:
    """Relative entropy of q against the exponential state (default: matched mean)."""
    return relative_entropy(q, Equilibrium(m1 if m1 is not None else q.mean).on_grid(q.grid))


# ---------------------------------------------------------------------------
# derived densities g, h, m
# ---------------------------------------------------------------------------


@dataclass
class DerivedDensities:
    """Diagonal average g, gain h = Q+[q], and the tail mass profile m.

    ``lambdas``/``g`` live on the doubled diagonal grid, ``h`` on the input
    grid, ``m_edges``/``m`` on cell edges so that m[0] is exactly the mass
    of h. h and m are nonincreasing by construction and the mean of h
    equals the mean of q (both conserved by the collision).
    """

    lambdas: np.ndarray
    g: np.ndarray
    h: GridDensity1D
    m_edges: np.ndarray
    m: np.ndarray


def derived_densities(q: GridDensity1D, mode: str = "auto") -> DerivedDensities:
    c = self_convolution(q, mode)
    lambdas = (np.arange(c.size) + 1.0) * q.grid.dx
    g = c / lambdas
    h = gain(q, mode, mass_check=False)
    dx = q.grid.dx
    m = np.concatenate((np.cumsum(h.values[::-1])[::-1], [0.0])) * dx
    m_edges = np.arange(q.grid.n_cells + 1) * dx
    return DerivedDensities(lambdas, g, h, m_edges, m)


# ---------------------------------------------------------------------------
# entropy dissipation D[q]
# ---------------------------------------------------------------------------


def _diagonal_average(q: GridDensity1D) -> tuple[np.ndarray, np.ndarray]:
    """Average g_k of q (x) q over diagonal k and the in-range cell counts."""
    n = q.grid.n_cells
    counts = np.minimum(np.arange(2 * n - 1) + 1, 2 * n - 1 - np.arange(2 * n - 1))
    c = self_convolution(q, "auto")  # = column sums * dx
    g = c / (counts * q.grid.dx)
    return g, counts


def _check_positive_where_needed(q: GridDensity1D) -> bool:
    """True if q (x) q gives positive mass to a diagonal touching a q = 0 cell."""
    v = q.values
    if (v > 0).all():
        return False
    g, _ = _diagonal_average(q)
    n = v.size
    zero = np.flatnonzero(v == 0)
    d = zero[:, None] + np.arange(n)[None, :]
    return bool((g[d] > 0).any())


def dissipation(q: GridDensity1D, method: str = "decomposed") -> float:
    """Entropy dissipation D[q] >= 0 (relative entropy decays at rate D/4).

    q must be strictly positive wherever the collision redistributes mass;
    otherwise the functional is genuinely infinite and the +inf sentinel is
    returned with a warning. Every evaluation is checked for nonnegativity
    (the integrand is a sum of (a - b) log(a/b) terms); rounding-level
    negatives are clamped to zero.
    """
    value = _dissipation_raw(q, method)
    if value < -1e-9:
        raise KinexError(f"dissipation came out negative ({value}); integrand violated")
    return max(value, 0.0)


def _dissipation_raw(q: GridDensity1D, method: str) -> float:
    n = q.grid.n_cells
    dx = q.grid.dx
    v = q.values

    if method == "brute":
        if n > _BRUTE_LIMIT:
            raise ConfigError(f"brute dissipation is O(M^3); capped at M={_BRUTE_LIMIT}")
    elif method in ("decomposed", "decomposed3"):
        if n > _DECOMPOSED_LIMIT:
            raise ConfigError(f"{method} dissipation is O(M^2); capped at M={_DECOMPOSED_LIMIT}")
    elif method != "fast":
        raise ConfigError(f"unknown dissipation method {method!r}")

    if _check_positive_where_needed(q):
        warnings.warn("q vanishes where the gain is positive; D[q] = +inf", stacklevel=2)
        return math.inf

    g, counts = _diagonal_average(q)

    if method == "brute":
        f = np.outer(v, v)
        i = np.arange(n)
        d = i[:, None] + i[None, :]
        total = 0.0
        logf = np.full_like(f, -np.inf)
        np.log(f, out=logf, where=f > 0)
        for k in range(2 * n - 1):
            cells = np.argwhere(d == k)
            fk = f[cells[:, 0], cells[:, 1]]
            lk = logf[cells[:, 0], cells[:, 1]]
            diff = fk[:, None] - fk[None, :]
            logs = np.where(np.isfinite(lk[:, None] - lk[None, :]), lk[:, None] - lk[None, :], 0.0)
            # (a - b) log(a/b) with a = b = 0 contributing 0
            both_zero = (fk[:, None] == 0) & (fk[None, :] == 0)
            term = np.where(both_zero, 0.0, diff * logs)
            total += term.sum() / (counts[k] * dx)
        return float(total * dx**3)

    if method == "fast":
        dx2 = dx * dx
        sq_logq = float(_xlogy(v, v).sum() * dx)
        glogg = float(_xlogy(counts * g, g).sum() * dx2)
        # h_i = dx * sum_j g_{i+j}: sliding tail-window sums of g
        suffix = np.concatenate((np.cumsum(g[::-1])[::-1], [0.0]))
        h = dx * (suffix[:n] - suffix[n : 2 * n])
        if ((h > 0) & (v == 0)).any():
            warnings.warn("q vanishes where h is positive; D[q] = +inf", stacklevel=2)
            return math.inf
        hlogq = float(_xlogy(h, np.where(v > 0, v, 1.0)).sum() * dx)
        t1 = 2.0 * (2.0 * q.mass * sq_logq - glogg)
        t2 = 2.0 * glogg - 4.0 * hlogq
        return t1 + t2

    # decomposed / decomposed3: literal 2-D sums
    dx2 = dx * dx
    f = np.outer(v, v)
    i = np.arange(n)
    g2d = g[i[:, None] + i[None, :]]
    ratio_fg = np.divide(f, g2d, out=np.ones_like(f), where=f > 0)
    t1 = 2.0 * float(_xlogy(f, ratio_fg).sum() * dx2)
    if method == "decomposed":
        ratio_gf = np.divide(g2d, f, out=np.ones_like(g2d), where=g2d > 0)
        t2 = 2.0 * float(_xlogy(g2d, ratio_gf).sum() * dx2)
        return t1 + t2
    # three-term variant: split t2 through the product h (x) h
    h = g2d.sum(axis=1) * dx
    hh = np.outer(h, h)
    ratio_gh = np.divide(g2d, hh, out=np.ones_like(g2d), where=g2d > 0)
    t2 = 2.0 * float(_xlogy(g2d, ratio_gh).sum() * dx2)
    ratio_hq = np.divide(h, v, out=np.ones_like(h), where=h > 0)
    t3 = 4.0 * float(_xlogy(h, ratio_hq).sum() * dx)
    return t1 + t2 + t3


def phi_weighted_entropy_bound(q: GridDensity1D, phi: np.ndarray) -> tuple[float, float]:
    """Jensen bound: entropy of q against H = g * phi versus the weighted 2-D form.

    phi is a nonnegative grid function normalized so that the integral of
    phi * q is 1 (to 1e-8). Returns (lhs, rhs) with lhs <= rhs guaranteed.
    """
    n = q.grid.n_cells
    if n > _DECOMPOSED_LIMIT:
        raise ConfigError(f"O(M^2) evaluation capped at M={_DECOMPOSED_LIMIT}")
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (n,) or phi.min() < 0:
        raise DomainError("phi must be a nonnegative grid function")
    dx = q.grid.dx
    v = q.values
    if abs(float((phi * v).sum() * dx) - 1.0) > 1e-8:
        raise DomainError("phi must satisfy integral(phi * q) = 1 to 1e-8")

    g, _ = _diagonal_average(q)
    i = np.arange(n)
    g2d = g[i[:, None] + i[None, :]]
    H = g2d @ phi * dx
    if ((v > 0) & (H == 0)).any():
        warnings.warn("H vanishes on the support of q; bound is +inf", stacklevel=2)
        return math.inf, math.inf
    lhs = float((_xlogy(v, np.where(v > 0, v, 1.0)) - _xlogy(v, np.where(H > 0, H, 1.0))).sum() * dx)

    f = np.outer(v, v)
    ratio = np.divide(f, g2d, out=np.ones_like(f), where=f > 0)
    rhs = float((_xlogy(f, ratio) * phi[None, :]).sum() * dx * dx)
    if not lhs <= rhs + 1e-9:
        raise KinexError(f"entropy bound violated: lhs={lhs} > rhs={rhs}")
    return lhs, rhs


def entropy_sandwich(mu: GridDensity1D, nu: GridDensity1D, C: float = 2.0) -> tuple[float, float, float]:
    """Three-region bracket of the relative entropy of mu against nu.

    For C >= 2 the middle value (the mass-corrected relative entropy, equal
    to the plain one when both inputs are probabilities) is bounded below
    and above by weighted combinations of a chi-square core, the nu-mass of
    the region where mu is tiny, and the tail of mu log(mu/nu). Ordering is
    guaranteed cell by cell.
    """
    if C < 2:
        raise DomainError(f"the bracket requires C >= 2, got {C}")
    if mu.grid != nu.grid:
        raise ConfigError("entropy_sandwich needs a shared grid")
    if (nu.values <= 0).any():
        raise DomainError("nu must be strictly positive on the grid")
    dx = mu.grid.dx
    m, v = mu.values, nu.values
    ratio = m / v

    low = ratio < 1.0 / C
    high = ratio > C
    mid = ~(low | high)

    chi2 = (m - v) ** 2 / v
    tail = _xlogy(m, np.where(m > 0, ratio, 1.0))

    lower = float((chi2[mid].sum() / (2 * C) + v[low].sum() / 8 + tail[high].sum() / 4) * dx)
    upper = float((chi2[mid].sum() * C / 2 + v[low].sum() + tail[high].sum()) * dx)
    phi_sum = tail + v - m  # nu * (r log r + 1 - r), the mass-corrected entropy
    middle = float(phi_sum.sum() * dx)
    if not (lower <= middle + 1e-12 and middle <= upper + 1e-12):
        raise KinexError(f"sandwich ordering violated: {lower}, {middle}, {upper}")
    return lower, middle, upper


# ---------------------------------------------------------------------------
# Laplace-transform bound
# ---------------------------------------------------------------------------


def laplace_profile(
    q: GridDensity1D, lam0: float, C: float = 1.0, n_lambda: int = 64
) -> tuple[np.ndarray, np.ndarray, float]:
    """(1 - C*lambda) * integral(exp(lambda x) q) on a lambda grid over [0, lam0].

    Returns (lambdas, G values, tail estimate); the tail estimate is the
    contribution of the last grid cell to the largest-lambda integral.
    """
    if not 0 < lam0 < 1:
        raise ConfigError(f"lam0 must be in (0, 1), got {lam0}")
    if C * lam0 >= 1:
        raise ConfigError(f"need C * lam0 < 1, got {C * lam0}")
    lams = np.linspace(0.0, lam0, n_lambda)
    dx = q.grid.dx
    G = np.empty(n_lambda)
    for k, lam in enumerate(lams):
        G[k] = (1.0 - C * lam) * float(np.sum(np.exp(lam * q.grid.nodes) * q.values) * dx)
    tail = (1.0 - C * lam0) * float(np.exp(lam0 * q.grid.nodes[-1]) * q.values[-1] * dx)
    return lams, G, tail


def laplace_check(q: GridDensity1D, lam0: float, C: float = 1.0, n_lambda: int = 64) -> float:
    """Supremum of the damped Laplace transform over the lambda grid."""
    _, G, _ = laplace_profile(q, lam0, C, n_lambda)
    return float(G.max())


# ---------------------------------------------------------------------------
# Wasserstein distances (1-D, exact coupling through CDFs)
# ---------------------------------------------------------------------------


class _Measure:
    """Common CDF/quantile view of a grid density or an empirical sample."""

    def __init__(self, obj):
        if isinstance(obj, GridDensity1D):
            self.xs, cum = obj.cdf_points()
            self.mass = cum[-1]
            self.F = cum / self.mass
            self.step = False
        else:
            samples = np.sort(np.asarray(obj, dtype=float))
            if samples.ndim != 1 or samples.size == 0 or not np.all(np.isfinite(samples)):
                raise DataError("empirical input must be a nonempty finite 1-D sample")
            self.xs = samples
            self.mass = 1.0
            self.step = True
        if abs(self.mass - 1.0) > 1e-6:
            raise DomainError(f"measure mass must be 1 +- 1e-6, got {self.mass}")

    def cdf_right(self, x: np.ndarray) -> np.ndarray:
        """Right-continuous CDF values F(x+)."""
        if self.step:
            return np.searchsorted(self.xs, x, side="right") / self.xs.size
        return np.interp(x, self.xs, self.F, left=0.0, right=1.0)

    def quantile(self, u: np.ndarray) -> np.ndarray:
        if self.step:
            idx = np.minimum((u * self.xs.size).astype(int), self.xs.size - 1)
            return self.xs[idx]
        return np.interp(u, self.F, self.xs)

    def second_moment(self) -> float:
        if self.step:
            return float(np.mean(self.xs**2))
        mids = 0.5 * (self.xs[1:] + self.xs[:-1])
        return float(np.sum(np.diff(self.F) * mids**2))


def wasserstein1(p, r) -> float:
    """Exact 1-D W1: area between the two CDFs on merged breakpoints."""
    mp, mr = _Measure(p), _Measure(r)
    breaks = np.union1d(mp.xs, mr.xs)
    a, b = breaks[:-1], breaks[1:]
    # on each open interval both CDFs are linear (constant for samples)
    dl = mp.cdf_right(a) - mr.cdf_right(a)
    if mp.step and mr.step:
        return float(np.sum((b - a) * np.abs(dl)))
    # left limits at b: step CDFs keep their value from a, linear ones hit F(b)
    dr_p = mp.cdf_right(a) if mp.step else np.interp(b, mp.xs, mp.F, left=0.0, right=1.0)
    dr_r = mr.cdf_right(a) if mr.step else np.interp(b, mr.xs, mr.F, left=0.0, right=1.0)
    dr = dr_p - dr_r
    same = dl * dr >= 0
    seg = np.where(
        same,
        0.5 * (np.abs(dl) + np.abs(dr)),
        0.5 * (dl**2 + dr**2) / np.maximum(np.abs(dl - dr), 1e-300),
    )
    return float(np.sum((b - a) * seg))


def wasserstein2(p, r, n_u: int = 1 << 16) -> float:
    """1-D W2 via inverse CDFs on a u-grid, with a half-resolution check."""
    mp, mr = _Measure(p), _Measure(r)
    if not (np.isfinite(mp.second_moment()) and np.isfinite(mr.second_moment())):
        raise DomainError("wasserstein2 needs finite second moments")

    def estimate(n: int) -> float:
        u = (np.arange(n) + 0.5) / n
        d = mp.quantile(u) - mr.quantile(u)
        return float(np.sqrt(np.mean(d**2)))

    fine = estimate(n_u)
    coarse = estimate(n_u // 2)
    if abs(fine - coarse) > max(1e-6, 1e-2 * fine):
        warnings.warn(
            f"wasserstein2 u-grid not converged: {coarse} vs {fine}; increase n_u",
            stacklevel=2,
        )
    return fine


# ---------------------------------------------------------------------------
# records and trajectory observer
# ---------------------------------------------------------------------------

RECORD_COLUMNS = ("time", "mass", "mean", "m2", "entropy_rel", "D", "W1", "W2", "laplace_sup", "tail_mass")


@dataclass
class DiagnosticsRecord:
    time: float
    mass: float
    mean: float
    m2: float
    entropy_rel: float
    D: float
    W1: float
    W2: float
    laplace_sup: float
    tail_mass: float

    def row(self) -> list[float]:
        return [getattr(self, c) for c in RECORD_COLUMNS]


def write_records_csv(records, path: str) -> None:
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RECORD_COLUMNS)
        for rec in records:
            writer.writerow([repr(float(x)) for x in rec.row()])


class TrajectoryObserver:
    """Collects a DiagnosticsRecord per snapshot of a kinetic1d solve.

    The equilibrium used for entropy and the Wasserstein targets is the
    exponential state with the initial density's (conserved) mean, and the
    damped-Laplace parameters scale with that mean (lambda up to 0.6/m1,
    damping m1), which is the scale-invariant transfer of the mean-1
    bound: the exponential moment would diverge otherwise. The initial
    mass is remembered so tail_mass reports cumulative truncation loss.
    """

    def __init__(
        self,
        m1: float | None = None,
        lam0: float | None = None,
        laplace_C: float | None = None,
        dissipation_method: str = "fast",
        wasserstein: bool = True,
    ):
        self.m1 = m1
        self.lam0 = lam0
        self.laplace_C = laplace_C
        self.dissipation_method = dissipation_method
        self.wasserstein = wasserstein
        self.records: list[DiagnosticsRecord] = []
        self._mass0: float | None = None
        self._eq: GridDensity1D | None = None

    def __call__(self, t: float, q: GridDensity1D) -> None:
        if self._mass0 is None:
            self._mass0 = q.mass
            mean = self.m1 if self.m1 is not None else q.mean
            if self.lam0 is None:
                self.lam0 = 0.6 / mean
            if self.laplace_C is None:
                self.laplace_C = mean
            self._eq = Equilibrium(mean).on_grid(q.grid).normalized()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # early snapshots may have D = +inf
            d_val = dissipation(q, self.dissipation_method)
        w1 = wasserstein1(q, self._eq) if self.wasserstein else math.nan
        w2 = wasserstein2(q, self._eq) if self.wasserstein else math.nan
        self.records.append(
            DiagnosticsRecord(
                time=t,
                mass=q.mass,
                mean=q.mean,
                m2=q.moment(2),
                entropy_rel=relative_entropy(q, self._eq),
                D=d_val,
                W1=w1,
                W2=w2,
                laplace_sup=laplace_check(q, self.lam0, self.laplace_C),
                tail_mass=self._mass0 - q.mass,
            )
        )


@dataclass
class EepStudy:
    """(entropy, dissipation) pairs along a trajectory and a log-log slope."""

    times: np.ndarray
    entropies: np.ndarray
    dissipations: np.ndarray
    theta_hat: float | None
    n_dropped: int

    def table(self) -> np.ndarray:
        return np.column_stack((self.entropies, self.dissipations))


def eep_study(records) -> EepStudy:
    """Fit entropy ~ C * D^theta on the usable part of a diagnostics series.

    Pairs with nonfinite or nonpositive entries (the t = 0 snapshot of a
    compactly supported start has infinite dissipation) are dropped and
    counted. Constants are existential, so this reports a fitted exponent
    and draws no pass/fail conclusion. Near-equilibrium series (entropy
    below 1e-12) skip the fit.
    """
    t = np.array([r.time for r in records])
    e = np.array([r.entropy_rel for r in records])
    d = np.array([r.D for r in records])
    keep = np.isfinite(e) & np.isfinite(d) & (e > 1e-300) & (d > 1e-300)
    dropped = int(len(records) - keep.sum())
    t, e, d = t[keep], e[keep], d[keep]
    if e.size < 3 or e.max() < 1e-12:
        return EepStudy(t, e, d, None, dropped)
    slope = float(np.polyfit(np.log(d), np.log(e), 1)[0])
    return EepStudy(t, e, d, slope, dropped)
