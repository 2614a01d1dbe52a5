"""Divisor flow: the coupled ODE system for the Dirichlet eigenvalues
mu_j(x) and the trace-formula reconstruction of the background potential.

The raw flow

    d mu_j / dx = -2 sigma_j Y^{1/2}(mu_j) / (d/dz G)(mu_j, x)

has square-root turning points at the gap edges.  We integrate the angle form
instead: with mu_j = m_j - w_j cos(theta_j) (m_j the gap midpoint, w_j the
half width) the system becomes

    d theta_j / dx = Omega_j(theta) =
        2 sqrt(mu_j - E_0) * prod_{k != j} sqrt((mu_j - E_{2k-1})(mu_j - E_2k))
                                          / |mu_j - mu_k|,

which is smooth, strictly positive, and keeps every mu_j inside its gap by
construction.  The sheet sign is derived, never stored: sigma_j = +1 exactly
when sin(theta_j) > 0, with the right-limit convention at touch points
(theta at an even multiple of pi, i.e. the lower edge, flips to +1; at an odd
multiple, the upper edge, to -1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import minimize_scalar

from ._numerics import f17
from .errors import DegenerateGap, StepTooLarge, WindowTooShort
from .spectral import BandStructure

__all__ = [
    "DirichletDivisor",
    "DivisorTrajectory",
    "PotentialSamples",
    "RecurrenceReport",
    "integrate_dubrovin",
    "trace_potential",
    "recurrence_diagnostic",
    "trajectory_to_csv",
]

_DEGENERATE_WIDTH = 1e-12


@dataclass(frozen=True)
class DirichletDivisor:
    """One (mu_j, sigma_j) pair per gap; the data that pins the background."""

    entries: tuple

    def __post_init__(self):
        ent = tuple((float(m), int(s)) for m, s in self.entries)
        for m, s in ent:
            if s not in (-1, 1):
                raise ValueError("sigma must be +1 or -1, got %r" % (s,))
        object.__setattr__(self, "entries", ent)

    @property
    def mu(self) -> np.ndarray:
        return np.array([m for m, _ in self.entries])

    @property
    def sigma(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=int)

    @classmethod
    def midpoints(cls, band: BandStructure) -> "DirichletDivisor":
        return cls(tuple((float(m), 1) for m in band.gap_mid))

    @classmethod
    def random_in_gaps(cls, band: BandStructure, rng) -> "DirichletDivisor":
        out = []
        for (lo, hi) in band.gaps:
            m = rng.uniform(lo, hi)
            s = 1 if rng.uniform() < 0.5 else -1
            out.append((float(m), s))
        return cls(tuple(out))

    def validate_against(self, band: BandStructure) -> None:
        if len(self.entries) != band.gap_count:
            raise ValueError("divisor has %d entries for %d gaps"
                             % (len(self.entries), band.gap_count))
        for j, (m, _) in enumerate(self.entries, start=1):
            lo, hi = band.gaps[j - 1]
            if not lo <= m <= hi:
                raise ValueError("mu_%d = %g outside its gap [%g, %g]"
                                 % (j, m, lo, hi))


def _omega(band: BandStructure, theta: np.ndarray) -> np.ndarray:
    """Angle-form right sides; strictly positive on the whole torus."""
    mu = band.gap_mid - band.gap_half * np.cos(theta)
    base = 2.0 * np.sqrt(mu - band.edges[0])
    if mu.size == 1:
        return base
    lo = band.edge_array[1::2]
    hi = band.edge_array[2::2]
    a = (mu[:, None] - lo[None, :]) * (mu[:, None] - hi[None, :])
    b = np.abs(mu[:, None] - mu[None, :])
    np.fill_diagonal(a, 1.0)
    np.fill_diagonal(b, 1.0)
    return base * np.prod(np.sqrt(a) / b, axis=1)


@dataclass
class DivisorTrajectory:
    """Angle samples theta_j(x_i) on a uniform grid, plus derived views.

    mu and sigma are always reconstructed from theta (no separate flip
    bookkeeping).  Between grid nodes the angles are interpolated by a cubic
    Hermite spline using the exact node derivatives, so downstream quadratures
    see a C^1 trajectory whose interpolation error is O(step^4).
    """

    band: BandStructure
    x_grid: np.ndarray
    theta: np.ndarray            # shape (len(x_grid), N)
    dtheta: np.ndarray           # exact RHS at the nodes, same shape
    interpolation: str = "cubic-hermite"

    @cached_property
    def _spline(self) -> CubicHermiteSpline:
        return CubicHermiteSpline(self.x_grid, self.theta, self.dtheta, axis=0)

    @cached_property
    def _dspline(self):
        return self._spline.derivative()

    @property
    def x_min(self) -> float:
        return float(self.x_grid[0])

    @property
    def x_max(self) -> float:
        return float(self.x_grid[-1])

    def _check_range(self, x) -> None:
        x = np.asarray(x, dtype=float)
        if x.size and (x.min() < self.x_min - 1e-12 or x.max() > self.x_max + 1e-12):
            raise ValueError("x = %s outside trajectory range [%g, %g]"
                             % (x, self.x_min, self.x_max))

    def theta_at(self, x):
        self._check_range(x)
        if self.band.gap_count == 0:
            return np.zeros(np.shape(x) + (0,))
        return self._spline(x)

    def dtheta_at(self, x):
        self._check_range(x)
        if self.band.gap_count == 0:
            return np.zeros(np.shape(x) + (0,))
        return self._dspline(x)

    def mu_of_theta(self, theta) -> np.ndarray:
        """Gap coordinates from angles, clipped to the closed gap hulls.

        The clip only ever removes the half-ulp overshoot of the midpoint
        parametrization (m + w may round one ulp past E_2j); the flow itself
        cannot leave the gap.
        """
        mu = self.band.gap_mid - self.band.gap_half * np.cos(theta)
        lo = self.band.edge_array[1::2]
        hi = self.band.edge_array[2::2]
        return np.clip(mu, lo, hi)

    def mu_at(self, x) -> np.ndarray:
        return self.mu_of_theta(self.theta_at(x))

    @staticmethod
    def sigma_of_theta(theta) -> np.ndarray:
        # parity of floor(theta/pi): +1 on the ascending branch [0, pi), -1 on
        # the descending one.  Equivalent to sign(sin theta) in the interiors,
        # but lands on the right-limit value at touch angles, where machine
        # sin(k*pi) is a stray 1e-16 of either sign.
        k = np.floor(theta / math.pi).astype(int)
        return np.where(k % 2 == 0, 1, -1).astype(int)

    def sigma_at(self, x) -> np.ndarray:
        return self.sigma_of_theta(self.theta_at(x))

    @cached_property
    def mu_grid(self) -> np.ndarray:
        return self.mu_of_theta(self.theta)

    @cached_property
    def sigma_grid(self) -> np.ndarray:
        return self.sigma_of_theta(self.theta)

    def divisor_at(self, x) -> DirichletDivisor:
        mu = np.atleast_1d(self.mu_at(x))
        sg = np.atleast_1d(self.sigma_at(x))
        return DirichletDivisor(tuple(zip(mu.tolist(), sg.tolist())))

    @cached_property
    def _touch_cache(self) -> dict:
        return {}

    def touch_points(self, gap_index: int, edge: str, lo=None, hi=None) -> np.ndarray:
        """x values where mu_j touches its 'lower' or 'upper' gap edge.

        Roots of theta_j = k*pi with the matching parity, located on the
        Hermite spline inside [lo, hi] (defaults: full range).  The root
        solve runs once per (gap, edge) and is reused across queries.
        """
        key = (gap_index, edge)
        full = self._touch_cache.get(key)
        if full is None:
            col = self.theta[:, gap_index]
            want_even = (edge == "lower")
            k_lo = math.floor(col.min() / math.pi) - 1
            k_hi = math.ceil(col.max() / math.pi) + 1
            sp = CubicHermiteSpline(self.x_grid, col, self.dtheta[:, gap_index])
            out = []
            for k in range(k_lo, k_hi + 1):
                if (k % 2 == 0) != want_even:
                    continue
                out.extend(float(r)
                           for r in sp.solve(k * math.pi, extrapolate=False))
            full = np.array(sorted(out))
            self._touch_cache[key] = full
        lo = self.x_min if lo is None else lo
        hi = self.x_max if hi is None else hi
        sel = full[(full >= lo - 1e-12) & (full <= hi + 1e-12)]
        return np.clip(sel, lo, hi)

    @cached_property
    def _flip_points(self) -> np.ndarray:
        pts = [self.touch_points(j, edge)
               for j in range(self.band.gap_count)
               for edge in ("lower", "upper")]
        return np.unique(np.concatenate(pts)) if pts else np.array([])

    def flip_points(self) -> np.ndarray:
        """All edge-touch locations (sigma flip candidates), every gap.

        Cached; callers must treat the returned array as read-only.
        """
        return self._flip_points

    def mirrored(self) -> "DivisorTrajectory":
        """The trajectory of the space-reflected background, mu~(x) = mu(-x)."""
        return DivisorTrajectory(
            band=self.band,
            x_grid=-self.x_grid[::-1].copy(),
            theta=-self.theta[::-1].copy(),
            dtheta=self.dtheta[::-1].copy(),
            interpolation=self.interpolation,
        )


def integrate_dubrovin(band: BandStructure, divisor: DirichletDivisor,
                       x_min: float, x_max: float, step: float,
                       tol: float = 1e-10) -> DivisorTrajectory:
    """Integrate the angle-form divisor flow over [x_min, 0] and [0, x_max].

    The initial divisor lives at x = 0, so the window must contain it.  The
    output grid is uniform with the given step (the window ends snap to the
    nearest multiple); the integrator is adaptive with per-step tolerance
    ``tol`` and its internal steps capped at ``step``.
    """
    if step <= 0.0 or tol <= 0.0:
        raise ValueError("step and tol must be positive")
    if not x_min <= 0.0 <= x_max:
        raise ValueError("window [%g, %g] must contain x = 0" % (x_min, x_max))
    divisor.validate_against(band)
    if band.gap_count and band.gap_half.min() <= _DEGENERATE_WIDTH * max(
            1.0, np.abs(band.edge_array).max()):
        raise DegenerateGap("a gap is too thin to integrate (half width %g)"
                            % band.gap_half.min())

    k_lo = round(x_min / step)
    k_hi = round(x_max / step)
    x_grid = step * np.arange(k_lo, k_hi + 1)
    n0 = -k_lo  # index of x = 0

    if band.gap_count == 0:
        empty = np.zeros((len(x_grid), 0))
        return DivisorTrajectory(band, x_grid, empty, empty.copy())

    # initial angles from (mu, sigma): theta in [0, pi] for sigma = +1,
    # in [pi, 2 pi] for sigma = -1 (sin < 0 on the descending branch).
    c = np.clip((band.gap_mid - divisor.mu) / band.gap_half, -1.0, 1.0)
    theta0 = np.arccos(c)
    theta0 = np.where(divisor.sigma < 0, 2.0 * math.pi - theta0, theta0)

    rhs = lambda x, th: _omega(band, th)
    parts = []
    for lo, hi, t_eval in ((0.0, x_grid[-1], x_grid[n0:]),
                           (0.0, x_grid[0], x_grid[n0::-1])):
        if hi == lo:
            parts.append(theta0[None, :] * np.ones((len(t_eval), 1)))
            continue
        sol = solve_ivp(rhs, (lo, hi), theta0, method="DOP853",
                        t_eval=t_eval, rtol=tol, atol=tol, max_step=step,
                        dense_output=False)
        if not sol.success:
            raise RuntimeError("divisor integration failed: %s" % sol.message)
        parts.append(sol.y.T)
    theta = np.vstack([parts[1][::-1][:-1], parts[0]])

    jump = np.abs(np.diff(theta, axis=0)).max(initial=0.0)
    if jump > 0.5 * math.pi:
        raise StepTooLarge(
            "angle advance %.3g rad per output step exceeds pi/2; "
            "reduce step below %.3g" % (jump, step * 0.5 * math.pi / jump))

    dtheta = np.array([_omega(band, th) for th in theta])
    return DivisorTrajectory(band, x_grid, theta, dtheta)


# ---------------------------------------------------------------------------
# trace formula
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSamples:
    """p(x) on the trajectory grid plus the x-independent trace constant.

    The bounds are what the gap confinement of the divisor forces through the
    trace formula: p stays in [p_lower, p_upper] sample by sample.
    """

    x_grid: np.ndarray
    p_values: np.ndarray
    trace_constant: float
    p_lower: float
    p_upper: float


def trace_potential(band: BandStructure, trajectory: DivisorTrajectory) -> PotentialSamples:
    """p(x_i) = E_0 + sum_j (E_{2j-1} + E_2j - 2 mu_j(x_i))."""
    e0 = band.edges[0]
    if band.gap_count == 0:
        p = np.full(len(trajectory.x_grid), e0)
        return PotentialSamples(trajectory.x_grid, p, e0, e0, e0)
    pair_sum = float(np.sum(band.edge_array[1:]))
    const = e0 + pair_sum
    p = const - 2.0 * np.sum(trajectory.mu_grid, axis=1)
    lo = const - 2.0 * float(np.sum(band.edge_array[2::2]))
    hi = const - 2.0 * float(np.sum(band.edge_array[1::2]))
    return PotentialSamples(trajectory.x_grid, p, const, lo, hi)


def potential_on(band: BandStructure, trajectory: DivisorTrajectory, x):
    """p evaluated through the spline at arbitrary x (vectorized)."""
    e0 = band.edges[0]
    if band.gap_count == 0:
        return np.full(np.shape(x), e0, dtype=float)
    th = trajectory.theta_at(x)
    return e0 + 2.0 * np.sum(band.gap_half * np.cos(th), axis=-1)


# ---------------------------------------------------------------------------
# recurrence diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RecurrenceReport:
    """Almost-period candidates: shifts tau with sup_x |mu(x+tau) - mu(x)|
    below tolerance.  Informational only."""

    window: tuple
    slowest_period: float
    tolerance: float
    candidates: tuple  # of (tau, defect), tau ascending


def recurrence_diagnostic(trajectory: DivisorTrajectory,
                          tolerance: float) -> RecurrenceReport:
    x = trajectory.x_grid
    span = float(x[-1] - x[0])
    n = len(x)
    if trajectory.band.gap_count == 0:
        taus = x[1:n // 2 + 1] - x[0]
        return RecurrenceReport((float(x[0]), float(x[-1])), 0.0, tolerance,
                                tuple((float(t), 0.0) for t in taus))

    mean_rate = trajectory.dtheta.mean(axis=0)
    slowest = float((2.0 * math.pi / mean_rate).max())
    if span < 2.0 * slowest:
        raise WindowTooShort(
            "window %.3g shorter than two slowest periods (2 x %.3g)"
            % (span, slowest))

    mu = trajectory.mu_grid
    h = float(x[1] - x[0])
    k_max = n // 2
    defects = np.array([np.abs(mu[k:] - mu[:-k]).max() for k in range(1, k_max)])

    def defect_of(tau: float) -> float:
        base = x[x + tau <= x[-1] + 1e-12]
        return float(np.abs(trajectory.mu_at(base + tau) -
                            trajectory.mu_at(base)).max())

    # local minima of the coarse scan, refined off-grid through the spline
    cands = []
    for k in range(1, len(defects) - 1):
        if defects[k] <= defects[k - 1] and defects[k] <= defects[k + 1]:
            tau0 = (k + 1) * h
            res = minimize_scalar(defect_of, bounds=(tau0 - h, tau0 + h),
                                  method="bounded",
                                  options={"xatol": 1e-10})
            tau, d = float(res.x), float(res.fun)
            if d < tolerance:
                cands.append((tau, d))
    cands.sort()
    return RecurrenceReport((float(x[0]), float(x[-1])), slowest, tolerance,
                            tuple(cands))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def trajectory_to_csv(band: BandStructure, trajectory: DivisorTrajectory,
                      path) -> None:
    """CSV with header x,theta_1..theta_N,mu_1..mu_N,sigma_1..sigma_N,p."""
    n = band.gap_count
    cols = (["x"]
            + ["theta_%d" % j for j in range(1, n + 1)]
            + ["mu_%d" % j for j in range(1, n + 1)]
            + ["sigma_%d" % j for j in range(1, n + 1)]
            + ["p"])
    p = trace_potential(band, trajectory).p_values
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for i, xv in enumerate(trajectory.x_grid):
            row = [f17(xv)]
            row += [f17(v) for v in trajectory.theta[i]]
            row += [f17(v) for v in trajectory.mu_grid[i]]
            row += ["%d" % v for v in trajectory.sigma_grid[i]]
            row.append(f17(p[i]))
            fh.write(",".join(row) + "\n")
