"""Weyl solutions and friends on a finite-gap background.

Everything here is algebra on top of the divisor trajectory: the divisor
product

    G(z, x) = prod_j (z - mu_j(x)) / prod_j E_{2j-1},

its half x-derivative H = (1/2) dG/dx (a polynomial in z, assembled from the
exact flow derivatives mu_j'), the Weyl functions m+- = (H +- Y^{1/2}) / G,
the Green function g = -G(z,0) / (2 Y^{1/2}), and the Weyl solutions

    psi_+-(z, x) = (G(z,x)/G(z,0))^{1/2} exp( +- int_0^x Y^{1/2}(z)/G(z,t) dt )

normalized to 1 at x = 0.  A second, independent route builds psi from the
cosine/sine-type solutions of -y'' + p y = z y via an initial-value solve:
psi = c + m+-(z, 0) s.  The two routes share nothing numerically (quadrature
plus square roots versus an ODE integrator), which is what makes their
agreement a meaningful check; do not "simplify" one in terms of the other.

The product representation needs z away from the gaps (the square-root
prefactor degenerates as z approaches a moving mu_j); within eps_gap of a gap
hull it refuses and the ODE route must be used.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.integrate import solve_ivp

from ._numerics import complex_quad, f17, gauss_panels, merge_breakpoints, principal_sqrt
from .dubrovin import DivisorTrajectory, potential_on
from .errors import (
    AmbiguousPole,
    AtDivisorPole,
    BranchAtEdge,
    QuadratureFailure,
    TooCloseToGap,
)
from .spectral import BandStructure, SpectralPoint, as_point, eval_Y, eval_sqrtY

__all__ = [
    "WeylContext",
    "PoleTag",
    "PoleClassification",
    "eval_G",
    "eval_H",
    "eval_m",
    "eval_psi_product",
    "eval_psi_ode",
    "eval_green",
    "wronskian_check",
    "classify_poles",
    "structural_identity_check",
    "psi_on_grid",
    "probe_csv",
]


@dataclass(frozen=True)
class WeylContext:
    """Band + trajectory bundle with the evaluation tolerances.

    Immutable; all evaluators below are pure functions of it.  ``eps_gap``
    defaults to 1e-3 of the smallest gap width.
    """

    band: BandStructure
    trajectory: DivisorTrajectory
    eps_gap: float = None
    ode_tol: float = 1e-12
    quad_tol: float = 1e-10

    def __post_init__(self):
        if self.trajectory.band is not self.band and \
                self.trajectory.band.edges != self.band.edges:
            raise ValueError("trajectory belongs to a different band structure")
        if not self.trajectory.x_min <= 0.0 <= self.trajectory.x_max:
            raise ValueError("trajectory must cover x = 0 (psi normalization)")
        if self.eps_gap is None:
            width = self.band.min_gap_width
            object.__setattr__(self, "eps_gap",
                               1e-3 * width if math.isfinite(width) else 0.0)

    @property
    def branch_sign(self) -> int:
        return self.band.branch_sign

    def mirrored(self) -> "WeylContext":
        return WeylContext(self.band, self.trajectory.mirrored(),
                           eps_gap=self.eps_gap, ode_tol=self.ode_tol,
                           quad_tol=self.quad_tol)

    def p_of(self, x):
        """Background potential through the trace formula (vectorized)."""
        return potential_on(self.band, self.trajectory, x)


def _check_sign(sign) -> int:
    if sign in (1, +1, "+"):
        return 1
    if sign in (-1, "-"):
        return -1
    raise ValueError("sign must be +1 or -1, got %r" % (sign,))


# ---------------------------------------------------------------------------
# G, H and the Weyl functions
# ---------------------------------------------------------------------------

def _mu_and_dot(ctx: WeylContext, x: float):
    th = ctx.trajectory.theta_at(x)
    mu = ctx.trajectory.mu_of_theta(th)
    dth = ctx.trajectory.dtheta_at(x)
    mu_dot = ctx.band.gap_half * np.sin(th) * dth
    return mu, mu_dot


def eval_G(ctx: WeylContext, p, x: float) -> complex:
    """The divisor product G(z, x); entire in z, exactly 0 at z = mu_j(x)."""
    z = as_point(p).z
    mu = ctx.trajectory.mu_at(x)
    return complex(np.prod(z - mu) / ctx.band.gap_norm)


def eval_H(ctx: WeylContext, p, x: float) -> complex:
    """H(z, x) = (1/2) d/dx G(z, x), assembled by the product rule.

    Each removed-factor product is built explicitly, so z = mu_j(x) is a
    perfectly regular point (the residue-sum form of H would divide by zero
    there; this form is what gives H(mu_j, x) = sigma_j Y^{1/2}(mu_j)).
    """
    z = as_point(p).z
    mu, mu_dot = _mu_and_dot(ctx, x)
    n = mu.size
    if n == 0:
        return 0.0 + 0.0j
    acc = 0.0 + 0.0j
    for l in range(n):
        prod = 1.0 + 0.0j
        for k in range(n):
            if k != l:
                prod *= z - mu[k]
        acc += mu_dot[l] * prod
    return complex(-0.5 * acc / ctx.band.gap_norm)


def _H_and_deriv(ctx: WeylContext, z: complex, x: float):
    """(H, dH/dz) via polynomial coefficients; used by the removable limit."""
    mu, mu_dot = _mu_and_dot(ctx, x)
    coeffs = np.zeros(max(mu.size, 1), dtype=complex)
    for l in range(mu.size):
        coeffs = coeffs + mu_dot[l] * np.poly(np.delete(mu, l))
    coeffs = -0.5 * coeffs / ctx.band.gap_norm
    h = np.polyval(coeffs, z)
    dh = np.polyval(np.polyder(coeffs), z) if len(coeffs) > 1 else 0.0
    return complex(h), complex(dh)


def _nearest_divisor(ctx: WeylContext, z: complex, x: float):
    mu = ctx.trajectory.mu_at(x)
    if mu.size == 0:
        return None, math.inf
    j = int(np.argmin(np.abs(z - mu)))
    return j, float(abs(z - mu[j]))


_POLE_TOL = 1e-9


def eval_m(ctx: WeylContext, p, x: float, sign) -> complex:
    """Weyl function m+- = (H +- Y^{1/2}) / G at (z, x).

    Within _POLE_TOL of a divisor point the owning sign raises AtDivisorPole;
    the other sign is evaluated by its removable limit (both numerator and G
    vanish to first order there).
    """
    sgn = _check_sign(sign)
    pt = as_point(p)
    z = pt.z
    j, dist = _nearest_divisor(ctx, z, x)
    if dist < _POLE_TOL:
        mu = ctx.trajectory.mu_at(x)
        sigma = int(ctx.trajectory.sigma_at(x)[j])
        lo, hi = ctx.band.gaps[j]
        if min(abs(mu[j] - lo), abs(mu[j] - hi)) < _POLE_TOL:
            raise AtDivisorPole(
                "z = %s sits at an edge divisor point (square-root pole of "
                "both Weyl functions)" % (z,))
        if sigma == sgn:
            raise AtDivisorPole(
                "z = %s is within %g of mu_%d(%g), a pole of m%s"
                % (z, _POLE_TOL, j + 1, x, "+" if sgn > 0 else "-"))
        # removable limit at mu_j: l'Hopital in z
        zj = complex(mu[j])
        _, dh = _H_and_deriv(ctx, zj, x)
        sq = eval_sqrtY(ctx.band, zj)
        dsq = _Y_deriv(ctx.band, zj) / (2.0 * sq)
        dg = _G_deriv(ctx, zj, x)
        return complex((dh + sgn * dsq) / dg)
    h = eval_H(ctx, pt, x)
    g = eval_G(ctx, pt, x)
    sq = eval_sqrtY(ctx.band, pt)
    return complex((h + sgn * sq) / g)


def _Y_deriv(band: BandStructure, z: complex) -> complex:
    e = band.edge_array
    acc = 0.0 + 0.0j
    for m in range(len(e)):
        prod = 1.0 + 0.0j
        for k in range(len(e)):
            if k != m:
                prod *= z - e[k]
        acc += prod
    return complex(-acc / band.gap_norm ** 2)


def _G_deriv(ctx: WeylContext, z: complex, x: float) -> complex:
    mu = ctx.trajectory.mu_at(x)
    acc = 0.0 + 0.0j
    for l in range(mu.size):
        prod = 1.0 + 0.0j
        for k in range(mu.size):
            if k != l:
                prod *= z - mu[k]
        acc += prod
    return complex(acc / ctx.band.gap_norm)


def eval_green(ctx: WeylContext, p) -> complex:
    """Green function g(z) = -G(z, 0) / (2 Y^{1/2}(z)); (1/i) g > 0 on upper
    band rims."""
    pt = as_point(p)
    sq = eval_sqrtY(ctx.band, pt)
    if sq == 0.0:
        raise BranchAtEdge("Green function diverges at the band edge %s"
                           % (pt.z,))
    return complex(-eval_G(ctx, pt, 0.0) / (2.0 * sq))


# ---------------------------------------------------------------------------
# psi: product representation
# ---------------------------------------------------------------------------

def _require_away_from_gaps(ctx: WeylContext, z: complex) -> None:
    d = ctx.band.gap_distance(z)
    if d < ctx.eps_gap:
        raise TooCloseToGap(
            "z = %s is %.3g from a gap hull; the product representation "
            "needs at least eps_gap = %.3g (use the ODE route instead)"
            % (z, d, ctx.eps_gap))


def _flow_integral(ctx: WeylContext, pt: SpectralPoint, x: float) -> complex:
    """int_0^x Y^{1/2}(z) / G(z, t) dt by adaptive quadrature, with
    subdivision forced at the sigma-flip points of the trajectory."""
    if x == 0.0:
        return 0.0 + 0.0j
    sq = eval_sqrtY(ctx.band, pt)
    mu_of = ctx.trajectory.mu_at
    norm = ctx.band.gap_norm
    z = pt.z

    def integrand(t):
        return sq / complex(np.prod(z - mu_of(t)) / norm)

    flips = ctx.trajectory.flip_points()
    lo, hi = (0.0, x) if x > 0.0 else (x, 0.0)
    flips = flips[(flips > lo) & (flips < hi)]
    val, err = complex_quad(integrand, 0.0, x, points=flips,
                            epsabs=1e-13, epsrel=1e-13)
    if err > ctx.quad_tol * (1.0 + abs(val)):
        raise QuadratureFailure(
            "flow integral error %.3g exceeds tolerance at z = %s" % (err, z))
    return val


def _psi_prefactor(ctx: WeylContext, z: complex, x: float) -> complex:
    mu_x = ctx.trajectory.mu_at(x)
    mu_0 = ctx.trajectory.mu_at(0.0)
    if mu_x.size == 0:
        return 1.0 + 0.0j
    return complex(np.prod(principal_sqrt((z - mu_x) / (z - mu_0))))


def eval_psi_product(ctx: WeylContext, p, x: float, sign) -> complex:
    """psi_+- via the square-root-prefactor representation.

    Exactly 1 at x = 0.  Raises TooCloseToGap within eps_gap of a gap hull
    and QuadratureFailure if the flow integral cannot be trusted.
    """
    sgn = _check_sign(sign)
    pt = as_point(p)
    _require_away_from_gaps(ctx, pt.z)
    if x == 0.0:
        return 1.0 + 0.0j
    w = _flow_integral(ctx, pt, x)
    return _psi_prefactor(ctx, pt.z, x) * cmath.exp(sgn * w)


def psi_on_grid(ctx: WeylContext, p, xs: np.ndarray, sign,
                order: int = 12, max_panel: float = 0.05) -> np.ndarray:
    """psi_+- at every point of a sorted grid in one cumulative pass.

    One set of Gauss-Legendre panels covers the whole span, so neighboring
    grid values share their quadrature history; errors are correlated instead
    of independent, which downstream finite differences rely on.
    """
    sgn = _check_sign(sign)
    pt = as_point(p)
    _require_away_from_gaps(ctx, pt.z)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or np.any(np.diff(xs) <= 0.0):
        raise ValueError("xs must be strictly increasing")
    z = pt.z
    sq = eval_sqrtY(ctx.band, pt)

    lo = min(xs[0], 0.0)
    hi = max(xs[-1], 0.0)
    fill = np.arange(lo, hi, max_panel)
    edges = merge_breakpoints(xs, [0.0], fill, ctx.trajectory.flip_points(),
                              lo=lo, hi=hi, min_sep=1e-12)

    norm = ctx.band.gap_norm
    traj = ctx.trajectory

    def inv_g(ts):
        mus = traj.mu_at(ts)                      # (n, N)
        g = np.prod(z - mus, axis=-1) / norm
        return sq / g

    panels = gauss_panels(inv_g, edges, order=order)
    cum = np.concatenate([[0.0 + 0.0j], np.cumsum(panels)])
    # last panel edge <= x; the dedup in merge_breakpoints may have replaced
    # an x by a twin within min_sep, so exact membership cannot be assumed
    idx = np.searchsorted(edges, xs, side="right") - 1
    i0 = int(np.searchsorted(edges, 0.0, side="right")) - 1
    w = cum[idx] - cum[i0]

    mu_xs = traj.mu_at(xs)
    mu_0 = traj.mu_at(0.0)
    if mu_0.size:
        pref = np.prod(principal_sqrt((z - mu_xs) / (z - mu_0)), axis=-1)
    else:
        pref = np.ones(len(xs), dtype=complex)
    return pref * np.exp(sgn * w)


# ---------------------------------------------------------------------------
# psi: initial-value (cosine/sine) representation
# ---------------------------------------------------------------------------

def _ode_cs(ctx: WeylContext, z: complex, x: float):
    """Integrate -y'' + p y = z y from 0 to x for the (c, s) basis.

    Returns (c, c', s, s') at x.  c(0)=1, c'(0)=0, s(0)=0, s'(0)=1.
    """
    if x == 0.0:
        return 1.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j, 1.0 + 0.0j

    def rhs(t, y):
        q = ctx.p_of(float(t)) - z
        return [y[1], q * y[0], y[3], q * y[2]]

    y0 = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex)
    sol = solve_ivp(rhs, (0.0, x), y0, method="DOP853",
                    rtol=ctx.ode_tol, atol=ctx.ode_tol)
    if not sol.success:
        raise RuntimeError("ODE integration failed: %s" % sol.message)
    c, cp, s, sp = sol.y[:, -1]
    return complex(c), complex(cp), complex(s), complex(sp)


def eval_psi_ode(ctx: WeylContext, p, x: float, sign) -> complex:
    """psi_+- as c + m_+-(z, 0) s with (c, s) from the initial-value solve.

    Valid arbitrarily close to the gaps (no square-root prefactor), as long
    as z is not an actual pole of m_+-(., 0).
    """
    sgn = _check_sign(sign)
    pt = as_point(p)
    m0 = eval_m(ctx, pt, 0.0, sgn)
    c, _, s, _ = _ode_cs(ctx, pt.z, x)
    return c + m0 * s


# ---------------------------------------------------------------------------
# Wronskian and structure checks
# ---------------------------------------------------------------------------

def wronskian_check(ctx: WeylContext, p, x_probe: float) -> float:
    """|W(psi_-, psi_+)(x_probe) + 1/g(z)|.

    The Wronskian is computed from the initial-value representation,
    including its derivative components, so the residual measures genuine
    integrator drift.  (Through the product representation the identity
    collapses to algebra that holds to machine precision no matter how wrong
    the trajectory is -- that form would test nothing.)
    """
    pt = as_point(p)
    m_plus = eval_m(ctx, pt, 0.0, +1)
    m_minus = eval_m(ctx, pt, 0.0, -1)
    c, cp, s, sp = _ode_cs(ctx, pt.z, x_probe)
    psi_p, dpsi_p = c + m_plus * s, cp + m_plus * sp
    psi_m, dpsi_m = c + m_minus * s, cp + m_minus * sp
    w = psi_m * dpsi_p - dpsi_m * psi_p
    g = eval_green(ctx, pt)
    return float(abs(w + 1.0 / g))


def structural_identity_check(ctx: WeylContext, p, x: float,
                              h: float = 1e-2) -> float:
    """Residual |G N + H^2 - Y| with N = (p - z) G - (1/2) d2G/dx2.

    The second x-derivative of G is taken by a five-point central stencil on
    the trajectory, so the check is an independent consistency probe of the
    flow, not an algebraic identity.
    """
    pt = as_point(p)
    z = pt.z
    if not (ctx.trajectory.x_min + 2 * h <= x <= ctx.trajectory.x_max - 2 * h):
        raise ValueError("x = %g too close to the trajectory boundary for a "
                         "width-%g stencil" % (x, h))
    g_at = lambda t: eval_G(ctx, pt, t)
    d2g = (-g_at(x - 2 * h) + 16 * g_at(x - h) - 30 * g_at(x)
           + 16 * g_at(x + h) - g_at(x + 2 * h)) / (12.0 * h * h)
    pval = float(ctx.p_of(x))
    g = g_at(x)
    n_val = (pval - z) * g - 0.5 * d2g
    h_val = eval_H(ctx, pt, x)
    y = eval_Y(ctx.band, pt)
    return float(abs(g * n_val + h_val * h_val - y))


# ---------------------------------------------------------------------------
# pole classification
# ---------------------------------------------------------------------------

class PoleTag(str, Enum):
    M_PLUS = "M_plus"
    M_MINUS = "M_minus"
    EDGE_MHAT = "edge_Mhat"


@dataclass(frozen=True)
class PoleClassification:
    """Per-gap ownership of the divisor pole at x = 0."""

    tags: tuple

    def __iter__(self):
        return iter(self.tags)


_EDGE_REL = 1e-12
_AMBIGUOUS_TOL = 1e-5


def classify_poles(ctx: WeylContext) -> PoleClassification:
    """Tag each divisor point: pole of m+, pole of m-, or edge (both roots).

    Interior mu_j: the sign whose numerator H +- Y^{1/2} survives keeps the
    pole.  On an honest trajectory H(mu_j, 0) = sigma_j Y^{1/2}(mu_j), so the
    tag follows sigma_j; the comparison is still made numerically, and if
    both numerators are tiny while mu_j is nominally interior the divisor
    data is inconsistent -> AmbiguousPole.
    """
    tags = []
    mu = ctx.trajectory.mu_at(0.0)
    for j in range(ctx.band.gap_count):
        lo, hi = ctx.band.gaps[j]
        width = hi - lo
        if min(mu[j] - lo, hi - mu[j]) <= _EDGE_REL * width:
            tags.append(PoleTag.EDGE_MHAT)
            continue
        zj = complex(mu[j])
        h = eval_H(ctx, zj, 0.0)
        sq = eval_sqrtY(ctx.band, zj)
        a = abs(h + sq)   # numerator of m+
        b = abs(h - sq)   # numerator of m-
        scale = max(1.0, abs(sq))
        if max(a, b) < _AMBIGUOUS_TOL * scale:
            raise AmbiguousPole(
                "both Weyl numerators vanish at mu_%d = %g (|H+Y|=%.2g, "
                "|H-Y|=%.2g); divisor data degenerate" % (j + 1, mu[j], a, b))
        tags.append(PoleTag.M_PLUS if a > b else PoleTag.M_MINUS)
    return PoleClassification(tuple(tags))


# ---------------------------------------------------------------------------
# probe-sweep export
# ---------------------------------------------------------------------------

def probe_csv(ctx: WeylContext, points, xs, path) -> None:
    """CSV sweep of psi_+-, m_+, g over points x positions."""
    header = ("re_z,im_z,side,x,re_psi_plus,im_psi_plus,re_psi_minus,"
              "im_psi_minus,re_m_plus,im_m_plus,re_g,im_g")
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for pt in points:
            pt = as_point(pt)
            g = eval_green(ctx, pt)
            for x in xs:
                pp = eval_psi_product(ctx, pt, float(x), +1)
                pm = eval_psi_product(ctx, pt, float(x), -1)
                mp = eval_m(ctx, pt, float(x), +1)
                row = [f17(pt.z.real), f17(pt.z.imag), pt.side.value, f17(x),
                       f17(pp.real), f17(pp.imag), f17(pm.real), f17(pm.imag),
                       f17(mp.real), f17(mp.imag), f17(g.real), f17(g.imag)]
                fh.write(",".join(row) + "\n")
