"""Divisor flow: integration, confinement, trace formula, recurrence."""

import math

import numpy as np
import pytest

from levitan import BandStructure, eval_sqrtY
from levitan.dubrovin import (
    DirichletDivisor,
    DivisorTrajectory,
    integrate_dubrovin,
    potential_on,
    recurrence_diagnostic,
    trace_potential,
    trajectory_to_csv,
)
from levitan.errors import DegenerateGap, StepTooLarge, WindowTooShort


ONE_GAP_DMU0 = 1.2247448713915892  # sqrt(1.5): hand-evaluated flow at mu=1.5


@pytest.fixture(scope="module")
def one_gap_traj(one_gap_band):
    div = DirichletDivisor(((1.5, 1),))
    return integrate_dubrovin(one_gap_band, div, -10.0, 10.0, step=0.01,
                              tol=1e-12)


def raw_flow_rhs(band, mu, sigma):
    """Independent oracle: the raw (singular) flow evaluated directly from
    Y^{1/2} and the z-derivative of the divisor product."""
    n = len(mu)
    out = np.empty(n)
    for j in range(n):
        dg = 1.0
        for k in range(n):
            if k != j:
                dg *= mu[j] - mu[k]
        dg /= band.gap_norm
        y = eval_sqrtY(band, complex(mu[j]))
        assert y.imag == 0.0
        out[j] = -2.0 * sigma[j] * y.real / dg
    return out


# ---------------------------------------------------------------------------
# against the raw flow
# ---------------------------------------------------------------------------

def test_first_derivative_matches_raw_flow(one_gap_band, one_gap_traj):
    oracle = raw_flow_rhs(one_gap_band, np.array([1.5]), np.array([1]))[0]
    assert oracle == pytest.approx(ONE_GAP_DMU0, rel=1e-14)
    i0 = np.searchsorted(one_gap_traj.x_grid, 0.0)
    th, dth = one_gap_traj.theta[i0], one_gap_traj.dtheta[i0]
    dmu = float(one_gap_band.gap_half[0] * math.sin(th[0]) * dth[0])
    assert dmu == pytest.approx(oracle, rel=1e-12)


def test_tiny_step_rk4_reference(one_gap_band, one_gap_traj):
    # classical RK4 on the raw mu-form, fixed step, valid while mu stays
    # interior (sigma frozen at +1 on this span)
    h = 1e-5
    mu = np.array([1.5])
    sig = np.array([1])
    for _ in range(20000):  # to x = 0.2
        k1 = raw_flow_rhs(one_gap_band, mu, sig)
        k2 = raw_flow_rhs(one_gap_band, mu + 0.5 * h * k1, sig)
        k3 = raw_flow_rhs(one_gap_band, mu + 0.5 * h * k2, sig)
        k4 = raw_flow_rhs(one_gap_band, mu + h * k3, sig)
        mu = mu + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    got = one_gap_traj.mu_at(0.2)[0]
    assert got == pytest.approx(mu[0], abs=1e-9)


# ---------------------------------------------------------------------------
# edges and confinement
# ---------------------------------------------------------------------------

def test_edge_start_is_regular(one_gap_band):
    for mu0, sigma_right, direction in ((1.0, 1, +1.0), (2.0, -1, -1.0)):
        div = DirichletDivisor(((mu0, 1),))
        tr = integrate_dubrovin(one_gap_band, div, -0.5, 1.0, step=0.01,
                                tol=1e-12)
        assert tr.mu_at(0.0)[0] == pytest.approx(mu0, abs=1e-14)
        assert tr.sigma_at(0.0)[0] == sigma_right
        # the flow leaves the edge into the interior immediately
        assert direction * (tr.mu_at(0.05)[0] - mu0) > 0.0
        assert np.all(tr.mu_grid >= 1.0) and np.all(tr.mu_grid <= 2.0)


def test_confinement_random_n3(rng):
    band = BandStructure((0.3, 1.1, 1.4, 2.9, 3.1, 5.0, 5.6))
    div = DirichletDivisor.random_in_gaps(band, rng)
    tr = integrate_dubrovin(band, div, -10.0, 10.0, step=0.05, tol=1e-10)
    lo = band.edge_array[1::2]
    hi = band.edge_array[2::2]
    assert np.all(tr.mu_grid >= lo) and np.all(tr.mu_grid <= hi)
    # and on a dense off-grid sweep through the interpolant
    xs = np.linspace(-10.0, 10.0, 2011)
    mus = tr.mu_at(xs)
    assert np.all(mus >= lo) and np.all(mus <= hi)


def test_reversibility(one_gap_band, one_gap_traj):
    tol = 1e-12
    div_end = one_gap_traj.divisor_at(2.0)
    back = integrate_dubrovin(one_gap_band, div_end, -2.0, 0.0, step=0.01,
                              tol=tol)
    mu0 = back.mu_at(-2.0)[0]
    assert abs(mu0 - 1.5) <= 10.0 * max(tol, 1e-13)


def test_interpolation_order(one_gap_band):
    div = DirichletDivisor(((1.5, 1),))
    ref = integrate_dubrovin(one_gap_band, div, 0.0, 2.0, step=0.0125,
                             tol=1e-13)
    xs = np.linspace(0.013, 1.987, 301)  # off-grid points
    errs = []
    for step in (0.2, 0.1):
        tr = integrate_dubrovin(one_gap_band, div, 0.0, 2.0, step=step,
                                tol=1e-13)
        errs.append(np.abs(tr.mu_at(xs) - ref.mu_at(xs)).max())
    ratio = errs[0] / errs[1]
    assert 6.0 < ratio < 40.0  # cubic Hermite: nominally 16x per halving


def test_step_too_large(one_gap_band):
    div = DirichletDivisor(((1.5, 1),))
    with pytest.raises(StepTooLarge):
        integrate_dubrovin(one_gap_band, div, -1.0, 1.0, step=1.0, tol=1e-10)


def test_degenerate_gap():
    band = BandStructure((0.0, 1.0, 1.0 + 2.5e-13))
    div = DirichletDivisor(((1.0 + 1e-13, 1),))
    with pytest.raises(DegenerateGap):
        integrate_dubrovin(band, div, -1.0, 1.0, step=0.01, tol=1e-10)


def test_divisor_validation(one_gap_band):
    with pytest.raises(ValueError):
        DirichletDivisor(((1.5, 2),))
    with pytest.raises(ValueError):
        DirichletDivisor(((0.5, 1),)).validate_against(one_gap_band)
    with pytest.raises(ValueError):
        DirichletDivisor(()).validate_against(one_gap_band)


# ---------------------------------------------------------------------------
# trace formula
# ---------------------------------------------------------------------------

def test_trace_midpoint_divisor(n2_band):
    div = DirichletDivisor.midpoints(n2_band)
    tr = integrate_dubrovin(n2_band, div, 0.0, 0.0, step=0.01, tol=1e-10)
    p = trace_potential(n2_band, tr)
    assert p.p_values[0] == pytest.approx(n2_band.edges[0], abs=1e-12)


def test_trace_lower_edge_divisor(n2_band):
    div = DirichletDivisor(tuple((lo, 1) for lo, _ in n2_band.gaps))
    tr = integrate_dubrovin(n2_band, div, 0.0, 0.0, step=0.01, tol=1e-10)
    p = trace_potential(n2_band, tr)
    gap_width_sum = sum(hi - lo for lo, hi in n2_band.gaps)
    assert p.p_values[0] == pytest.approx(n2_band.edges[0] + gap_width_sum,
                                          rel=1e-14)
    assert p.p_values[0] == pytest.approx(p.p_upper, rel=1e-14)


def test_trace_one_gap_hand_value(one_gap_band, one_gap_traj):
    p = trace_potential(one_gap_band, one_gap_traj)
    i0 = np.searchsorted(one_gap_traj.x_grid, 0.0)
    assert p.p_values[i0] == pytest.approx(3.0 - 2.0 * 1.5, abs=1e-13)
    assert p.trace_constant == 3.0
    assert np.all(p.p_values >= p.p_lower - 1e-12)
    assert np.all(p.p_values <= p.p_upper + 1e-12)
    # spline evaluation agrees with the grid samples
    assert potential_on(one_gap_band, one_gap_traj,
                        one_gap_traj.x_grid[::37]) == pytest.approx(
        p.p_values[::37], abs=1e-12)


def test_free_background_trace(free_band):
    tr = integrate_dubrovin(free_band, DirichletDivisor(()), -1.0, 1.0,
                            step=0.1, tol=1e-10)
    assert tr.mu_grid.shape == (21, 0)
    p = trace_potential(free_band, tr)
    assert np.all(p.p_values == 0.0)


# ---------------------------------------------------------------------------
# sigma bookkeeping
# ---------------------------------------------------------------------------

def test_sigma_flips_only_at_touches(one_gap_traj):
    sig = one_gap_traj.sigma_grid[:, 0]
    mu = one_gap_traj.mu_grid[:, 0]
    flips = np.nonzero(np.diff(sig))[0]
    assert len(flips) > 4  # several oscillations in the window
    for i in flips:
        # at a flip the divisor is within a step^2 neighborhood of an edge
        assert min(abs(mu[i] - 1.0), abs(mu[i] - 2.0),
                   abs(mu[i + 1] - 1.0), abs(mu[i + 1] - 2.0)) < 1e-3
    # strictly monotone between consecutive flips
    for a, b in zip(flips[:-1], flips[1:]):
        seg = np.diff(mu[a + 1:b + 1])
        assert np.all(seg > 0.0) or np.all(seg < 0.0)


def test_touch_points_match_theta_levels(one_gap_traj):
    lows = one_gap_traj.touch_points(0, "lower")
    ups = one_gap_traj.touch_points(0, "upper")
    assert len(lows) and len(ups)
    for t in lows:
        assert one_gap_traj.mu_at(t)[0] == pytest.approx(1.0, abs=1e-8)
    for t in ups:
        assert one_gap_traj.mu_at(t)[0] == pytest.approx(2.0, abs=1e-8)
    # alternation: between two touches of one edge there is one of the other
    both = np.sort(np.concatenate([lows, ups]))
    kinds = ["l" if t in lows else "u" for t in both]
    assert all(a != b for a, b in zip(kinds, kinds[1:]))


def test_mirrored_trajectory(one_gap_traj):
    mir = one_gap_traj.mirrored()
    for x in (-3.2, -0.7, 0.0, 1.9):
        assert mir.mu_at(x)[0] == pytest.approx(one_gap_traj.mu_at(-x)[0],
                                                abs=1e-12)
        assert mir.sigma_at(x)[0] == -one_gap_traj.sigma_at(-x)[0] or \
            abs(math.sin(one_gap_traj.theta_at(-x)[0])) < 1e-9
    again = mir.mirrored()
    assert np.allclose(again.theta, one_gap_traj.theta, atol=0.0)


# ---------------------------------------------------------------------------
# recurrence diagnostic
# ---------------------------------------------------------------------------

def test_recurrence_finds_one_gap_period(one_gap_traj):
    rep = recurrence_diagnostic(one_gap_traj, tolerance=1e-3)
    assert rep.slowest_period == pytest.approx(2.7, abs=0.5)
    assert rep.candidates, "no almost-period found"
    taus = [t for t, _ in rep.candidates]
    defects = [d for _, d in rep.candidates]
    assert min(defects) < 1e-3
    # candidates cluster near multiples of the fundamental period
    base = taus[0]
    assert any(abs(t - 2 * base) < 0.1 for t in taus[1:])


def test_recurrence_window_too_short(one_gap_band):
    div = DirichletDivisor(((1.5, 1),))
    tr = integrate_dubrovin(one_gap_band, div, -1.0, 1.0, step=0.01, tol=1e-10)
    with pytest.raises(WindowTooShort):
        recurrence_diagnostic(tr, tolerance=1e-3)


def test_recurrence_rejects_noise(one_gap_band, rng):
    x = np.arange(-15.0, 15.0 + 1e-9, 0.05)
    theta = np.cumsum(rng.uniform(0.0, 0.3, size=(len(x), 1)), axis=0)
    tr = DivisorTrajectory(one_gap_band, x, theta, np.ones_like(theta))
    rep = recurrence_diagnostic(tr, tolerance=1e-6)
    assert rep.candidates == ()


def test_recurrence_constant_trajectory(free_band):
    tr = integrate_dubrovin(free_band, DirichletDivisor(()), -2.0, 2.0,
                            step=0.1, tol=1e-10)
    rep = recurrence_diagnostic(tr, tolerance=1e-6)
    assert len(rep.candidates) > 0
    assert all(d == 0.0 for _, d in rep.candidates)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def test_csv_format(tmp_path, one_gap_band):
    div = DirichletDivisor(((1.5, 1),))
    tr = integrate_dubrovin(one_gap_band, div, -0.2, 0.2, step=0.1, tol=1e-10)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(one_gap_band, tr, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "x,theta_1,mu_1,sigma_1,p"
    assert len(lines) == 1 + len(tr.x_grid)
    fields = lines[3].split(",")  # the x = 0 row
    assert float(fields[0]) == 0.0
    assert float(fields[2]) == tr.mu_grid[2, 0]   # 17 digits round-trip
    assert fields[3] in ("1", "-1")
