"""Transformation-kernel tests: profiles, edge amplitudes, the D sum, the
Volterra solve, decay bounds, and the two independent Jost routes."""

import itertools
import math

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import periodic_edges
from levitan.dubrovin import DirichletDivisor, DivisorTrajectory, integrate_dubrovin
from levitan.errors import ExtrapolationFailure, MomentViolation, NoConvergence
from levitan.kernel import (
    GridParams,
    PerturbationProfile,
    band_c1,
    d_bound,
    edge_amplitudes,
    eval_D,
    in_forcing_domain,
    in_interaction_domain,
    jost_direct,
    jost_from_kernel,
    kernel_bound_check,
    moment_check,
    residue_f_plus,
    schrodinger_residual,
    solve_kernel,
)
from levitan.spectral import BandStructure, SpectralPoint
from levitan.weyl import WeylContext, eval_G, eval_psi_product, psi_on_grid
from levitan._numerics import richardson


BUMP = PerturbationProfile.gaussian_bump(0.2, 0.0, 0.8)
BUMP_NARROW = PerturbationProfile.gaussian_bump(0.25, 0.0, 0.5)


@pytest.fixture(scope="module")
def kfree():
    band = BandStructure((0.0,))
    traj = integrate_dubrovin(band, DirichletDivisor(()), -6.0, 14.0,
                              step=0.05, tol=1e-10)
    return WeylContext(band, traj)


@pytest.fixture(scope="module")
def kgap():
    band = BandStructure((0.0, 1.0, 2.0))
    traj = integrate_dubrovin(band, DirichletDivisor(((1.5, 1),)),
                              -16.0, 16.0, step=0.01, tol=1e-11)
    return WeylContext(band, traj)


@pytest.fixture(scope="module")
def kgap_sym():
    # divisor starting on the gap edge: theta(0) = 0, so the flow is even in
    # x and the problem coincides with its own mirror image
    band = BandStructure((0.0, 1.0, 2.0))
    traj = integrate_dubrovin(band, DirichletDivisor(((1.0, 1),)),
                              -10.0, 10.0, step=0.01, tol=1e-11)
    return WeylContext(band, traj)


@pytest.fixture(scope="module")
def kn2():
    band = BandStructure(periodic_edges(2))
    div = DirichletDivisor(((1.0, 1), (4.0, -1)))
    traj = integrate_dubrovin(band, div, -3.0, 3.0, step=0.02, tol=1e-10)
    return WeylContext(band, traj)


# ---------------------------------------------------------------------------
# perturbation profiles
# ---------------------------------------------------------------------------

def test_gaussian_moment_closed_form():
    # int (1+x^2) A exp(-(x-c)^2 / 2w^2) dx = A sqrt(2 pi) w (1 + c^2 + w^2)
    cases = [(1.0, 0.0, 1.0), (0.5, 1.2, 0.7)]
    for amp, c, w in cases:
        pert = PerturbationProfile.gaussian_bump(amp, c, w)
        expected = amp * math.sqrt(2.0 * math.pi) * w * (1.0 + c * c + w * w)
        assert pert.moment_value == pytest.approx(expected, rel=1e-9)


def test_moment_of_zero_profile():
    assert moment_check(PerturbationProfile.zero(), (-5.0, 5.0)) == 0.0


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_moment_slow_decay_grows_with_window():
    # q ~ 1/(1+|x|) has a non-integrable second moment: the report grows
    # without bound as the window widens (a flag for the caller, not an error)
    xs = np.linspace(-200.0, 200.0, 8001)
    vals = 1.0 / (1.0 + np.abs(xs))
    vals[0] = vals[-1] = 0.0
    pert = PerturbationProfile.from_table(xs, vals)
    m = [moment_check(pert, (-w, w)) for w in (10.0, 50.0, 150.0)]
    assert m[0] < m[1] < m[2]
    assert m[2] > 20.0 * m[0]


def test_compact_poly_must_vanish_at_support_ends():
    with pytest.raises(ValueError):
        PerturbationProfile.compact_poly((1.0, 0.0, 1.0), (-1.0, 1.0))
    pert = PerturbationProfile.compact_poly((-1.0, 0.0, 1.0), (-1.0, 1.0))
    assert pert(0.0) == pytest.approx(1.0)
    assert pert(2.0) == 0.0


def test_table_must_vanish_at_ends():
    with pytest.raises(ValueError):
        PerturbationProfile.from_table((0.0, 1.0), (0.5, 0.0))
    with pytest.raises(ValueError):
        PerturbationProfile.from_table((0.0, 1.0, 0.5), (0.0, 0.0, 0.0))


def test_mirrored_profiles_reflect():
    perts = [
        PerturbationProfile.gaussian_bump(0.3, 0.4, 0.6),
        PerturbationProfile.compact_poly((1.0, -0.5, -1.0, 0.5), (0.5, 1.0)),
        PerturbationProfile.from_table((-1.0, 0.0, 2.0), (0.0, 0.7, 0.0)),
    ]
    xs = np.linspace(-3.0, 3.0, 301)
    for pert in perts:
        np.testing.assert_allclose(pert.mirrored()(xs), pert(-xs), atol=1e-13)


# ---------------------------------------------------------------------------
# integration-domain predicates vs brute enumeration
# ---------------------------------------------------------------------------

def test_forcing_domain_matches_rotated_form():
    for x, s, t in itertools.product(range(-3, 4), repeat=3):
        rotated = (s >= x) and (2 * t >= x + s)
        assert in_forcing_domain(x, s, t) == rotated


def test_interaction_domain_matches_rotated_form():
    # rotated description: alpha = (y+t)/2 >= (x+s)/2 and 0 <= (t-y)/2 <= (s-x)/2
    for x, s, y, t in itertools.product(range(-3, 4), repeat=4):
        rotated = (s >= x) and (y + t >= x + s) and (0 <= t - y <= s - x)
        assert in_interaction_domain(x, s, y, t) == rotated


# ---------------------------------------------------------------------------
# edge amplitudes
# ---------------------------------------------------------------------------

def test_edge_phase_follows_touch_parity(kgap):
    # the limit phase factor is +1/-1 according to how many times the gap's
    # divisor point has hit the edge strictly between 0 and t
    traj = kgap.trajectory
    ts = np.linspace(-2.3, 11.7, 15)
    for k, kind in ((1, "lower"), (2, "upper")):
        a = edge_amplitudes(kgap, k, ts)
        for t, av in zip(ts, a):
            touches = traj.touch_points(0, kind, lo=min(t, 0.0), hi=max(t, 0.0))
            touches = touches[(np.abs(touches) > 1e-9)
                              & (np.abs(touches - t) > 1e-9)]
            mod = math.sqrt(abs(kgap.band.edges[k] - float(traj.mu_at(t)[0])))
            want = (-1.0) ** len(touches) * mod
            assert av == pytest.approx(want, abs=1e-10 * (1.0 + mod))


def test_ground_edge_amplitude_is_positive_modulus(kgap):
    ts = np.linspace(-2.0, 2.0, 9)
    a = edge_amplitudes(kgap, 0, ts)
    assert np.all(a.imag == 0.0)
    assert np.all(a.real > 0.0)


def test_edge_amplitudes_cached_and_copied(kgap):
    ts = np.array([0.25, 0.75])
    a = edge_amplitudes(kgap, 1, ts)
    a[0] = 123.0
    b = edge_amplitudes(kgap, 1, ts)
    assert b[0] != 123.0


def test_quartic_touch_fails_extrapolation():
    # theta = alpha x^2 makes mu graze the edge quartically; the limit phase
    # integral then diverges and the snap guard must refuse to guess
    band = BandStructure((0.0, 1.0, 2.0))
    xs = np.linspace(-0.5, 0.5, 101)
    traj = DivisorTrajectory(band, xs, (3.0 * xs ** 2)[:, None],
                             (6.0 * xs)[:, None])
    ctx = WeylContext(band, traj)
    with pytest.raises(ExtrapolationFailure):
        edge_amplitudes(ctx, 1, np.array([0.4]))


def test_residue_vanishes_at_touch(kgap_sym):
    # mu(0) sits exactly on E_1, so every edge-1 amplitude at position 0 is 0
    assert residue_f_plus(kgap_sym, 1, 0.0, 0.5, 0.8, -0.3) == 0.0
    assert residue_f_plus(kgap_sym, 1, 0.5, 0.0, 0.8, -0.3) == 0.0


def _y_prime(band, z):
    return -np.polyval(np.polyder(np.poly(band.edge_array)), z) / band.gap_norm ** 2


def test_residue_matches_eps_limit_oracle(kgap):
    # independent oracle: Richardson limit (in sqrt(delta)) of the full
    # expression G(z,0)^2 / Y'(z) * psi+ psi- psi+ psi- with z approaching
    # the edge through the adjacent band on the upper rim
    band = kgap.band
    octx = WeylContext(band, kgap.trajectory, eps_gap=1e-9, quad_tol=1e-5)
    x, y, r, s = 0.4, -0.9, 1.3, 0.7
    for k in (0, 1, 2):
        side = -1.0 if k % 2 == 1 else 1.0
        vals = []
        for j in range(4):
            z = SpectralPoint.upper(band.edges[k] + side * 1e-3 / 4 ** j)
            pp = [eval_psi_product(octx, z, t, +1) for t in (x, r)]
            pm = [eval_psi_product(octx, z, t, -1) for t in (y, s)]
            lit = (eval_G(octx, z, 0.0) ** 2 / _y_prime(band, z.z.real)
                   * pp[0] * pm[0] * pp[1] * pm[1])
            vals.append(-lit)
        lim, _ = richardson(np.array(vals), ratio=2.0)
        assert residue_f_plus(kgap, k, x, y, r, s) == pytest.approx(
            lim.real, abs=1e-6)
        assert abs(lim.imag) < 1e-6


# ---------------------------------------------------------------------------
# the D sum
# ---------------------------------------------------------------------------

def test_D_diagonal_is_minus_quarter(kfree, kgap, kn2, rng):
    for ctx, span in ((kfree, 5.0), (kgap, 11.0), (kn2, 2.5)):
        for _ in range(12):
            x, y = rng.uniform(-2.0, span, 2)
            assert eval_D(ctx, x, y, y, x, "+") == pytest.approx(
                -0.25, abs=1e-8)


def test_D_symmetry_is_exact(kgap, rng):
    for _ in range(12):
        x, y, r, s = rng.uniform(-2.0, 11.0, 4)
        assert eval_D(kgap, x, y, r, s, "+") - eval_D(kgap, y, x, s, r, "+") == 0.0


def test_D_bounded_by_edge_bookkeeping(kgap, kn2, rng):
    for ctx in (kgap, kn2):
        bound = d_bound(ctx.band)
        lo = ctx.trajectory.x_min + 0.1
        hi = ctx.trajectory.x_max - 0.1
        worst = max(abs(eval_D(ctx, *rng.uniform(lo, hi, 4), "+"))
                    for _ in range(40))
        assert worst <= bound + 1e-12
    assert band_c1(BandStructure((0.0,))) == 1.0


def test_D_minus_side_via_mirror(kgap_sym, rng):
    # the flow is its own mirror image here, so D- must equal D+ at the
    # reflected positions even though it is computed through a fresh
    # mirrored trajectory
    for _ in range(6):
        x, y, r, s = rng.uniform(-2.0, 2.0, 4)
        dm = eval_D(kgap_sym, x, y, r, s, "-")
        dp = eval_D(kgap_sym, -x, -y, -r, -s, "+")
        assert dm == pytest.approx(dp, abs=1e-9)


# ---------------------------------------------------------------------------
# the kernel solve
# ---------------------------------------------------------------------------

def test_zero_perturbation_gives_zero_kernel(kgap):
    grid = solve_kernel(kgap, PerturbationProfile.zero(), "+",
                        GridParams(x0=-1.0, h=0.1), tol=1e-12)
    assert grid.iterations == 1
    assert np.all(grid.values == 0.0)


def test_support_conventions(kgap):
    grid = solve_kernel(kgap, BUMP_NARROW, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-10)
    assert np.all(grid.values[np.triu_indices(grid.half_width + 1, k=1)] == 0.0)
    assert grid.k_at(0.5, 0.0) == 0.0
    assert grid.k_at(0.0, 2.0 * grid.x_max + 1.0) == 0.0


def test_diagonal_identity_second_order(kgap):
    errs = []
    for h in (0.1, 0.05, 0.025):
        grid = solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=h),
                            tol=1e-12)
        pos = grid.positions[:grid.half_width + 1]
        worst = max(
            abs(grid.values[i, 0]
                - 0.5 * quad(BUMP, x, BUMP.support[1], limit=200)[0])
            for i, x in enumerate(pos))
        errs.append(worst)
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(1.7 <= o <= 2.3 for o in orders)
    constant = errs[-1] / 0.025 ** 2
    assert np.isfinite(constant)


def test_tail_truncation_budget(kgap):
    grid = solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-10)
    tail = quad(lambda t: abs(BUMP(t)), grid.x_max, BUMP.support[1])[0]
    total = quad(lambda t: abs(BUMP(t)), grid.x0, BUMP.support[1],
                 points=[0.0], limit=200)[0]
    assert tail < 1e-12 * total


def test_no_convergence_reports_deltas(kgap):
    with pytest.raises(NoConvergence) as info:
        solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=0.1),
                     tol=1e-14, max_iter=1)
    assert len(info.value.deltas) == 1


def test_moment_violation():
    band = BandStructure((0.0,))
    traj = integrate_dubrovin(band, DirichletDivisor(()), -1.0, 3.0, step=0.1)
    ctx = WeylContext(band, traj)
    pert = PerturbationProfile.gaussian_bump(1.0, 0.0, 0.3)
    pert.__dict__["moment_value"] = math.inf
    with pytest.raises(MomentViolation):
        solve_kernel(ctx, pert, "+", GridParams(x0=-1.0, h=0.1))


def test_csv_and_metadata_roundtrip(kgap, tmp_path):
    grid = solve_kernel(kgap, BUMP_NARROW, "+", GridParams(x0=-1.0, h=0.1),
                        tol=1e-10)
    csv = tmp_path / "k.csv"
    meta = tmp_path / "k.json"
    grid.to_csv(csv)
    grid.write_metadata(meta)

    lines = csv.read_text().splitlines()
    assert lines[0] == "x,y,K"
    x, y, k = (float(v) for v in lines[1].split(","))
    assert k == grid.k_at(x, y)

    import json
    md = json.loads(meta.read_text())
    assert set(md) == {"iterations", "final_delta", "h", "X_max", "C_const"}
    assert md["h"] == 0.1

    grid2 = solve_kernel(kgap, BUMP_NARROW, "+", GridParams(x0=-1.0, h=0.1),
                         tol=1e-10)
    csv2 = tmp_path / "k2.csv"
    grid2.to_csv(csv2)
    assert csv.read_bytes() == csv2.read_bytes()


# ---------------------------------------------------------------------------
# decay bounds
# ---------------------------------------------------------------------------

def test_bound_report_passes_on_solved_kernel(kgap):
    grid = solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-11)
    report = kernel_bound_check(kgap, grid, BUMP)
    assert report.violations == []
    assert report.c_of_x_monotone
    assert report.c_const > 0.0
    assert report.c1_fitted > 0.0
    # C(x) starts at 2C e^{4C tail} and decays to the flat floor 2C
    assert report.c_of_x[-1, 1] == pytest.approx(2.0 * report.c_const, rel=1e-9)


def test_bound_check_catches_inflated_kernel(kgap):
    grid = solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-11)
    grid.values = grid.values * 50.0
    report = kernel_bound_check(kgap, grid, BUMP)
    assert len(report.violations) > 0


# ---------------------------------------------------------------------------
# Jost solutions, two routes
# ---------------------------------------------------------------------------

def test_jost_routes_agree_free(kfree):
    grid = solve_kernel(kfree, BUMP_NARROW, "+", GridParams(x0=-2.0, h=0.05),
                        tol=1e-10)
    for z in (SpectralPoint.upper(4.0), SpectralPoint(-1.0 + 0.0j)):
        for x in (-1.0, 0.0, 1.0):
            a = jost_from_kernel(kfree, grid, z, x, "+")
            b = jost_direct(kfree, BUMP_NARROW, z, x, "+")
            assert abs(a - b) <= 5e-3 * max(1.0, abs(b))


def test_jost_routes_agree_one_gap(kgap):
    grid = solve_kernel(kgap, BUMP_NARROW, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-10)
    for z in (SpectralPoint(-1.0 + 0.0j), SpectralPoint(-0.5 + 0.8j),
              SpectralPoint(2.5 + 0.4j)):
        for x in (-1.0, 0.0, 0.7):
            a = jost_from_kernel(kgap, grid, z, x, "+")
            b = jost_direct(kgap, BUMP_NARROW, z, x, "+")
            assert abs(a - b) <= 5e-3 * max(1.0, abs(b))


def test_jost_minus_side(kgap):
    grid = solve_kernel(kgap, BUMP_NARROW, "-", GridParams(x0=-1.5, h=0.05),
                        tol=1e-10)
    assert grid.side == "-"
    assert grid.k_at(0.0, 0.5) == 0.0
    assert grid.k_at(0.5, 0.0) != 0.0
    z = SpectralPoint(-1.0 + 0.0j)
    for x in (1.0, 0.0, -0.7):
        a = jost_from_kernel(kgap, grid, z, x, "-")
        b = jost_direct(kgap, BUMP_NARROW, z, x, "-")
        assert abs(a - b) <= 5e-3 * max(1.0, abs(b))
    with pytest.raises(ValueError):
        jost_from_kernel(kgap, grid, z, 0.0, "+")


def test_jost_equals_psi_beyond_support(kgap):
    grid = solve_kernel(kgap, BUMP_NARROW, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-10)
    z = SpectralPoint(-1.0 + 0.0j)
    x = grid.x_max + 0.5
    phi = jost_from_kernel(kgap, grid, z, x, "+")
    psi = eval_psi_product(kgap, z, x, +1)
    assert phi == pytest.approx(psi, rel=1e-10)


def test_jost_direct_trivial_single_iteration(kgap):
    z = SpectralPoint(-1.0 + 0.0j)
    val, deltas = jost_direct(kgap, PerturbationProfile.zero(), z, 0.3, "+",
                              diagnostics=True)
    assert len(deltas) == 1
    assert deltas[0] == 0.0
    assert val == pytest.approx(eval_psi_product(kgap, z, 0.3, +1), rel=1e-9)


def test_jost_direct_deltas_decay_geometrically(kgap):
    z = SpectralPoint(-1.0 + 0.0j)
    _, deltas = jost_direct(kgap, BUMP_NARROW, z, -0.5, "+", diagnostics=True)
    assert len(deltas) >= 3
    for a, b in zip(deltas[1:], deltas[2:]):
        if a < 1e-13:
            break
        assert b < 0.8 * a


# ---------------------------------------------------------------------------
# Schr residual
# ---------------------------------------------------------------------------

def test_residual_trivial_fixture_second_order(kgap):
    z = SpectralPoint(-1.0 + 0.0j)
    qz = PerturbationProfile.zero()
    ev = lambda x: eval_psi_product(kgap, z, x, +1)
    r1 = schrodinger_residual(kgap, qz, ev, z, (0.2, 0.4), 0.02)
    r2 = schrodinger_residual(kgap, qz, ev, z, (0.2, 0.4), 0.01)
    assert 3.5 <= r1 / r2 <= 4.5


def test_residual_end_to_end(kgap):
    grid = solve_kernel(kgap, BUMP, "+", GridParams(x0=-1.5, h=0.05),
                        tol=1e-11)
    z = SpectralPoint(-1.0 + 0.0j)
    ev = lambda x: jost_from_kernel(kgap, grid, z, x, "+")
    res = schrodinger_residual(kgap, BUMP, ev, z, (0.28, 0.32), 1e-3)
    assert res <= 1e-3
