import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from outage_cr.channel import PointMass, RayleighIid
from outage_cr.cr import (
    CrOptions,
    CrPoint,
    JointSource,
    TestChannel,
    binary_entropy,
    cr_capacity,
    cr_capacity_bruteforce,
    cr_curve,
    dsbs,
    eta_outage_cr_capacity,
    induced_quantities,
    load_source_csv,
    simplex_grid,
    write_source_csv,
)
from outage_cr.outage import OutageSpec, siso_outage_capacity, rayleigh_gain_quantile
from outage_cr.rng import derive

INDEP = JointSource([[0.25, 0.25], [0.25, 0.25]])
EQUAL = JointSource([[0.5, 0.0], [0.0, 0.5]])


def test_joint_source_validation():
    with pytest.raises(ValueError):
        JointSource([[0.5, 0.6], [0.0, 0.0]])
    with pytest.raises(ValueError, match="all-zero"):
        JointSource([[0.5, 0.5], [0.0, 0.0]])
    with pytest.raises(ValueError):
        JointSource([0.5, 0.5])


def test_dsbs_entropies():
    s = dsbs(0.1)
    assert s.h_x == pytest.approx(1.0)
    assert s.h_x_given_y == pytest.approx(binary_entropy(0.1))
    assert s.i_xy == pytest.approx(1 - binary_entropy(0.1))


def test_test_channel_validation():
    with pytest.raises(ValueError):
        TestChannel([[0.5, 0.6]])
    with pytest.raises(ValueError, match="u_card"):
        TestChannel([[1, 0, 0, 0], [0, 1, 0, 0]])


def test_crpoint_rejects_infeasible():
    with pytest.raises(ValueError):
        CrPoint(0.1, 0.5, TestChannel([[1.0, 0.0], [0.0, 1.0]]), 0.2)


def test_induced_quantities_examples():
    ident = TestChannel(np.eye(2))
    iux, iuy = induced_quantities(dsbs(0.1), ident)
    assert iux == pytest.approx(1.0)
    assert iuy == pytest.approx(1 - binary_entropy(0.1))
    assert induced_quantities(dsbs(0.1), TestChannel([[0.3, 0.7], [0.3, 0.7]])) == pytest.approx((0, 0))
    ch = TestChannel([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
    a, b = induced_quantities(EQUAL, ch)
    assert a == pytest.approx(b)


def test_cr_capacity_trivial_cases():
    assert cr_capacity(INDEP, 0.3).cr_rate == pytest.approx(0.3, abs=1e-6)
    assert cr_capacity(EQUAL, 0.0).cr_rate == pytest.approx(1.0, abs=1e-9)
    s = dsbs(0.1)
    assert cr_capacity(s, s.h_x_given_y + 0.01).cr_rate == pytest.approx(1.0, abs=1e-9)


def test_cr_capacity_matches_bruteforce_dsbs():
    s = dsbs(0.1)
    opt = cr_capacity(s, 0.2, CrOptions(seed=0))
    oracle = cr_capacity_bruteforce(s, 0.2, 0.02)
    assert abs(opt.cr_rate - oracle.cr_rate) <= 0.02
    assert opt.cr_rate - opt.iuy <= 0.2 + 1e-9


def test_bruteforce_trivial_cases_within_grid_step():
    assert cr_capacity_bruteforce(INDEP, 0.3, 0.05).cr_rate == pytest.approx(0.3, abs=0.05)
    assert cr_capacity_bruteforce(EQUAL, 0.0, 0.05).cr_rate == pytest.approx(1.0, abs=1e-9)
    s = dsbs(0.1)
    assert cr_capacity_bruteforce(s, s.h_x_given_y, 0.05).cr_rate == pytest.approx(1.0, abs=1e-9)


def test_bruteforce_refinement_nondecreasing():
    s = dsbs(0.1)
    coarse = cr_capacity_bruteforce(s, 0.2, 0.1, u_card=2)
    fine = cr_capacity_bruteforce(s, 0.2, 0.05, u_card=2)
    assert fine.cr_rate >= coarse.cr_rate - 1e-12


def test_bruteforce_guard():
    with pytest.raises(ValueError):
        cr_capacity_bruteforce(JointSource(np.full((4, 2), 1 / 8)), 0.2)


def test_simplex_grid():
    g = simplex_grid(3, 0.25)
    assert len(g) == 15 and np.allclose(g.sum(axis=1), 1)
    with pytest.raises(ValueError):
        simplex_grid(3, 0.3)


def test_cr_curve_monotone_and_endpoints():
    s = dsbs(0.1)
    grid = np.linspace(0, s.h_x_given_y, 6)
    pts = cr_curve(s, grid, CrOptions(seed=1, restarts=8))
    rates = [p.cr_rate for p in pts]
    assert all(b >= a - 1e-9 for a, b in zip(rates, rates[1:]))
    assert rates[-1] == pytest.approx(1.0, abs=1e-9)
    assert cr_curve(INDEP, [0.0])[0].cr_rate == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(ValueError):
        cr_curve(s, [0.3, 0.1])


def test_cr_capacity_deterministic_and_thread_invariant():
    s = dsbs(0.2)
    a = cr_capacity(s, 0.15, CrOptions(seed=4, restarts=6, threads=1))
    b = cr_capacity(s, 0.15, CrOptions(seed=4, restarts=6, threads=3))
    assert a.cr_rate == b.cr_rate and np.array_equal(a.channel.rows, b.channel.rows)


def test_relabeling_symmetry():
    s = JointSource([[0.3, 0.1], [0.05, 0.25], [0.1, 0.2]])
    pt = cr_capacity(s, 0.25, CrOptions(seed=2, restarts=6))
    perm = np.random.default_rng(0).permutation(pt.channel.u_card)
    swapped = TestChannel(pt.channel.rows[:, perm])
    assert induced_quantities(s, swapped) == pytest.approx(induced_quantities(s, pt.channel), abs=1e-12)


def test_source_csv_roundtrip(tmp_path):
    s = JointSource([[0.1, 0.2, 0.05], [0.3, 0.15, 0.2]], ("a", "b"), ("u", "v", "w"))
    path = tmp_path / "src.csv"
    write_source_csv(s, path)
    back = load_source_csv(path)
    assert np.array_equal(back.pmf, s.pmf) and back.x_labels == s.x_labels and back.y_labels == s.y_labels


def test_source_csv_bad_field(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x\\y,0,1\n0,0.5,abc\n1,0.25,0.25\n")
    with pytest.raises(ValueError, match=":2:"):
        load_source_csv(path)


def test_eta_outage_cr_point_mass_saturates():
    s = dsbs(0.1)
    ens = PointMass([[3.0]])  # log2(10) > H(X|Y)
    pt = eta_outage_cr_capacity(s, ens, OutageSpec(eta=0.1, power=1.0), derive(0, "pm"))
    assert pt.cr_rate == pytest.approx(1.0, abs=1e-9)


def test_eta_outage_cr_independent_source():
    ens = PointMass([[0.5]])
    pt = eta_outage_cr_capacity(INDEP, ens, OutageSpec(eta=0.1, power=1.0), derive(0, "ind"))
    assert pt.cr_rate == pytest.approx(min(np.log2(1.25), 1.0), abs=1e-6)


@pytest.mark.slow
def test_eta_outage_cr_rayleigh_siso():
    s = dsbs(0.1)
    spec = OutageSpec(eta=0.1, power=10.0, n_state_samples=20_000)
    pt = eta_outage_cr_capacity(s, RayleighIid(1, 1), spec, derive(0, "ray"))
    c = siso_outage_capacity(0.1, 10.0, 1.0, gain_quantile=rayleigh_gain_quantile)
    assert pt.comm_rate_c == pytest.approx(c, abs=0.05)
    assert pt.cr_rate == pytest.approx(1.0, abs=1e-9)  # c > H(X|Y) = 0.469


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(0.0, 1.0))
def test_cr_capacity_bounds_and_feasibility(seed, c):
    rng = np.random.default_rng(seed)
    s = JointSource(rng.dirichlet(np.ones(4)).reshape(2, 2) * (1 - 1e-12) + 1e-12 / 4)
    pt = cr_capacity(s, c, CrOptions(seed=seed % 100, restarts=4))
    assert -1e-12 <= pt.cr_rate <= s.h_x + 1e-9
    iux, iuy = induced_quantities(s, pt.channel)
    assert iux - iuy <= c + 1e-9
    if c >= s.h_x_given_y:
        assert pt.cr_rate == pytest.approx(s.h_x, abs=1e-9)
