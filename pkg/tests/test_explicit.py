"""Explicit piecewise-affine filter: synthesis, verification, lookup."""
import numpy as np
import pytest

from hullcert import cases
from hullcert.explicit import (Assumption2Violated, ExplicitController,
                               NoRegion, NotInRegion, OutsideHull,
                               UnresolvedRegion, eval_explicit,
                               interpolate_on_region, partition_hull)
from hullcert.optcore import solve_qp_projection
from hullcert.problem import DesiredInput, Hull, InputSet, QuadFunc, StackedMap


@pytest.fixture(scope="module")
def case3_controller():
    prob = cases.case3_problem()
    return prob, partition_hull(prob.stack, prob.hull, prob.input_set,
                                prob.u_des)


def test_case3_partition_has_three_regions(case3_controller):
    prob, ctrl = case3_controller
    assert len(ctrl.regions) == 3
    by_a = {r.a_set: r for r in ctrl.regions}
    assert set(by_a) == {(0,), (), (1,)}
    # saturated rows pin u to -(1.1 x1 + 1.9 x2) +- 1, the middle region
    # passes the desired input through untouched
    up = by_a[(1,)].law
    mid = by_a[()].law
    lo = by_a[(0,)].law
    assert np.allclose(up.F, [[-1.1, -1.9]], atol=1e-9)
    assert np.allclose(up.f, [1.0], atol=1e-9)
    assert np.allclose(mid.F, 0.0, atol=1e-12) and np.allclose(mid.f, 0.0)
    assert np.allclose(lo.F, [[-1.1, -1.9]], atol=1e-9)
    assert np.allclose(lo.f, [-1.0], atol=1e-9)
    assert all(r.b_set == () for r in ctrl.regions)


def test_case3_region_boundaries_are_the_switch_lines(case3_controller):
    _, ctrl = case3_controller
    mid = next(r for r in ctrl.regions if r.a_set == ())
    nrm = np.sqrt(1.1 ** 2 + 1.9 ** 2)
    want = np.array([1.1, 1.9]) / nrm
    hits = 0
    for row, off in zip(mid.rows, mid.offs):
        if np.allclose(np.abs(row), want, atol=1e-8):
            assert abs(off - 1.0 / nrm) < 1e-8
            hits += 1
    assert hits == 2  # one switch line on each side


def test_case3_explicit_matches_qp(case3_controller):
    prob, ctrl = case3_controller
    rng = np.random.default_rng(0)
    lams = rng.dirichlet(np.ones(prob.hull.N), size=300)
    for lam in lams:
        x = lam @ prob.hull.vertices
        ue = ctrl(x)
        uq = solve_qp_projection(prob.u_des(x), prob.stack.psi_at(x),
                                 prob.stack.delta_at(x), prob.input_set).u
        assert np.max(np.abs(ue - uq)) <= 1e-7


def test_laws_agree_on_shared_boundaries(case3_controller):
    _, ctrl = case3_controller
    pairs = 0
    for i, ra in enumerate(ctrl.regions):
        for rb in ctrl.regions[i + 1:]:
            for v in ra.vertices:
                if np.min(np.linalg.norm(rb.vertices - v, axis=1)) < 1e-7:
                    assert np.allclose(ra.law.u_at(v), rb.law.u_at(v),
                                       atol=1e-8)
                    pairs += 1
    assert pairs >= 2  # the middle region touches both saturated ones


def test_multiplier_laws_nonnegative_on_their_regions(case3_controller):
    _, ctrl = case3_controller
    for region in ctrl.regions:
        for v in region.vertices:
            lam = region.law.lam_at(v)
            nu = region.law.nu_at(v)
            if lam.size:
                assert lam.min() >= -1e-9
            if nu.size:
                assert nu.min() >= -1e-9


def test_region_lookup(case3_controller):
    _, ctrl = case3_controller
    region = ctrl.region_at(np.zeros(2))
    assert region.a_set == ()
    with pytest.raises(OutsideHull):
        ctrl.region_at(np.array([5.0, 5.0]))
    empty = ExplicitController([], ctrl.hull_rows, ctrl.hull_offs,
                               ctrl.n, ctrl.m, ctrl.u_des)
    with pytest.raises(NoRegion):
        empty.region_at(np.zeros(2))


def test_interpolation_reproduces_the_affine_law(case3_controller):
    _, ctrl = case3_controller
    region = next(r for r in ctrl.regions if r.a_set == (1,))
    V = region.vertices
    U = np.array([region.law.u_at(v) for v in V])
    rng = np.random.default_rng(8)
    for _ in range(20):
        lam = rng.dirichlet(np.ones(V.shape[0]))
        x = lam @ V
        # whatever barycentric representation the LP picks, the blend must
        # equal the affine law
        got = interpolate_on_region(x, V, U)
        assert np.allclose(got, region.law.u_at(x), atol=1e-7)


def test_interpolation_rejects_outside_states(case3_controller):
    _, ctrl = case3_controller
    region = ctrl.regions[0]
    V = region.vertices
    U = np.array([region.law.u_at(v) for v in V])
    far = V.mean(axis=0) + 10.0
    with pytest.raises(NotInRegion):
        interpolate_on_region(far, V, U)
    with pytest.raises(ValueError, match="counts differ"):
        interpolate_on_region(V[0], V, U[:-1])


def test_input_bound_becomes_a_region():
    # shrink the hull, tighten the input box, and ask for more than the box
    # allows: one region rides the barrier row, the other the input bound
    prob = cases.case3_problem()
    hull = Hull(0.7 * prob.hull.vertices)
    box = InputSet(box=(np.array([-0.5]), np.array([0.5])))
    ud = DesiredInput(np.zeros((1, 2)), np.array([0.9]))
    ctrl = partition_hull(prob.stack, hull, box, ud)
    assert len(ctrl.regions) == 2
    by_b = {r.b_set: r for r in ctrl.regions}
    assert set(by_b) == {(), (0,)}
    clipped = by_b[(0,)].law
    assert np.allclose(clipped.F, 0.0, atol=1e-12)
    assert np.allclose(clipped.f, [0.5], atol=1e-9)
    assert np.allclose(clipped.nu0, [0.4], atol=1e-9)
    riding = by_b[()].law
    assert riding.a_set == (1,)
    assert np.allclose(riding.F, [[-1.1, -1.9]], atol=1e-9)
    # spot check against the QP
    for x in (np.array([0.1, 0.2]), np.array([-0.3, -0.1]), np.zeros(2)):
        uq = solve_qp_projection(ud(x), prob.stack.psi_at(x),
                                 prob.stack.delta_at(x), box).u
        assert np.allclose(ctrl(x), uq, atol=1e-8)


def test_duplicated_row_breaks_strict_complementarity():
    prob = cases.case3_problem()
    dup = StackedMap(psi=list(prob.stack.psi) + [list(prob.stack.psi[0])],
                     delta=list(prob.stack.delta) + [prob.stack.delta[0]])
    with pytest.raises(UnresolvedRegion, match="failed verification"):
        partition_hull(dup, prob.hull, prob.input_set, prob.u_des)


def test_incompatible_hull_is_reported_at_the_seed():
    prob = cases.case3_problem()
    big = Hull(2.0 * prob.hull.vertices)
    with pytest.raises(UnresolvedRegion, match="QP infeasible at seed"):
        partition_hull(prob.stack, big, prob.input_set, prob.u_des)


def test_assumption_checks():
    e1 = cases.example1_problem()
    with pytest.raises(Assumption2Violated, match="is not affine"):
        partition_hull(e1.stack, e1.hull, e1.input_set)

    # affine but state-dependent Psi
    hull = Hull(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    us = InputSet(box=(np.zeros(1), np.ones(1)))
    varying = StackedMap(
        psi=[[QuadFunc(c=np.array([1.0, 0.0]), d=1.0)]],
        delta=[QuadFunc(c=np.zeros(2), d=1.0)])
    with pytest.raises(Assumption2Violated, match="varies across the hull"):
        partition_hull(varying, hull, us)

    curved_delta = StackedMap(
        psi=[[QuadFunc(d=1.0, n=2)]],
        delta=[QuadFunc(Q=np.eye(2), d=1.0)])
    with pytest.raises(Assumption2Violated, match="delta row 0"):
        partition_hull(curved_delta, hull, us)

    p3 = cases.case3_problem()
    bad_des = DesiredInput(np.zeros((1, 1)), np.zeros(1))
    with pytest.raises(Assumption2Violated, match="wrong dimensions"):
        partition_hull(p3.stack, p3.hull, p3.input_set, bad_des)


def test_save_load_round_trip(tmp_path, case3_controller):
    prob, ctrl = case3_controller
    path = tmp_path / "explicit.json"
    ctrl.save(path)
    back = ExplicitController.load(path)
    assert len(back.regions) == len(ctrl.regions)
    assert back.meta == ctrl.meta
    rng = np.random.default_rng(3)
    for lam in rng.dirichlet(np.ones(prob.hull.N), size=40):
        x = lam @ prob.hull.vertices
        assert np.allclose(back(x), ctrl(x), atol=0.0)
        assert np.allclose(eval_explicit(back, x), ctrl(x), atol=0.0)
