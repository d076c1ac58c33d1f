"""End-to-end acceptance checks for the four worked studies.

Each test covers one headline claim: falsification on the scalar example,
certificate values on the heating and double-integrator cases, explicit
filter structure, closed-loop safety, and the randomized property sweeps.
Every test finishes with one printed PASS line and asserts its own runtime
budget.  Frozen numbers were derived with the margin LP / by hand before
being pinned here.
"""
from itertools import product
from time import perf_counter

import numpy as np
import pytest

from hullcert import cases
from hullcert.certificates import (BlendCert, certify, cpc_blend_joint,
                                   cpc_common, cpc_interval, endpoint_rule,
                                   pairwise_check)
from hullcert.curvature import concavity_witness, sign_cone
from hullcert.explicit import partition_hull
from hullcert.optcore import (LpProblem, solve_lp, solve_qp_projection)
from hullcert.oracle import (check_certificate, grid_scan, pointwise_margin,
                             sample_hull)
from hullcert.problem import Hull, InputSet, build_from_lti
from hullcert.sim import (ConstantController, Dynamics, ExplicitPwaController,
                          QpFilterController, integrate)


def _passed(label: str, t0: float, budget: float) -> None:
    elapsed = perf_counter() - t0
    assert elapsed < budget, f"{label}: {elapsed:.2f}s exceeds {budget}s"
    print(f"PASS {label} ({elapsed:.2f}s < {budget:.0f}s)")


def test_01_scalar_example_is_falsified_with_diagnostics():
    t0 = perf_counter()
    prob = cases.example1_problem()

    scan = grid_scan(prob.stack, prob.hull, prob.input_set)
    assert scan.n_samples == 61
    assert scan.min_margin <= -0.12
    assert abs(scan.argmin_x[0] - 1.5) <= 0.2
    margin_mid, _ = pointwise_margin(prob.stack, np.array([1.5]),
                                     prob.input_set)
    assert abs(margin_mid - (-0.1207)) <= 1e-3

    cert, diag = certify(prob.stack, prob.hull, prob.input_set,
                         vertex_inputs=cases.example1_reference_vertex_inputs())
    assert cert is None and not diag["certified"]
    by = {a["method"]: a for a in diag["attempts"]}
    assert "not sign-coherent" in by["cpc_interval"]["reason"]
    assert by["cpc_common"]["reason"] == "best common margin is negative"
    assert by["cpc_blend"]["reason"] == "joint margin is negative"
    _passed("scalar example falsified, all certificates decline", t0, 1.0)


def test_02_heating_one_sided_endpoint_and_interval():
    t0 = perf_counter()
    prob = cases.case1_problem()

    out_e = endpoint_rule(prob.stack, prob.hull, prob.input_set)
    assert out_e.valid
    assert np.allclose(out_e.certificate.lo, 1.0, atol=0.0)
    assert np.allclose(out_e.certificate.hi, 1.0, atol=0.0)

    out_i = cpc_interval(prob.stack, prob.hull, prob.input_set,
                         cases.case1_reference_vertex_inputs())
    assert out_i.valid
    assert np.allclose(out_i.certificate.lo, 0.78, atol=1e-12)
    assert np.allclose(out_i.certificate.hi, 1.0, atol=1e-12)

    # every input in the box keeps every sampled state feasible
    X, _, mode = sample_hull(prob.hull)
    assert mode == "box" and X.shape[0] == 11 ** 3
    aff = prob.stack.affine_arrays()
    psi = aff.psi_batch(X)        # [K, p, m]
    delta = aff.delta_batch(X)    # [K, p]
    axis = np.linspace(0.78, 1.0, 11)
    U = np.array(list(product(axis, axis, axis)))
    margins = np.einsum("kpm,jm->kjp", psi, U) + delta[:, None, :]
    assert margins.min() >= -1e-8
    _passed("heating endpoint u=(1,1,1) and interval [0.78,1]^3 verified "
            f"on {X.shape[0]}x{U.shape[0]} samples", t0, 2.0)


def test_03_heating_two_sided_common_input():
    t0 = perf_counter()
    prob = cases.case2_problem()

    out = cpc_common(prob.stack, prob.hull, prob.input_set)
    assert out.valid
    assert out.detail["lp_margin"] >= 0.33
    assert out.detail["lp_margin"] == pytest.approx(0.34, abs=1e-6)
    assert np.allclose(out.certificate.u, 0.95, atol=1e-6)

    witness = cases.case2_reference_witness()
    vm = np.array([prob.stack.psi_at(v) @ witness + prob.stack.delta_at(v)
                   for v in prob.hull.vertices])
    assert vm.shape == (8, 6)
    assert vm.min() >= -1e-9

    scan = grid_scan(prob.stack, prob.hull, prob.input_set)
    assert scan.n_samples == 11 ** 3
    assert scan.min_margin >= -1e-8
    _passed("two-sided heating: common input 0.95, witness 0.78 re-verified, "
            "scan clean", t0, 2.0)


def test_04_double_integrator_blend():
    t0 = perf_counter()
    prob = cases.case3_problem()

    out = cpc_blend_joint(prob.stack, prob.hull, prob.input_set)
    assert out.valid
    assert out.detail["lp_margin"] == pytest.approx(0.1, abs=1e-6)

    U = cases.case3_reference_vertex_inputs()
    vm = np.array([prob.stack.psi_at(v) @ u + prob.stack.delta_at(v)
                   for v, u in zip(prob.hull.vertices, U)])
    assert vm.min() >= -1e-9
    # constant Psi makes the pairwise coupling term vanish identically
    assert pairwise_check(prob.stack, prob.hull, U) == 0.0

    cert = BlendCert(U, float(vm.min()), 0.0)
    X, lams, mode = sample_hull(prob.hull, n_random=20000, mode="dirichlet")
    assert mode == "dirichlet" and X.shape[0] >= 20000
    chk = check_certificate(prob.stack, prob.hull, prob.input_set, cert,
                            points=X, lams=lams)
    assert chk["ok"]
    assert chk["min_residual"] >= -1e-8
    _passed(f"blend margin 0.1 and witness replay on {X.shape[0]} samples",
            t0, 5.0)


def test_05_explicit_filter_structure_and_exactness():
    t0 = perf_counter()
    prob = cases.case3_problem()
    ctrl = partition_hull(prob.stack, prob.hull, prob.input_set, prob.u_des)
    assert len(ctrl.regions) == 3

    # the two switch boundaries are 1.1 x1 + 1.9 x2 = +-1
    mid = next(r for r in ctrl.regions if r.a_set == ())
    normal = np.array([1.1, 1.9])
    scale = float(np.linalg.norm(normal))
    hits = []
    for row, off in zip(mid.rows, mid.offs):
        if np.allclose(np.abs(row) * scale, normal, atol=1e-8):
            assert abs(abs(off) * scale - 1.0) <= 1e-8
            hits.append(np.sign(row[0]))
    assert sorted(hits) == [-1.0, 1.0]

    rng = np.random.default_rng(0)
    worst = 0.0
    for lam in rng.dirichlet(np.ones(prob.hull.N), size=1000):
        x = lam @ prob.hull.vertices
        ue = ctrl(x)
        uq = solve_qp_projection(prob.u_des(x), prob.stack.psi_at(x),
                                 prob.stack.delta_at(x), prob.input_set).u
        worst = max(worst, float(np.max(np.abs(ue - uq))))
    assert worst <= 1e-7
    _passed(f"explicit filter: 3 regions, max |explicit-QP| {worst:.2e} "
            "over 1000 states", t0, 5.0)


def test_06_heating_rollouts_nominal_exits_filter_stays():
    t0 = perf_counter()
    prob = cases.case2_problem()
    dyn = cases.three_room_dynamics()
    rows = cases.cbf_rows("case2")
    rng = np.random.default_rng(7)
    x0s = rng.uniform(25.0, 30.0, size=(10, 3))

    nominal_min = []
    for x0 in x0s:
        traj = integrate(dyn, cases.nominal_room_controller(), x0,
                         T=40.0, dt=0.01, cbf_rows=rows)
        assert traj.completed
        nominal_min.append(traj.min_h())
    # the unfiltered law leaves the band from every start
    assert max(nominal_min) < 0.0

    for x0 in x0s:
        traj = integrate(dyn, ConstantController(cases.case2_reference_witness()),
                         x0, T=40.0, dt=0.01, cbf_rows=rows)
        assert traj.completed and traj.min_h() >= -1e-6

    filtered_min = []
    for x0 in x0s:
        ctrl = QpFilterController(prob.stack, prob.input_set,
                                  cases.nominal_room_desired())
        traj = integrate(dyn, ctrl, x0, T=40.0, dt=0.01, cbf_rows=rows)
        assert traj.completed
        filtered_min.append(traj.min_h())
    assert min(filtered_min) >= -1e-6
    _passed("heating rollouts: nominal exits "
            f"(min h {min(nominal_min):.3g}), witness and filter stay in "
            f"the band (min h {min(filtered_min):.3g})", t0, 10.0)


def test_07_double_integrator_explicit_rollouts():
    t0 = perf_counter()
    prob = cases.case3_problem()
    dyn = cases.case3_dynamics()
    rows = cases.cbf_rows("case3")
    explicit = partition_hull(prob.stack, prob.hull, prob.input_set,
                              prob.u_des)
    rng = np.random.default_rng(7)
    x0s = rng.dirichlet(np.ones(prob.hull.N), size=10) @ prob.hull.vertices

    deviation = 0.0
    for x0 in x0s:
        ctrl = ExplicitPwaController(explicit)
        traj = integrate(dyn, ctrl, x0, T=15.0, dt=0.01, cbf_rows=rows)
        assert traj.completed
        assert traj.min_h() >= -1e-6
        assert traj.inputs.min() >= -1.0 - 1e-9
        assert traj.inputs.max() <= 1.0 + 1e-9
        # the online QP reproduces the stored inputs along the same states
        qp = QpFilterController(prob.stack, prob.input_set, prob.u_des)
        for x, u in zip(traj.states[:-1], traj.inputs[:-1]):
            deviation = max(deviation,
                            float(np.max(np.abs(qp(x) - u))))
    assert deviation <= 1e-6
    _passed("explicit rollouts safe with admissible inputs, max per-step "
            f"|explicit-QP| {deviation:.2e}", t0, 10.0)


def test_08_randomized_property_sweeps():
    t0 = perf_counter()

    # margins of cone-aligned inputs are concave across vertex mixtures
    for name in cases.CASE_NAMES:
        prob = cases.get_problem(name)
        cone = sign_cone(prob.stack)
        blo, bhi = prob.input_set.bounds()
        lo = np.maximum(blo, cone.lo)
        hi = np.minimum(bhi, cone.hi)
        rng = np.random.default_rng(17)
        for _ in range(10):
            u = rng.uniform(lo, hi)
            w = concavity_witness(prob.stack, u, prob.hull, trials=100,
                                  rng=rng)
            assert w <= 1e-9, (name, u, w)

    # LP duality gap on random box LPs
    rng = np.random.default_rng(2024)
    for _ in range(200):
        nv = int(rng.integers(1, 5))
        nr = int(rng.integers(1, 7))
        A = rng.normal(size=(nr, nv))
        lo = rng.uniform(-2.0, 0.0, size=nv)
        hi = lo + rng.uniform(0.5, 3.0, size=nv)
        x0 = rng.uniform(lo, hi)
        b = A @ x0 + rng.uniform(0.0, 1.0, size=nr)
        c = rng.normal(size=nv)
        res = solve_lp(LpProblem.maximize(c, A, b, lo, hi))
        assert res.status == "optimal"
        ny = nr + 2 * nv
        cost = np.concatenate([b, hi, -lo])
        eq = np.hstack([A.T, np.eye(nv), -np.eye(nv)])
        dual = solve_lp(LpProblem.maximize(
            -cost, np.vstack([eq, -eq]), np.concatenate([c, -c]),
            np.zeros(ny), None))
        assert dual.status == "optimal"
        gap = -dual.value - res.value
        assert abs(gap) <= 1e-7 and gap >= -1e-9

    # QP stationarity and complementarity residuals
    rng = np.random.default_rng(6)
    for _ in range(60):
        m = int(rng.integers(1, 4))
        p = int(rng.integers(1, 5))
        psi = rng.normal(size=(p, m))
        us = InputSet(box=(-np.ones(m), np.ones(m)))
        u0 = rng.uniform(-0.8, 0.8, size=m)
        delta = -(psi @ u0) + rng.uniform(0.01, 0.5, size=p)
        u_des = rng.uniform(-2, 2, size=m)
        sol = solve_qp_projection(u_des, psi, delta, us)
        G, b = us.to_polytope()
        stat = sol.u - u_des - psi.T @ sol.lam + G.T @ sol.nu
        assert np.max(np.abs(stat)) <= 1e-8
        assert np.all(psi @ sol.u + delta >= -1e-8)
        assert np.all(G @ sol.u - b <= 1e-8)
        assert np.all(sol.lam >= 0.0) and np.all(sol.nu >= 0.0)
        assert np.max(np.abs(sol.lam * (psi @ sol.u + delta))) <= 1e-6
        assert np.max(np.abs(sol.nu * (G @ sol.u - b))) <= 1e-6

    # RK4 observed convergence order on a smooth flow
    dyn = Dynamics.lti(np.array([[-1.0]]), np.array([[0.0]]))
    errs = []
    for dt in (0.1, 0.05, 0.025):
        traj = integrate(dyn, ConstantController([0.0]), np.array([1.0]),
                         T=1.0, dt=dt)
        errs.append(abs(traj.states[-1, 0] - np.exp(-1.0)))
    assert min(np.log2(errs[i] / errs[i + 1]) for i in range(2)) >= 3.8

    # randomized problems: every issued certificate survives the oracle
    rng = np.random.default_rng(123)
    certified = 0
    for _ in range(50):
        m = int(rng.integers(1, 3))
        A = rng.uniform(-1, 1, size=(2, 2))
        B = rng.uniform(-1, 1, size=(2, m))
        rows = [(rng.uniform(-1, 1, size=2), float(rng.uniform(0.5, 2.0)),
                 float(rng.uniform(0.5, 2.0)))
                for _ in range(int(rng.integers(1, 4)))]
        st_map = build_from_lti(A, B, rows)
        r = float(rng.uniform(0.2, 1.0))
        hull = Hull(np.array([[-r, -r], [-r, r], [r, -r], [r, r]]))
        ub = float(rng.uniform(0.5, 3.0))
        input_set = InputSet(box=(np.full(m, -ub), np.full(m, ub)))
        cert, diag = certify(st_map, hull, input_set)
        if cert is None:
            continue
        certified += 1
        assert check_certificate(st_map, hull, input_set, cert,
                                 per_edge=7)["ok"]
        assert grid_scan(st_map, hull, input_set,
                         per_edge=5).feasible_everywhere
    assert certified >= 40
    _passed(f"property sweeps: concavity, LP duality, QP KKT, RK4 order, "
            f"{certified}/50 random certificates sound", t0, 60.0)
