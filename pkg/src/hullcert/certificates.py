"""Hull-wide compatibility certificates for stacked control-barrier rows.

A certificate asserts that every state in the hull admits an input that keeps
all barrier rows nonnegative, and backs the claim with an explicit input (a
constant, a box of constants, or a vertex-blended law).  Four constructions
are provided, ordered roughly by cost:

  endpoint_rule        pick each input coordinate at the bound its uniform
                       column sign favors, then check the hull vertices
  cpc_interval         intersect per-vertex safe half-lines into a box of
                       inputs valid across the hull
  cpc_common           one LP for a single constant input with maximal margin
  cpc_blend_joint      one LP for per-vertex inputs whose barycentric blends
                       stay valid (couples vertices unless Psi is constant)

Every construction re-verifies its own witness at the hull vertices before
reporting success, so a returned certificate never rests on caller-supplied
data alone.  All of them are sufficient conditions: an invalid outcome means
"not established", not "incompatible".
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curvature import A3Violated, sign_cone, uniform_column_sign
from .optcore import LpProblem, margin_lp, solve_lp
from .problem import Hull, InputSet, StackedMap
from .tolerances import DEFAULT, Tolerances


class VertexIncompatible(ValueError):
    """Some hull vertex admits no feasible input at all."""

    def __init__(self, vertex: int, margin: float):
        self.vertex = vertex
        self.margin = margin
        super().__init__(
            f"vertex {vertex} is incompatible (best margin {margin:.6g})")


# --------------------------------------------------------------------------
# certificate containers


@dataclass(frozen=True)
class IntervalCert:
    """Box of constant inputs valid at every hull state. lo == hi for the
    endpoint rule."""

    lo: np.ndarray
    hi: np.ndarray
    margin: float
    kind: str = "interval"

    @property
    def method(self) -> str:
        return "endpoint_rule" if self.kind == "endpoint" else "cpc_interval"

    def input_at(self, lam=None) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def to_dict(self) -> dict:
        return {"method": self.method, "lo": self.lo.tolist(),
                "hi": self.hi.tolist(), "margin": self.margin}


@dataclass(frozen=True)
class CommonCert:
    """Single constant input with hull-wide margin at least ``margin``."""

    u: np.ndarray
    margin: float

    @property
    def method(self) -> str:
        return "cpc_common"

    def input_at(self, lam=None) -> np.ndarray:
        return self.u.copy()

    def to_dict(self) -> dict:
        return {"method": self.method, "u": self.u.tolist(),
                "margin": self.margin}


@dataclass(frozen=True)
class BlendCert:
    """Per-vertex inputs whose barycentric blend is valid across the hull."""

    vertex_inputs: np.ndarray  # [N, m]
    margin: float
    pairwise_max: float
    joint: bool = True

    @property
    def method(self) -> str:
        return "cpc_blend"

    def input_at(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        if lam.shape != (self.vertex_inputs.shape[0],):
            raise ValueError("barycentric weight has the wrong length")
        return lam @ self.vertex_inputs

    def to_dict(self) -> dict:
        return {"method": self.method,
                "vertex_inputs": self.vertex_inputs.tolist(),
                "margin": self.margin, "pairwise_max": self.pairwise_max,
                "joint": self.joint}


def cert_from_dict(data: dict):
    method = data.get("method")
    if method in ("cpc_interval", "endpoint_rule"):
        kind = "endpoint" if method == "endpoint_rule" else "interval"
        return IntervalCert(np.asarray(data["lo"], dtype=float),
                            np.asarray(data["hi"], dtype=float),
                            float(data["margin"]), kind=kind)
    if method == "cpc_common":
        return CommonCert(np.asarray(data["u"], dtype=float),
                          float(data["margin"]))
    if method == "cpc_blend":
        return BlendCert(np.asarray(data["vertex_inputs"], dtype=float),
                         float(data["margin"]), float(data["pairwise_max"]),
                         bool(data.get("joint", True)))
    raise ValueError(f"unknown certificate method {method!r}")


@dataclass
class CertificateOutcome:
    """Result of one certificate attempt, valid or not."""

    method: str
    valid: bool
    certificate: object | None = None
    margin: float | None = None
    reason: str = ""
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"method": self.method, "valid": self.valid,
               "margin": self.margin, "reason": self.reason}
        if self.certificate is not None:
            out["certificate"] = self.certificate.to_dict()
        if self.detail:
            out["detail"] = {k: v for k, v in self.detail.items()}
        return out


# --------------------------------------------------------------------------
# shared helpers


def _vertex_margins(stack: StackedMap, hull: Hull, u: np.ndarray) -> np.ndarray:
    """[N, p] row margins of a constant input at every hull vertex."""
    out = np.empty((hull.N, stack.p))
    for j, v in enumerate(hull.vertices):
        out[j] = stack.psi_at(v) @ u + stack.delta_at(v)
    return out


def _box_vertex_margins(stack: StackedMap, hull: Hull,
                        lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """[N, p] worst-case row margins over the input box, exactly.

    min over the box of psi_r . u is separable: sum_k min(psi_rk lo_k,
    psi_rk hi_k).
    """
    out = np.empty((hull.N, stack.p))
    for j, v in enumerate(hull.vertices):
        psi = stack.psi_at(v)
        out[j] = np.minimum(psi * lo, psi * hi).sum(axis=1) + stack.delta_at(v)
    return out


def _box_inside_input_set(input_set: InputSet, lo, hi, tol: Tolerances) -> bool:
    blo, bhi = input_set.bounds()
    if np.any(lo < blo - tol.feas) or np.any(hi > bhi + tol.feas):
        return False
    if input_set.polytope is not None:
        G, b = input_set.polytope
        worst = np.maximum(G * lo, G * hi).sum(axis=1)
        if np.any(worst > b + tol.feas):
            return False
    return True


def _cone_bounds(stack: StackedMap, tol: Tolerances):
    cone = sign_cone(stack, tol=tol.eig)
    return cone.lo, cone.hi


def find_vertex_inputs(stack: StackedMap, hull: Hull, input_set: InputSet,
                       restrict_to_cone: bool = False,
                       tol: Tolerances = DEFAULT):
    """Best-margin input at each hull vertex, by LP.

    Returns (inputs [N, m], margins [N]).  Raises VertexIncompatible as soon
    as one vertex has no input with nonnegative margin; hull-wide claims are
    pointless past that.
    """
    cone_lo = cone_hi = None
    if restrict_to_cone:
        cone_lo, cone_hi = _cone_bounds(stack, tol)
    inputs = np.empty((hull.N, stack.m))
    margins = np.empty(hull.N)
    for j, v in enumerate(hull.vertices):
        status, t, u = margin_lp(stack.psi_at(v), stack.delta_at(v), input_set,
                                 cone_lo=cone_lo, cone_hi=cone_hi, tol=tol)
        if status != "optimal" or t < -tol.feas:
            raise VertexIncompatible(j, t if status == "optimal" else -np.inf)
        inputs[j] = u
        margins[j] = t
    return inputs, margins


def pairwise_check(stack: StackedMap, hull: Hull,
                   vertex_inputs: np.ndarray) -> float:
    """max over vertex pairs i<j and rows of (psi_r(x^i)-psi_r(x^j)).(u^i-u^j).

    Nonpositive is the coupling condition under which barycentric blends of
    per-vertex inputs stay valid.  Identically zero when Psi is constant.
    """
    V = hull.vertices
    U = np.asarray(vertex_inputs, dtype=float)
    psis = np.stack([stack.psi_at(v) for v in V])
    worst = -np.inf
    for i in range(hull.N):
        for j in range(i + 1, hull.N):
            vals = (psis[i] - psis[j]) @ (U[i] - U[j])
            worst = max(worst, float(vals.max()))
    return worst if hull.N > 1 else 0.0


def blend_input(vertex_inputs: np.ndarray, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    return lam @ np.asarray(vertex_inputs, dtype=float)


# --------------------------------------------------------------------------
# certificate constructions


def endpoint_rule(stack: StackedMap, hull: Hull, input_set: InputSet,
                  tol: Tolerances = DEFAULT) -> CertificateOutcome:
    """Constant input with each coordinate pushed to its favorable bound.

    A column whose entries keep one sign over the hull is monotone in the
    margins, so the best constant choice for that coordinate sits at a bound
    of the admissible interval.  Works only when every column has a uniform
    sign and the bounds are finite on the favored side.
    """
    m = stack.m
    lo, hi = input_set.bounds()
    u = np.empty(m)
    for k in range(m):
        side = uniform_column_sign(stack, hull, k, tol=tol)
        if side == "inconclusive":
            return CertificateOutcome(
                "endpoint_rule", False,
                reason=f"column {k} has no uniform sign over the hull")
        if side == "nonneg":
            e_lo, e_hi = max(lo[k], 0.0), hi[k]
            pick = e_hi
        else:
            e_lo, e_hi = lo[k], min(hi[k], 0.0)
            pick = e_lo
        if e_lo > e_hi or not np.isfinite(pick):
            return CertificateOutcome(
                "endpoint_rule", False,
                reason=f"column {k}: admissible interval has no usable endpoint")
        u[k] = pick
    if not input_set.contains(u, tol=tol.feas):
        return CertificateOutcome(
            "endpoint_rule", False,
            reason="endpoint input violates the polytope part of the input set")
    margins = _vertex_margins(stack, hull, u)
    worst = float(margins.min())
    if worst < -tol.feas:
        return CertificateOutcome("endpoint_rule", False, margin=worst,
                                  reason="endpoint input fails at a hull vertex")
    cert = IntervalCert(u.copy(), u.copy(), worst, kind="endpoint")
    return CertificateOutcome("endpoint_rule", True, cert, worst)


def cpc_interval(stack: StackedMap, hull: Hull, input_set: InputSet,
                 vertex_inputs: np.ndarray,
                 tol: Tolerances = DEFAULT) -> CertificateOutcome:
    """Box of constant inputs distilled from per-vertex inputs.

    At a vertex where column k helps every row, feasibility survives any
    increase of u_k, so the box floor for coordinate k is the largest such
    vertex input; symmetrically for hurting columns and the ceiling.  The
    box is then clipped to the input set and the sign cone and re-verified
    against the worst corner at every vertex, which is what actually makes
    the certificate sound (the supplied vertex inputs are hints, not trusted
    data).
    """
    U = np.asarray(vertex_inputs, dtype=float)
    if U.shape != (hull.N, stack.m):
        raise ValueError("vertex_inputs must be [N, m]")
    try:
        cone_lo, cone_hi = _cone_bounds(stack, tol)
    except A3Violated as exc:
        return CertificateOutcome("cpc_interval", False, reason=str(exc))
    blo, bhi = input_set.bounds()
    psis = np.stack([stack.psi_at(v) for v in hull.vertices])  # [N, p, m]

    lo = np.empty(stack.m)
    hi = np.empty(stack.m)
    for k in range(stack.m):
        col = psis[:, :, k]  # [N, p]
        helpful = np.all(col >= -tol.sign, axis=1)
        harmful = np.all(col <= tol.sign, axis=1)
        mixed = ~(helpful | harmful)
        if mixed.any():
            j = int(np.flatnonzero(mixed)[0])
            return CertificateOutcome(
                "cpc_interval", False,
                reason=f"column {k} is not sign-coherent at vertex {j}")
        # Zero columns land in both sets; both bounds then equal (u^j)_k.
        l_k = -np.inf
        u_k = np.inf
        if helpful.any():
            l_k = float(U[helpful, k].max())
        if harmful.any():
            u_k = float(U[harmful, k].min())
        lo[k] = max(l_k, blo[k], cone_lo[k])
        hi[k] = min(u_k, bhi[k], cone_hi[k])
        if lo[k] > hi[k] + tol.feas:
            return CertificateOutcome(
                "cpc_interval", False,
                reason=f"coordinate {k}: interval is empty after clipping")
        hi[k] = max(hi[k], lo[k])
    if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
        return CertificateOutcome(
            "cpc_interval", False,
            reason="interval is unbounded; no finite box to verify")
    if not _box_inside_input_set(input_set, lo, hi, tol):
        return CertificateOutcome(
            "cpc_interval", False,
            reason="interval box leaves the input polytope")
    margins = _box_vertex_margins(stack, hull, lo, hi)
    worst = float(margins.min())
    if worst < -tol.feas:
        return CertificateOutcome(
            "cpc_interval", False, margin=worst,
            reason="box corner fails at a hull vertex")
    cert = IntervalCert(lo, hi, worst)
    return CertificateOutcome("cpc_interval", True, cert, worst)


def cpc_common(stack: StackedMap, hull: Hull, input_set: InputSet,
               tol: Tolerances = DEFAULT) -> CertificateOutcome:
    """Best single constant input over all hull vertices, by one LP."""
    try:
        cone_lo, cone_hi = _cone_bounds(stack, tol)
    except A3Violated as exc:
        return CertificateOutcome("cpc_common", False, reason=str(exc))
    p, m, N = stack.p, stack.m, hull.N
    psis = np.stack([stack.psi_at(v) for v in hull.vertices])
    deltas = np.stack([stack.delta_at(v) for v in hull.vertices])
    rows = np.concatenate(
        [np.hstack([-psis[j], np.ones((p, 1))]) for j in range(N)])
    offs = deltas.reshape(-1)
    if input_set.polytope is not None:
        G, b = input_set.polytope
        rows = np.vstack([rows, np.hstack([G, np.zeros((G.shape[0], 1))])])
        offs = np.concatenate([offs, b])
    blo, bhi = input_set.bounds()
    lo = np.concatenate([np.maximum(blo, cone_lo), [-np.inf]])
    hi = np.concatenate([np.minimum(bhi, cone_hi), [np.inf]])
    if np.any(lo[:m] > hi[:m]):
        return CertificateOutcome(
            "cpc_common", False,
            reason="input set does not meet the sign cone")
    c = np.zeros(m + 1)
    c[m] = 1.0
    res = solve_lp(LpProblem.maximize(c, rows, offs, lo, hi), tol)
    if res.status == "unbounded":
        # Margin can grow without bound only along unbounded inputs; any
        # feasible point already certifies, so grab one with margin 0.
        res = solve_lp(LpProblem.maximize(
            np.zeros(m + 1), np.vstack([rows, [c]]), np.concatenate([offs, [0.0]]),
            lo, hi), tol)
        if res.status != "optimal":
            return CertificateOutcome("cpc_common", False,
                                      reason="degenerate unbounded margin")
    elif res.status != "optimal":
        return CertificateOutcome("cpc_common", False, margin=-np.inf,
                                  reason="no admissible input at all")
    u, t = res.z[:m], float(res.z[m])
    worst = float(_vertex_margins(stack, hull, u).min())
    if t < -tol.feas or worst < -tol.feas:
        return CertificateOutcome(
            "cpc_common", False, margin=t,
            reason="best common margin is negative")
    cert = CommonCert(u, worst)
    return CertificateOutcome("cpc_common", True, cert, worst,
                              detail={"lp_margin": t})


def cpc_blend_joint(stack: StackedMap, hull: Hull, input_set: InputSet,
                    tol: Tolerances = DEFAULT) -> CertificateOutcome:
    """Per-vertex inputs from one joint LP, blendable across the hull.

    Variables are (u^1, ..., u^N, t).  Margin rows hold at each vertex, and
    coupling rows (psi_r(x^i) - psi_r(x^j)) . (u^i - u^j) <= 0 make every
    barycentric blend inherit the worst vertex margin.  With constant Psi the
    coupling rows vanish identically and are skipped.
    """
    try:
        cone_lo, cone_hi = _cone_bounds(stack, tol)
    except A3Violated as exc:
        return CertificateOutcome("cpc_blend", False, reason=str(exc))
    p, m, N = stack.p, stack.m, hull.N
    nv = N * m + 1
    psis = np.stack([stack.psi_at(v) for v in hull.vertices])
    deltas = np.stack([stack.delta_at(v) for v in hull.vertices])
    psi_constant = bool(np.allclose(psis, psis[0], atol=1e-13))

    rows = []
    offs = []
    for j in range(N):
        block = np.zeros((p, nv))
        block[:, j * m:(j + 1) * m] = -psis[j]
        block[:, -1] = 1.0
        rows.append(block)
        offs.append(deltas[j])
    if not psi_constant:
        for i in range(N):
            for j in range(i + 1, N):
                diff = psis[i] - psis[j]  # [p, m]
                block = np.zeros((p, nv))
                block[:, i * m:(i + 1) * m] = diff
                block[:, j * m:(j + 1) * m] = -diff
                rows.append(block)
                offs.append(np.zeros(p))
    if input_set.polytope is not None:
        G, b = input_set.polytope
        for j in range(N):
            block = np.zeros((G.shape[0], nv))
            block[:, j * m:(j + 1) * m] = G
            rows.append(block)
            offs.append(b)
    blo, bhi = input_set.bounds()
    ulo = np.maximum(blo, cone_lo)
    uhi = np.minimum(bhi, cone_hi)
    if np.any(ulo > uhi):
        return CertificateOutcome(
            "cpc_blend", False, reason="input set does not meet the sign cone")
    lo = np.concatenate([np.tile(ulo, N), [-np.inf]])
    hi = np.concatenate([np.tile(uhi, N), [np.inf]])
    c = np.zeros(nv)
    c[-1] = 1.0
    res = solve_lp(LpProblem.maximize(c, np.vstack(rows), np.concatenate(offs),
                                      lo, hi), tol)
    if res.status == "unbounded":
        res = solve_lp(LpProblem.maximize(
            np.zeros(nv), np.vstack(rows + [c[None, :]]),
            np.concatenate(offs + [np.zeros(1)]), lo, hi), tol)
        if res.status != "optimal":
            return CertificateOutcome("cpc_blend", False,
                                      reason="degenerate unbounded margin")
    elif res.status != "optimal":
        return CertificateOutcome("cpc_blend", False, margin=-np.inf,
                                  reason="no admissible vertex inputs")
    t = float(res.z[-1])
    U = res.z[:-1].reshape(N, m)
    worst = min(float((psis[j] @ U[j] + deltas[j]).min()) for j in range(N))
    pmax = pairwise_check(stack, hull, U)
    if t < -tol.feas or worst < -tol.feas or pmax > tol.feas:
        return CertificateOutcome(
            "cpc_blend", False, margin=t,
            reason="joint margin is negative" if t < -tol.feas
            else "witness re-verification failed",
            detail={"pairwise_max": pmax})
    cert = BlendCert(U, worst, pmax, joint=True)
    return CertificateOutcome("cpc_blend", True, cert, worst,
                              detail={"lp_margin": t, "pairwise_max": pmax})


def cpc_blend_vertexwise(stack: StackedMap, hull: Hull, input_set: InputSet,
                         tol: Tolerances = DEFAULT) -> CertificateOutcome:
    """Blend certificate from independent per-vertex LPs.

    Cheaper than the joint LP but the independently chosen inputs must then
    pass the pairwise coupling check, which they are not optimized for.
    """
    try:
        U, margins = find_vertex_inputs(stack, hull, input_set,
                                        restrict_to_cone=True, tol=tol)
    except VertexIncompatible as exc:
        return CertificateOutcome("cpc_blend_vertexwise", False,
                                  margin=exc.margin,
                                  reason=str(exc))
    except A3Violated as exc:
        return CertificateOutcome("cpc_blend_vertexwise", False,
                                  reason=str(exc))
    pmax = pairwise_check(stack, hull, U)
    worst = float(margins.min())
    if pmax > tol.feas:
        return CertificateOutcome(
            "cpc_blend_vertexwise", False, margin=worst,
            reason="pairwise coupling check failed",
            detail={"pairwise_max": pmax})
    cert = BlendCert(U, worst, pmax, joint=False)
    return CertificateOutcome("cpc_blend_vertexwise", True, cert, worst,
                              detail={"pairwise_max": pmax})


_DEFAULT_ORDER = ("endpoint", "interval", "common", "blend")


def certify(stack: StackedMap, hull: Hull, input_set: InputSet,
            vertex_inputs: np.ndarray | None = None,
            order=None, joint_blend: bool = True,
            tol: Tolerances = DEFAULT):
    """Run the certificate cascade, cheapest first.

    Returns (certificate | None, diagnostics).  The diagnostics dict records
    every attempt in order with its validity, margin, and failure reason, and
    names the winning method (or None).  ``vertex_inputs`` feeds the interval
    construction; without them that stage is skipped.  ``joint_blend=False``
    swaps the joint blend LP for the per-vertex variant.
    """
    order = tuple(order) if order is not None else _DEFAULT_ORDER
    attempts = []
    winner = None
    cert = None
    for name in order:
        if name == "endpoint":
            out = endpoint_rule(stack, hull, input_set, tol)
        elif name == "interval":
            if vertex_inputs is None:
                attempts.append({"method": "cpc_interval", "valid": False,
                                 "margin": None,
                                 "reason": "skipped: no vertex inputs supplied"})
                continue
            out = cpc_interval(stack, hull, input_set, vertex_inputs, tol)
        elif name == "common":
            out = cpc_common(stack, hull, input_set, tol)
        elif name == "blend":
            if joint_blend:
                out = cpc_blend_joint(stack, hull, input_set, tol)
            else:
                out = cpc_blend_vertexwise(stack, hull, input_set, tol)
        else:
            raise ValueError(f"unknown cascade stage {name!r}")
        attempts.append(out.to_dict())
        if out.valid:
            winner = out.method
            cert = out.certificate
            break
    diagnostics = {"order": list(order), "attempts": attempts,
                   "method": winner,
                   "certified": cert is not None}
    return cert, diagnostics
