"""Certificates: assembly from an SDP solution, independent re-verification,
and queries on the certified set {x in B(0,R) : psi(x, 0) <= 0}.

Re-verification rebuilds every identity from the spec and the stored Gram
matrices with polynomial arithmetic alone; nothing from the solver is reused
except the numbers written into the certificate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import ReachSpec, SolveConfig, spec_from_dict
from .moments import ball_moment, ball_volume, uniform_ball
from .poly import Exponent, Polynomial, gram_form, lie_derivative, parse_poly
from .sdp import OPTIMAL, SdpInstance, SdpSolution
from .soscompile import Scaling, SosProgram, build_sos_program, working_problem

FORMAT = "reachsos-certificate/1"

INSIDE = "inside"
OUTSIDE = "outside"
BOUNDARY = "boundary"


class CertificateError(RuntimeError):
    """Base class for rejected or unusable certificates."""


class ResidualExceeded(CertificateError):
    def __init__(self, identity: str, monomial: str, value: float, tol: float):
        super().__init__(f"residual_exceeded: identity {identity} mismatches by {value:.3e} "
                         f"(tolerance {tol:.1e}) at monomial {monomial}")
        self.identity = identity
        self.monomial = monomial
        self.value = value


class IndefiniteGram(CertificateError):
    def __init__(self, block: str, value: float, tol: float):
        super().__init__(f"indefinite_gram: block {block} has minimum eigenvalue {value:.3e} "
                         f"(tolerance -{tol:.1e})")
        self.block = block
        self.value = value


@dataclass(frozen=True)
class Multiplier:
    """One SOS multiplier ``z^T Q z`` attached to a slot of an identity."""

    identity: str
    slot: str
    basis: tuple[Exponent, ...]
    gram: np.ndarray = field(repr=False)

    @property
    def label(self) -> str:
        return f"{self.identity}:{self.slot}"


@dataclass(frozen=True)
class IdentityResidual:
    value: float
    monomial: Exponent


def _monomial_name(universe, e: Exponent) -> str:
    if not any(e):
        return "1"
    return Polynomial.monomial(universe, e).to_canonical_string()


def _slot_domain(wp, identity: str, slot: str) -> Polynomial:
    u = wp.universe
    if slot in ("s0", "s3", "s6"):
        return Polynomial.constant(u, 1.0)
    if slot in ("s1", "s4", "s7"):
        return wp.ball
    if slot in ("s2", "s5"):
        return wp.time_domain
    if slot.startswith("s'"):
        return wp.disturbance_set[int(slot[2:])]
    raise CertificateError(f"unknown multiplier slot {slot!r} in identity {identity}")


def identity_lhs(wp, identity: str, psi_w: Polynomial) -> Polynomial:
    """Left-hand side of an identity for a working-coordinates psi."""
    u = wp.universe
    if identity == "lie":
        return -lie_derivative(psi_w, wp.dynamics)
    kind, _, rest = identity.partition("[")
    idx = int(rest.rstrip("]"))
    if kind == "state":
        return psi_w - wp.state_constraints[idx]
    if kind == "target":
        return psi_w.restrict(u.time_var, wp.horizon) - wp.target[idx]
    raise CertificateError(f"unknown identity {identity!r}")


def recompute(spec: ReachSpec, scaling: Scaling, psi_w: Polynomial,
              multipliers: Sequence[Multiplier]) -> tuple[dict[str, IdentityResidual], dict[str, float]]:
    """Residual per identity and minimum eigenvalue per Gram block, from scratch."""
    wp = working_problem(spec, scaling.active)
    if scaling.active and wp.scaling != scaling:
        raise CertificateError("stored scaling does not match the one derived from the spec")
    u = spec.universe
    identities = ["lie"] + [f"state[{i}]" for i in range(len(spec.state_constraints))]
    identities += [f"target[{j}]" for j in range(len(spec.target))]
    rhs = {name: Polynomial.zero(u) for name in identities}
    eigs = {}
    for mul in multipliers:
        if mul.identity not in rhs:
            raise CertificateError(f"multiplier {mul.label} refers to an unknown identity")
        s = gram_form(u, mul.basis, mul.gram)
        rhs[mul.identity] = rhs[mul.identity] + s * _slot_domain(wp, mul.identity, mul.slot)
        eigs[mul.label] = float(np.linalg.eigvalsh(mul.gram)[0]) if len(mul.basis) else 0.0
    residuals = {}
    for name in identities:
        diff = identity_lhs(wp, name, psi_w) - rhs[name]
        worst, worst_e = 0.0, (0,) * u.nvars
        for e, c in diff.items():
            if abs(c) > worst:
                worst, worst_e = abs(c), e
        residuals[name] = IdentityResidual(worst, worst_e)
    return residuals, eigs


def _objective(psi0: Polynomial, spec: ReachSpec) -> float:
    """Integral of psi(x, 0) over B(0, R), from closed-form moments."""
    u = spec.universe
    radius = math.sqrt(spec.ball_R)
    st = u.state_indices
    total = 0.0
    for e, c in psi0.items():
        total += c * ball_moment(tuple(e[i] for i in st), radius, u.n_states)
    return total


@dataclass(frozen=True)
class Certificate:
    spec: ReachSpec
    config: SolveConfig
    scaling: Scaling
    psi: Polynomial                      # original coordinates, over (x, t)
    psi_working: Polynomial
    multipliers: tuple[Multiplier, ...]
    objective_value: float               # d*_k in original coordinates
    residuals: Mapping[str, IdentityResidual]
    min_eigenvalues: Mapping[str, float]
    solver: Mapping[str, Any] = field(default_factory=dict)
    mutated: bool = False

    @property
    def fingerprint(self) -> str:
        return self.spec.fingerprint()

    @property
    def psi0(self) -> Polynomial:
        return self.psi.restrict(self.spec.universe.time_var, 0.0)

    @property
    def max_residual(self) -> float:
        return max((r.value for r in self.residuals.values()), default=0.0)

    @property
    def min_eigenvalue(self) -> float:
        return min(self.min_eigenvalues.values(), default=0.0)

    @property
    def boundary_tol(self) -> float:
        scale = max((abs(c) for c in self.psi0.terms.values()), default=0.0)
        return 1e-9 * (1.0 + scale)

    def psi0_values(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        u = self.spec.universe
        vals = {v: points[:, i] for i, v in enumerate(u.state_vars)}
        vals[u.time_var] = np.zeros(len(points))
        for v in u.disturbance_vars:
            vals[v] = np.zeros(len(points))
        return np.broadcast_to(self.psi0.evaluate(vals), (len(points),)).astype(float)

    def with_psi(self, psi: Polynomial) -> "Certificate":
        """A copy carrying a different psi; used to plant unsound certificates."""
        return replace(self, psi=psi, mutated=True)

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        u = self.spec.universe
        return {
            "format": FORMAT,
            "spec": self.spec.to_dict(),
            "spec_fingerprint": self.fingerprint,
            "config": self.config.to_dict(),
            "universe": {"state_vars": list(u.state_vars), "time_var": u.time_var,
                         "disturbance_vars": list(u.disturbance_vars)},
            "scaling": self.scaling.to_dict(),
            "psi": self.psi.to_canonical_string(),
            "psi_working": self.psi_working.to_canonical_string(),
            "objective_value": self.objective_value,
            "multipliers": {
                m.label: {"identity": m.identity, "slot": m.slot,
                          "basis": [list(e) for e in m.basis],
                          "gram": [list(map(float, row)) for row in m.gram],
                          "polynomial": gram_form(u, m.basis, m.gram).to_canonical_string()}
                for m in self.multipliers
            },
            "residuals": {k: {"max": r.value, "monomial": _monomial_name(u, r.monomial),
                              "exponent": list(r.monomial)} for k, r in self.residuals.items()},
            "min_eigenvalues": dict(self.min_eigenvalues),
            "solver": dict(self.solver),
            "mutated": self.mutated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "Certificate":
        if doc.get("format") != FORMAT:
            raise CertificateError(f"unsupported certificate format {doc.get('format')!r}")
        spec = spec_from_dict(doc["spec"])
        if spec.fingerprint() != doc["spec_fingerprint"]:
            raise CertificateError("embedded spec does not match the stored fingerprint")
        u = spec.universe
        muls = tuple(
            Multiplier(m["identity"], m["slot"], tuple(tuple(e) for e in m["basis"]),
                       np.asarray(m["gram"], dtype=float).reshape(len(m["basis"]), len(m["basis"])))
            for m in doc["multipliers"].values()
        )
        res = {k: IdentityResidual(v["max"], tuple(v["exponent"])) for k, v in doc["residuals"].items()}
        return cls(
            spec=spec, config=SolveConfig.from_dict(doc["config"]),
            scaling=Scaling.from_dict(doc["scaling"]),
            psi=parse_poly(doc["psi"], u), psi_working=parse_poly(doc["psi_working"], u),
            multipliers=muls, objective_value=float(doc["objective_value"]), residuals=res,
            min_eigenvalues={k: float(v) for k, v in doc["min_eigenvalues"].items()},
            solver=dict(doc.get("solver", {})), mutated=bool(doc.get("mutated", False)),
        )

    @classmethod
    def from_json(cls, text: str | bytes) -> "Certificate":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Certificate":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _accept(residuals, eigs, res_tol: float, eig_tol: float, universe):
    for name, r in residuals.items():
        if not r.value <= res_tol:
            raise ResidualExceeded(name, _monomial_name(universe, r.monomial), r.value, res_tol)
    for label, v in eigs.items():
        if not v >= -eig_tol:
            raise IndefiniteGram(label, v, eig_tol)


def build_certificate(spec: ReachSpec, cfg: SolveConfig, instance: SdpInstance, solution: SdpSolution,
                      program: SosProgram | None = None) -> Certificate:
    """Turn an optimal SDP solution into a verified certificate.

    Raises ResidualExceeded or IndefiniteGram when the recomputed diagnostics
    miss the configured thresholds (tightened 100x in strict mode).
    """
    if solution.status != OPTIMAL:
        raise CertificateError(f"solver status is {solution.status}, not optimal")
    program = program or build_sos_program(spec, cfg)
    if len(solution.x_free) != len(program.psi_basis):
        raise CertificateError("solution does not match the program's psi basis")
    u = spec.universe
    psi_w = program.psi(solution.x_free)
    muls = []
    blocks = iter(zip(instance.block_labels, solution.X_blocks))
    for con in program:
        for slot in con.slots:
            label, X = next(blocks)
            if label != f"{con.label}:{slot.label}":
                raise CertificateError(f"block {label} out of order (expected {con.label}:{slot.label})")
            muls.append(Multiplier(con.label, slot.label, tuple(slot.basis), np.array(X, dtype=float)))
    scaling = program.working.scaling
    residuals, eigs = recompute(spec, scaling, psi_w, muls)
    _accept(residuals, eigs, cfg.acceptance_residual, cfg.acceptance_eig, u)
    psi = scaling.to_original(psi_w) if scaling.active else psi_w
    d_star = _objective(psi.restrict(u.time_var, 0.0), spec)
    solver = {
        "status": solution.status, "iterations": solution.iterations,
        "primal_objective": solution.primal_objective, "dual_objective": solution.dual_objective,
        "objective_jacobian": scaling.jacobian(u.n_states),
        "primal_residual": solution.primal_residual, "dual_residual": solution.dual_residual,
        "relative_gap": solution.relative_gap, "solve_time": solution.solve_time,
    }
    return Certificate(spec, cfg, scaling, psi, psi_w, tuple(muls), d_star, residuals, eigs, solver)


def verify(cert: Certificate, match_tol: float = 1e-12) -> dict[str, Any]:
    """Recompute all diagnostics from the stored data and re-apply the thresholds.

    Also checks that the recomputed numbers match the stored ones to
    ``match_tol`` and that psi in original coordinates is the unscaled
    working psi.
    """
    u = cert.spec.universe
    residuals, eigs = recompute(cert.spec, cert.scaling, cert.psi_working, cert.multipliers)
    for name, r in residuals.items():
        stored = cert.residuals.get(name)
        if stored is None or abs(stored.value - r.value) > match_tol:
            raise CertificateError(f"stored residual for {name} does not match the recomputed value")
    for label, v in eigs.items():
        if label not in cert.min_eigenvalues or abs(cert.min_eigenvalues[label] - v) > match_tol:
            raise CertificateError(f"stored eigenvalue for {label} does not match the recomputed value")
    _accept(residuals, eigs, cert.config.acceptance_residual, cert.config.acceptance_eig, u)
    expected = cert.scaling.to_original(cert.psi_working) if cert.scaling.active else cert.psi_working
    scale = 1.0 + max((abs(c) for c in expected.terms.values()), default=0.0)
    if not cert.mutated and expected.max_abs_diff(cert.psi) > 1e-9 * scale:
        raise CertificateError("psi does not match the unscaled working psi")
    return {"residuals": {k: r.value for k, r in residuals.items()}, "min_eigenvalues": eigs,
            "max_residual": max(r.value for r in residuals.values()),
            "min_eigenvalue": min(eigs.values(), default=0.0)}


# ---------------------------------------------------------------------------
# queries


def membership(cert: Certificate, x, boundary_tol: float | None = None) -> str:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != cert.spec.n_states or not np.all(np.isfinite(x)):
        raise ValueError(f"expected a finite point with {cert.spec.n_states} coordinates")
    tol = cert.boundary_tol if boundary_tol is None else boundary_tol
    if cert.spec.ball_R - float(x @ x) < 0:
        return OUTSIDE
    v = float(cert.psi0_values(x[None, :])[0])
    if abs(v) <= tol:
        return BOUNDARY
    return INSIDE if v <= -tol else OUTSIDE


@dataclass(frozen=True)
class Emptiness:
    empty: bool
    min_value: float
    argmin: np.ndarray


def emptiness(cert: Certificate, samples: int = 20_000, seed: int = 0, polish: int = 8) -> Emptiness:
    """Estimate min of psi(x, 0) over B(0, R) and decide whether the inner set is empty.

    Uniform samples (plus the origin) seed a few constrained local
    minimizations.  The set counts as empty when no point with
    psi(x, 0) <= -boundary_tol is found.
    """
    n = cert.spec.n_states
    R = cert.spec.ball_R
    rng = np.random.default_rng(seed)
    pts = np.vstack([np.zeros((1, n)), uniform_ball(rng, samples, n, math.sqrt(R))])
    vals = cert.psi0_values(pts)
    order = np.argsort(vals, kind="stable")[:polish]
    best_v, best_x = float(vals[order[0]]), pts[order[0]].copy()
    psi0 = cert.psi0
    u = cert.spec.universe
    grads = [psi0.partial(v) for v in u.state_vars]

    def f(x):
        return float(cert.psi0_values(x[None, :])[0])

    def jac(x):
        vals_ = {v: np.array([x[i]]) for i, v in enumerate(u.state_vars)}
        vals_.update({v: np.zeros(1) for v in (u.time_var, *u.disturbance_vars)})
        return np.array([float(np.broadcast_to(g.evaluate(vals_), (1,))[0]) for g in grads])

    cons = [{"type": "ineq", "fun": lambda x: R - x @ x, "jac": lambda x: -2 * x}]
    for i in order:
        res = minimize(f, pts[i], jac=jac, constraints=cons, method="SLSQP",
                       options={"maxiter": 200, "ftol": 1e-12})
        x = res.x
        if x @ x > R:
            x = x * math.sqrt(R / (x @ x))
        v = f(x)
        if v < best_v:
            best_v, best_x = v, x
    return Emptiness(best_v > -cert.boundary_tol, best_v, best_x)


def inner_volume(cert: Certificate, samples: int = 1_000_000, seed: int = 0,
                 batch: int = 200_000) -> tuple[float, float]:
    """Monte-Carlo volume of {psi(x,0) <= 0} in B(0,R) and its standard error."""
    n = cert.spec.n_states
    radius = math.sqrt(cert.spec.ball_R)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < samples:
        k = min(batch, samples - done)
        pts = uniform_ball(rng, k, n, radius)
        hits += int(np.count_nonzero(cert.psi0_values(pts) <= 0.0))
        done += k
    vol = ball_volume(radius, n)
    p = hits / samples
    return vol * p, vol * math.sqrt(p * (1 - p) / samples)


# ---------------------------------------------------------------------------
# contours


@dataclass(frozen=True)
class LevelSetContour:
    """Polylines of a level set in a 2-D plane, as (k, 2) arrays."""

    curves: tuple[np.ndarray, ...]
    axes: tuple[str, str]
    level: float = 0.0

    def __len__(self):
        return len(self.curves)

    def to_csv(self) -> str:
        lines = ["curve_id,x,y"]
        for cid, c in enumerate(self.curves):
            lines.extend(f"{cid},{x:.17g},{y:.17g}" for x, y in c)
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def extract_contours(xs: np.ndarray, ys: np.ndarray, values: np.ndarray, level: float = 0.0,
                     keep=None) -> list[np.ndarray]:
    """Marching squares on ``values[i, j]`` sampled at ``(xs[i], ys[j])``.

    Vertices are linearly interpolated on cell edges.  When ``keep`` is given,
    polylines are cut wherever a vertex fails ``keep(points) -> bool mask``.
    """
    from skimage.measure import find_contours

    values = np.asarray(values, dtype=float)
    if values.shape != (len(xs), len(ys)):
        raise ValueError("grid values do not match the axes")
    hx = (xs[-1] - xs[0]) / (len(xs) - 1)
    hy = (ys[-1] - ys[0]) / (len(ys) - 1)
    out = []
    for raw in find_contours(values, level):
        pts = np.column_stack([xs[0] + raw[:, 0] * hx, ys[0] + raw[:, 1] * hy])
        if keep is None:
            out.append(pts)
            continue
        mask = np.asarray(keep(pts), dtype=bool)
        start = None
        for i, ok in enumerate(np.append(mask, False)):
            if ok and start is None:
                start = i
            elif not ok and start is not None:
                if i - start >= 2:
                    out.append(pts[start:i])
                start = None
    return out


def contour2d(cert: Certificate, resolution: int = 400, axes: Sequence[str] | None = None,
              slice_values: Mapping[str, float] | None = None, level: float = 0.0) -> LevelSetContour:
    """Zero contour of psi(., 0) inside B(0, R) in a coordinate plane.

    For more than two states, ``slice_values`` must fix every state that is
    not one of the two ``axes`` (default: the first two states).
    """
    u = cert.spec.universe
    if resolution < 3:
        raise ValueError("resolution must be at least 3")
    axes = tuple(axes) if axes is not None else tuple(u.state_vars[:2])
    if len(axes) != 2 or not set(axes) <= set(u.state_vars) or axes[0] == axes[1]:
        raise ValueError(f"axes must name two distinct state variables, got {axes}")
    fixed = dict(slice_values or {})
    others = [v for v in u.state_vars if v not in axes]
    if u.n_states != 2 and set(others) - set(fixed):
        raise ValueError(f"{u.n_states}-D certificate needs slice values for {sorted(set(others) - set(fixed))}")
    r2 = cert.spec.ball_R - sum(fixed.get(v, 0.0) ** 2 for v in others)
    if r2 <= 0:
        return LevelSetContour((), axes, level)
    r = math.sqrt(r2)
    xs = np.linspace(-r, r, resolution)
    ys = np.linspace(-r, r, resolution)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    vals = {axes[0]: gx.ravel(), axes[1]: gy.ravel()}
    for v in others:
        vals[v] = np.full(gx.size, float(fixed.get(v, 0.0)))
    vals[u.time_var] = np.zeros(gx.size)
    for v in u.disturbance_vars:
        vals[v] = np.zeros(gx.size)
    psi_grid = np.broadcast_to(cert.psi0.evaluate(vals), (gx.size,)).reshape(gx.shape)
    curves = extract_contours(xs, ys, psi_grid, level, keep=lambda p: (p ** 2).sum(axis=1) <= r2)
    return LevelSetContour(tuple(curves), axes, level)
