"""Problem instances: JSON ingestion, serialization and geometric sanity checks.

Sign conventions follow the reachability setup exactly and are never
auto-negated by the loader:

* state constraints  X_t = {x : g_i(x, t) <= 0 for all i}
* target region      TR  = {x : l_j(x) <= 0 for all j}
* disturbance set    D   = {d : h_r(d) >= 0 for all r}
* ball               B   = {x : R - |x|^2 >= 0}
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .poly import Polynomial, PolyError, VarUniverse, parse_poly

SPEC_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": [
        "state_vars", "disturbance_vars", "horizon", "dynamics", "target",
        "state_constraints", "disturbance_set", "ball_R",
    ],
    "properties": {
        "name": {"type": "string"},
        "state_vars": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "disturbance_vars": {"type": "array", "items": {"type": "string"}},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "dynamics": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "target": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "state_constraints": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "disturbance_set": {"type": "array", "items": {"type": "string"}},
        "ball_R": {"type": "number", "exclusiveMinimum": 0},
    },
}

EXAMPLE_NAMES = ("ex1a", "ex1b", "ex2a", "ex2b", "ex3")


class SpecError(ValueError):
    """Invalid problem document; ``path`` is a JSON pointer to the offending field."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path or "/"


@dataclass(frozen=True, eq=False)
class ReachSpec:
    universe: VarUniverse
    dynamics: tuple[Polynomial, ...]
    horizon: float
    target: tuple[Polynomial, ...]
    state_constraints: tuple[Polynomial, ...]
    disturbance_set: tuple[Polynomial, ...]
    ball_R: float
    name: str = ""

    @property
    def n_states(self) -> int:
        return self.universe.n_states

    @property
    def state_vars(self) -> tuple[str, ...]:
        return self.universe.state_vars

    @property
    def disturbance_vars(self) -> tuple[str, ...]:
        return self.universe.disturbance_vars

    @property
    def g_R(self) -> Polynomial:
        u = self.universe
        p = Polynomial.constant(u, self.ball_R)
        for v in u.state_vars:
            p = p - Polynomial.var(u, v) ** 2
        return p

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "state_vars": list(self.universe.state_vars),
            "disturbance_vars": list(self.universe.disturbance_vars),
            "horizon": self.horizon,
            "dynamics": [p.to_canonical_string() for p in self.dynamics],
            "target": [p.to_canonical_string() for p in self.target],
            "state_constraints": [p.to_canonical_string() for p in self.state_constraints],
            "disturbance_set": [p.to_canonical_string() for p in self.disturbance_set],
            "ball_R": self.ball_R,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ReachSpec):
            return NotImplemented
        return (
            self.universe == other.universe
            and self.name == other.name
            and self.horizon == other.horizon
            and self.ball_R == other.ball_R
            and self.dynamics == other.dynamics
            and self.target == other.target
            and self.state_constraints == other.state_constraints
            and self.disturbance_set == other.disturbance_set
        )

    __hash__ = None

    def disturbance_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Center and half-widths of an axis-aligned box containing D.

        Derived from the separable quadratic constraints among h_r, i.e. those
        of the form c + sum b_i d_i - sum a_i d_i^2 with every a_i > 0; this
        covers the R_D - |d|^2 ball that a well-posed D must carry.
        """
        m = len(self.disturbance_vars)
        if m == 0:
            return np.zeros(0), np.zeros(0)
        u = self.universe
        didx = u.disturbance_indices
        lo = np.full(m, -np.inf)
        hi = np.full(m, np.inf)
        for h in self.disturbance_set:
            box = _separable_quadratic_box(h, didx)
            if box is not None:
                lo = np.maximum(lo, box[0])
                hi = np.minimum(hi, box[1])
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise SpecError(
                "disturbance set needs a bounding constraint of the form c - sum a_i (d_i - e_i)^2 >= 0",
                "/disturbance_set",
            )
        if np.any(hi < lo):
            raise SpecError("disturbance set is empty", "/disturbance_set")
        return (lo + hi) / 2, (hi - lo) / 2


def _separable_quadratic_box(h: Polynomial, didx: Sequence[int]):
    m = len(didx)
    c = 0.0
    b = np.zeros(m)
    a = np.zeros(m)
    for e, coef in h.terms.items():
        if any(e[i] for i in range(len(e)) if i not in didx):
            return None
        pos = [(k, e[i]) for k, i in enumerate(didx) if e[i]]
        if not pos:
            c += coef
        elif len(pos) == 1 and pos[0][1] == 1:
            b[pos[0][0]] += coef
        elif len(pos) == 1 and pos[0][1] == 2:
            a[pos[0][0]] -= coef
        else:
            return None
    if np.any(a <= 0):
        return None
    center = b / (2 * a)
    K = c + float(np.sum(b**2 / (4 * a)))
    if K < 0:
        return center, center - 1.0  # empty
    half = np.sqrt(K / a)
    return center - half, center + half


@dataclass(frozen=True)
class SolveConfig:
    """Solve parameters.

    ``multiplier_degrees`` is ``None`` for the automatic policy or a pair
    ``(d_s, d_s_prime)``: the degree of every multiplier in the Lie-derivative
    identity and in the remaining identities respectively.
    """

    psi_degree: int
    multiplier_degrees: tuple[int, int] | None = None
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iters: int = 200
    seed: int = 0
    scale: bool = True
    strict: bool = False
    residual_tol: float = 1e-6
    eig_tol: float = 1e-7

    def __post_init__(self):
        if self.psi_degree < 2:
            raise ValueError("psi degree must be at least 2")
        if self.feas_tol <= 0 or self.gap_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.multiplier_degrees is not None:
            object.__setattr__(self, "multiplier_degrees", tuple(int(v) for v in self.multiplier_degrees))
            if len(self.multiplier_degrees) != 2:
                raise ValueError("explicit multiplier degrees must be a pair (d_s, d_s')")

    @property
    def acceptance_residual(self) -> float:
        return self.residual_tol / 100 if self.strict else self.residual_tol

    @property
    def acceptance_eig(self) -> float:
        return self.eig_tol / 100 if self.strict else self.eig_tol

    def check(self, spec: ReachSpec):
        need = max(p.degree for p in (*spec.target, *spec.state_constraints))
        if self.psi_degree < need:
            raise ValueError(f"psi degree {self.psi_degree} is below the constraint degree {need}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "psi_degree": self.psi_degree,
            "multiplier_degrees": list(self.multiplier_degrees) if self.multiplier_degrees else None,
            "feas_tol": self.feas_tol,
            "gap_tol": self.gap_tol,
            "max_iters": self.max_iters,
            "seed": self.seed,
            "scale": self.scale,
            "strict": self.strict,
            "residual_tol": self.residual_tol,
            "eig_tol": self.eig_tol,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SolveConfig":
        d = dict(d)
        if d.get("multiplier_degrees") is not None:
            d["multiplier_degrees"] = tuple(d["multiplier_degrees"])
        return cls(**d)


# ---------------------------------------------------------------------------
# loading


def _validate(doc: Any):
    validator = jsonschema.Draft7Validator(SPEC_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if not errors:
        return
    err = errors[0]
    path = "".join(f"/{p}" for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1]
        path = f"{path}/{missing}"
    raise SpecError(err.message, path)


def _parse_list(texts, universe, path, allowed: set[str]):
    out = []
    for i, text in enumerate(texts):
        try:
            p = parse_poly(text, universe)
        except PolyError as exc:
            raise SpecError(str(exc), f"{path}/{i}") from None
        extra = p.variables() - allowed
        if extra:
            raise SpecError(f"polynomial mentions disallowed variables {sorted(extra)}", f"{path}/{i}")
        out.append(p)
    return tuple(out)


def spec_from_dict(doc: dict[str, Any]) -> ReachSpec:
    _validate(doc)
    try:
        universe = VarUniverse(tuple(doc["state_vars"]), "t", tuple(doc["disturbance_vars"]))
    except PolyError as exc:
        raise SpecError(str(exc), "/state_vars") from None
    xs = set(universe.state_vars)
    ds = set(universe.disturbance_vars)
    t = {universe.time_var}
    dynamics = _parse_list(doc["dynamics"], universe, "/dynamics", xs | ds | t)
    if len(dynamics) != universe.n_states:
        raise SpecError(
            f"{len(dynamics)} dynamics entries for {universe.n_states} state variables", "/dynamics"
        )
    target = _parse_list(doc["target"], universe, "/target", xs)
    constraints = _parse_list(doc["state_constraints"], universe, "/state_constraints", xs | t)
    dset = _parse_list(doc["disturbance_set"], universe, "/disturbance_set", ds)
    if bool(dset) != bool(ds):
        raise SpecError(
            "disturbance_set must be non-empty exactly when disturbance_vars is", "/disturbance_set"
        )
    return ReachSpec(
        universe=universe,
        dynamics=dynamics,
        horizon=float(doc["horizon"]),
        target=target,
        state_constraints=constraints,
        disturbance_set=dset,
        ball_R=float(doc["ball_R"]),
        name=str(doc.get("name", "")),
    )


def load_spec(source: str | Path | bytes) -> ReachSpec:
    """Load a spec from a path, raw JSON bytes, or a bundled example name."""
    if isinstance(source, (bytes, bytearray)):
        text = source.decode()
    else:
        path = Path(source)
        if not path.exists() and (str(source) in EXAMPLE_NAMES
                                  or (path.suffix == ".json" and path.stem in EXAMPLE_NAMES)):
            # bare example names and "examples/<name>.json" resolve to the bundled copies
            path = example_path(path.stem)
        if not path.exists():
            raise FileNotFoundError(f"spec file not found: {source}")
        text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"invalid JSON: {exc}") from None
    return spec_from_dict(doc)


def example_path(name: str) -> Path:
    ref = resources.files("reachsos") / "data" / "examples" / f"{name}.json"
    return Path(str(ref))


def load_example(name: str) -> ReachSpec:
    return load_spec(example_path(name))


# ---------------------------------------------------------------------------
# geometry


@dataclass
class GeometryReport:
    ok: bool
    violations: list[dict[str, Any]] = field(default_factory=list)
    n_violations: int = 0
    samples: int = 0

    def to_dict(self):
        return {"ok": self.ok, "n_violations": self.n_violations, "samples": self.samples,
                "violations": self.violations}


def _max_poly(polys, values) -> np.ndarray:
    return np.max(np.stack([np.broadcast_to(p.evaluate(values), values["__shape"]) for p in polys]), axis=0)


def check_geometry(spec: ReachSpec, samples: int = 100_000, seed: int = 0,
                   tol: float = 1e-6, batch: int = 20_000, max_listed: int = 20) -> GeometryReport:
    """Sampled (non-certified) check that X_t and TR cap X_T lie inside B(0, R)
    and that the boundaries of X_t and B(0, R) do not touch.

    Three kinds of violation are reported: ``outside_ball`` (a point of X_t or
    of TR cap X_T with g_R < 0), ``ball_boundary_inside_X`` (a point of the
    sphere strictly inside X_t) and ``boundary_contact`` (a point of the sphere
    with |max_i g_i| <= tol).
    """
    if samples < 1000:
        raise ValueError("check_geometry needs at least 1000 samples")
    u = spec.universe
    n = u.n_states
    r = math.sqrt(spec.ball_R)
    T = spec.horizon
    violations: list[dict[str, Any]] = []
    count = 0
    batches = -(-samples // batch)
    seqs = np.random.SeedSequence(seed).spawn(batches)

    def record(kind, xs, ts):
        nonlocal count
        count += len(xs)
        for x, t in zip(xs, ts):
            if len(violations) < max_listed:
                violations.append({"kind": kind, "x": [float(v) for v in x], "t": float(t)})

    for b, ss in enumerate(seqs):
        size = min(batch, samples - b * batch)
        rng = np.random.default_rng(ss)
        # interior sampling of a box around B for X_t and TR cap X_T
        box = rng.uniform(-1.5 * r, 1.5 * r, size=(size, n))
        ts = rng.uniform(0.0, T, size=size)
        vals = {name: box[:, i] for i, name in enumerate(u.state_vars)}
        vals[u.time_var] = ts
        vals["__shape"] = (size,)
        gmax = _max_poly(spec.state_constraints, vals)
        gR = spec.ball_R - np.sum(box**2, axis=1)
        bad = (gmax <= 0) & (gR < 0)
        if bad.any():
            record("outside_ball", box[bad], ts[bad])
        valsT = dict(vals)
        valsT[u.time_var] = np.full(size, T)
        lmax = _max_poly(spec.target, valsT)
        gTmax = _max_poly(spec.state_constraints, valsT)
        bad = (lmax <= 0) & (gTmax <= 0) & (gR < 0)
        if bad.any():
            record("outside_ball", box[bad], valsT[u.time_var][bad])
        # sphere sampling for boundary contact
        z = rng.standard_normal((size, n))
        sph = r * z / np.linalg.norm(z, axis=1, keepdims=True)
        ts2 = rng.uniform(0.0, T, size=size)
        svals = {name: sph[:, i] for i, name in enumerate(u.state_vars)}
        svals[u.time_var] = ts2
        svals["__shape"] = (size,)
        smax = _max_poly(spec.state_constraints, svals)
        contact = np.abs(smax) <= tol
        if contact.any():
            record("boundary_contact", sph[contact], ts2[contact])
        inside = smax < -tol
        if inside.any():
            record("ball_boundary_inside_X", sph[inside], ts2[inside])
    return GeometryReport(ok=count == 0, violations=violations, n_violations=count, samples=samples)
