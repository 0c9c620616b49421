"""Compile the reachability sum-of-squares program into a standard-form SDP.

Three families of polynomial identities are emitted, each matched
coefficient by coefficient against Gram-parameterized SOS multipliers::

    -L psi           = s0 + s1 g_B + s2 g_T + sum_r s'_r h_r      over (x, t, d)
    psi - g_i        = s3 + s4 g_B + s5 g_T                       over (x, t)
    psi(., T) - l_j  = s6 + s7 g_B                                over x

with ``L psi = dpsi/dt + grad_x psi . f``, ``g_B`` the ball polynomial and
``g_T = t (T - t)``.  By default the problem is first rescaled so that the
ball becomes the unit ball, the horizon becomes [0, 1] and the disturbance
box becomes [-1, 1]^m; the certificate is mapped back afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
import scipy.sparse as sp

from .model import ReachSpec, SolveConfig
from .moments import MomentVector, objective_vector
from .poly import Exponent, Polynomial, grlex_key, lie_derivative, monomials
from .sdp import SdpInstance


class CompileError(ValueError):
    pass


def monomial_basis(universe, names, degree: int) -> list[Exponent]:
    """Monomials of total degree <= ``degree`` in ``names``, graded-lex, as
    full-universe exponent tuples."""
    if degree < 0:
        raise ValueError("degree must be non-negative")
    idx = [universe.index(n) for n in names]
    idx_sorted = sorted(idx)
    out = []
    for e in monomials(len(idx_sorted), degree):
        full = [0] * universe.nvars
        for i, v in zip(idx_sorted, e):
            full[i] = v
        out.append(tuple(full))
    return out


# ---------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class Scaling:
    """Affine change of variables x = x_scale*xs, t = t_scale*ts, d = c + r*ds."""

    x_scale: float = 1.0
    t_scale: float = 1.0
    d_center: tuple[float, ...] = ()
    d_radius: tuple[float, ...] = ()
    h_norms: tuple[float, ...] = ()
    active: bool = False

    def to_dict(self):
        return {"x_scale": self.x_scale, "t_scale": self.t_scale, "d_center": list(self.d_center),
                "d_radius": list(self.d_radius), "h_norms": list(self.h_norms), "active": self.active}

    @classmethod
    def from_dict(cls, d):
        return cls(d["x_scale"], d["t_scale"], tuple(d["d_center"]), tuple(d["d_radius"]),
                   tuple(d["h_norms"]), d["active"])

    def to_original(self, p: Polynomial) -> Polynomial:
        """Map a working-coordinates polynomial over (x, t) back to original coordinates."""
        u = p.universe
        factors = {v: 1.0 / self.x_scale for v in u.state_vars}
        factors[u.time_var] = 1.0 / self.t_scale
        return p.scale_variables(factors)

    def jacobian(self, n: int) -> float:
        """Volume factor from the unit-ball objective to the original one."""
        return self.x_scale ** n


@dataclass
class WorkingProblem:
    """The spec's data expressed in (possibly rescaled) working coordinates."""

    spec: ReachSpec
    scaling: Scaling
    dynamics: tuple[Polynomial, ...]
    state_constraints: tuple[Polynomial, ...]
    target: tuple[Polynomial, ...]
    disturbance_set: tuple[Polynomial, ...]
    ball: Polynomial
    time_domain: Polynomial
    horizon: float

    @property
    def universe(self):
        return self.spec.universe


def working_problem(spec: ReachSpec, scale: bool = True) -> WorkingProblem:
    u = spec.universe
    T = spec.horizon
    tvar = Polynomial.var(u, u.time_var)
    if not scale:
        return WorkingProblem(
            spec, Scaling(), spec.dynamics, spec.state_constraints, spec.target, spec.disturbance_set,
            spec.g_R, tvar * (Polynomial.constant(u, T) - tvar), T,
        )
    xs = math.sqrt(spec.ball_R)
    center, radius = spec.disturbance_box()
    subs = {v: Polynomial.var(u, v) * xs for v in u.state_vars}
    subs[u.time_var] = tvar * T
    for v, c, r in zip(u.disturbance_vars, center, radius):
        subs[v] = Polynomial.var(u, v) * float(r) + float(c)
    dyn = tuple(f.substitute(subs) * (T / xs) for f in spec.dynamics)
    g = tuple(p.substitute(subs) for p in spec.state_constraints)
    l = tuple(p.substitute(subs) for p in spec.target)
    hs, norms = [], []
    for h in spec.disturbance_set:
        hw = h.substitute(subs)
        nrm = max(abs(c) for c in hw.terms.values()) if not hw.is_zero else 1.0
        hs.append(hw / nrm)
        norms.append(nrm)
    ball = Polynomial.constant(u, 1.0)
    for v in u.state_vars:
        ball = ball - Polynomial.var(u, v) ** 2
    scaling = Scaling(xs, T, tuple(float(c) for c in center), tuple(float(r) for r in radius),
                      tuple(norms), True)
    return WorkingProblem(spec, scaling, dyn, g, l, tuple(hs), ball,
                          tvar * (Polynomial.constant(u, 1.0) - tvar), 1.0)


# ---------------------------------------------------------------------------
# SOS program


@dataclass
class Slot:
    label: str
    domain: Polynomial
    degree: int          # degree of the SOS multiplier
    basis: list[Exponent]  # Gram basis, degree // 2


@dataclass
class SosConstraint:
    """One polynomial identity ``template(psi) = sum_slot s_slot * domain``.

    The template is affine in psi's coefficients: ``sum_j w_j psi_terms[j] + const``.
    """

    label: str
    kind: str            # "lie", "state" or "target"
    index: int
    variables: tuple[str, ...]
    psi_terms: list[Polynomial]
    const: Polynomial
    slots: list[Slot]
    degree: int          # identity degree (even)

    def template(self, psi_coeffs) -> Polynomial:
        out = self.const
        for w, p in zip(psi_coeffs, self.psi_terms):
            if w != 0:
                out = out + p * float(w)
        return out

    def check_degrees(self):
        reach = [s.degree + s.domain.degree for s in self.slots]
        if max(reach, default=-1) < self.degree:
            raise CompileError(f"{self.label}: no multiplier slot reaches identity degree {self.degree}")


@dataclass
class SosProgram:
    working: WorkingProblem
    config: SolveConfig
    psi_basis: list[Exponent]
    constraints: list[SosConstraint] = field(default_factory=list)

    def __len__(self):
        return len(self.constraints)

    def __iter__(self) -> Iterator[SosConstraint]:
        return iter(self.constraints)

    def __getitem__(self, i):
        return self.constraints[i]

    def psi(self, coeffs) -> Polynomial:
        u = self.working.universe
        return Polynomial(u, {e: float(c) for e, c in zip(self.psi_basis, coeffs)})


def _even_up(k: int) -> int:
    return k + (k % 2)


def _even_down(k: int) -> int:
    return k - (k % 2)


def build_sos_program(spec: ReachSpec, cfg: SolveConfig, working: WorkingProblem | None = None) -> SosProgram:
    """Emit the Lie, state-constraint and target identities with their multiplier slots."""
    cfg.check(spec)
    wp = working or working_problem(spec, cfg.scale)
    u = spec.universe
    k = cfg.psi_degree
    xt = (*u.state_vars, u.time_var)
    xtd = (*xt, *u.disturbance_vars)
    psi_basis = monomial_basis(u, xt, k)
    monos = [Polynomial.monomial(u, e) for e in psi_basis]
    prog = SosProgram(wp, cfg, psi_basis)
    zero = Polynomial.zero(u)

    def slots_for(kind, names, specs, identity_degree):
        out = []
        for label, dom in specs:
            if cfg.multiplier_degrees is None:
                deg = _even_down(identity_degree - dom.degree)
            else:
                deg = cfg.multiplier_degrees[0 if kind == "lie" else 1]
                if deg < 0:
                    raise CompileError(f"negative multiplier degree {deg}")
                deg = _even_down(deg)
            if deg < 0:
                continue
            out.append(Slot(label, dom, deg, monomial_basis(u, names, deg // 2)))
        return out

    def add(kind, index, names, psi_terms, const, slot_specs):
        raw = max([p.degree for p in psi_terms] + [const.degree])
        identity_degree = _even_up(raw)
        slots = slots_for(kind, names, slot_specs, identity_degree)
        label = kind if kind == "lie" else f"{kind}[{index}]"
        c = SosConstraint(label, kind, index, tuple(names), psi_terms, const, slots, identity_degree)
        if cfg.multiplier_degrees is None:
            c.check_degrees()
        else:
            reach = max((s.degree + s.domain.degree for s in slots), default=-1)
            if reach < _even_up(max(const.degree, 0)):
                raise CompileError(
                    f"{label}: explicit multiplier degrees reach {reach}, below the fixed part's degree")
        prog.constraints.append(c)

    # -L psi = s0 + s1 gB + s2 gT + sum s'_r h_r
    lie_terms = [-lie_derivative(m, wp.dynamics) for m in monos]
    slot_specs = [("s0", Polynomial.constant(u, 1.0)), ("s1", wp.ball), ("s2", wp.time_domain)]
    slot_specs += [(f"s'{r}", h) for r, h in enumerate(wp.disturbance_set)]
    add("lie", 0, xtd, lie_terms, zero, slot_specs)
    for i, g in enumerate(wp.state_constraints):
        add("state", i, xt, list(monos), -g,
            [("s3", Polynomial.constant(u, 1.0)), ("s4", wp.ball), ("s5", wp.time_domain)])
    T = wp.horizon
    target_terms = [m.restrict(u.time_var, T) for m in monos]
    for j, l in enumerate(wp.target):
        add("target", j, u.state_vars, target_terms, -l,
            [("s6", Polynomial.constant(u, 1.0)), ("s7", wp.ball)])
    return prog


# ---------------------------------------------------------------------------
# SDP


class _Encoder:
    """Packs exponent tuples into int64 keys for vectorized row lookup."""

    def __init__(self, nvars: int, max_degree: int):
        self.base = max_degree + 1
        self.weights = self.base ** np.arange(nvars, dtype=np.int64)

    def encode(self, exps: np.ndarray) -> np.ndarray:
        return exps.astype(np.int64) @ self.weights

    def decode(self, key: int, nvars: int) -> Exponent:
        out = []
        for _ in range(nvars):
            key, r = divmod(int(key), self.base)
            out.append(r)
        return tuple(out)


def compile_to_sdp(program: SosProgram, objective: MomentVector) -> SdpInstance:
    """Coefficient-match every identity; one PSD block per multiplier slot.

    Rows are ordered by (identity index, monomial in graded-lex order).  The
    objective applies ``objective`` to psi's coefficients through t = 0.
    """
    u = program.working.universe
    nv = u.nvars
    basis = program.psi_basis
    n_free = len(basis)
    maxdeg = max([c.degree for c in program] + [s.degree + s.domain.degree for c in program for s in c.slots]
                 + [p.degree for c in program for p in c.psi_terms] + [c.const.degree for c in program])
    enc = _Encoder(nv, max(maxdeg, 1))

    row_offset = 0
    A_free_parts = {"r": [], "c": [], "v": []}
    b_parts = []
    block_dims, block_labels = [], []
    block_entries = []  # (rows, cols, vals) global rows
    row_labels = []

    for ci, con in enumerate(program):
        keys: set[int] = set()
        free_trip = []
        for j, p in enumerate(con.psi_terms):
            for e, c in p.terms.items():
                key = int(enc.encode(np.array(e)))
                keys.add(key)
                free_trip.append((key, j, c))
        const_trip = []
        for e, c in con.const.terms.items():
            key = int(enc.encode(np.array(e)))
            keys.add(key)
            const_trip.append((key, c))
        slot_data = []
        for slot in con.slots:
            Z = np.array(slot.basis, dtype=np.int64).reshape(len(slot.basis), nv)
            d = len(slot.basis)
            prod = (Z[:, None, :] + Z[None, :, :]).reshape(d * d, nv)
            cols = np.arange(d * d)
            dom_items = list(slot.domain.terms.items())
            rk, ck, vk = [], [], []
            for e, c in dom_items:
                kk = enc.encode(prod + np.array(e, dtype=np.int64))
                rk.append(kk)
                ck.append(cols)
                vk.append(np.full(d * d, -c))
            rk = np.concatenate(rk) if rk else np.zeros(0, np.int64)
            keys.update(np.unique(rk).tolist())
            slot_data.append((slot, d, rk, np.concatenate(ck) if ck else rk, np.concatenate(vk) if vk else np.zeros(0)))
        exps = sorted((enc.decode(k, nv) for k in keys), key=grlex_key)
        sorted_keys = enc.encode(np.array(exps, dtype=np.int64).reshape(len(exps), nv))
        order = np.argsort(sorted_keys)
        lookup_keys = sorted_keys[order]

        def rows_of(karr):
            pos = np.searchsorted(lookup_keys, karr)
            return order[pos] + row_offset

        if free_trip:
            kk = np.array([t[0] for t in free_trip], dtype=np.int64)
            A_free_parts["r"].append(rows_of(kk))
            A_free_parts["c"].append(np.array([t[1] for t in free_trip]))
            A_free_parts["v"].append(np.array([t[2] for t in free_trip]))
        bvec = np.zeros(len(exps))
        for key, c in const_trip:
            bvec[rows_of(np.array([key]))[0] - row_offset] -= c
        b_parts.append(bvec)
        for slot, d, rk, ck, vk in slot_data:
            block_dims.append(d)
            block_labels.append(f"{con.label}:{slot.label}")
            block_entries.append((rows_of(rk), ck, vk))
        row_labels.extend((ci, e) for e in exps)
        row_offset += len(exps)

    m = row_offset
    if A_free_parts["r"]:
        A_free = sp.csr_matrix((np.concatenate(A_free_parts["v"]),
                                (np.concatenate(A_free_parts["r"]), np.concatenate(A_free_parts["c"]))),
                               shape=(m, n_free))
    else:
        A_free = sp.csr_matrix((m, n_free))
    A_blocks = [sp.csr_matrix((v, (r, c)), shape=(m, d * d)) for (r, c, v), d in zip(block_entries, block_dims)]
    b = np.concatenate(b_parts) if b_parts else np.zeros(0)

    c_free = np.zeros(n_free)
    ti = u.time_index
    for j, e in enumerate(basis):
        if e[ti] == 0 and not any(e[i] for i in u.disturbance_indices):
            alpha = tuple(e[i] for i in u.state_indices)
            c_free[j] = objective.entries.get(alpha, 0.0)
    C_blocks = [np.zeros((d, d)) for d in block_dims]
    return SdpInstance(n_free, block_dims, A_free, A_blocks, b, c_free, C_blocks,
                       block_labels=block_labels, row_labels=row_labels)


def compile_spec(spec: ReachSpec, cfg: SolveConfig) -> tuple[SosProgram, SdpInstance]:
    """build_sos_program + objective_vector + compile_to_sdp in one call."""
    program = build_sos_program(spec, cfg)
    objective = objective_vector(cfg.psi_degree, spec, unit=program.working.scaling.active)
    return program, compile_to_sdp(program, objective)
