"""Grid solver for the obstacle Hamilton-Jacobi equation on 2-D state spaces.

The value u(x, t) is marched backward from t = T with a first-order
Lax-Friedrichs scheme and forward Euler in time:

    u(t - dt) = max( u + dt * [H(x, pbar) + sum_i a_i (p_i+ - p_i-) / 2],  max_i g_i(x, t - dt) )

with H(x, p) = max over d in D of p . f(x, d) and a_i >= |f_i| on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .certify import LevelSetContour, extract_contours
from .model import ReachSpec
from .poly import Polynomial


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridField:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray   # values[i, j] = u(xs[i], ys[j])
    time: float

    def __post_init__(self):
        if len(self.xs) < 3 or len(self.ys) < 3:
            raise GridError("a grid needs at least 3 nodes per axis")
        if self.values.shape != (len(self.xs), len(self.ys)):
            raise GridError("values do not match the grid axes")
        if not np.all(np.isfinite(self.values)):
            raise GridError("non-finite grid values")

    @property
    def bounds(self):
        return (float(self.xs[0]), float(self.xs[-1])), (float(self.ys[0]), float(self.ys[-1]))

    @property
    def shape(self):
        return self.values.shape

    def with_values(self, values: np.ndarray, time: float) -> "GridField":
        return GridField(self.xs, self.ys, values, time)

    def to_csv(self) -> str:
        gx, gy = np.meshgrid(self.xs, self.ys, indexing="ij")
        rows = np.column_stack([gx.ravel(), gy.ravel(), self.values.ravel()])
        body = "\n".join(f"{x:.17g},{y:.17g},{u:.17g}" for x, y, u in rows)
        return "x,y,u\n" + body + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


def grid_axes(spec: ReachSpec, n: int, inflate: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Node coordinates covering B(0, R)'s bounding box inflated by ``inflate``."""
    if spec.n_states != 2:
        raise GridError(f"the grid solver handles 2 state variables, got {spec.n_states}")
    if n < 3:
        raise GridError("a grid needs at least 3 nodes per axis")
    half = (1.0 + inflate) * math.sqrt(spec.ball_R)
    ax = np.linspace(-half, half, n)
    return ax, ax.copy()


class _Problem:
    """Everything about the spec that the time loop evaluates repeatedly."""

    def __init__(self, spec: ReachSpec, xs, ys, d_samples: int = 101):
        if spec.n_states != 2:
            raise GridError(f"the grid solver handles 2 state variables, got {spec.n_states}")
        self.spec = spec
        u = spec.universe
        self.u = u
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        self.shape = gx.shape
        self._base = {u.state_vars[0]: gx.ravel(), u.state_vars[1]: gy.ravel()}
        if any(u.time_var in f.variables() for f in spec.dynamics):
            raise GridError("the grid solver assumes time-invariant dynamics f(x, d)")
        dvars = u.disturbance_vars
        self.affine = all(f.degree_in(dvars) <= 1 for f in spec.dynamics)
        m = len(dvars)
        self.exact = self.affine and m <= 1
        if m == 0:
            self.d_points = np.zeros((1, 0))
        else:
            self.d_points = self._d_candidates(d_samples)
        if self.exact:
            # f = f0(x) + d * f1(x): coefficients on the grid
            self.f0 = [self._eval(f.substitute({v: 0.0 for v in dvars})) for f in spec.dynamics]
            self.f1 = [self._eval(f.partial(dvars[0])) if m else np.zeros(self.shape)
                       for f in spec.dynamics]
            if m:
                lo, hi = self.d_points[:, 0].min(), self.d_points[:, 0].max()
                self.d_lo, self.d_hi = float(lo), float(hi)
        else:
            self.f_samples = [[self._eval(f.substitute({v: float(d[k]) for k, v in enumerate(dvars)}))
                               for f in spec.dynamics] for d in self.d_points]
        self.alpha = self._alpha()
        self._g_static = [self._eval(g) if u.time_var not in g.variables() else None
                          for g in spec.state_constraints]

    def _eval(self, p: Polynomial, t: float = 0.0) -> np.ndarray:
        vals = dict(self._base)
        n = next(iter(vals.values())).size
        vals[self.u.time_var] = np.full(n, t)
        for v in self.u.disturbance_vars:
            vals[v] = np.zeros(n)
        return np.broadcast_to(p.evaluate(vals), (n,)).reshape(self.shape).copy()

    def _d_candidates(self, count: int) -> np.ndarray:
        from .simulate import _Field, extreme_signals

        spec = self.spec
        verts = np.array([s.values[0] for s in extreme_signals(spec, 1)])
        center, radius = spec.disturbance_box()
        m = len(center)
        per_axis = max(2, int(round(count ** (1.0 / m))))
        axes = [np.linspace(c - r, c + r, per_axis) for c, r in zip(center, radius)]
        grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(m, -1).T
        grid = grid[_Field(spec).h_ok(grid)]
        return np.vstack([verts, grid])

    def _alpha(self) -> np.ndarray:
        if self.exact:
            if len(self.u.disturbance_vars):
                return np.array([max(np.max(np.abs(f0 + self.d_lo * f1)), np.max(np.abs(f0 + self.d_hi * f1)))
                                 for f0, f1 in zip(self.f0, self.f1)])
            return np.array([np.max(np.abs(f0)) for f0 in self.f0])
        return np.array([max(np.max(np.abs(fs[i])) for fs in self.f_samples) for i in range(2)])

    def hamiltonian(self, p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
        if self.exact:
            base = p0 * self.f0[0] + p1 * self.f0[1]
            if not len(self.u.disturbance_vars):
                return base
            q = p0 * self.f1[0] + p1 * self.f1[1]
            return base + np.maximum(self.d_lo * q, self.d_hi * q)
        out = None
        for fs in self.f_samples:
            v = p0 * fs[0] + p1 * fs[1]
            out = v if out is None else np.maximum(out, v)
        return out

    def obstacle(self, t: float) -> np.ndarray:
        out = None
        for g, static in zip(self.spec.state_constraints, self._g_static):
            v = static if static is not None else self._eval(g, t)
            out = v if out is None else np.maximum(out, v)
        return out


def terminal_field(spec: ReachSpec, n: int = 500, xs=None, ys=None) -> GridField:
    """u(x, T) = max(max_j l_j(x), max_i g_i(x, T)) on the grid."""
    if xs is None or ys is None:
        xs, ys = grid_axes(spec, n)
    prob = _Problem(spec, xs, ys, d_samples=1)
    vals = prob.obstacle(spec.horizon)
    for l in spec.target:
        vals = np.maximum(vals, prob._eval(l, spec.horizon))
    return GridField(np.asarray(xs, float), np.asarray(ys, float), vals, spec.horizon)


def max_stable_dt(field: GridField, prob: "_Problem") -> float:
    dx = min(field.xs[1] - field.xs[0], field.ys[1] - field.ys[0])
    total = float(np.sum(prob.alpha))
    return math.inf if total == 0 else 0.5 * dx / total


def _one_sided(u: np.ndarray, h: float, axis: int):
    """Backward and forward differences, one-sided at the two ends."""
    d = np.diff(u, axis=axis) / h
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 0)
    pm = np.pad(d, pad, mode="edge")
    pad[axis] = (0, 1)
    pp = np.pad(d, pad, mode="edge")
    return pm, pp


def step_back(field: GridField, spec: ReachSpec, dt: float, prob: _Problem | None = None) -> GridField:
    """One backward Euler step from field.time to field.time - dt."""
    prob = prob or _Problem(spec, field.xs, field.ys)
    limit = max_stable_dt(field, prob)
    if dt > limit * (1 + 1e-12):
        raise GridError(f"dt={dt:.3e} violates the CFL bound {limit:.3e}")
    u = field.values
    hx = field.xs[1] - field.xs[0]
    hy = field.ys[1] - field.ys[0]
    pxm, pxp = _one_sided(u, hx, 0)
    pym, pyp = _one_sided(u, hy, 1)
    H = prob.hamiltonian(0.5 * (pxm + pxp), 0.5 * (pym + pyp))
    diss = prob.alpha[0] * (pxp - pxm) / 2 + prob.alpha[1] * (pyp - pym) / 2
    new = u + dt * (H + diss)
    # boundary rows/columns: the one-sided update, clamped from below by
    # linear extrapolation from the interior
    new[0, :] = np.maximum(new[0, :], 2 * new[1, :] - new[2, :])
    new[-1, :] = np.maximum(new[-1, :], 2 * new[-2, :] - new[-3, :])
    new[:, 0] = np.maximum(new[:, 0], 2 * new[:, 1] - new[:, 2])
    new[:, -1] = np.maximum(new[:, -1], 2 * new[:, -2] - new[:, -3])
    t_new = field.time - dt
    new = np.maximum(new, prob.obstacle(t_new))
    return field.with_values(new, t_new)


def run(spec: ReachSpec, n: int = 500, cfl: float = 1.0, d_samples: int = 101) -> GridField:
    """March u from T back to 0 on an n x n grid; returns u(., 0)."""
    xs, ys = grid_axes(spec, n)
    field = terminal_field(spec, xs=xs, ys=ys)
    prob = _Problem(spec, xs, ys, d_samples)
    limit = max_stable_dt(field, prob) * cfl
    steps = max(1, math.ceil(spec.horizon / limit - 1e-12))
    dt = spec.horizon / steps
    for k in range(steps):
        field = step_back(field, spec, dt, prob)
        if k == steps - 1:
            field = field.with_values(field.values, 0.0)
    return field


def value_at(field: GridField, x) -> float:
    """Bilinear interpolation of the field at a point inside the grid."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(values_at(field, x[None, :])[0])


def values_at(field: GridField, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    (x0, x1), (y0, y1) = field.bounds
    tol = 1e-12 * max(1.0, abs(x0), abs(x1), abs(y0), abs(y1))
    if (np.any(pts[:, 0] < x0 - tol) or np.any(pts[:, 0] > x1 + tol)
            or np.any(pts[:, 1] < y0 - tol) or np.any(pts[:, 1] > y1 + tol)):
        raise GridError("point outside the grid bounds")
    nx, ny = field.shape
    fx = np.clip((pts[:, 0] - x0) / (x1 - x0) * (nx - 1), 0, nx - 1)
    fy = np.clip((pts[:, 1] - y0) / (y1 - y0) * (ny - 1), 0, ny - 1)
    i = np.minimum(fx.astype(int), nx - 2)
    j = np.minimum(fy.astype(int), ny - 2)
    a = fx - i
    b = fy - j
    v = field.values
    return ((1 - a) * (1 - b) * v[i, j] + a * (1 - b) * v[i + 1, j]
            + (1 - a) * b * v[i, j + 1] + a * b * v[i + 1, j + 1])


def zero_contour(field: GridField, level: float = 0.0, axes=("x", "y")) -> LevelSetContour:
    return LevelSetContour(tuple(extract_contours(field.xs, field.ys, field.values, level)), tuple(axes), level)
