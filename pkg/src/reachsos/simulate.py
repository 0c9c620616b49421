"""Trajectory simulation under piecewise-constant disturbances, and a
Monte-Carlo attempt to falsify a certified inner approximation."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .model import ReachSpec
from .moments import uniform_ball

LEFT_X = "left_X"
MISSED_TR = "missed_TR"
LEFT_B = "left_B"


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DisturbanceSignal:
    """Constant value ``values[k]`` on the k-th of M equal segments of [0, T]."""

    horizon: float
    values: np.ndarray          # (M, m)
    kind: str = "random"

    @property
    def segments(self) -> int:
        return self.values.shape[0]

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.segments + 1)

    def value_at(self, t: float) -> np.ndarray:
        k = min(int(t / self.horizon * self.segments), self.segments - 1)
        return self.values[max(k, 0)]

    def to_dict(self):
        return {"kind": self.kind, "values": self.values.tolist()}


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    signal: DisturbanceSignal
    exit_kind: str | None = None
    exit_time: float | None = None


# ---------------------------------------------------------------------------
# dynamics evaluation


class _Field:
    """Vectorized f(x, d) and constraint evaluation for a spec."""

    def __init__(self, spec: ReachSpec):
        self.spec = spec
        u = spec.universe
        self.u = u

    def _values(self, X, t, D):
        u = self.u
        n = X.shape[0]
        vals = {v: X[:, i] for i, v in enumerate(u.state_vars)}
        vals[u.time_var] = np.full(n, float(t)) if np.isscalar(t) else t
        for i, v in enumerate(u.disturbance_vars):
            vals[v] = D[:, i]
        return vals

    @staticmethod
    def _ev(p, vals, n):
        return np.broadcast_to(p.evaluate(vals), (n,))

    def f(self, X, t, D):
        vals = self._values(X, t, D)
        n = X.shape[0]
        return np.column_stack([self._ev(p, vals, n) for p in self.spec.dynamics])

    def max_g(self, X, t):
        vals = self._values(X, t, np.zeros((X.shape[0], len(self.u.disturbance_vars))))
        n = X.shape[0]
        return np.max(np.vstack([self._ev(g, vals, n) for g in self.spec.state_constraints]), axis=0)

    def max_l(self, X):
        vals = self._values(X, 0.0, np.zeros((X.shape[0], len(self.u.disturbance_vars))))
        n = X.shape[0]
        return np.max(np.vstack([self._ev(p, vals, n) for p in self.spec.target]), axis=0)

    def h_ok(self, D, tol=1e-12):
        if D.shape[1] == 0:
            return np.ones(D.shape[0], dtype=bool)
        u = self.u
        vals = {v: D[:, i] for i, v in enumerate(u.disturbance_vars)}
        for v in (*u.state_vars, u.time_var):
            vals[v] = np.zeros(D.shape[0])
        ok = np.ones(D.shape[0], dtype=bool)
        for h in self.spec.disturbance_set:
            ok &= self._ev(h, vals, D.shape[0]) >= -tol
        return ok


def _step(fld: _Field, X, t, h, D, method):
    if method == "euler":
        return X + h * fld.f(X, t, D)
    k1 = fld.f(X, t, D)
    k2 = fld.f(X + 0.5 * h * k1, t + 0.5 * h, D)
    k3 = fld.f(X + 0.5 * h * k2, t + 0.5 * h, D)
    k4 = fld.f(X + h * k3, t + h, D)
    return X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _segment_grid(horizon: float, segments: int, dt: float):
    """Step sizes per segment so that every breakpoint is a step endpoint."""
    seg = horizon / segments
    nsteps = max(1, math.ceil(seg / dt - 1e-9))
    return seg, nsteps, seg / nsteps


def integrate(spec: ReachSpec, x0, signal: DisturbanceSignal, dt: float = 1e-3,
              method: str = "rk4") -> Trajectory:
    """Integrate one trajectory; stops early (recorded) if the state leaves B(0, R)."""
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown method {method!r}")
    if not dt <= spec.horizon / 100:
        raise ValueError(f"dt={dt} exceeds T/100")
    x = np.asarray(x0, dtype=float).reshape(1, -1)
    if x.shape[1] != spec.n_states:
        raise ValueError("x0 has the wrong dimension")
    if spec.ball_R - float(x[0] @ x[0]) < 0:
        raise ValueError("x0 lies outside B(0, R)")
    fld = _Field(spec)
    seg, nsteps, h = _segment_grid(spec.horizon, signal.segments, dt)
    times, states = [0.0], [x[0].copy()]
    for k in range(signal.segments):
        D = signal.values[k][None, :]
        for s in range(nsteps):
            t = k * seg + s * h
            with np.errstate(over="ignore", invalid="ignore"):
                x = _step(fld, x, t, h, D, method)
            t_new = k * seg + (s + 1) * h if s + 1 < nsteps else (k + 1) * seg
            times.append(t_new)
            states.append(x[0].copy())
            if not np.all(np.isfinite(x)) or spec.ball_R - float(x[0] @ x[0]) < 0:
                return Trajectory(np.array(times), np.array(states), signal, LEFT_B, t_new)
    return Trajectory(np.array(times), np.array(states), signal)


# ---------------------------------------------------------------------------
# disturbances


def _shrink_into(fld: _Field, center: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Move ``point`` toward ``center`` until every h_r >= 0 (bisection)."""
    if fld.h_ok(point[None, :], tol=0.0)[0]:
        return point
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if fld.h_ok((center + mid * (point - center))[None, :], tol=0.0)[0]:
            lo = mid
        else:
            hi = mid
    return center + lo * (point - center)


def extreme_signals(spec: ReachSpec, M: int) -> list[DisturbanceSignal]:
    """Constant signals at the vertices of D's bounding box (pulled into D if needed)."""
    m = len(spec.disturbance_vars)
    if m == 0:
        return [DisturbanceSignal(spec.horizon, np.zeros((M, 0)), "extreme")]
    center, radius = spec.disturbance_box()
    fld = _Field(spec)
    out = []
    for signs in itertools.product((-1.0, 1.0), repeat=m):
        v = _shrink_into(fld, center, center + np.array(signs) * radius)
        out.append(DisturbanceSignal(spec.horizon, np.tile(v, (M, 1)), "extreme"))
    return out


def sample_disturbance(spec: ReachSpec, M: int, rng: np.random.Generator,
                       max_draws: int = 100_000) -> DisturbanceSignal:
    if M < 1:
        raise ValueError("need at least one segment")
    m = len(spec.disturbance_vars)
    if m == 0:
        return DisturbanceSignal(spec.horizon, np.zeros((M, 0)))
    center, radius = spec.disturbance_box()
    fld = _Field(spec)
    vals = np.empty((M, m))
    for k in range(M):
        for _ in range(max_draws):
            d = center + radius * rng.uniform(-1.0, 1.0, m)
            if fld.h_ok(d[None, :])[0]:
                vals[k] = d
                break
        else:
            raise SimulationError(f"rejection sampling of D failed after {max_draws} draws")
    return DisturbanceSignal(spec.horizon, vals)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    samples: int
    signals_per_sample: int
    segments: int
    dt: float
    method: str
    seed: int
    margin: float
    viol_tol: float
    empty: bool = False
    violations: list[dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {"samples": self.samples, "signals_per_sample": self.signals_per_sample,
                "segments": self.segments, "dt": self.dt, "method": self.method, "seed": self.seed,
                "margin": self.margin, "viol_tol": self.viol_tol, "empty": self.empty,
                "violations": self.violations, "pass": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def _inner_points(cert, n: int, margin: float, rng, batch: int = 100_000, max_batches: int = 200):
    spec = cert.spec
    radius = math.sqrt(spec.ball_R)
    chosen = []
    have = 0
    for _ in range(max_batches):
        pts = uniform_ball(rng, batch, spec.n_states, radius)
        keep = pts[cert.psi0_values(pts) <= -margin]
        chosen.append(keep[: n - have])
        have += len(chosen[-1])
        if have >= n:
            return np.vstack(chosen)
    if have == 0:
        return np.zeros((0, spec.n_states))
    raise SimulationError(f"rejection sampling found only {have} of {n} inner points")


def simulate_batch(spec: ReachSpec, X0: np.ndarray, values: np.ndarray, dt: float, method: str,
                   viol_tol: float):
    """Run many trajectories at once; ``values`` has shape (N, M, m).

    Returns (kind, time) per trajectory, with kind None when it stayed in X
    and ended in TR.
    """
    fld = _Field(spec)
    N = X0.shape[0]
    M = values.shape[1]
    seg, nsteps, h = _segment_grid(spec.horizon, M, dt)
    X = X0.astype(float).copy()
    kind = np.full(N, None, dtype=object)
    when = np.full(N, np.nan)
    alive = np.ones(N, dtype=bool)

    def check(t):
        nonlocal alive
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            return
        Xa = X[idx]
        bad_b = ~np.all(np.isfinite(Xa), axis=1) | (spec.ball_R - np.einsum("ij,ij->i", Xa, Xa) < 0)
        with np.errstate(invalid="ignore", over="ignore"):
            bad_x = ~bad_b & (fld.max_g(np.nan_to_num(Xa), t) > viol_tol)
        for mask, label in ((bad_b, LEFT_B), (bad_x, LEFT_X)):
            hit = idx[mask]
            kind[hit] = label
            when[hit] = t
            alive[hit] = False

    check(0.0)
    for k in range(M):
        D = values[:, k, :]
        for s in range(nsteps):
            t = k * seg + s * h
            idx = np.flatnonzero(alive)
            if idx.size == 0:
                break
            with np.errstate(invalid="ignore", over="ignore"):
                X[idx] = _step(fld, X[idx], t, h, D[idx], method)
            check(k * seg + (s + 1) * h if s + 1 < nsteps else (k + 1) * seg)
    idx = np.flatnonzero(alive)
    if idx.size:
        miss = idx[fld.max_l(X[idx]) > viol_tol]
        kind[miss] = MISSED_TR
        when[miss] = spec.horizon
    return kind, when


def validate_inner(cert, spec: ReachSpec | None = None, n_samples: int = 500, signals_per_sample: int = 20,
                   M: int = 10, dt: float = 1e-3, seed: int = 0, margin: float | None = None,
                   viol_tol: float = 1e-6, method: str = "rk4", chunk: int = 4000) -> ValidationReport:
    """Try to falsify the certificate by simulation.

    Sample points come from one stream seeded by ``seed``; the signals of
    sample i come from their own stream seeded by (seed, i), so results do not
    depend on how the work is batched.
    """
    from .certify import emptiness

    spec = spec or cert.spec
    if spec.fingerprint() != cert.spec.fingerprint():
        raise SimulationError("certificate was computed for a different spec")
    if margin is None:
        margin = 1e-6 * (1.0 + max((abs(c) for c in cert.psi0.terms.values()), default=0.0))
    extremes = extreme_signals(spec, M)
    report = ValidationReport(n_samples, signals_per_sample + len(extremes), M, dt, method, seed,
                              margin, viol_tol)
    pts_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    X0 = _inner_points(cert, n_samples, margin, pts_rng)
    if len(X0) == 0:
        if emptiness(cert, seed=seed).empty:
            report.empty = True
            report.samples = 0
            return report
        raise SimulationError("no inner points found by rejection sampling")
    m = len(spec.disturbance_vars)
    S = report.signals_per_sample
    sigs = np.empty((n_samples, S, M, m))
    for i in range(n_samples):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, i]))
        for j in range(signals_per_sample):
            sigs[i, j] = sample_disturbance(spec, M, rng).values
        for j, e in enumerate(extremes):
            sigs[i, signals_per_sample + j] = e.values
    flatX = np.repeat(X0, S, axis=0)
    flatD = sigs.reshape(n_samples * S, M, m)
    kinds = np.empty(n_samples * S, dtype=object)
    times = np.empty(n_samples * S)
    for lo in range(0, len(flatX), chunk):
        hi = min(lo + chunk, len(flatX))
        kinds[lo:hi], times[lo:hi] = simulate_batch(spec, flatX[lo:hi], flatD[lo:hi], dt, method, viol_tol)
    for flat in np.flatnonzero(kinds != None):  # noqa: E711
        i, j = divmod(int(flat), S)
        report.violations.append({
            "x0": X0[i].tolist(), "sample": i, "signal": j,
            "signal_kind": "random" if j < signals_per_sample else "extreme",
            "signal_seed": [seed, 1, i], "kind": kinds[flat], "time": float(times[flat]),
        })
    return report
