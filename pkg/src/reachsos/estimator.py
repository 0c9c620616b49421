"""End-to-end pipeline and a scikit-learn style wrapper around it.

``compute`` runs geometry check, SOS compilation, the SDP solve and
certificate assembly.  ``BackwardReachInnerApprox`` exposes the same thing as
an estimator: ``fit`` takes a problem spec, ``predict`` classifies states.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .certify import Certificate, CertificateError, Emptiness, build_certificate, emptiness
from .model import GeometryReport, ReachSpec, SolveConfig, SpecError, check_geometry, load_spec
from .poly import PolyError
from .sdp import OPTIMAL, SdpFormatError, solve
from .soscompile import CompileError, compile_to_sdp, build_sos_program
from .moments import objective_vector


class PipelineError(RuntimeError):
    """A failure tagged with the module that raised it."""

    def __init__(self, module: str, message: str):
        super().__init__(f"[{module}] {message}")
        self.module = module


_TAGS = [
    (SpecError, "model"), (PolyError, "poly"), (CompileError, "soscompile"),
    (SdpFormatError, "sdp"), (CertificateError, "certify"),
]


def module_tag(exc: BaseException) -> str:
    if isinstance(exc, PipelineError):
        return exc.module
    for cls, tag in _TAGS:
        if isinstance(exc, cls):
            return tag
    mod = type(exc).__module__ or ""
    if mod.startswith("reachsos."):
        return mod.split(".", 1)[1]
    return "cli"


@dataclass
class PipelineResult:
    spec: ReachSpec
    config: SolveConfig
    certificate: Certificate | None
    emptiness: Emptiness | None
    sizes: dict[str, Any]
    timings: dict[str, float] = field(default_factory=dict)
    solver: dict[str, Any] = field(default_factory=dict)
    geometry: GeometryReport | None = None

    @property
    def empty(self) -> bool:
        return bool(self.emptiness is not None and self.emptiness.empty)


def compute(spec: ReachSpec, cfg: SolveConfig, geometry: bool = True, geometry_samples: int = 100_000,
            time_limit: float | None = None, verbose: bool = False) -> PipelineResult:
    """check_geometry -> build_sos_program -> compile_to_sdp -> solve -> build_certificate."""
    timings: dict[str, float] = {}
    report = None
    t0 = time.perf_counter()
    if geometry:
        report = check_geometry(spec, samples=geometry_samples, seed=cfg.seed)
        timings["geometry"] = time.perf_counter() - t0
        if not report.ok:
            first = report.violations[0]
            raise PipelineError("model", f"geometry check failed: {report.n_violations} violations, "
                                         f"first {first['kind']} at x={first['x']}, t={first['t']}")
    t1 = time.perf_counter()
    try:
        program = build_sos_program(spec, cfg)
    except ValueError as exc:
        raise PipelineError("soscompile", str(exc)) from exc
    instance = compile_to_sdp(program, objective_vector(cfg.psi_degree, spec, unit=program.working.scaling.active))
    timings["compile"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    sol = solve(instance, feas_tol=cfg.feas_tol, gap_tol=cfg.gap_tol, max_iters=cfg.max_iters,
                verbose=verbose, time_limit=time_limit)
    timings["solve"] = time.perf_counter() - t2
    solver = {"status": sol.status, "iterations": sol.iterations, "primal_residual": sol.primal_residual,
              "dual_residual": sol.dual_residual, "relative_gap": sol.relative_gap,
              "primal_objective": sol.primal_objective, "dual_objective": sol.dual_objective}
    result = PipelineResult(spec, cfg, None, None, instance.sizes(), timings, solver, report)
    if sol.status != OPTIMAL:
        raise PipelineError("sdp", f"solver stopped with status {sol.status} after {sol.iterations} iterations "
                                   f"(p_res={sol.primal_residual:.2e}, d_res={sol.dual_residual:.2e}, "
                                   f"gap={sol.relative_gap:.2e})")
    t3 = time.perf_counter()
    cert = build_certificate(spec, cfg, instance, sol, program)
    result.certificate = cert
    result.emptiness = emptiness(cert, seed=cfg.seed)
    timings["certify"] = time.perf_counter() - t3
    timings["total"] = time.perf_counter() - t0
    return result


class BackwardReachInnerApprox(BaseEstimator):
    """Inner approximation of a backward reachable set as an estimator.

    ``fit(spec)`` accepts a ReachSpec, a path to a spec JSON file, or the
    name of a bundled example.  After fitting, ``decision_function`` returns
    psi(x, 0) (negative inside the certified set) and ``predict`` returns
    True for states certified to reach the target.
    """

    def __init__(self, degree: int = 6, multiplier_degrees=None, strict: bool = False,
                 feas_tol: float = 1e-8, gap_tol: float = 1e-8, max_iters: int = 200,
                 scale: bool = True, check_geometry: bool = True, seed: int = 0):
        self.degree = degree
        self.multiplier_degrees = multiplier_degrees
        self.strict = strict
        self.feas_tol = feas_tol
        self.gap_tol = gap_tol
        self.max_iters = max_iters
        self.scale = scale
        self.check_geometry = check_geometry
        self.seed = seed

    def _config(self) -> SolveConfig:
        return SolveConfig(psi_degree=self.degree, multiplier_degrees=self.multiplier_degrees,
                           feas_tol=self.feas_tol, gap_tol=self.gap_tol, max_iters=self.max_iters,
                           seed=self.seed, scale=self.scale, strict=self.strict)

    def fit(self, X, y=None):
        spec = X if isinstance(X, ReachSpec) else load_spec(X)
        result = compute(spec, self._config(), geometry=self.check_geometry)
        self.spec_ = spec
        self.result_ = result
        self.certificate_ = result.certificate
        self.d_star_ = result.certificate.objective_value
        self.empty_ = result.empty
        self.n_features_in_ = spec.n_states
        return self

    def _points(self, X) -> np.ndarray:
        check_is_fitted(self, "certificate_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the fitted spec has {self.n_features_in_} states")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._points(X)
        return self.certificate_.psi0_values(X)

    def predict(self, X) -> np.ndarray:
        X = self._points(X)
        psi = self.certificate_.psi0_values(X)
        in_ball = self.spec_.ball_R - np.einsum("ij,ij->i", X, X) >= 0
        return in_ball & (psi <= -self.certificate_.boundary_tol)
