import dataclasses
import math

import numpy as np
import pytest

from conftest import solved
from reachsos.certify import (
    Certificate, CertificateError, IndefiniteGram, ResidualExceeded, build_certificate, contour2d, emptiness,
    inner_volume, membership, verify,
)
from reachsos.model import SolveConfig, load_example, spec_from_dict
from reachsos.moments import uniform_ball
from reachsos.poly import Polynomial, lie_derivative, parse_poly
from reachsos.sdp import OPTIMAL, SdpSolution
from reachsos.soscompile import Scaling, compile_spec


def toy_spec():
    return spec_from_dict({
        "name": "toy", "state_vars": ["x"], "disturbance_vars": [], "horizon": 1.0,
        "dynamics": ["-x"], "target": ["x^2 - 0.25"], "state_constraints": ["x^2 - 1"],
        "disturbance_set": [], "ball_R": 2.0,
    })


def hand_solution(C, s6):
    """psi = C with constant multipliers, for the toy spec in unscaled coordinates.

    psi - g       = (C - 1)     + 1 * (2 - x^2)
    psi(x,T) - l  = (C - 1.75)  + 1 * (2 - x^2)
    -L psi        = 0
    """
    cfg = SolveConfig(2, scale=False)
    prog, inst = compile_spec(toy_spec(), cfg)
    x = np.zeros(inst.n_free)
    x[prog.psi_basis.index((0, 0))] = C
    blocks = {label: np.zeros((d, d)) for label, d in zip(inst.block_labels, inst.block_dims)}
    blocks["state[0]:s3"][0, 0] = C - 1
    blocks["state[0]:s4"][0, 0] = 1.0
    blocks["target[0]:s6"][0, 0] = s6
    blocks["target[0]:s7"][0, 0] = 1.0
    Xs = [blocks[label] for label in inst.block_labels]
    sol = SdpSolution(OPTIMAL, x, Xs, np.zeros(inst.m), [np.eye(d) for d in inst.block_dims],
                      0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    return toy_spec(), cfg, prog, inst, sol


def bare_certificate(spec, psi_text):
    """A certificate shell carrying only a psi; enough for geometric queries."""
    psi = parse_poly(psi_text, spec.universe)
    return Certificate(spec, SolveConfig(4), Scaling(), psi, psi, (), 0.0, {}, {})


class TestBuild:
    def test_hand_built_toy_is_accepted(self):
        spec, cfg, prog, inst, sol = hand_solution(2.0, 0.25)
        cert = build_certificate(spec, cfg, inst, sol, prog)
        assert cert.max_residual == 0.0
        assert cert.psi == Polynomial.constant(spec.universe, 2.0)
        # integral of 2 over [-sqrt 2, sqrt 2]
        assert cert.objective_value == pytest.approx(4 * math.sqrt(2), rel=1e-14)
        verify(cert)

    def test_hand_built_toy_identity_not_closing(self):
        spec, cfg, prog, inst, sol = hand_solution(1.5, 0.0)
        with pytest.raises(ResidualExceeded) as info:
            build_certificate(spec, cfg, inst, sol, prog)
        assert info.value.identity == "target[0]"
        assert info.value.monomial == "1"

    def test_hand_built_toy_negative_multiplier(self):
        spec, cfg, prog, inst, sol = hand_solution(1.5, -0.25)
        with pytest.raises(IndefiniteGram) as info:
            build_certificate(spec, cfg, inst, sol, prog)
        assert info.value.block == "target[0]:s6"

    def test_example1_degree6(self):
        _, cfg, _, _, _, cert = solved("ex1a", 6)
        assert all(r.value <= 1e-6 for r in cert.residuals.values())
        assert cert.min_eigenvalue >= -1e-7
        assert set(cert.residuals) == {"lie", "state[0]", "target[0]"}
        report = verify(cert)
        assert report["max_residual"] == pytest.approx(cert.max_residual, abs=1e-12)

    def test_tampered_gram_entry(self):
        spec, cfg, prog, inst, sol, _ = solved("ex1a", 4)
        Xs = [X.copy() for X in sol.X_blocks]
        Xs[0][1, 2] += 1e-3
        Xs[0][2, 1] += 1e-3
        bad = dataclasses.replace(sol, X_blocks=Xs)
        with pytest.raises(ResidualExceeded) as info:
            build_certificate(spec, cfg, inst, bad, prog)
        assert info.value.identity == "lie"

    def test_non_optimal_solution_rejected(self):
        spec, cfg, prog, inst, sol, _ = solved("ex1a", 4)
        with pytest.raises(CertificateError):
            build_certificate(spec, cfg, inst, dataclasses.replace(sol, status="max_iters"), prog)

    def test_strict_mode_tightens(self):
        spec, cfg, prog, inst, sol, _ = solved("ex1a", 4)
        Xs = [X.copy() for X in sol.X_blocks]
        Xs[0][0, 0] += 5e-8
        bad = dataclasses.replace(sol, X_blocks=Xs)
        build_certificate(spec, cfg, inst, bad, prog)
        with pytest.raises(ResidualExceeded):
            build_certificate(spec, dataclasses.replace(cfg, strict=True), inst, bad, prog)

    @pytest.mark.parametrize("name", ["ex1a", "ex2a"])
    def test_objective_non_increasing_in_degree(self, name):
        d = [solved(name, k)[5].objective_value for k in (4, 6, 8)]
        assert d[1] <= d[0] + 1e-6 and d[2] <= d[1] + 1e-6


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        cert = solved("ex2a", 4)[5]
        path = tmp_path / "c.json"
        cert.save(path)
        back = Certificate.load(path)
        assert back.psi == cert.psi and back.psi_working == cert.psi_working
        assert back.objective_value == cert.objective_value
        assert back.spec == cert.spec
        verify(back)

    def test_stored_diagnostics_must_match(self):
        doc = solved("ex2a", 4)[5].to_dict()
        doc["residuals"]["lie"]["max"] += 1e-9
        with pytest.raises(CertificateError):
            verify(Certificate.from_dict(doc))

    def test_fingerprint_mismatch(self):
        doc = solved("ex2a", 4)[5].to_dict()
        doc["spec"]["horizon"] = 2.0
        with pytest.raises(CertificateError):
            Certificate.from_dict(doc)

    def test_unknown_format(self):
        doc = solved("ex2a", 4)[5].to_dict()
        doc["format"] = "something-else"
        with pytest.raises(CertificateError):
            Certificate.from_dict(doc)

    def test_multipliers_printed_as_polynomials(self):
        doc = solved("ex2a", 4)[5].to_dict()
        assert set(doc["multipliers"]) >= {"lie:s0", "state[0]:s3", "target[0]:s6"}
        assert all(isinstance(m["polynomial"], str) for m in doc["multipliers"].values())


class TestMembership:
    def test_outside_ball(self):
        cert = bare_certificate(load_example("ex1a"), "-1")
        assert membership(cert, [1.2, 0.0]) == "outside"

    def test_exact_zero_is_boundary(self):
        cert = bare_certificate(load_example("ex1a"), "x")
        assert membership(cert, [0.0, 0.3]) == "boundary"
        assert membership(cert, [-0.1, 0.3]) == "inside"
        assert membership(cert, [0.1, 0.3]) == "outside"

    def test_example1_interior_point(self):
        # the grid value there is about -0.39, well inside R_0
        cert = solved("ex1a", 6)[5]
        assert membership(cert, [-0.35, -0.54]) == "inside"

    def test_bad_dimension(self):
        cert = bare_certificate(load_example("ex1a"), "x")
        with pytest.raises(ValueError):
            membership(cert, [0.0])


class TestEmptiness:
    def test_example2b_degree4_is_empty(self):
        e = emptiness(solved("ex2b", 4)[5])
        assert e.empty and e.min_value > 0

    def test_example1_degree6_is_not_empty(self):
        e = emptiness(solved("ex1a", 6)[5])
        assert not e.empty and e.min_value < 0
        assert membership(solved("ex1a", 6)[5], e.argmin) == "inside"

    def test_inner_volume(self):
        cert = solved("ex1a", 6)[5]
        vol, se = inner_volume(cert, samples=200_000)
        assert 0 < vol < math.pi * 1.21
        assert 0 < se < 0.01


class TestContour:
    def test_unit_circle(self):
        cert = bare_certificate(load_example("ex1a"), "x^2 + y^2 - 1")
        res = 200
        c = contour2d(cert, resolution=res)
        assert len(c) == 1
        cell = 2 * 1.1 / (res - 1)
        r = np.linalg.norm(c.curves[0], axis=1)
        assert np.max(np.abs(r - 1)) <= 2 * math.sqrt(2) * cell
        assert np.allclose(c.curves[0][0], c.curves[0][-1])

    def test_empty_set_has_no_curves(self):
        c = contour2d(bare_certificate(load_example("ex1a"), "1"))
        assert len(c) == 0
        assert c.to_csv() == "curve_id,x,y\n"

    def test_csv_format(self):
        c = contour2d(bare_certificate(load_example("ex1a"), "x^2 + y^2 - 0.25"), resolution=50)
        lines = c.to_csv().splitlines()
        assert lines[0] == "curve_id,x,y"
        cid, x, y = lines[1].split(",")
        assert cid == "0" and math.hypot(float(x), float(y)) == pytest.approx(0.5, abs=0.05)

    def test_seven_state_slice(self):
        spec = load_example("ex3")
        cert = bare_certificate(spec, "x1^2 + x2^2 + x3^2 + x4 - 0.1")
        c = contour2d(cert, resolution=150, slice_values={v: 0.0 for v in spec.state_vars[2:]})
        assert len(c) == 1
        assert np.allclose(c.curves[0][0], c.curves[0][-1])
        assert np.allclose(np.linalg.norm(c.curves[0], axis=1), math.sqrt(0.1), atol=0.01)

    def test_seven_state_needs_slice(self):
        cert = bare_certificate(load_example("ex3"), "x1")
        with pytest.raises(ValueError):
            contour2d(cert)

    def test_level_set_clipped_to_ball(self):
        # {x <= 0} meets the ball in a chord; the contour must stay inside B
        c = contour2d(bare_certificate(load_example("ex1a"), "x"), resolution=101)
        pts = np.vstack(c.curves)
        assert np.all((pts ** 2).sum(axis=1) <= 1.21 + 1e-12)

    @pytest.mark.parametrize("name", ["ex1a", "ex2a"])
    def test_vertices_sit_on_the_zero_set(self, name):
        cert = solved(name, 6)[5]
        res = 300
        c = contour2d(cert, resolution=res)
        assert len(c) >= 1
        r = math.sqrt(cert.spec.ball_R)
        cell = 2 * r / (res - 1)
        # Lipschitz bound of psi(., 0) over B from its gradient on a fine sample
        u = cert.spec.universe
        pts = uniform_ball(np.random.default_rng(0), 50_000, 2, r)
        vals = {u.state_vars[0]: pts[:, 0], u.state_vars[1]: pts[:, 1], u.time_var: np.zeros(len(pts))}
        for v in u.disturbance_vars:
            vals[v] = np.zeros(len(pts))
        grad = [cert.psi0.partial(v).evaluate(vals) for v in u.state_vars]
        lip = 1.1 * float(np.max(np.hypot(*grad)))
        for curve in c.curves:
            assert np.all(np.abs(cert.psi0_values(curve)) <= 2 * cell * lip)


def _shadow_points(spec, count, rng):
    r = math.sqrt(spec.ball_R)
    xs = uniform_ball(rng, count, spec.n_states, r)
    ts = rng.uniform(0, spec.horizon, count)
    center, half = spec.disturbance_box()
    ds = []
    while sum(len(d) for d in ds) < count:
        cand = rng.uniform(center - half, center + half, size=(count, len(center)))
        vals = {v: cand[:, i] for i, v in enumerate(spec.disturbance_vars)}
        ok = np.all([np.broadcast_to(h.evaluate(vals), (count,)) >= 0 for h in spec.disturbance_set], axis=0)
        ds.append(cand[ok])
    return xs, ts, np.vstack(ds)[:count]


@pytest.mark.parametrize("name", ["ex1a", "ex2a"])
def test_pointwise_shadow_of_the_sos_constraints(name):
    spec, cfg, _, _, _, cert = solved(name, 6)
    u = spec.universe
    xs, ts, ds = _shadow_points(spec, 10_000, np.random.default_rng(1))
    vals = {v: xs[:, i] for i, v in enumerate(u.state_vars)}
    vals[u.time_var] = ts
    for i, v in enumerate(u.disturbance_vars):
        vals[v] = ds[:, i]
    tol = 1e-5
    assert np.max(lie_derivative(cert.psi, spec.dynamics).evaluate(vals)) <= tol
    for g in spec.state_constraints:
        assert np.min((cert.psi - g).evaluate(vals)) >= -tol
    valsT = dict(vals, **{u.time_var: np.full(len(ts), spec.horizon)})
    for l in spec.target:
        assert np.min((cert.psi - l).evaluate(valsT)) >= -tol
