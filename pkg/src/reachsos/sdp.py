"""Standard-form semidefinite programs and a dense primal-dual interior-point solver.

Primal form::

    minimize    c_free . x + sum_b <C_b, X_b>
    subject to  A_free x + sum_b A_b(X_b) = b,   X_b PSD,  x free

where ``A_b(X)_i = <A_{b,i}, X>`` and each ``A_{b,i}`` is symmetric.  Row ``i``
of the sparse matrix ``A_blocks[b]`` holds ``A_{b,i}`` flattened row-major over
the full (not triangular) matrix, so an off-diagonal Gram entry contributes
twice.  The dual is::

    maximize  b . y   subject to  A_free^T y = c_free,
              Z_b = C_b - A_b^*(y) PSD.
"""

from __future__ import annotations

import io
import logging
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
PRIMAL_INFEASIBLE = "primal_infeasible"
DUAL_INFEASIBLE = "dual_infeasible"
MAX_ITERS = "max_iters"
NUMERICAL_FAILURE = "numerical_failure"


class SdpFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class SdpInstance:
    n_free: int
    block_dims: list[int]
    A_free: sp.csr_matrix
    A_blocks: list[sp.csr_matrix]
    b: np.ndarray
    c_free: np.ndarray
    C_blocks: list[np.ndarray]
    block_labels: list[str] = field(default_factory=list)
    row_labels: list = field(default_factory=list)

    def __post_init__(self):
        m = len(self.b)
        self.b = np.asarray(self.b, dtype=float)
        self.c_free = np.asarray(self.c_free, dtype=float).reshape(self.n_free)
        self.A_free = sp.csr_matrix(self.A_free, shape=(m, self.n_free))
        self.A_blocks = [sp.csr_matrix(A, shape=(m, d * d)) for A, d in zip(self.A_blocks, self.block_dims)]
        self.C_blocks = [np.asarray(C, dtype=float).reshape(d, d) for C, d in zip(self.C_blocks, self.block_dims)]
        if not self.block_labels:
            self.block_labels = [f"block{j}" for j in range(len(self.block_dims))]
        if not (len(self.A_blocks) == len(self.C_blocks) == len(self.block_dims) == len(self.block_labels)):
            raise ValueError("inconsistent block data")

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def n_psd_entries(self) -> int:
        return sum(d * d for d in self.block_dims)

    def objective(self, x_free, X_blocks) -> float:
        return float(self.c_free @ x_free + sum(np.vdot(C, X) for C, X in zip(self.C_blocks, X_blocks)))

    def apply(self, x_free, X_blocks) -> np.ndarray:
        out = self.A_free @ x_free
        for A, X in zip(self.A_blocks, X_blocks):
            out = out + A @ X.ravel()
        return out

    def adjoint(self, y) -> list[np.ndarray]:
        return [(A.T @ y).reshape(d, d) for A, d in zip(self.A_blocks, self.block_dims)]

    def sizes(self) -> dict:
        return {
            "free_vars": self.n_free,
            "eq_constraints": self.m,
            "psd_blocks": len(self.block_dims),
            "block_dims": list(self.block_dims),
            "max_block": max(self.block_dims, default=0),
        }


@dataclass
class SdpSolution:
    status: str
    x_free: np.ndarray
    X_blocks: list[np.ndarray]
    y: np.ndarray
    Z_blocks: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    mu: float
    iterations: int
    solve_time: float = 0.0
    history: list[dict] = field(default_factory=list)

    @property
    def relative_gap(self) -> float:
        return abs(self.primal_objective - self.dual_objective) / (
            1 + abs(self.primal_objective) + abs(self.dual_objective))

    def min_eigenvalues(self) -> list[float]:
        return [float(np.linalg.eigvalsh(X)[0]) if X.size else 0.0 for X in self.X_blocks]


# ---------------------------------------------------------------------------
# solver


class _Schur:
    """Per-block bookkeeping for forming sum_b A_b (X_b kron Z_b^-1) A_b^T."""

    def __init__(self, A: sp.csr_matrix, d: int, chunk: int):
        self.d = d
        A = A.tocsr()
        A.sort_indices()
        counts = np.diff(A.indptr)
        self.active = np.flatnonzero(counts)
        self.A_act = A[self.active]
        self.entries = []
        for i in self.active:
            lo, hi = A.indptr[i], A.indptr[i + 1]
            cols = A.indices[lo:hi]
            self.entries.append((cols // d, cols % d, A.data[lo:hi]))
        self.chunk = chunk

    def add_to(self, M: np.ndarray, X: np.ndarray, Zi: np.ndarray):
        d = self.d
        act = self.active
        nact = len(act)
        for start in range(0, nact, self.chunk):
            stop = min(start + self.chunk, nact)
            G = np.empty((stop - start, d * d))
            for k in range(start, stop):
                ps, qs, vs = self.entries[k]
                # X A_i Z^-1 with A_i = sum v e_p e_q^T
                G[k - start] = (X[:, ps] @ (vs[:, None] * Zi[qs, :])).ravel()
            block = self.A_act @ G.T
            M[np.ix_(act, act[start:stop])] += block


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX PSD (X positive definite)."""
    if X.size == 0:
        return np.inf
    L = np.linalg.cholesky(X)
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh((W + W.T) / 2)[0]
    return np.inf if lam >= 0 else -1.0 / lam


def _sym(A):
    return (A + A.T) / 2


# Mehrotra's sigma = (mu_aff/mu)^3 is floored so iterates stay near the central
# path; with sigma -> 0 the Newton systems of degenerate SOS programs lose
# accuracy well before the gap target is reached.
_SIGMA_MIN = 0.05


class _Projector:
    """Minimal-norm correction onto the affine set {A_free x + A(X) = b}.

    The normal matrix [A_free A][A_free A]^T does not involve the iterates, so
    unlike the Schur complement it stays well conditioned near the optimum.
    """

    def __init__(self, inst: SdpInstance):
        self.inst = inst
        A = sp.hstack([inst.A_free] + inst.A_blocks).tocsr()
        N = (A @ A.T).toarray()
        self.fac = None
        if inst.m:
            try:
                self.fac = sla.cho_factor(N, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                self.fac = None

    def __call__(self, x, X, rp):
        if self.fac is None:
            return None
        w = sla.cho_solve(self.fac, rp, check_finite=False)
        for _ in range(2):
            dx = self.inst.A_free.T @ w
            dX = self.inst.adjoint(w)
            w = w + sla.cho_solve(self.fac, rp - self.inst.apply(dx, dX), check_finite=False)
        dx = self.inst.A_free.T @ w
        dX = self.inst.adjoint(w)
        return x + dx, [_sym(Xb + d) for Xb, d in zip(X, dX)]


def solve(inst: SdpInstance, feas_tol: float = 1e-8, gap_tol: float = 1e-8,
          max_iters: int = 200, verbose: bool = False, init_scale: float = 1.0,
          time_limit: float | None = None, chunk: int = 256, refine: int = 2) -> SdpSolution:
    """Infeasible-start primal-dual path following (HKM direction, Mehrotra
    predictor-corrector).  Starts from X = Z = init_scale * I, y = 0, x = 0."""
    if not (0 < feas_tol <= 1e-2 and 0 < gap_tol <= 1e-2):
        raise ValueError("tolerances must lie in (0, 1e-2]")
    t0 = time.perf_counter()
    m = inst.m
    dims = inst.block_dims
    nb = len(dims)
    ntot = max(sum(dims), 1)
    schur = [_Schur(A, d, chunk) for A, d in zip(inst.A_blocks, dims)]
    Af = inst.A_free.toarray() if inst.n_free else np.zeros((m, 0))
    AT = [A.T.tocsr() for A in inst.A_blocks]

    X = [init_scale * np.eye(d) for d in dims]
    Z = [init_scale * np.eye(d) for d in dims]
    y = np.zeros(m)
    x = np.zeros(inst.n_free)
    bnorm = 1 + np.max(np.abs(inst.b), initial=0)

    def adj(v):
        return [(At @ v).reshape(d, d) for At, d in zip(AT, dims)]

    def apply(xf, Xs):
        out = Af @ xf
        for A, Xb in zip(inst.A_blocks, Xs):
            out = out + A @ Xb.ravel()
        return out

    history = []
    status = MAX_ITERS
    best = None
    projector = None
    it = 0
    stream = sys.stderr

    def snapshot(status_):
        pobj = inst.objective(x, X)
        dobj = float(inst.b @ y)
        return SdpSolution(
            status=status_, x_free=x.copy(), X_blocks=[Xb.copy() for Xb in X], y=y.copy(),
            Z_blocks=[Zb.copy() for Zb in Z], primal_objective=pobj, dual_objective=dobj,
            primal_residual=pres, dual_residual=dres, gap=abs(pobj - dobj),
            mu=mu, iterations=it, history=history,
        )

    while True:
        rp = inst.b - apply(x, X)
        ATy = adj(y)
        Rd = [C - a - Zb for C, a, Zb in zip(inst.C_blocks, ATy, Z)]
        rf = inst.c_free - Af.T @ y
        mu = sum(np.vdot(Xb, Zb) for Xb, Zb in zip(X, Z)) / ntot
        pres = float(np.max(np.abs(rp), initial=0.0))
        dres = float(max([np.max(np.abs(R), initial=0.0) for R in Rd] + [np.max(np.abs(rf), initial=0.0)]))
        pobj = inst.objective(x, X)
        dobj = float(inst.b @ y)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        history.append({"iter": it, "mu": mu, "p_res": pres, "d_res": dres, "gap": relgap,
                        "pobj": pobj, "dobj": dobj,
                        "xz": float(sum(np.vdot(Xb, Zb) for Xb, Zb in zip(X, Z))),
                        "infeas_term": float(x @ rf + sum(np.vdot(R, Xb) for R, Xb in zip(Rd, X)) - y @ rp)})
        if verbose:
            if it == 0:
                print("iter        mu     p_res     d_res       gap", file=stream)
            print(f"{it:4d} {mu:.3e} {pres:.3e} {dres:.3e} {relgap:.3e}", file=stream)
        merit = max(pres / bnorm, dres, relgap)
        if best is None or merit < best[0]:
            best = (merit, snapshot(MAX_ITERS))
        if pres <= feas_tol and dres <= feas_tol and relgap <= gap_tol and mu <= gap_tol * (1 + abs(pobj)):
            status = OPTIMAL
            break
        if pres > feas_tol and dres <= feas_tol and mu <= gap_tol * (1 + abs(pobj)):
            # the remaining defect is primal infeasibility left behind by an
            # ill-conditioned Newton system; try to project it away
            if projector is None:
                projector = _Projector(inst)
            polished = projector(x, X, rp)
            if polished is not None:
                xp, Xp = polished
                rp_p = inst.b - apply(xp, Xp)
                pres_p = float(np.max(np.abs(rp_p), initial=0.0))
                pobj_p = inst.objective(xp, Xp)
                relgap_p = abs(pobj_p - dobj) / (1 + abs(pobj_p) + abs(dobj))
                mineig = min((np.linalg.eigvalsh(Xb)[0] for Xb in Xp if Xb.size), default=0.0)
                history[-1]["polish"] = {"p_res": pres_p, "gap": relgap_p, "min_eig": float(mineig)}
                if pres_p <= feas_tol and relgap_p <= gap_tol and mineig >= -feas_tol:
                    x, X, pres, pobj = xp, Xp, pres_p, pobj_p
                    status = OPTIMAL
                    break
        if it >= max_iters or (time_limit is not None and time.perf_counter() - t0 > time_limit):
            status = MAX_ITERS
            break

        # Schur complement
        try:
            Zi = []
            for Zb in Z:
                Lz = np.linalg.cholesky(Zb)
                Li = sla.solve_triangular(Lz, np.eye(len(Zb)), lower=True)
                Zi.append(Li.T @ Li)
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            break
        M = np.zeros((m, m))
        for s, Xb, Zib in zip(schur, X, Zi):
            s.add_to(M, Xb, Zib)
        M = _sym(M)
        nf = inst.n_free
        # scale rows/cols of the augmented system [[M, Af], [Af^T, 0]] to unit diagonal
        dm = np.sqrt(np.maximum(np.diag(M), 1e-300))
        Ms = M / dm[:, None] / dm[None, :]
        if nf:
            Afs = Af / dm[:, None]
            cn = np.sqrt(np.maximum(np.sum(Afs * Afs, axis=0), 1e-300))
            Afs = Afs / cn[None, :]
            K = np.block([[Ms, Afs], [Afs.T, np.zeros((nf, nf))]])
        else:
            K = Ms
        try:
            if not np.all(np.isfinite(K)):
                raise np.linalg.LinAlgError("non-finite Schur complement")
            fac = sla.lu_factor(K, check_finite=False)
        except (np.linalg.LinAlgError, ValueError):
            status = NUMERICAL_FAILURE
            break
        if not np.all(np.isfinite(fac[0])) or np.min(np.abs(np.diag(fac[0]))) == 0:
            status = NUMERICAL_FAILURE
            break

        def direction(Rc):
            # dZ = Rd - A^*(dy);  dX = Rc - sym(X dZ Z^-1)
            T = [Rcb - Xb @ Rdb @ Zib for Rcb, Xb, Rdb, Zib in zip(Rc, X, Rd, Zi)]
            h = rp - apply(np.zeros(inst.n_free), T)

            def kkt(h_, rf_):
                # M dy + Af dx = h_,  Af^T dy = rf_
                rhs = np.concatenate([h_ / dm, rf_ / cn]) if nf else h_ / dm
                sol_ = sla.lu_solve(fac, rhs, check_finite=False)
                dy_ = sol_[:m] / dm
                dx_ = sol_[m:] / cn if nf else np.zeros(0)
                return dx_, dy_

            dx, dy = kkt(h, rf)
            for _ in range(refine):
                # refine against the operator form, not the (inexact) Schur matrix
                Ady = adj(dy)
                dX = [Xb @ a @ Zib for Xb, a, Zib in zip(X, Ady, Zi)]
                r1 = h - apply(dx, dX)
                r2 = rf - Af.T @ dy
                ex, ey = kkt(r1, r2)
                dx, dy = dx + ex, dy + ey
            Ady = adj(dy)
            dZ = [Rdb - a for Rdb, a in zip(Rd, Ady)]
            dX = [_sym(Rcb - Xb @ dZb @ Zib) for Rcb, Xb, dZb, Zib in zip(Rc, X, dZ, Zi)]
            return dx, dX, dy, dZ

        def steps(dX, dZ, gamma):
            ap = min([1.0] + [gamma * _max_step(Xb, d) for Xb, d in zip(X, dX)])
            ad = min([1.0] + [gamma * _max_step(Zb, d) for Zb, d in zip(Z, dZ)])
            return ap, ad

        try:
            # predictor
            dx_a, dX_a, dy_a, dZ_a = direction([-Xb for Xb in X])
            ap, ad = steps(dX_a, dZ_a, 1.0)
            mu_aff = sum(np.vdot(Xb + ap * a, Zb + ad * b_) for Xb, a, Zb, b_ in zip(X, dX_a, Z, dZ_a)) / ntot
            sigma = min(1.0, max(_SIGMA_MIN, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
            # corrector
            Rc = [sigma * mu * Zib - Xb - _sym(a @ b_ @ Zib) for Zib, Xb, a, b_ in zip(Zi, X, dX_a, dZ_a)]
            dx, dX, dy, dZ = direction(Rc)
            history[-1]["dir_res"] = float(np.max(np.abs(rp - apply(dx, dX)), initial=0.0))
            history[-1]["dir_res_f"] = float(np.max(np.abs(rf - Af.T @ dy), initial=0.0))
            gamma = 0.9 + 0.09 * min(1.0, 1.0 - sigma)
            ap, ad = steps(dX, dZ, gamma)
        except np.linalg.LinAlgError:
            status = NUMERICAL_FAILURE
            break
        history[-1]["alpha"] = (ap, ad)
        x = x + ap * dx
        X = [_sym(Xb + ap * d) for Xb, d in zip(X, dX)]
        y = y + ad * dy
        Z = [_sym(Zb + ad * d) for Zb, d in zip(Z, dZ)]
        it += 1

    if status == OPTIMAL:
        sol = snapshot(OPTIMAL)
    elif best is not None and status in (MAX_ITERS, NUMERICAL_FAILURE):
        sol = best[1]
        sol.status = status
        sol.iterations = it
    else:
        sol = snapshot(status)
    sol.history = history
    sol.solve_time = time.perf_counter() - t0
    log.info("sdp solve: %s after %d iterations (%.2fs), pobj=%.10g", sol.status, it, sol.solve_time,
             sol.primal_objective)
    return sol


# ---------------------------------------------------------------------------
# SDPA sparse format

_FREE_MARKER = re.compile(r"free-split\s+n_free=(\d+)\s+block=(\d+)")


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_sdpa(inst: SdpInstance) -> bytes:
    """Write the instance as an SDPA sparse (.dat-s) file.

    SDPA's dual form ``max F0.Y s.t. Fi.Y = ci, Y PSD`` is used with
    ``Y = blockdiag(X_1..X_B [, diag(x+, x-)])``, ``Fi = A_i``, ``ci = b_i`` and
    ``F0 = -C``; free variables are split as x = x+ - x- in a trailing diagonal
    block.  SDPA's optimal values are therefore the negatives of ours.
    """
    out = io.StringIO()
    nf = inst.n_free
    blocks = list(inst.block_dims)
    struct = [str(d) for d in blocks]
    if nf:
        struct.append(str(-2 * nf))
    out.write('"reachsos export: SDPA dual form, F0 = -C, objective values are negated"\n')
    if nf:
        out.write(f'* free-split n_free={nf} block={len(blocks) + 1}: x = Y[k] - Y[n_free+k]\n')
    out.write(f"{inst.m}\n{len(struct)}\n{' '.join(struct)}\n")
    out.write((" ".join(_fmt(v) for v in inst.b) if inst.m else "{}") + "\n")
    lines = []
    # F0
    for j, C in enumerate(inst.C_blocks):
        iu, ju = np.nonzero(np.triu(C))
        for p, q in zip(iu, ju):
            lines.append((0, j + 1, p + 1, q + 1, -C[p, q]))
    if nf:
        for k, c in enumerate(inst.c_free):
            if c != 0:
                lines.append((0, len(blocks) + 1, k + 1, k + 1, -c))
                lines.append((0, len(blocks) + 1, nf + k + 1, nf + k + 1, c))
    for i in range(inst.m):
        for j, (A, d) in enumerate(zip(inst.A_blocks, blocks)):
            row = A.getrow(i)
            for col, v in zip(row.indices, row.data):
                p, q = divmod(int(col), d)
                if p <= q and v != 0:
                    lines.append((i + 1, j + 1, p + 1, q + 1, v))
        if nf:
            row = inst.A_free.getrow(i)
            for k, v in zip(row.indices, row.data):
                if v != 0:
                    lines.append((i + 1, len(blocks) + 1, k + 1, k + 1, v))
                    lines.append((i + 1, len(blocks) + 1, nf + k + 1, nf + k + 1, -v))
    lines.sort(key=lambda r: r[:4])
    for mat, blk, p, q, v in lines:
        out.write(f"{mat} {blk} {p} {q} {_fmt(v)}\n")
    return out.getvalue().encode()


def _ints(text: str) -> list[int]:
    return [int(float(t)) for t in re.split(r"[\s,{}()=]+", text) if re.fullmatch(r"[+-]?\d+(\.0*)?", t)]


def import_sdpa(data: bytes | str) -> SdpInstance:
    """Read an SDPA sparse file.  Files written by :func:`export_sdpa` recover
    their free variables; other diagonal blocks become 1x1 PSD blocks."""
    text = data.decode() if isinstance(data, (bytes, bytearray)) else data
    raw = text.splitlines()
    free_info = None
    body: list[tuple[int, str]] = []
    for ln, line in enumerate(raw, start=1):
        s = line.strip()
        if not s:
            continue
        if s[0] in '"*':
            mk = _FREE_MARKER.search(s)
            if mk and not body:
                free_info = (int(mk.group(1)), int(mk.group(2)))
            if not body:
                continue
        body.append((ln, s))
    if len(body) < 4:
        raise SdpFormatError("truncated header", body[-1][0] if body else 1)

    def header_int(k, what):
        ln, s = body[k]
        vals = _ints(s)
        if not vals:
            raise SdpFormatError(f"expected {what}", ln)
        return vals[0], ln

    m, _ = header_int(0, "mDIM")
    nblock, ln_nb = header_int(1, "nBLOCK")
    if nblock < 1:
        raise SdpFormatError("nBLOCK must be positive", ln_nb)
    ln_bs, s_bs = body[2]
    struct = _ints(s_bs)
    if len(struct) != nblock:
        raise SdpFormatError(f"block structure lists {len(struct)} blocks, nBLOCK says {nblock}", ln_nb)
    ln_c, s_c = body[3]
    try:
        cvec = [float(t) for t in re.split(r"[\s,{}()]+", s_c) if t]
    except ValueError:
        raise SdpFormatError("bad objective vector", ln_c) from None
    if len(cvec) != m:
        raise SdpFormatError(f"objective vector has {len(cvec)} entries, mDIM is {m}", ln_c)

    entries = []
    for ln, s in body[4:]:
        toks = [t for t in re.split(r"[\s,{}()]+", s) if t]
        if len(toks) != 5:
            raise SdpFormatError("expected 'matno blkno i j value'", ln)
        try:
            mat, blk, p, q = (int(t) for t in toks[:4])
            v = float(toks[4])
        except ValueError:
            raise SdpFormatError("malformed entry", ln) from None
        if not (0 <= mat <= m and 1 <= blk <= nblock):
            raise SdpFormatError("matrix or block index out of range", ln)
        d = abs(struct[blk - 1])
        if not (1 <= p <= d and 1 <= q <= d):
            raise SdpFormatError("entry index out of range", ln)
        if struct[blk - 1] < 0 and p != q:
            raise SdpFormatError("off-diagonal entry in diagonal block", ln)
        entries.append((mat, blk, p, q, v))

    free_block = free_info[1] if free_info else None
    n_free = free_info[0] if free_info else 0
    # map SDPA blocks to our PSD blocks
    psd_map: dict[tuple[int, int], tuple[int, int]] = {}  # (blk, idx) for diag blocks -> our block
    dims: list[int] = []
    block_of: dict[int, int] = {}
    for bi, s in enumerate(struct, start=1):
        if bi == free_block:
            continue
        if s > 0:
            block_of[bi] = len(dims)
            dims.append(s)
        else:
            for k in range(1, -s + 1):
                psd_map[(bi, k)] = (len(dims), 0)
                dims.append(1)
    rows = [[[], [], []] for _ in dims]
    frows, fcols, fvals = [], [], []
    C = [np.zeros((d, d)) for d in dims]
    c_free = np.zeros(n_free)
    for mat, blk, p, q, v in entries:
        if blk == free_block:
            k = p - 1
            var, sign = (k, 1.0) if k < n_free else (k - n_free, -1.0)
            if sign < 0:
                continue  # x- column mirrors x+
            if mat == 0:
                c_free[var] = -v
            else:
                frows.append(mat - 1)
                fcols.append(var)
                fvals.append(v)
            continue
        if struct[blk - 1] > 0:
            j = block_of[blk]
            d = dims[j]
            pairs = {(p - 1, q - 1), (q - 1, p - 1)}
        else:
            j, _ = psd_map[(blk, p)]
            d = 1
            pairs = {(0, 0)}
        for (a, b_) in pairs:
            if mat == 0:
                C[j][a, b_] = -v
            else:
                rows[j][0].append(mat - 1)
                rows[j][1].append(a * d + b_)
                rows[j][2].append(v)
    A_blocks = [sp.csr_matrix((r[2], (r[0], r[1])), shape=(m, d * d)) for r, d in zip(rows, dims)]
    A_free = sp.csr_matrix((fvals, (frows, fcols)), shape=(m, n_free))
    return SdpInstance(n_free, dims, A_free, A_blocks, np.array(cvec), c_free, C)
