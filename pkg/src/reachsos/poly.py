"""Sparse multivariate polynomials over a fixed, named variable universe.

Exponents are dense tuples with one slot per universe variable (states, then
time, then disturbances).  Coefficients are floats and only exact zeros are
pruned, so any residual seen downstream comes from the numerics that produced
the coefficients rather than from this module.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]


class PolyError(ValueError):
    """Raised on malformed polynomial input or incompatible operands."""


class PolyParseError(PolyError):
    def __init__(self, message: str, text: str, pos: int):
        super().__init__(f"{message} at position {pos}: {text!r}")
        self.text = text
        self.pos = pos


@dataclass(frozen=True)
class VarUniverse:
    """Ordered variable names; the order fixes the exponent-vector layout."""

    state_vars: tuple[str, ...]
    time_var: str = "t"
    disturbance_vars: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "state_vars", tuple(self.state_vars))
        object.__setattr__(self, "disturbance_vars", tuple(self.disturbance_vars))
        names = self.names
        if any(not n for n in names):
            raise PolyError("variable names must be non-empty")
        if len(set(names)) != len(names):
            raise PolyError(f"variable names must be distinct: {names}")
        for n in names:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", n):
                raise PolyError(f"invalid variable name {n!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return (*self.state_vars, self.time_var, *self.disturbance_vars)

    @property
    def nvars(self) -> int:
        return len(self.state_vars) + 1 + len(self.disturbance_vars)

    @property
    def n_states(self) -> int:
        return len(self.state_vars)

    @property
    def time_index(self) -> int:
        return len(self.state_vars)

    @property
    def state_indices(self) -> tuple[int, ...]:
        return tuple(range(len(self.state_vars)))

    @property
    def disturbance_indices(self) -> tuple[int, ...]:
        start = len(self.state_vars) + 1
        return tuple(range(start, start + len(self.disturbance_vars)))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise PolyError(f"unknown variable {name!r}") from None


def grlex_key(e: Exponent):
    """Graded-lex sort key: lower total degree first, then earlier variables
    with larger exponents first (so x precedes y)."""
    return (sum(e), tuple(-v for v in e))


class Polynomial:
    """Immutable sparse polynomial.

    ``terms`` maps exponent tuples to nonzero float coefficients.
    """

    __slots__ = ("universe", "_terms", "_compiled")

    def __init__(self, universe: VarUniverse, terms: Mapping[Exponent, float] | None = None):
        self.universe = universe
        n = universe.nvars
        clean: dict[Exponent, float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != n:
                raise PolyError(f"exponent {e} has wrong length for {n} variables")
            if any(v < 0 for v in e):
                raise PolyError(f"negative exponent {e}")
            c = float(c)
            if not math.isfinite(c):
                raise PolyError(f"non-finite coefficient {c} for {e}")
            if c != 0.0:
                clean[e] = clean.get(e, 0.0) + c
        self._terms = {e: c for e, c in clean.items() if c != 0.0}
        self._compiled = None

    # construction helpers -------------------------------------------------

    @classmethod
    def zero(cls, universe: VarUniverse) -> "Polynomial":
        return cls(universe)

    @classmethod
    def constant(cls, universe: VarUniverse, value: float) -> "Polynomial":
        return cls(universe, {(0,) * universe.nvars: value})

    @classmethod
    def var(cls, universe: VarUniverse, name: str) -> "Polynomial":
        e = [0] * universe.nvars
        e[universe.index(name)] = 1
        return cls(universe, {tuple(e): 1.0})

    @classmethod
    def monomial(cls, universe: VarUniverse, exponent: Exponent, coef: float = 1.0) -> "Polynomial":
        return cls(universe, {tuple(exponent): coef})

    @classmethod
    def _raw(cls, universe, terms):
        # trusted constructor: terms already validated and pruned
        p = cls.__new__(cls)
        p.universe = universe
        p._terms = terms
        p._compiled = None
        return p

    # basic properties ------------------------------------------------------

    @property
    def terms(self) -> dict[Exponent, float]:
        return dict(self._terms)

    def items(self):
        """Terms in graded-lex order."""
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]))

    def coeff(self, exponent: Exponent) -> float:
        return self._terms.get(tuple(exponent), 0.0)

    @property
    def is_zero(self) -> bool:
        return not self._terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial (check ``is_zero``)."""
        if not self._terms:
            return -1
        return max(sum(e) for e in self._terms)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = [self.universe.index(n) for n in names]
        if not self._terms:
            return -1
        return max(sum(e[i] for i in idx) for e in self._terms)

    def variables(self) -> set[str]:
        names = self.universe.names
        return {names[i] for e in self._terms for i, v in enumerate(e) if v}

    def __len__(self):
        return len(self._terms)

    # arithmetic ------------------------------------------------------------

    def _check(self, other: "Polynomial"):
        if other.universe != self.universe:
            raise PolyError("polynomials live in different variable universes")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self.universe, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for e, c in other._terms.items():
            v = out.get(e, 0.0) + c
            if v == 0.0:
                out.pop(e, None)
            else:
                out[e] = v
        return Polynomial._raw(self.universe, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial._raw(self.universe, {e: -c for e, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            if s == 0.0:
                return Polynomial.zero(self.universe)
            return Polynomial._raw(self.universe, {e: c * s for e, c in self._terms.items()
                                                   if c * s != 0.0})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Exponent, float] = {}
        for e1, c1 in self._terms.items():
            for e2, c2 in other._terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return Polynomial._raw(self.universe, {e: c for e, c in out.items() if c != 0.0})

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise PolyError(f"exponent must be a non-negative integer, got {k!r}")
        result = Polynomial.constant(self.universe, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.universe == other.universe and self._terms == other._terms

    def __hash__(self):
        return hash((self.universe, frozenset(self._terms.items())))

    def max_abs_diff(self, other: "Polynomial") -> float:
        """Largest absolute coefficient of ``self - other``."""
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return max((abs(self.coeff(e) - other.coeff(e)) for e in keys), default=0.0)

    # calculus and substitution ---------------------------------------------

    def partial(self, name: str) -> "Polynomial":
        i = self.universe.index(name)
        out = {}
        for e, c in self._terms.items():
            if e[i]:
                ne = e[:i] + (e[i] - 1,) + e[i + 1:]
                out[ne] = c * e[i]
        return Polynomial._raw(self.universe, out)

    def substitute(self, mapping: Mapping[str, "Polynomial | float"]) -> "Polynomial":
        """Replace variables by polynomials (or constants) in the same universe."""
        subs = {}
        for name, val in mapping.items():
            i = self.universe.index(name)
            subs[i] = val if isinstance(val, Polynomial) else Polynomial.constant(self.universe, val)
        if not subs:
            return self
        cache: dict[tuple[int, int], Polynomial] = {}

        def power(i, k):
            key = (i, k)
            if key not in cache:
                cache[key] = subs[i] ** k
            return cache[key]

        result = Polynomial.zero(self.universe)
        acc: dict[Exponent, float] = {}
        for e, c in self._terms.items():
            rest = tuple(0 if i in subs else v for i, v in enumerate(e))
            term = Polynomial._raw(self.universe, {rest: c})
            for i, v in enumerate(e):
                if i in subs and v:
                    term = term * power(i, v)
            for te, tc in term._terms.items():
                acc[te] = acc.get(te, 0.0) + tc
        result = Polynomial._raw(self.universe, {e: c for e, c in acc.items() if c != 0.0})
        return result

    def restrict(self, name: str, value: float) -> "Polynomial":
        """Fix one variable to a constant (e.g. t = T)."""
        return self.substitute({name: float(value)})

    def scale_variables(self, factors: Mapping[str, float]) -> "Polynomial":
        """Return p(..., a*v, ...) for each ``v -> a`` in ``factors``."""
        idx = {self.universe.index(n): float(a) for n, a in factors.items()}
        out = {}
        for e, c in self._terms.items():
            s = c
            for i, a in idx.items():
                if e[i]:
                    s *= a ** e[i]
            if s != 0.0:
                out[e] = s
        return Polynomial._raw(self.universe, out)

    # evaluation ------------------------------------------------------------

    def eval(self, point: Mapping[str, float]) -> float:
        """Evaluate at a named point, summing terms in graded-lex order."""
        names = self.universe.names
        needed = self.variables()
        missing = needed - set(point)
        if missing:
            raise PolyError(f"missing values for variables {sorted(missing)}")
        vals = [float(point.get(n, 0.0)) for n in names]
        total = 0.0
        for e, c in self.items():
            term = c
            for v, k in zip(vals, e):
                if k:
                    term *= v ** k
            total += term
        return total

    def _compile(self):
        if self._compiled is None:
            items = self.items()
            if items:
                exps = np.array([e for e, _ in items], dtype=np.int64)
                coefs = np.array([c for _, c in items])
            else:
                exps = np.zeros((0, self.universe.nvars), dtype=np.int64)
                coefs = np.zeros(0)
            self._compiled = (exps, coefs)
        return self._compiled

    def evaluate(self, values: Mapping[str, np.ndarray | float]) -> np.ndarray:
        """Vectorized evaluation; ``values`` maps variable names to broadcastable arrays.

        Variables the polynomial does not mention may be omitted.
        """
        exps, coefs = self._compile()
        names = self.universe.names
        arrays = {}
        for i, n in enumerate(names):
            if exps.shape[0] and exps[:, i].any():
                if n not in values:
                    raise PolyError(f"missing values for variable {n!r}")
                arrays[i] = np.asarray(values[n], dtype=float)
        shape = np.broadcast_shapes(*(a.shape for a in arrays.values())) if arrays else ()
        out = np.zeros(shape)
        powcache: dict[tuple[int, int], np.ndarray] = {}
        for e, c in zip(exps, coefs):
            term = np.full(shape, c)
            for i, k in enumerate(e):
                if k:
                    key = (i, int(k))
                    if key not in powcache:
                        powcache[key] = arrays[i] ** int(k)
                    term = term * powcache[key]
            out = out + term
        return out

    # printing --------------------------------------------------------------

    def to_canonical_string(self) -> str:
        """Graded-lex ordered ``coeff*var^e`` terms with 17 significant digits."""
        if not self._terms:
            return "0"
        names = self.universe.names
        parts = []
        for k, (e, c) in enumerate(self.items()):
            factors = [f"{abs(c):.17g}"]
            for n, v in zip(names, e):
                if v == 1:
                    factors.append(n)
                elif v > 1:
                    factors.append(f"{n}^{v}")
            body = "*".join(factors)
            if k == 0:
                parts.append(("-" if c < 0 else "") + body)
            else:
                parts.append((" - " if c < 0 else " + ") + body)
        return "".join(parts)

    def __str__(self):
        return self.to_canonical_string()

    def __repr__(self):
        return f"Polynomial({self.to_canonical_string()!r})"


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*^()/]))"
)


def _tokenize(text: str):
    text = text.replace("−", "-")
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolyParseError("unexpected character", text, pos)
        start = m.start(m.lastgroup)
        kind = m.lastgroup
        val = m.group(kind)
        if kind == "op" and val == "**":
            val = "^"
        tokens.append((kind, val, start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens, text


class _Parser:
    def __init__(self, text: str, universe: VarUniverse):
        self.tokens, self.text = _tokenize(text)
        self.i = 0
        self.u = universe

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, msg, tok=None):
        tok = tok or self.peek()
        raise PolyParseError(msg, self.text, tok[2])

    def parse(self) -> Polynomial:
        if self.peek()[0] == "end":
            self.error("empty expression")
        p = self.expr()
        if self.peek()[0] != "end":
            self.error(f"unexpected token {self.peek()[1]!r}")
        return p

    def expr(self):
        p = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            q = self.term()
            p = p + q if op == "+" else p - q
        return p

    def term(self):
        p = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in ("*", "/"):
            op = self.take()
            if op[1] == "*":
                p = p * self.unary()
            else:
                q = self.unary()
                if len(q) > 1 or q.degree > 0:
                    self.error("division only by constants", op)
                if q.is_zero:
                    self.error("division by zero", op)
                p = p / q.coeff((0,) * self.u.nvars)
        return p

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            p = self.unary()
            return -p if op == "-" else p
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            tok = self.peek()
            neg = False
            if tok[0] == "op" and tok[1] in ("-", "+"):
                neg = tok[1] == "-"
                self.take()
                tok = self.peek()
            if tok[0] != "num":
                self.error("exponent must be a non-negative integer literal", tok)
            self.take()
            if neg or not re.fullmatch(r"\d+", tok[1]):
                self.error("exponent must be a non-negative integer literal", tok)
            return base ** int(tok[1])
        return base

    def atom(self):
        tok = self.take()
        kind, val, pos = tok
        if kind == "num":
            return Polynomial.constant(self.u, float(val))
        if kind == "name":
            if val not in self.u.names:
                raise PolyParseError(f"unknown variable {val!r}", self.text, pos)
            return Polynomial.var(self.u, val)
        if kind == "op" and val == "(":
            p = self.expr()
            if self.peek()[1] != ")":
                self.error("expected ')'")
            self.take()
            return p
        self.error(f"unexpected token {val!r}" if val else "unexpected end of expression", tok)


def parse_poly(text: str, universe: VarUniverse) -> Polynomial:
    """Parse an arithmetic expression (+, -, *, ^, parentheses, decimal
    literals, division by constants) into an expanded polynomial."""
    return _Parser(text, universe).parse()


# ---------------------------------------------------------------------------


def arith(a: Polynomial, b: Polynomial, op: str) -> Polynomial:
    a._check(b)
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise PolyError(f"unknown operation {op!r}")


def lie_derivative(psi: Polynomial, f: Sequence[Polynomial]) -> Polynomial:
    """dpsi/dt + grad_x psi . f over the shared universe."""
    u = psi.universe
    if len(f) != u.n_states:
        raise PolyError(f"dynamics has {len(f)} entries for {u.n_states} state variables")
    out = psi.partial(u.time_var)
    for name, fi in zip(u.state_vars, f):
        psi._check(fi)
        out = out + psi.partial(name) * fi
    return out


def monomials(n: int, degree: int) -> list[Exponent]:
    """All exponent tuples of length ``n`` with total degree <= ``degree``, in graded-lex order."""
    if n == 0:
        return [()]
    out: list[Exponent] = []

    def exact(prefix, remaining, slots):
        if slots == 1:
            out.append((*prefix, remaining))
            return
        for v in range(remaining, -1, -1):
            exact((*prefix, v), remaining - v, slots - 1)

    for d in range(degree + 1):
        exact((), d, n)
    return out


def gram_form(universe: VarUniverse, basis: Sequence[Exponent], Q) -> Polynomial:
    """The quadratic form z^T Q z for the monomial vector z given by ``basis``.

    Products are accumulated in a fixed (i, j) order so the result is
    reproducible bit for bit from the same Q.
    """
    Q = np.asarray(Q, dtype=float)
    nb = len(basis)
    if Q.shape != (nb, nb):
        raise PolyError(f"Gram matrix of shape {Q.shape} does not match a basis of {nb} monomials")
    acc: dict[Exponent, float] = {}
    for i in range(nb):
        bi = basis[i]
        row = Q[i]
        for j in range(nb):
            c = float(row[j])
            if c == 0.0:
                continue
            e = tuple(a + b for a, b in zip(bi, basis[j]))
            acc[e] = acc.get(e, 0.0) + c
    return Polynomial(universe, acc)
