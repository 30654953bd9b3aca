"""STL fragment: formula AST, concrete-syntax parser, grid semantics and switching schedule.

The supported fragment is::

    psi ::= TRUE | pred | psi AND psi
    phi ::= G[a,b](psi) | F[a,b](psi) | psi U[a,b] psi | phi AND phi

Predicates are comparisons between expressions built from state variables
(``p3``, ``v1``; ``x2`` is an alias of ``p2``), numbers, ``abs(...)`` and
``(...)^2``. Every comparison is rewritten to ``h(x) >= 0`` with ``h`` concave.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "StlError",
    "StlSyntaxError",
    "IntervalError",
    "FragmentError",
    "ConcavityError",
    "HorizonError",
    "StateLayout",
    "AffineForm",
    "Predicate",
    "CompiledPredicate",
    "TrueF",
    "Pred",
    "And",
    "Always",
    "Eventually",
    "Until",
    "StlFormula",
    "SwitchSchedule",
    "parse_formula",
    "parse_predicate",
    "evaluate",
    "horizon",
    "temporal_operators",
    "predicates_of",
    "switching_schedule",
]


class StlError(ValueError):
    """Base class for formula errors."""


class StlSyntaxError(StlError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} at position {pos}" + (f": {text!r}" if text else ""))


class IntervalError(StlError):
    pass


class FragmentError(StlError):
    pass


class ConcavityError(StlError):
    pass


class HorizonError(StlError):
    pass


# ---------------------------------------------------------------------------
# state layout


_VAR_RE = re.compile(r"^([pvx])(\d+)$")


@dataclass(frozen=True)
class StateLayout:
    """Stacked-state ordering: positions of agents 1..n, then (order 2) velocities."""

    n_agents: int
    order: int = 2

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError("layout needs at least one agent")
        if self.order not in (1, 2):
            raise ValueError(f"order must be 1 or 2, got {self.order}")

    @property
    def dim(self) -> int:
        return self.order * self.n_agents

    def index(self, var: str) -> int:
        m = _VAR_RE.match(var)
        if not m:
            raise StlError(f"unknown state variable {var!r}")
        kind, agent = m.group(1), int(m.group(2))
        if not 1 <= agent <= self.n_agents:
            raise StlError(f"variable {var!r} refers to agent {agent}, network has {self.n_agents}")
        if kind in ("p", "x"):
            return agent - 1
        if self.order == 1:
            raise StlError(f"variable {var!r} needs second-order dynamics")
        return self.n_agents + agent - 1

    def names(self) -> list[str]:
        names = [f"p{i}" for i in range(1, self.n_agents + 1)]
        if self.order == 2:
            names += [f"v{i}" for i in range(1, self.n_agents + 1)]
        return names

    @property
    def input_index(self) -> int:
        """Slot driven by the leader input (leader is the last agent)."""
        return self.dim - 1


# ---------------------------------------------------------------------------
# predicates


def _canon_var(name: str) -> str:
    m = _VAR_RE.match(name)
    if m and m.group(1) == "x":
        return f"p{m.group(2)}"
    return name


def _var_key(name: str):
    m = _VAR_RE.match(name)
    return (m.group(1), int(m.group(2))) if m else (name, 0)


def _clean(v: float) -> float:
    v = float(v)
    return 0.0 if v == 0.0 else v


def _fmt(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


@dataclass(frozen=True)
class AffineForm:
    """``const + sum(coef * var)`` with variables kept sorted."""

    coeffs: tuple[tuple[str, float], ...] = ()
    const: float = 0.0

    @staticmethod
    def make(coeffs: Mapping[str, float], const: float = 0.0) -> "AffineForm":
        items = tuple(
            sorted(((k, _clean(c)) for k, c in coeffs.items() if c != 0.0), key=lambda kv: _var_key(kv[0]))
        )
        return AffineForm(items, _clean(const))

    def sign_normalized(self) -> "AffineForm":
        lead = self.coeffs[0][1] if self.coeffs else self.const
        if lead < 0:
            return AffineForm.make({k: -c for k, c in self.coeffs}, -self.const)
        return self

    def is_constant(self) -> bool:
        return not self.coeffs

    def __str__(self) -> str:
        parts: list[str] = []
        for var, c in self.coeffs:
            mag = abs(c)
            body = var if mag == 1.0 else f"{_fmt(mag)}*{var}"
            parts.append(("-" if c < 0 else "+") + body)
        if self.const != 0.0 or not parts:
            parts.append(("-" if self.const < 0 else "+") + _fmt(abs(self.const)))
        s = " ".join(p[0] + " " + p[1:] for p in parts)
        return s[2:] if s.startswith("+ ") else "-" + s[2:]


@dataclass(frozen=True)
class Predicate:
    """Concave-by-structure predicate ``h(x) = const + a.x + sum c_k|l_k(x)| + sum s_k l_k(x)^2``.

    ``name`` is the registry id when the predicate came from one; it does not take
    part in equality.
    """

    const: float = 0.0
    linear: tuple[tuple[str, float], ...] = ()
    abs_terms: tuple[tuple[float, AffineForm], ...] = ()
    sq_terms: tuple[tuple[float, AffineForm], ...] = ()
    name: str | None = field(default=None, compare=False)

    @property
    def is_concave(self) -> bool:
        return all(c <= 0 for c, _ in self.abs_terms) and all(c <= 0 for c, _ in self.sq_terms)

    def variables(self) -> set[str]:
        out = {k for k, _ in self.linear}
        for _, form in self.abs_terms + self.sq_terms:
            out |= {k for k, _ in form.coeffs}
        return out

    def __str__(self) -> str:
        pieces: list[tuple[float, str]] = [(c, var) for var, c in self.linear]
        pieces += [(c, f"abs({form})") for c, form in self.abs_terms]
        pieces += [(c, f"({form})^2") for c, form in self.sq_terms]
        out = []
        if self.const != 0.0 or not pieces:
            out.append(_fmt(self.const))
        for c, body in pieces:
            mag = abs(c)
            term = body if mag == 1.0 else f"{_fmt(mag)}*{body}"
            if not out:
                out.append(("-" if c < 0 else "") + term)
            else:
                out.append(("- " if c < 0 else "+ ") + term)
        return " ".join(out) + " >= 0"

    def compile(self, layout: StateLayout) -> "CompiledPredicate":
        return CompiledPredicate(self, layout)


class CompiledPredicate:
    """Numeric evaluator of a :class:`Predicate` on a concrete state layout."""

    def __init__(self, pred: Predicate, layout: StateLayout):
        d = layout.dim
        self.predicate = pred
        self.layout = layout
        self.const = pred.const
        self.a = np.zeros(d)
        for var, c in pred.linear:
            self.a[layout.index(var)] += c

        def rows(terms):
            coef = np.array([c for c, _ in terms], dtype=float)
            A = np.zeros((len(terms), d))
            b = np.zeros(len(terms))
            for k, (_, form) in enumerate(terms):
                for var, c in form.coeffs:
                    A[k, layout.index(var)] += c
                b[k] = form.const
            return coef, A, b

        self.abs_c, self.abs_A, self.abs_b = rows(pred.abs_terms)
        self.sq_c, self.sq_A, self.sq_b = rows(pred.sq_terms)
        self._hess = 2.0 * (self.sq_A.T * self.sq_c) @ self.sq_A

    def depends_on(self, index: int) -> bool:
        return bool(self.a[index] != 0 or np.any(self.abs_A[:, index] != 0) or np.any(self.sq_A[:, index] != 0))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        v = self.const + self.a @ x
        if self.abs_c.size:
            v += self.abs_c @ np.abs(self.abs_A @ x + self.abs_b)
        if self.sq_c.size:
            r = self.sq_A @ x + self.sq_b
            v += self.sq_c @ (r * r)
        return float(v)

    def values(self, X) -> np.ndarray:
        """Vectorised over rows of ``X`` (shape ``(N, d)``)."""
        X = np.asarray(X, dtype=float)
        v = self.const + X @ self.a
        if self.abs_c.size:
            v = v + np.abs(X @ self.abs_A.T + self.abs_b) @ self.abs_c
        if self.sq_c.size:
            r = X @ self.sq_A.T + self.sq_b
            v = v + (r * r) @ self.sq_c
        return v

    def gradient(self, x) -> np.ndarray:
        # sign(0) = 0 picks the zero subgradient at |.| kinks
        x = np.asarray(x, dtype=float)
        g = self.a.copy()
        if self.abs_c.size:
            g += (self.abs_c * np.sign(self.abs_A @ x + self.abs_b)) @ self.abs_A
        if self.sq_c.size:
            g += (2.0 * self.sq_c * (self.sq_A @ x + self.sq_b)) @ self.sq_A
        return g

    def hessian(self, x) -> np.ndarray:
        return self._hess


# ---------------------------------------------------------------------------
# formula AST


def _check_interval(a: float, b: float):
    if not (math.isfinite(a) and math.isfinite(b)):
        raise IntervalError(f"interval [{a}, {b}] must be finite")
    if a < 0 or a > b:
        raise IntervalError(f"interval [{a}, {b}] needs 0 <= a <= b")


def _is_psi(node) -> bool:
    if isinstance(node, (TrueF, Pred)):
        return True
    if isinstance(node, And):
        return _is_psi(node.left) and _is_psi(node.right)
    return False


def _require_psi(node, op: str):
    if not _is_psi(node):
        raise FragmentError(f"{op} may only contain TRUE, predicates and AND (no nested temporal operators)")


@dataclass(frozen=True)
class TrueF:
    def __str__(self) -> str:
        return "TRUE"


@dataclass(frozen=True)
class Pred:
    predicate: Predicate

    def __str__(self) -> str:
        return str(self.predicate)


@dataclass(frozen=True)
class And:
    left: "StlFormula"
    right: "StlFormula"

    def __str__(self) -> str:
        r = f"({self.right})" if isinstance(self.right, And) else str(self.right)
        return f"{self.left} AND {r}"


@dataclass(frozen=True)
class Always:
    a: float
    b: float
    sub: "StlFormula"

    def __post_init__(self):
        _check_interval(self.a, self.b)
        _require_psi(self.sub, "G")

    def __str__(self) -> str:
        return f"G[{_fmt(self.a)},{_fmt(self.b)}]({self.sub})"


@dataclass(frozen=True)
class Eventually:
    a: float
    b: float
    sub: "StlFormula"

    def __post_init__(self):
        _check_interval(self.a, self.b)
        _require_psi(self.sub, "F")

    def __str__(self) -> str:
        return f"F[{_fmt(self.a)},{_fmt(self.b)}]({self.sub})"


@dataclass(frozen=True)
class Until:
    a: float
    b: float
    left: "StlFormula"
    right: "StlFormula"

    def __post_init__(self):
        _check_interval(self.a, self.b)
        _require_psi(self.left, "U")
        _require_psi(self.right, "U")

    def __str__(self) -> str:
        return f"({self.left}) U[{_fmt(self.a)},{_fmt(self.b)}] ({self.right})"


StlFormula = Union[TrueF, Pred, And, Always, Eventually, Until]
_TEMPORAL = (Always, Eventually, Until)


def horizon(f: StlFormula) -> float:
    if isinstance(f, (TrueF, Pred)):
        return 0.0
    if isinstance(f, And):
        return max(horizon(f.left), horizon(f.right))
    return f.b


def conjuncts(f: StlFormula) -> Iterator[StlFormula]:
    if isinstance(f, And):
        yield from conjuncts(f.left)
        yield from conjuncts(f.right)
    else:
        yield f


def temporal_operators(f: StlFormula) -> list:
    """Top-level temporal operators in left-to-right order."""
    return [c for c in conjuncts(f) if isinstance(c, _TEMPORAL)]


def predicates_of(f: StlFormula) -> list[Predicate]:
    out: list[Predicate] = []

    def walk(node):
        if isinstance(node, Pred):
            if node.predicate not in out:
                out.append(node.predicate)
        elif isinstance(node, And):
            walk(node.left)
            walk(node.right)
        elif isinstance(node, (Always, Eventually)):
            walk(node.sub)
        elif isinstance(node, Until):
            walk(node.left)
            walk(node.right)

    walk(f)
    return out


# ---------------------------------------------------------------------------
# parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<op><=|>=|&&|[<>()\[\],+\-*/^&])"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*))"
)


@dataclass
class _Tok:
    kind: str  # num, op, ident, eof
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    n = len(text)
    while pos < n:
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if not m or m.end() == pos:
            raise StlSyntaxError("unexpected character", pos, text[pos])
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("eof", "", n))
    return toks


class _Poly:
    """Intermediate expression: const + linear + abs/sq terms."""

    def __init__(self, const=0.0, linear=None, abs_terms=None, sq_terms=None):
        self.const = const
        self.linear = dict(linear or {})
        self.abs_terms = list(abs_terms or [])
        self.sq_terms = list(sq_terms or [])

    def is_affine(self) -> bool:
        return not self.abs_terms and not self.sq_terms

    def affine(self) -> AffineForm:
        return AffineForm.make(self.linear, self.const)

    def scaled(self, s: float) -> "_Poly":
        return _Poly(
            self.const * s,
            {k: c * s for k, c in self.linear.items()},
            [(c * s, f) for c, f in self.abs_terms],
            [(c * s, f) for c, f in self.sq_terms],
        )

    def __add__(self, other: "_Poly") -> "_Poly":
        lin = dict(self.linear)
        for k, c in other.linear.items():
            lin[k] = lin.get(k, 0.0) + c
        return _Poly(self.const + other.const, lin, self.abs_terms + other.abs_terms, self.sq_terms + other.sq_terms)

    def to_predicate(self, name=None) -> Predicate:
        def merge(terms):
            acc: dict[AffineForm, float] = {}
            for c, form in terms:
                form = form.sign_normalized()
                acc[form] = acc.get(form, 0.0) + c
            items = [(_clean(c), f) for f, c in acc.items() if c != 0.0]
            return tuple(sorted(items, key=lambda cf: str(cf[1])))

        const = self.const
        abs_terms = []
        for c, form in merge(self.abs_terms):
            if form.is_constant():
                const += c * abs(form.const)
            else:
                abs_terms.append((c, form))
        sq_terms = []
        for c, form in merge(self.sq_terms):
            if form.is_constant():
                const += c * form.const**2
            else:
                sq_terms.append((c, form))
        lin = AffineForm.make(self.linear).coeffs
        return Predicate(_clean(const), lin, tuple(abs_terms), tuple(sq_terms), name)


_RELOPS = ("<=", ">=", "<", ">")
_KEYWORDS = {"TRUE", "AND", "G", "F", "U", "abs"}


class _Parser:
    def __init__(self, text: str, registry: Mapping[str, Union[str, Predicate]] | None, depth: int = 0):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0
        self.registry = registry or {}
        self.depth = depth

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k=1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise StlSyntaxError(msg, tok.pos, tok.text)

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("op", "ident") and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.error(f"expected {text!r}")

    def number(self) -> float:
        neg = self.accept("-")
        if self.tok.kind != "num":
            self.error("expected a number")
        v = float(self.tok.text)
        self.i += 1
        return -v if neg else v

    def interval(self) -> tuple[float, float]:
        start = self.tok
        self.expect("[")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect("]")
        try:
            _check_interval(a, b)
        except IntervalError as e:
            raise IntervalError(f"{e} at position {start.pos}") from None
        return a, b

    def is_and(self) -> bool:
        return (self.tok.kind == "ident" and self.tok.text == "AND") or (
            self.tok.kind == "op" and self.tok.text in ("&", "&&")
        )

    # formulas
    def formula(self) -> StlFormula:
        f = self.conj()
        if self.tok.kind != "eof":
            self.error("unexpected token")
        return f

    def conj(self) -> StlFormula:
        left = self.unary()
        while self.is_and():
            self.i += 1
            left = And(left, self.unary())
        return left

    def unary(self) -> StlFormula:
        tok = self.tok
        if tok.kind == "ident" and tok.text == "TRUE":
            self.i += 1
            return self.maybe_until(TrueF())
        if tok.kind == "ident" and tok.text in ("G", "F") and self.peek().text == "[":
            self.i += 1
            a, b = self.interval()
            self.expect("(")
            sub = self.conj()
            self.expect(")")
            cls = Always if tok.text == "G" else Eventually
            try:
                return cls(a, b, sub)
            except FragmentError as e:
                raise FragmentError(f"{e} (operator at position {tok.pos})") from None
        return self.maybe_until(self.primary())

    def maybe_until(self, left: StlFormula) -> StlFormula:
        if self.tok.kind == "ident" and self.tok.text == "U" and self.peek().text == "[":
            tok = self.tok
            self.i += 1
            a, b = self.interval()
            right = self.primary_or_true()
            try:
                return Until(a, b, left, right)
            except FragmentError as e:
                raise FragmentError(f"{e} (operator at position {tok.pos})") from None
        return left

    def primary_or_true(self) -> StlFormula:
        if self.tok.kind == "ident" and self.tok.text == "TRUE":
            self.i += 1
            return TrueF()
        return self.primary()

    def primary(self) -> StlFormula:
        tok = self.tok
        if tok.kind == "op" and tok.text == "(":
            save = self.i
            try:
                self.i += 1
                f = self.conj()
                self.expect(")")
                nxt = self.tok
                if not (nxt.kind == "op" and nxt.text in _RELOPS + ("+", "-", "*", "/", "^")):
                    return f
            except StlError:
                pass
            self.i = save
        if tok.kind == "ident" and tok.text in self.registry and self.peek().text not in _RELOPS:
            self.i += 1
            return Pred(self.resolve(tok))
        return Pred(self.comparison())

    def resolve(self, tok: _Tok) -> Predicate:
        entry = self.registry[tok.text]
        if isinstance(entry, Predicate):
            pred = entry
        else:
            if self.depth > 8:
                self.error("predicate definitions nest too deeply", tok)
            pred = parse_predicate(str(entry), self.registry, _depth=self.depth + 1)
        pred = Predicate(pred.const, pred.linear, pred.abs_terms, pred.sq_terms, tok.text)
        if not pred.is_concave:
            raise ConcavityError(f"predicate {tok.text!r} is not concave: {pred}")
        return pred

    def comparison(self) -> Predicate:
        start = self.tok
        lhs = self.expr()
        op = self.tok
        if not (op.kind == "op" and op.text in _RELOPS):
            self.error("expected a comparison operator")
        self.i += 1
        rhs = self.expr()
        # strict comparisons are read as closed sets
        h = rhs + lhs.scaled(-1.0) if op.text in ("<=", "<") else lhs + rhs.scaled(-1.0)
        pred = h.to_predicate()
        if not pred.is_concave:
            raise ConcavityError(f"predicate at position {start.pos} is not concave: {pred}")
        return pred

    # arithmetic
    def expr(self) -> _Poly:
        p = self.term()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            sign = -1.0 if self.tok.text == "-" else 1.0
            self.i += 1
            p = p + self.term().scaled(sign)
        return p

    def term(self) -> _Poly:
        if self.accept("-"):
            return self.term().scaled(-1.0)
        if self.accept("+"):
            return self.term()
        p = self.factor()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            rhs = self.factor()
            if op == "/":
                if not (rhs.is_affine() and not rhs.linear):
                    self.error("division only by numbers")
                if rhs.const == 0:
                    self.error("division by zero")
                p = p.scaled(1.0 / rhs.const)
            elif p.is_affine() and not p.linear:
                p = rhs.scaled(p.const)
            elif rhs.is_affine() and not rhs.linear:
                p = p.scaled(rhs.const)
            else:
                self.error("only products with a number are supported")
        return p

    def factor(self) -> _Poly:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return _Poly(float(tok.text))
        if tok.kind == "ident" and tok.text == "abs":
            self.i += 1
            self.expect("(")
            inner = self.expr()
            self.expect(")")
            if not inner.is_affine():
                self.error("abs() argument must be affine", tok)
            return _Poly(abs_terms=[(1.0, inner.affine())])
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            inner = self.expr()
            self.expect(")")
            if self.accept("^"):
                if self.tok.kind != "num" or float(self.tok.text) != 2.0:
                    self.error("only ^2 is supported")
                self.i += 1
                if not inner.is_affine():
                    self.error("squared argument must be affine", tok)
                return _Poly(sq_terms=[(1.0, inner.affine())])
            return inner
        if tok.kind == "ident" and _VAR_RE.match(tok.text):
            self.i += 1
            name = _canon_var(tok.text)
            if self.accept("^"):
                if self.tok.kind != "num" or float(self.tok.text) != 2.0:
                    self.error("only ^2 is supported")
                self.i += 1
                return _Poly(sq_terms=[(1.0, AffineForm.make({name: 1.0}))])
            return _Poly(linear={name: 1.0})
        if tok.kind == "eof":
            self.error("unexpected end of formula")
        self.error("unexpected token")


def parse_formula(text: str, predicates: Mapping[str, Union[str, Predicate]] | None = None) -> StlFormula:
    """Parse concrete syntax into an AST.

    ``predicates`` maps identifiers to predicate text (or :class:`Predicate`)
    so formulas can refer to them by name.
    """
    return _Parser(text, predicates).formula()


def parse_predicate(text: str, predicates=None, _depth: int = 0) -> Predicate:
    p = _Parser(text, predicates, _depth)
    node = p.primary()
    if p.tok.kind != "eof":
        p.error("unexpected token")
    if not isinstance(node, Pred):
        raise StlSyntaxError("expected a single predicate", 0, text)
    return node.predicate


# ---------------------------------------------------------------------------
# semantics on a sampled trajectory


class _Signals:
    def __init__(self, traj, layout: StateLayout):
        self.t = np.asarray(traj.t, dtype=float)
        self.x = np.asarray(traj.x, dtype=float)
        self.layout = layout
        self.cache: dict[Predicate, np.ndarray] = {}
        span = self.t[-1] - self.t[0] if self.t.size > 1 else 1.0
        self.tol = 1e-9 * max(1.0, abs(self.t[-1]), span)

    def values(self, pred: Predicate) -> np.ndarray:
        v = self.cache.get(pred)
        if v is None:
            v = pred.compile(self.layout).values(self.x)
            self.cache[pred] = v
        return v

    def times(self, lo: float, hi: float) -> np.ndarray:
        """Grid points in [lo, hi] plus the two endpoints."""
        t = self.t
        i0 = np.searchsorted(t, lo - self.tol, side="left")
        i1 = np.searchsorted(t, hi + self.tol, side="right")
        pts = list(t[i0:i1])
        if not pts or abs(pts[0] - lo) > self.tol:
            pts.insert(0, lo)
        if abs(pts[-1] - hi) > self.tol:
            pts.append(hi)
        return np.array(pts)

    def margin(self, node, times: np.ndarray) -> np.ndarray:
        """Pointwise min over the conjunction's predicate values (>= 0 means it holds)."""
        if isinstance(node, TrueF):
            return np.full(times.shape, np.inf)
        if isinstance(node, Pred):
            if self.t.size == 1:
                return np.full(times.shape, self.values(node.predicate)[0])
            return np.interp(times, self.t, self.values(node.predicate))
        if isinstance(node, And):
            return np.minimum(self.margin(node.left, times), self.margin(node.right, times))
        raise FragmentError(f"not a state formula: {node}")


def _holds(node, sig: _Signals, t: float) -> bool:
    if isinstance(node, (TrueF, Pred)):
        return bool(sig.margin(node, np.array([t]))[0] >= 0)
    if isinstance(node, And):
        if _is_psi(node):
            return bool(sig.margin(node, np.array([t]))[0] >= 0)
        return _holds(node.left, sig, t) and _holds(node.right, sig, t)
    if isinstance(node, Always):
        return bool(np.all(sig.margin(node.sub, sig.times(t + node.a, t + node.b)) >= 0))
    if isinstance(node, Eventually):
        return bool(np.any(sig.margin(node.sub, sig.times(t + node.a, t + node.b)) >= 0))
    if isinstance(node, Until):
        times = sig.times(t, t + node.b)
        left_ok = np.logical_and.accumulate(sig.margin(node.left, times) >= 0)
        right_ok = sig.margin(node.right, times) >= 0
        in_window = times >= t + node.a - sig.tol
        return bool(np.any(left_ok & right_ok & in_window))
    raise TypeError(f"unknown formula node {node!r}")


def evaluate(formula: StlFormula, traj, t: float = 0.0, layout: StateLayout | None = None) -> bool:
    """Boolean satisfaction of ``formula`` at time ``t`` on a uniformly sampled trajectory.

    ``traj`` needs ``t`` (times) and ``x`` (states, one row per time) and, unless
    ``layout`` is given, a ``layout`` attribute.
    """
    layout = layout or getattr(traj, "layout", None)
    if layout is None:
        raise ValueError("a state layout is required")
    sig = _Signals(traj, layout)
    if sig.t.size == 0:
        raise HorizonError("empty trajectory")
    end = t + horizon(formula)
    if t < sig.t[0] - sig.tol or end > sig.t[-1] + sig.tol:
        raise HorizonError(
            f"formula needs the trajectory on [{t}, {end}], trajectory covers [{sig.t[0]}, {sig.t[-1]}]"
        )
    return _holds(formula, sig, t)


# ---------------------------------------------------------------------------
# switching schedule


@dataclass(frozen=True)
class SwitchSchedule:
    """Switching instants ``times[0] = t0 < times[1] < ...`` and the operators active on each interval."""

    times: tuple[float, ...]
    active: tuple[frozenset, ...]

    @property
    def end(self) -> float:
        return self.times[-1]

    def interval_index(self, t: float, tol: float = 1e-9) -> int | None:
        """Index ``l`` with ``times[l] <= t < times[l+1]`` (switches are right-continuous)."""
        times = self.times
        if len(times) < 2:
            return None
        scale = tol * max(1.0, abs(t))
        if t < times[0] - scale or t >= times[-1] - scale:
            return None
        l = int(np.searchsorted(times, t + scale, side="right")) - 1
        return max(l, 0)

    def min_gap(self) -> float:
        if len(self.times) < 2:
            return math.inf
        return float(np.min(np.diff(self.times)))


def switching_schedule(formula_or_deadlines: Union[StlFormula, Sequence[float]], t0: float = 0.0) -> SwitchSchedule:
    """Switch instants from operator deadlines: the next switch after ``tau`` is the nearest deadline beyond it."""
    if isinstance(formula_or_deadlines, (TrueF, Pred, And, Always, Eventually, Until)):
        deadlines = [op.b for op in temporal_operators(formula_or_deadlines)]
    else:
        deadlines = [float(b) for b in formula_or_deadlines]
    times = [float(t0)]
    while True:
        tau = times[-1]
        ahead = [b - tau for b in deadlines if b - tau > 0]
        if not ahead:
            break
        times.append(tau + min(ahead))
    active = tuple(
        frozenset(j for j, b in enumerate(deadlines) if b > times[l]) for l in range(len(times) - 1)
    )
    return SwitchSchedule(tuple(times), active)
