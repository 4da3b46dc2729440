"""Exact symbolic expressions over rational constants and named symbols.

Expressions are immutable DAGs built from sums, differences, products,
quotients and integer powers. Every coefficient is an exact rational
(`fractions.Fraction`); floating point exists only as an evaluation mode.
Equality of rational functions is decided exactly by expanding numerator
and denominator and cross-multiplying, so zero-testing never relies on
simplification heuristics or numerics.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

__all__ = [
    "AUX", "CONST_PARAM", "OUTPUT_DERIV", "STATE", "TV_DERIV",
    "Const", "Difference", "Expression", "Power", "Product", "Quotient",
    "Sum", "Sym", "Symbol", "SymbolTable",
    "RationalCanonical", "Program",
    "ExprError", "ParseError", "UndeclaredSymbol", "DuplicateDeclaration",
    "UnboundSymbol", "DivisionByZero", "DenominatorIdenticallyZero",
    "add", "compile_float_fn", "compile_program", "const", "differentiate",
    "div", "equivalent", "evaluate", "free_symbols", "is_zero", "mul",
    "neg", "normalize", "parse_expression", "pow_", "sub", "substitute",
    "substitute_many", "sym", "to_text", "ZERO", "ONE",
]


# ------------------------------------------------------------------ errors

class ExprError(Exception):
    """Base class for expression-engine errors."""


class ParseError(ExprError):
    """Malformed expression or model text; carries a 1-based position."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


class UndeclaredSymbol(ExprError):
    """An identifier was used without being declared in the active table."""

    def __init__(self, name: str, line: int | None = None, col: int | None = None):
        loc = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{loc}undeclared symbol '{name}'")
        self.name = name
        self.line = line
        self.col = col


class DuplicateDeclaration(ExprError):
    """A name was declared twice within one symbol table or model."""

    def __init__(self, name: str, line: int | None = None):
        loc = f"{line}: " if line is not None else ""
        super().__init__(f"{loc}duplicate declaration of '{name}'")
        self.name = name
        self.line = line


class UnboundSymbol(ExprError):
    """Evaluation reached a symbol with no value bound to it."""


class DivisionByZero(ExprError):
    """A denominator evaluated to zero at the given point."""


class DenominatorIdenticallyZero(ExprError):
    """A denominator is the zero rational function (malformed expression)."""


# ----------------------------------------------------------------- symbols

STATE = "state"
CONST_PARAM = "const-param"
TV_DERIV = "tv-deriv"
OUTPUT_DERIV = "output-deriv"
AUX = "aux"

_KINDS = (STATE, CONST_PARAM, TV_DERIV, OUTPUT_DERIV, AUX)
_DERIVABLE = (TV_DERIV, OUTPUT_DERIV)


@dataclass(frozen=True)
class Symbol:
    """A named leaf of an expression.

    `kind` tags the role a symbol plays in an ODE model. Members of a
    time-derivative chain (time-varying parameters and model outputs)
    carry `order`; output symbols additionally carry a 1-based
    `output_index`.
    """

    name: str
    kind: str = AUX
    order: int = 0
    output_index: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}")
        if self.order < 0:
            raise ValueError("symbol order must be nonnegative")
        if self.kind == OUTPUT_DERIV and self.output_index < 1:
            raise ValueError("output symbols need a 1-based output index")
        if self.kind not in _DERIVABLE and self.order != 0:
            raise ValueError(f"symbols of kind {self.kind!r} have no derivative chain")

    @property
    def display(self) -> str:
        """Printed form: name, name', name'', or name^(k) for k >= 3."""
        if self.order == 0:
            return self.name
        if self.order <= 2:
            return self.name + "'" * self.order
        return f"{self.name}^({self.order})"

    def derivative(self, shift: int = 1) -> "Symbol":
        if self.kind not in _DERIVABLE:
            raise ValueError(f"symbol '{self.display}' has no time-derivative chain")
        return Symbol(self.name, self.kind, self.order + shift, self.output_index)

    def sort_key(self):
        return (self.name, self.order, self.kind, self.output_index)


class SymbolTable:
    """Maps identifier names to symbols for the expression parser.

    Primed identifiers (x', x'', x^(k)) resolve through the base symbol's
    derivative chain; only time-varying parameters and outputs are
    derivable.
    """

    def __init__(self, symbols: Iterable[Symbol] = ()):
        self._by_name: dict[str, Symbol] = {}
        for s in symbols:
            self.add(s)

    def add(self, symbol: Symbol) -> None:
        if symbol.name in self._by_name:
            raise DuplicateDeclaration(symbol.name)
        self._by_name[symbol.name] = symbol

    def resolve(self, name: str, order: int = 0) -> Symbol:
        base = self._by_name.get(name)
        if base is None:
            raise KeyError(name)
        if order == 0:
            return base
        return base.derivative(order)

    def get(self, name: str) -> Symbol | None:
        return self._by_name.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def symbols(self) -> tuple[Symbol, ...]:
        return tuple(self._by_name.values())


# ------------------------------------------------------------- expressions

class Expression:
    """Immutable node of an expression DAG.

    Build instances through the module constructors (`const`, `sym`,
    `add`, ...) or the arithmetic operators; direct class construction
    skips simplification and is internal.
    """

    __slots__ = ("_hash", "__weakref__")

    args: tuple = ()  # leaves have no children

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise TypeError("exponents must be Python ints")
        return pow_(self, k)

    def __neg__(self):
        return neg(self)

    # -- structural identity --------------------------------------------

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expression):
            return NotImplemented
        # pairwise DAG walk; the cached hashes reject most mismatches fast
        pairs = [(self, other)]
        seen: set[tuple[int, int]] = set()
        while pairs:
            a, b = pairs.pop()
            if a is b:
                continue
            key = (id(a), id(b))
            if key in seen:
                continue
            seen.add(key)
            if type(a) is not type(b) or a._hash != b._hash:
                return False
            if a._payload() != b._payload():
                return False
            if len(a.args) != len(b.args):
                return False
            pairs.extend(zip(a.args, b.args))
        return True

    def _payload(self):
        return None

    def __str__(self):
        return to_text(self)

    def __repr__(self):
        text = to_text(self)
        if len(text) > 120:
            text = text[:117] + "..."
        return f"<{type(self).__name__} {text}>"


class Const(Expression):
    __slots__ = ("value",)

    def __init__(self, value: Fraction):
        self.value = value
        self._hash = hash(("const", value))

    def _payload(self):
        return self.value


class Sym(Expression):
    __slots__ = ("symbol",)

    def __init__(self, symbol: Symbol):
        self.symbol = symbol
        self._hash = hash(("sym", symbol))

    def _payload(self):
        return self.symbol


class _Composite(Expression):
    __slots__ = ("args",)
    _tag = "?"

    def __init__(self, args: tuple):
        self.args = args
        self._hash = hash((self._tag,) + tuple(a._hash for a in args))


class Sum(_Composite):
    __slots__ = ()
    _tag = "+"

    @property
    def terms(self):
        return self.args


class Product(_Composite):
    __slots__ = ()
    _tag = "*"

    @property
    def factors(self):
        return self.args


class Difference(_Composite):
    __slots__ = ()
    _tag = "-"

    @property
    def left(self):
        return self.args[0]

    @property
    def right(self):
        return self.args[1]


class Quotient(_Composite):
    __slots__ = ()
    _tag = "/"

    @property
    def numerator(self):
        return self.args[0]

    @property
    def denominator(self):
        return self.args[1]


class Power(_Composite):
    __slots__ = ("exponent",)
    _tag = "^"

    def __init__(self, base: Expression, exponent: int):
        self.exponent = exponent
        self.args = (base,)
        self._hash = hash(("^", exponent, base._hash))

    @property
    def base(self):
        return self.args[0]

    def _payload(self):
        return self.exponent


# ------------------------------------------------------------ constructors

def const(value) -> Const:
    """Exact rational constant. Floats are rejected; they are never stored."""
    if isinstance(value, float):
        raise TypeError("floats are not storable constants; use Fraction or int")
    return Const(Fraction(value))


ZERO = const(0)
ONE = const(1)


def sym(s) -> Sym:
    if isinstance(s, str):
        s = Symbol(s)
    return Sym(s)


def _coerce(x) -> Expression:
    if isinstance(x, Expression):
        return x
    if isinstance(x, (int, Fraction, str)):
        return const(x)
    raise TypeError(f"cannot use {type(x).__name__} as an expression")


def add(*terms) -> Expression:
    """n-ary sum; flattens nested sums, folds constants, drops zeros."""
    flat: list[Expression] = []
    total = Fraction(0)
    for t in terms:
        t = _coerce(t)
        if isinstance(t, Const):
            total += t.value
        elif isinstance(t, Sum):
            for u in t.args:
                if isinstance(u, Const):
                    total += u.value
                else:
                    flat.append(u)
        else:
            flat.append(t)
    if total != 0:
        flat.append(Const(total))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Sum(tuple(flat))


def mul(*factors) -> Expression:
    """n-ary product; flattens, folds constants, short-circuits zero."""
    flat: list[Expression] = []
    coeff = Fraction(1)
    for f in factors:
        f = _coerce(f)
        if isinstance(f, Const):
            coeff *= f.value
        elif isinstance(f, Product):
            for u in f.args:
                if isinstance(u, Const):
                    coeff *= u.value
                else:
                    flat.append(u)
        else:
            flat.append(f)
    if coeff == 0:
        return ZERO
    if not flat:
        return Const(coeff)
    if coeff != 1:
        flat.insert(0, Const(coeff))
    if len(flat) == 1:
        return flat[0]
    return Product(tuple(flat))


def sub(a, b) -> Expression:
    a, b = _coerce(a), _coerce(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Const) and b.value == 0:
        return a
    if isinstance(a, Const) and a.value == 0:
        return neg(b)
    return Difference((a, b))


def div(a, b) -> Expression:
    a, b = _coerce(a), _coerce(b)
    if isinstance(b, Const):
        if b.value == 0:
            raise DenominatorIdenticallyZero("denominator is the literal zero constant")
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b.value == 1:
            return a
    if isinstance(a, Const) and a.value == 0:
        return ZERO
    return Quotient((a, b))


def pow_(base, exponent: int) -> Expression:
    base = _coerce(base)
    if not isinstance(exponent, int):
        raise TypeError("exponents must be Python ints")
    if exponent == 0:
        return ONE  # 0^0 treated as the empty product
    if exponent == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and exponent < 0:
            raise DenominatorIdenticallyZero("zero constant raised to a negative power")
        return Const(base.value ** exponent)
    return Power(base, exponent)


def neg(a) -> Expression:
    return mul(const(-1), _coerce(a))


# -------------------------------------------------------------- traversal

def _topo(roots: Sequence[Expression]) -> list[Expression]:
    """Unique nodes of the DAG(s), children before parents. Iterative."""
    order: list[Expression] = []
    seen: set[int] = set()
    stack: list[tuple[Expression, bool]] = [(r, False) for r in reversed(roots)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for child in node.args:
            stack.append((child, False))
    return order


def free_symbols(e: Expression) -> set[Symbol]:
    out: set[Symbol] = set()
    for node in _topo([e]):
        if isinstance(node, Sym):
            out.add(node.symbol)
    return out


# ---------------------------------------------------------- differentiate

def differentiate(e: Expression, s: Symbol) -> Expression:
    """Partial derivative of `e` with respect to `s`.

    All other symbols are held fixed. Subtrees not mentioning `s` are
    pruned to zero without being rebuilt, which keeps the result sharing
    structure with the input.
    """
    order = _topo([e])
    mentions: dict[int, bool] = {}
    for node in order:
        if isinstance(node, Sym):
            mentions[id(node)] = node.symbol == s
        elif isinstance(node, Const):
            mentions[id(node)] = False
        else:
            mentions[id(node)] = any(mentions[id(c)] for c in node.args)

    memo: dict[int, Expression] = {}
    for node in order:
        if not mentions[id(node)]:
            memo[id(node)] = ZERO
            continue
        if isinstance(node, Sym):
            memo[id(node)] = ONE
        elif isinstance(node, Sum):
            memo[id(node)] = add(*(memo[id(c)] for c in node.args if mentions[id(c)]))
        elif isinstance(node, Difference):
            a, b = node.args
            memo[id(node)] = sub(memo[id(a)], memo[id(b)])
        elif isinstance(node, Product):
            terms = []
            fs = node.args
            for i, f in enumerate(fs):
                if mentions[id(f)]:
                    terms.append(mul(*fs[:i], memo[id(f)], *fs[i + 1:]))
            memo[id(node)] = add(*terms)
        elif isinstance(node, Quotient):
            n, d = node.args
            if not mentions[id(d)]:
                memo[id(node)] = div(memo[id(n)], d)
            else:
                num = sub(mul(memo[id(n)], d), mul(n, memo[id(d)]))
                memo[id(node)] = div(num, pow_(d, 2))
        elif isinstance(node, Power):
            b = node.args[0]
            k = node.exponent
            memo[id(node)] = mul(const(k), pow_(b, k - 1), memo[id(b)])
        else:  # pragma: no cover
            raise TypeError(f"cannot differentiate {type(node).__name__}")
    return memo[id(e)]


# -------------------------------------------------------------- substitute

def substitute(e: Expression, bindings: Mapping[Symbol, Expression]) -> Expression:
    """Simultaneous one-pass substitution of symbols by expressions.

    Images are not re-scanned, so {x -> y, y -> x} swaps rather than
    cascades. Untouched subtrees are returned as the same objects.
    """
    return substitute_many([e], bindings)[0]


def substitute_many(exprs: Sequence[Expression],
                    bindings: Mapping[Symbol, Expression]) -> list[Expression]:
    """`substitute` over several expressions with one shared rebuild cache,
    preserving cross-expression sharing (important for later evaluation)."""
    if not bindings:
        return list(exprs)
    images = {s: _coerce(v) for s, v in bindings.items()}
    order = _topo(list(exprs))
    memo: dict[int, Expression] = {}
    for node in order:
        if isinstance(node, Sym):
            memo[id(node)] = images.get(node.symbol, node)
        elif isinstance(node, Const):
            memo[id(node)] = node
        else:
            kids = [memo[id(c)] for c in node.args]
            if all(k is c for k, c in zip(kids, node.args)):
                memo[id(node)] = node
            elif isinstance(node, Sum):
                memo[id(node)] = add(*kids)
            elif isinstance(node, Product):
                memo[id(node)] = mul(*kids)
            elif isinstance(node, Difference):
                memo[id(node)] = sub(kids[0], kids[1])
            elif isinstance(node, Quotient):
                memo[id(node)] = div(kids[0], kids[1])
            else:
                memo[id(node)] = pow_(kids[0], node.exponent)
    return [memo[id(e)] for e in exprs]


# ---------------------------------------------- polynomials and normalize
#
# A polynomial is a dict mapping monomials to nonzero Fractions; a monomial
# is a sorted tuple of (Symbol, exponent) pairs. The empty dict is zero.

_POLY_ONE = {(): Fraction(1)}


def _mono_mul(m1, m2):
    if not m1:
        return m2
    if not m2:
        return m1
    merged: dict[Symbol, int] = dict(m1)
    for s, k in m2:
        merged[s] = merged.get(s, 0) + k
    return tuple(sorted(merged.items(), key=lambda it: it[0].sort_key()))


def _poly_add(p1, p2):
    if not p1:
        return p2
    if not p2:
        return p1
    out = dict(p1)
    for m, c in p2.items():
        v = out.get(m)
        if v is None:
            out[m] = c
        else:
            v = v + c
            if v == 0:
                del out[m]
            else:
                out[m] = v
    return out


def _poly_scale(p, f: Fraction):
    if f == 0:
        return {}
    if f == 1:
        return p
    return {m: c * f for m, c in p.items()}


def _poly_mul(p1, p2):
    if not p1 or not p2:
        return {}
    if p1 is _POLY_ONE:
        return p2
    if p2 is _POLY_ONE:
        return p1
    if len(p1) > len(p2):
        p1, p2 = p2, p1
    out: dict = {}
    for m1, c1 in p1.items():
        for m2, c2 in p2.items():
            m = _mono_mul(m1, m2)
            v = out.get(m)
            if v is None:
                out[m] = c1 * c2
            else:
                v = v + c1 * c2
                if v == 0:
                    del out[m]
                else:
                    out[m] = v
    return out


def _poly_pow(p, k: int):
    result = _POLY_ONE
    base = p
    while k:
        if k & 1:
            result = _poly_mul(result, base)
        base = _poly_mul(base, base) if k > 1 else base
        k >>= 1
    return result


def _mono_order_key(mono):
    return (sum(k for _, k in mono), tuple((s.sort_key(), k) for s, k in mono))


def _leading_coefficient(p) -> Fraction:
    return p[max(p, key=_mono_order_key)]


def _mono_str(mono) -> str:
    return "*".join(s.display if k == 1 else f"{s.display}^{k}" for s, k in mono)


def _poly_str(p) -> str:
    if not p:
        return "0"
    parts = []
    for mono in sorted(p, key=_mono_order_key, reverse=True):
        c = p[mono]
        body = _mono_str(mono)
        if not body:
            term = str(c)
        elif c == 1:
            term = body
        elif c == -1:
            term = f"-{body}"
        else:
            term = f"{c}*{body}"
        parts.append(term)
    text = " + ".join(parts)
    return text.replace("+ -", "- ")


class RationalCanonical:
    """Expanded numerator/denominator pair of a rational function.

    The denominator is scaled so its leading coefficient (graded-lex
    order) is 1; numerator and denominator are not GCD-reduced. Equality
    is decided exactly by cross-multiplication, which is sound without
    cancellation.
    """

    __slots__ = ("numerator", "denominator")

    def __init__(self, numerator, denominator):
        if not denominator:
            raise DenominatorIdenticallyZero("denominator expands to the zero polynomial")
        if not numerator:
            numerator, denominator = {}, dict(_POLY_ONE)
        else:
            lead = _leading_coefficient(denominator)
            if lead != 1:
                inv = 1 / lead
                numerator = _poly_scale(numerator, inv)
                denominator = _poly_scale(denominator, inv)
        self.numerator = numerator
        self.denominator = denominator

    @property
    def is_zero(self) -> bool:
        return not self.numerator

    def equivalent(self, other: "RationalCanonical") -> bool:
        cross = _poly_add(
            _poly_mul(self.numerator, other.denominator),
            _poly_scale(_poly_mul(other.numerator, self.denominator), Fraction(-1)),
        )
        return not cross

    def __eq__(self, other):
        if not isinstance(other, RationalCanonical):
            return NotImplemented
        return self.equivalent(other)

    def __hash__(self):  # pragma: no cover
        raise TypeError("RationalCanonical is not hashable")

    def coefficient(self, monomial: Mapping[Symbol, int]) -> Fraction:
        """Numerator coefficient of the given monomial (use with denominator 1)."""
        key = tuple(sorted(((s, k) for s, k in monomial.items() if k),
                           key=lambda it: it[0].sort_key()))
        return self.numerator.get(key, Fraction(0))

    def free_symbols(self) -> set[Symbol]:
        out: set[Symbol] = set()
        for poly in (self.numerator, self.denominator):
            for mono in poly:
                for s, _ in mono:
                    out.add(s)
        return out

    def __str__(self):
        num = _poly_str(self.numerator)
        if self.denominator == _POLY_ONE:
            return num
        return f"({num}) / ({_poly_str(self.denominator)})"

    def __repr__(self):
        return f"<RationalCanonical {self}>"


def normalize(e: Expression) -> RationalCanonical:
    """Expand `e` into a canonical numerator/denominator pair.

    `normalize(e).is_zero` is an exact zero test for the rational
    function `e` denotes. Shared DAG nodes are expanded once.
    """
    memo: dict[int, tuple[dict, dict]] = {}
    for node in _topo([e]):
        if isinstance(node, Const):
            num = {(): node.value} if node.value != 0 else {}
            memo[id(node)] = (num, _POLY_ONE)
        elif isinstance(node, Sym):
            memo[id(node)] = ({((node.symbol, 1),): Fraction(1)}, _POLY_ONE)
        elif isinstance(node, Sum):
            n, d = memo[id(node.args[0])]
            for child in node.args[1:]:
                n2, d2 = memo[id(child)]
                if d is d2 is _POLY_ONE:
                    n = _poly_add(n, n2)
                else:
                    n = _poly_add(_poly_mul(n, d2), _poly_mul(n2, d))
                    d = _poly_mul(d, d2)
            memo[id(node)] = (n, d)
        elif isinstance(node, Difference):
            n1, d1 = memo[id(node.args[0])]
            n2, d2 = memo[id(node.args[1])]
            n2 = _poly_scale(n2, Fraction(-1))
            if d1 is d2 is _POLY_ONE:
                memo[id(node)] = (_poly_add(n1, n2), _POLY_ONE)
            else:
                memo[id(node)] = (
                    _poly_add(_poly_mul(n1, d2), _poly_mul(n2, d1)),
                    _poly_mul(d1, d2),
                )
        elif isinstance(node, Product):
            n, d = _POLY_ONE, _POLY_ONE
            for child in node.args:
                n2, d2 = memo[id(child)]
                n = _poly_mul(n, n2)
                d = _poly_mul(d, d2)
            memo[id(node)] = (n, d)
        elif isinstance(node, Quotient):
            n1, d1 = memo[id(node.args[0])]
            n2, d2 = memo[id(node.args[1])]
            if not n2:
                raise DenominatorIdenticallyZero(
                    "denominator expands to the zero polynomial")
            memo[id(node)] = (_poly_mul(n1, d2), _poly_mul(d1, n2))
        else:  # Power
            n, d = memo[id(node.args[0])]
            k = node.exponent
            if k >= 0:
                memo[id(node)] = (_poly_pow(n, k), _poly_pow(d, k))
            else:
                if not n:
                    raise DenominatorIdenticallyZero(
                        "zero raised to a negative power")
                memo[id(node)] = (_poly_pow(d, -k), _poly_pow(n, -k))
    num, den = memo[id(e)]
    return RationalCanonical(num, den)


def is_zero(e: Expression) -> bool:
    return normalize(e).is_zero


def equivalent(a: Expression, b: Expression) -> bool:
    """Exact equality of `a` and `b` as rational functions."""
    return is_zero(sub(a, b))


# -------------------------------------------------------------- evaluation

_OP_ADD, _OP_SUB, _OP_MUL, _OP_DIV, _OP_POW = range(5)


class Program:
    """Straight-line evaluator compiled from expression DAGs.

    Value slots are laid out as [inputs][constants][temporaries]; shared
    subexpressions occupy a single slot and are computed once per run.
    Three interpreters share the instruction list: exact rationals,
    float64, and a prime field.
    """

    def __init__(self, instructions, n_inputs, constants, n_slots, outputs,
                 input_symbols):
        self.instructions = instructions
        self.n_inputs = n_inputs
        self.constants = constants
        self.n_slots = n_slots
        self.outputs = outputs
        self.input_symbols = input_symbols
        self._mod_consts: dict[int, list[int]] = {}
        self._float_consts = [float(c) for c in constants]

    def _template(self, consts) -> list:
        vals = [None] * self.n_slots
        base = self.n_inputs
        for i, c in enumerate(consts):
            vals[base + i] = c
        return vals

    def run_exact(self, values: Sequence) -> list[Fraction]:
        vals = self._template(self.constants)
        for i, v in enumerate(values):
            vals[i] = Fraction(v)
        for ins in self.instructions:
            op = ins[0]
            if op == _OP_ADD:
                s = Fraction(0)
                for j in ins[2]:
                    s += vals[j]
                vals[ins[1]] = s
            elif op == _OP_MUL:
                s = Fraction(1)
                for j in ins[2]:
                    s *= vals[j]
                vals[ins[1]] = s
            elif op == _OP_SUB:
                vals[ins[1]] = vals[ins[2]] - vals[ins[3]]
            elif op == _OP_DIV:
                b = vals[ins[3]]
                if b == 0:
                    raise DivisionByZero("denominator is zero at this point")
                vals[ins[1]] = vals[ins[2]] / b
            else:
                v = vals[ins[2]]
                k = ins[3]
                if v == 0 and k < 0:
                    raise DivisionByZero("zero base with negative exponent")
                vals[ins[1]] = v ** k
        return [vals[o] for o in self.outputs]

    def run_float(self, values: Sequence[float]) -> list[float]:
        vals = self._template(self._float_consts)
        for i, v in enumerate(values):
            vals[i] = float(v)
        for ins in self.instructions:
            op = ins[0]
            if op == _OP_ADD:
                s = 0.0
                for j in ins[2]:
                    s += vals[j]
                vals[ins[1]] = s
            elif op == _OP_MUL:
                s = 1.0
                for j in ins[2]:
                    s *= vals[j]
                vals[ins[1]] = s
            elif op == _OP_SUB:
                vals[ins[1]] = vals[ins[2]] - vals[ins[3]]
            elif op == _OP_DIV:
                b = vals[ins[3]]
                if b == 0.0:
                    raise DivisionByZero("denominator is zero at this point")
                vals[ins[1]] = vals[ins[2]] / b
            else:
                v = vals[ins[2]]
                k = ins[3]
                if v == 0.0 and k < 0:
                    raise DivisionByZero("zero base with negative exponent")
                vals[ins[1]] = v ** k
        return [vals[o] for o in self.outputs]

    def _consts_mod(self, p: int) -> list[int]:
        cached = self._mod_consts.get(p)
        if cached is None:
            cached = []
            for c in self.constants:
                den = c.denominator % p
                if den == 0:
                    raise DivisionByZero(f"constant {c} has no residue mod {p}")
                cached.append(c.numerator * pow(den, -1, p) % p)
            self._mod_consts[p] = cached
        return cached

    def run_mod(self, values: Sequence[int], p: int) -> list[int]:
        vals = self._template(self._consts_mod(p))
        for i, v in enumerate(values):
            vals[i] = v % p
        for ins in self.instructions:
            op = ins[0]
            if op == _OP_ADD:
                s = 0
                for j in ins[2]:
                    s += vals[j]
                vals[ins[1]] = s % p
            elif op == _OP_MUL:
                s = 1
                for j in ins[2]:
                    s = s * vals[j] % p
                vals[ins[1]] = s
            elif op == _OP_SUB:
                vals[ins[1]] = (vals[ins[2]] - vals[ins[3]]) % p
            elif op == _OP_DIV:
                b = vals[ins[3]]
                if b == 0:
                    raise DivisionByZero("denominator is zero at this point")
                vals[ins[1]] = vals[ins[2]] * pow(b, -1, p) % p
            else:
                v = vals[ins[2]]
                k = ins[3]
                if v == 0 and k < 0:
                    raise DivisionByZero("zero base with negative exponent")
                vals[ins[1]] = pow(v, k, p)
        return [vals[o] for o in self.outputs]


def compile_program(exprs: Sequence[Expression],
                    inputs: Sequence[Symbol]) -> Program:
    """Compile expressions into a `Program` over the given input symbols.

    Raises UnboundSymbol at compile time if an expression mentions a
    symbol outside `inputs`.
    """
    input_slot = {s: i for i, s in enumerate(inputs)}
    const_slot: dict[Fraction, int] = {}
    constants: list[Fraction] = []
    instructions: list[tuple] = []
    memo: dict[int, int] = {}
    next_slot = len(inputs)  # constants and temporaries are appended

    order = _topo(list(exprs))
    # constants first so the slot layout is [inputs][constants][temps]
    for node in order:
        if isinstance(node, Const) and node.value not in const_slot:
            const_slot[node.value] = next_slot
            constants.append(node.value)
            next_slot += 1

    for node in order:
        if isinstance(node, Const):
            memo[id(node)] = const_slot[node.value]
        elif isinstance(node, Sym):
            slot = input_slot.get(node.symbol)
            if slot is None:
                raise UnboundSymbol(f"no value bound for symbol '{node.symbol.display}'")
            memo[id(node)] = slot
        else:
            kids = tuple(memo[id(c)] for c in node.args)
            dst = next_slot
            next_slot += 1
            if isinstance(node, Sum):
                instructions.append((_OP_ADD, dst, kids))
            elif isinstance(node, Product):
                instructions.append((_OP_MUL, dst, kids))
            elif isinstance(node, Difference):
                instructions.append((_OP_SUB, dst, kids[0], kids[1]))
            elif isinstance(node, Quotient):
                instructions.append((_OP_DIV, dst, kids[0], kids[1]))
            else:
                instructions.append((_OP_POW, dst, kids[0], node.exponent))
            memo[id(node)] = dst

    outputs = [memo[id(e)] for e in exprs]
    return Program(instructions, len(inputs), constants, next_slot, outputs,
                   tuple(inputs))


def evaluate(e: Expression, point: Mapping[Symbol, object],
             arithmetic="exact"):
    """Evaluate `e` at `point`.

    `arithmetic` is "exact" (Fraction result), "float64", or an integer
    prime modulus p (int result in [0, p)). Exact and prime-field modes
    are deterministic; division by zero raises, never silently absorbs.
    """
    symbols = sorted(point.keys(), key=Symbol.sort_key)
    program = compile_program([e], symbols)  # raises UnboundSymbol if underbound
    if arithmetic == "exact":
        values = [_as_fraction(point[s]) for s in symbols]
        return program.run_exact(values)[0]
    if arithmetic == "float64":
        return program.run_float([float(point[s]) for s in symbols])[0]
    if isinstance(arithmetic, int):
        p = arithmetic
        if p < 2:
            raise ValueError("prime modulus must be at least 2")
        return program.run_mod([_as_residue(point[s], p) for s in symbols], p)[0]
    raise ValueError(f"unknown arithmetic mode {arithmetic!r}")


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v)  # exact binary expansion
    raise TypeError(f"cannot evaluate exactly with value of type {type(v).__name__}")


def _as_residue(v, p: int) -> int:
    if isinstance(v, int):
        return v % p
    if isinstance(v, Fraction):
        den = v.denominator % p
        if den == 0:
            raise DivisionByZero(f"value {v} has no residue mod {p}")
        return v.numerator * pow(den, -1, p) % p
    raise TypeError("prime-field evaluation takes ints or Fractions")


def compile_float_fn(e: Expression, inputs: Sequence[Symbol]):
    """Compile to a plain Python function of float (or numpy array) args.

    Generated source uses only + - * / **, so numpy arrays broadcast
    through it unchanged. Scalar division by zero raises DivisionByZero.
    """
    name_of = {s: f"v{i}" for i, s in enumerate(inputs)}
    missing = free_symbols(e) - set(inputs)
    if missing:
        names = ", ".join(sorted(s.display for s in missing))
        raise UnboundSymbol(f"no value bound for symbol(s) {names}")
    body = _python_source(e, name_of)
    args = ", ".join(name_of[s] for s in inputs)
    src = f"def _fn({args}):\n    return {body}\n"
    namespace: dict = {}
    exec(src, namespace)  # source is generated purely from the expression
    raw = namespace["_fn"]

    def fn(*values):
        try:
            return raw(*values)
        except ZeroDivisionError as exc:
            raise DivisionByZero(str(exc)) from None

    fn.__doc__ = src
    return fn


def _python_source(e: Expression, name_of: Mapping[Symbol, str]) -> str:
    memo: dict[int, str] = {}
    for node in _topo([e]):
        if isinstance(node, Const):
            v = node.value
            memo[id(node)] = f"({v.numerator}/{v.denominator})" \
                if v.denominator != 1 else f"({v.numerator})"
        elif isinstance(node, Sym):
            memo[id(node)] = name_of[node.symbol]
        elif isinstance(node, Sum):
            memo[id(node)] = "(" + " + ".join(memo[id(c)] for c in node.args) + ")"
        elif isinstance(node, Product):
            memo[id(node)] = "(" + "*".join(memo[id(c)] for c in node.args) + ")"
        elif isinstance(node, Difference):
            a, b = node.args
            memo[id(node)] = f"({memo[id(a)]} - {memo[id(b)]})"
        elif isinstance(node, Quotient):
            a, b = node.args
            memo[id(node)] = f"({memo[id(a)]} / {memo[id(b)]})"
        else:
            memo[id(node)] = f"({memo[id(node.args[0])]})**({node.exponent})"
    return memo[id(e)]


# ---------------------------------------------------------------- printing

_LVL_SUM, _LVL_PROD, _LVL_POWBASE, _LVL_ATOM = 1, 2, 3, 4


def _render(e: Expression) -> tuple[str, int]:
    memo: dict[int, tuple[str, int]] = {}

    def wrap(child, min_level):
        text, level = memo[id(child)]
        return f"({text})" if level < min_level else text

    for node in _topo([e]):
        if isinstance(node, Const):
            v = node.value
            if v < 0:
                memo[id(node)] = (str(v), _LVL_SUM)
            elif v.denominator != 1:
                memo[id(node)] = (str(v), _LVL_PROD)
            else:
                memo[id(node)] = (str(v), _LVL_ATOM)
        elif isinstance(node, Sym):
            memo[id(node)] = (node.symbol.display, _LVL_ATOM)
        elif isinstance(node, Power):
            base = wrap(node.args[0], _LVL_ATOM)
            memo[id(node)] = (f"{base}^{node.exponent}", _LVL_POWBASE)
        elif isinstance(node, Product):
            factors = list(node.args)
            sign = ""
            texts = []
            if isinstance(factors[0], Const) and factors[0].value < 0:
                sign = "-"
                lead = -factors[0].value
                factors = factors[1:]
                if lead != 1:
                    texts.append(str(lead))
            texts.extend(wrap(f, _LVL_PROD) for f in factors)
            memo[id(node)] = (sign + "*".join(texts),
                              _LVL_SUM if sign else _LVL_PROD)
        elif isinstance(node, Quotient):
            num = wrap(node.args[0], _LVL_PROD)
            den = wrap(node.args[1], _LVL_POWBASE)
            memo[id(node)] = (f"{num}/{den}", _LVL_PROD)
        elif isinstance(node, Difference):
            left = wrap(node.args[0], _LVL_SUM)
            rtext, rlevel = memo[id(node.args[1])]
            right = f"({rtext})" if rlevel <= _LVL_SUM else rtext
            memo[id(node)] = (f"{left} - {right}", _LVL_SUM)
        else:  # Sum
            parts = [memo[id(node.args[0])][0]]
            for child in node.args[1:]:
                text, _ = memo[id(child)]
                if text.startswith("-"):
                    parts.append(f" - {text[1:]}")
                else:
                    parts.append(f" + {text}")
            memo[id(node)] = ("".join(parts), _LVL_SUM)
    return memo[id(e)]


def to_text(e: Expression) -> str:
    """Infix text form; `parse_expression` reads it back."""
    return _render(e)[0]


# ----------------------------------------------------------------- parsing

_T_NUM, _T_IDENT, _T_OP, _T_LP, _T_RP, _T_END = range(6)


def _tokenize(text: str, base_line: int, base_col: int):
    tokens = []
    i, n = 0, len(text)
    line, col = base_line, base_col
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        start_col = col
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                raise ParseError("decimal literals are not supported; "
                                 "write an exact rational like 1/2", line, start_col)
            tokens.append((_T_NUM, text[i:j], line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            name = text[i:j]
            col += j - i
            i = j
            order = 0
            while i < n and text[i] == "'":
                order += 1
                i += 1
                col += 1
            if order == 0 and i + 1 < n and text[i] == "^" and text[i + 1] == "(":
                # name^(k) is a derivative marker, not a power
                j = i + 2
                while j < n and text[j].isdigit():
                    j += 1
                if j > i + 2 and j < n and text[j] == ")":
                    order = int(text[i + 2:j])
                    col += j + 1 - i
                    i = j + 1
            tokens.append((_T_IDENT, (name, order), line, start_col))
            continue
        if ch in "+-*/^":
            tokens.append((_T_OP, ch, line, start_col))
        elif ch == "(":
            tokens.append((_T_LP, ch, line, start_col))
        elif ch == ")":
            tokens.append((_T_RP, ch, line, start_col))
        else:
            raise ParseError(f"unexpected character {ch!r}", line, start_col)
        i += 1
        col += 1
    tokens.append((_T_END, "", line, col))
    return tokens


class _Parser:
    def __init__(self, tokens, table: SymbolTable | None):
        self.tokens = tokens
        self.pos = 0
        self.table = table
        self._auto: dict[str, Symbol] = {}

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ParseError(message, tok[2], tok[3])

    def parse(self) -> Expression:
        e = self.expr()
        tok = self.peek()
        if tok[0] != _T_END:
            self.fail(f"unexpected trailing input {tok[1]!r}")
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            tok = self.peek()
            if tok[0] == _T_OP and tok[1] in "+-":
                self.advance()
                rhs = self.term()
                e = add(e, rhs) if tok[1] == "+" else sub(e, rhs)
            else:
                return e

    def term(self) -> Expression:
        e = self.factor()
        while True:
            tok = self.peek()
            if tok[0] == _T_OP and tok[1] in "*/":
                self.advance()
                rhs = self.factor()
                e = mul(e, rhs) if tok[1] == "*" else div(e, rhs)
            else:
                return e

    def factor(self) -> Expression:
        tok = self.peek()
        if tok[0] == _T_OP and tok[1] == "-":
            self.advance()
            return neg(self.factor())
        if tok[0] == _T_OP and tok[1] == "+":
            self.advance()
            return self.factor()
        e = self.atom()
        tok = self.peek()
        if tok[0] == _T_OP and tok[1] == "^":
            self.advance()
            e = pow_(e, self.exponent())
        return e

    def exponent(self) -> int:
        sign = 1
        tok = self.peek()
        if tok[0] == _T_OP and tok[1] == "-":
            self.advance()
            sign = -1
        tok = self.advance()
        if tok[0] == _T_LP:
            self.fail("parenthesized exponents are not supported; write x^2 "
                      "(a derivative symbol is spelled name^(k))", tok)
        if tok[0] != _T_NUM:
            self.fail("integer exponent expected", tok)
        return sign * int(tok[1])

    def atom(self) -> Expression:
        tok = self.advance()
        if tok[0] == _T_NUM:
            return const(int(tok[1]))
        if tok[0] == _T_IDENT:
            name, order = tok[1]
            return sym(self.resolve(name, order, tok))
        if tok[0] == _T_LP:
            e = self.expr()
            closing = self.advance()
            if closing[0] != _T_RP:
                self.fail("expected ')'", closing)
            return e
        if tok[0] == _T_END:
            self.fail("unexpected end of input", tok)
        self.fail(f"unexpected token {tok[1]!r}", tok)

    def resolve(self, name, order, tok) -> Symbol:
        if self.table is None:
            if order != 0:
                self.fail(f"'{name}' has no derivative chain here", tok)
            s = self._auto.get(name)
            if s is None:
                s = Symbol(name)
                self._auto[name] = s
            return s
        try:
            return self.table.resolve(name, order)
        except KeyError:
            raise UndeclaredSymbol(name, tok[2], tok[3]) from None
        except ValueError as exc:
            self.fail(str(exc), tok)


def parse_expression(text: str, table: SymbolTable | None = None, *,
                     line: int = 1, col: int = 1) -> Expression:
    """Parse infix expression text.

    With a symbol table, identifiers (and their primed/`^(k)` derivative
    forms) must resolve through it; without one, plain identifiers create
    auxiliary symbols on first use. `line`/`col` offset reported
    positions, for expressions embedded in larger files.
    """
    tokens = _tokenize(text, line, col)
    if tokens[0][0] == _T_END:
        raise ParseError("empty expression", line, col)
    return _Parser(tokens, table).parse()
