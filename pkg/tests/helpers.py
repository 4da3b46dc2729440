"""Shared test utilities: random expressions and a finite-difference oracle."""

from __future__ import annotations

import random
from fractions import Fraction

from odeident import expr as E

XYZ = tuple(E.Symbol(n) for n in ("x", "y", "z"))


def random_expression(rng: random.Random, symbols=XYZ, depth=3) -> E.Expression:
    """Random rational expression over `symbols`.

    Denominators are built as b^2 + k with k >= 1, so they are positive at
    every real point and never the zero polynomial; float evaluation and
    normalization are total on these expressions.
    """
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return E.const(Fraction(rng.randint(-6, 6), rng.randint(1, 4)))
        return E.sym(rng.choice(symbols))
    op = rng.choice(("add", "sub", "mul", "mul", "div", "pow"))
    a = random_expression(rng, symbols, depth - 1)
    if op == "pow":
        return E.pow_(a, rng.randint(0, 3))
    b = random_expression(rng, symbols, depth - 1)
    if op == "add":
        return E.add(a, b)
    if op == "sub":
        return E.sub(a, b)
    if op == "mul":
        return E.mul(a, b)
    return E.div(a, E.add(E.mul(b, b), E.const(rng.randint(1, 3))))


def random_point(rng: random.Random, symbols=XYZ, lo=0.5, hi=1.6) -> dict:
    return {s: rng.uniform(lo, hi) for s in symbols}


def fd_derivative(e: E.Expression, s: E.Symbol, point: dict,
                  h: float = 1e-6) -> float:
    """Central finite difference of `e` in `s` at a float point."""
    x = float(point[s])
    step = h * max(1.0, abs(x))
    up = E.evaluate(e, {**point, s: x + step}, arithmetic="float64")
    dn = E.evaluate(e, {**point, s: x - step}, arithmetic="float64")
    return (up - dn) / (2.0 * step)


def fd_cases(n: int, seed: int = 20240501, depth: int = 3):
    """Yield `n` (expression, symbol, point) cases where the expression is
    numerically tame at the point (keeps the finite-difference error well
    below the comparison tolerance)."""
    rng = random.Random(seed)
    produced = 0
    while produced < n:
        e = random_expression(rng, depth=depth)
        s = rng.choice(XYZ)
        point = random_point(rng)
        try:
            value = E.evaluate(e, point, arithmetic="float64")
        except E.DivisionByZero:
            continue
        if abs(value) > 1e3:
            continue
        yield e, s, point
        produced += 1
