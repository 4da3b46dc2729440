"""The tau-indexed indistinguishability family for the HIV model.

For any admissible tau the family rescales (delta, N), remixes
(T_U, T_I) and rewrites the time-varying infection rate so that the
transformed quantities satisfy the same dynamics with the transformed
parameters while both outputs stay identical for all time. Existence of
this family for arbitrarily small tau is what defeats local
identifiability of delta, N and eta.

Everything is phrased in u = e^(rho*tau). Numerically u is computed once
per (rho, tau) and reused so all transformed quantities are mutually
consistent; symbolically u is one auxiliary nonzero symbol, which makes
all three verification identities rational and therefore decidable by
exact expansion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from . import expr
from .expr import AUX, Expression, RationalCanonical, Symbol, sym
from .model import DYNAMICS, hiv_model, total_time_derivative

__all__ = [
    "IdentityCheck", "Params", "SingularPoint", "SingularTau", "TauFamily",
    "TransformedInstance", "admissible_tau_interval", "eta_prime_value",
    "eta_prime_expr", "params_prime_exprs", "state_map_exprs",
    "transform_params", "transform_state", "verify_identities",
]

_DENOM_EPS = 1e-12


class SingularTau(expr.ExprError):
    """tau outside the admissible interval: the delta' denominator
    (rho - delta) * e^(rho tau) + delta is nonpositive or vanishing."""


class SingularPoint(expr.ExprError):
    """The eta' denominator vanishes at this state (e.g. V = 0)."""


@dataclass(frozen=True)
class Params:
    """Constant parameters of the HIV model. Column order used throughout
    reports is (lambda, delta, rho, c, N)."""

    lam: float
    delta: float
    rho: float
    c: float
    N: float

    def as_dict(self) -> dict:
        return {"lambda": self.lam, "delta": self.delta, "rho": self.rho,
                "c": self.c, "N": self.N}

    def validate_positive(self) -> None:
        for name, v in self.as_dict().items():
            if not v > 0:
                raise ValueError(f"parameter {name} must be positive, got {v}")


def _resolve_u(params: Params, tau, u):
    """Exactly one of tau, u; u = e^(rho tau) computed once and reused."""
    if (tau is None) == (u is None):
        raise ValueError("pass exactly one of tau or u")
    if u is None:
        u = math.exp(params.rho * tau)
    if not u > 0:
        raise ValueError("u = e^(rho tau) must be positive")
    return u


def _delta_denominator(params: Params, u):
    return (params.rho - params.delta) * u + params.delta


def transform_params(params: Params, tau=None, *, u=None) -> Params:
    """Transformed constants: delta' = delta*rho / ((rho-delta)*u + delta),
    N' = N*u; lambda, rho, c unchanged. u == 1 is the identity, exactly."""
    u = _resolve_u(params, tau, u)
    if u == 1:
        return params
    den = _delta_denominator(params, u)
    if den <= 0 or abs(den) < _DENOM_EPS:
        raise SingularTau(
            f"delta' denominator (rho-delta)*u + delta = {den} at u = {u}; "
            f"admissible tau interval: {admissible_tau_interval(params)}")
    return Params(
        lam=params.lam,
        delta=params.delta * params.rho / den,
        rho=params.rho,
        c=params.c,
        N=params.N * u,
    )


def _state_mix(params: Params, u):
    # T_I' = a * T_I with a = (delta/u + rho - delta) / rho
    return (params.delta / u + params.rho - params.delta) / params.rho


def transform_state(T_U, T_I, V, params: Params, tau=None, *, u=None):
    """Transformed states: T_I' = a*T_I, T_U' = T_U + (1-a)*T_I, V' = V,
    with a = (delta e^(-rho tau) + rho - delta)/rho. The sum T_U' + T_I'
    equals T_U + T_I identically, so output one never changes."""
    u = _resolve_u(params, tau, u)
    if u == 1:
        return T_U, T_I, V
    den = _delta_denominator(params, u)
    if den <= 0 or abs(den) < _DENOM_EPS:
        raise SingularTau(f"inadmissible u = {u} (denominator {den})")
    a = _state_mix(params, u)
    T_I_p = T_I * a
    return T_U + T_I - T_I_p, T_I_p, V


def eta_prime_value(T_U, T_I, V, eta, params: Params, tau=None, *, u=None):
    """Transformed time-varying parameter, evaluated as printed:

        eta' = [eta T_U V rho u + (T_I d^2 - T_I d rho - eta T_U V d)(u-1)]
               / [V (T_I d + T_U rho) u - V T_I d]              (d = delta)

    Raises SingularPoint when the denominator falls below 1e-12 of the
    natural scale V rho (T_U + T_I) u.
    """
    u = _resolve_u(params, tau, u)
    if u == 1:
        return eta
    d, rho = params.delta, params.rho
    num = eta*T_U*V*rho*u + (T_I*d*d - T_I*d*rho - eta*T_U*V*d) * (u - 1)
    den = V * (T_I*d + T_U*rho) * u - V*T_I*d
    scale = abs(V * rho * (T_U + T_I) * u)
    if den == 0 or abs(den) <= _DENOM_EPS * scale:
        raise SingularPoint(
            f"eta' denominator {den} vanishes relative to scale {scale}")
    return num / den


def admissible_tau_interval(params: Params) -> tuple[float | None, float | None]:
    """Open interval of tau keeping the delta' denominator positive.

    None means unbounded on that side. For rho >= delta every tau is
    admissible; for rho < delta the upper end is ln(delta/(delta-rho))/rho.
    """
    if params.rho >= params.delta:
        return (None, None)
    hi = math.log(params.delta / (params.delta - params.rho)) / params.rho
    return (None, hi)


@dataclass(frozen=True)
class TauFamily:
    """One member of the family: a base parameter set and a tau."""

    tau: float
    params: Params

    def __post_init__(self):
        self.params.validate_positive()
        transform_params(self.params, self.tau)  # raises SingularTau early

    def instance(self) -> "TransformedInstance":
        u = math.exp(self.params.rho * self.tau)
        return TransformedInstance(
            tau=self.tau,
            u=u,
            params=self.params,
            params_prime=transform_params(self.params, u=u),
        )


@dataclass(frozen=True)
class TransformedInstance:
    """Concrete transformed parameters plus the state and eta maps, all
    sharing one u = e^(rho tau)."""

    tau: float
    u: float
    params: Params
    params_prime: Params

    def map_state(self, T_U, T_I, V):
        return transform_state(T_U, T_I, V, self.params, u=self.u)

    def eta(self, T_U, T_I, V, eta):
        return eta_prime_value(T_U, T_I, V, eta, self.params, u=self.u)


# ------------------------------------------------------- symbolic closed forms

def _symbolic_context():
    m = hiv_model()
    table = {s.name: sym(s) for s in m.states + m.const_params + m.tv_params}
    table["u"] = sym(Symbol("u", AUX))
    return m, table


def params_prime_exprs() -> dict[str, Expression]:
    """Closed forms of the transformed constants over the base symbols and
    the auxiliary u (e^(-rho tau) is written 1/u)."""
    _, t = _symbolic_context()
    lam, delta, rho, c, N, u = (t[k] for k in ("lambda", "delta", "rho", "c", "N", "u"))
    return {
        "lambda": lam,
        "delta": delta * rho / ((rho - delta) * u + delta),
        "rho": rho,
        "c": c,
        "N": N * u,
    }


def state_map_exprs() -> tuple[Expression, Expression, Expression]:
    """Closed forms of (T_U', T_I', V')."""
    _, t = _symbolic_context()
    T_U, T_I, delta, rho, u = (t[k] for k in ("T_U", "T_I", "delta", "rho", "u"))
    T_I_p = (T_I / rho) * (delta / u + rho - delta)
    return (T_U + T_I - T_I_p, T_I_p, t["V"])


def eta_prime_expr() -> Expression:
    """Closed form of eta'."""
    _, t = _symbolic_context()
    T_U, T_I, V, eta, delta, rho, u = (
        t[k] for k in ("T_U", "T_I", "V", "eta", "delta", "rho", "u"))
    num = (eta * T_U * V * rho * u
           + (T_I * delta**2 - T_I * delta * rho - eta * T_U * V * delta) * (u - 1))
    den = V * (T_I * delta + T_U * rho) * u - V * T_I * delta
    return num / den


@dataclass(frozen=True)
class IdentityCheck:
    """One verified line of the transformed dynamics."""

    name: str
    holds: bool
    residual: RationalCanonical


def verify_identities() -> list[IdentityCheck]:
    """Symbolically verify that the transformed states satisfy the
    transformed dynamics.

    For each transformed state, form its total time derivative under the
    original dynamics and subtract the transformed right-hand side built
    from the transformed parameters and eta'; each residual must expand to
    the zero rational function in the states, parameters, eta and u.
    False results are reported, not raised.
    """
    m, t = _symbolic_context()
    lam, c = t["lambda"], t["c"]
    rho = t["rho"]
    T_U_p, T_I_p, V_p = state_map_exprs()
    pp = params_prime_exprs()
    eta_p = eta_prime_expr()

    primed_rhs = {
        "T_U'": lam - rho * T_U_p - eta_p * T_U_p * V_p,
        "T_I'": eta_p * T_U_p * V_p - pp["delta"] * T_I_p,
        "V'": pp["N"] * pp["delta"] * T_I_p - c * V_p,
    }
    maps = {"T_U'": T_U_p, "T_I'": T_I_p, "V'": V_p}

    checks = []
    for name in ("T_U'", "T_I'", "V'"):
        lhs = total_time_derivative(m, maps[name], DYNAMICS)
        residual = expr.normalize(expr.sub(lhs, primed_rhs[name]))
        checks.append(IdentityCheck(name=name, holds=residual.is_zero,
                                    residual=residual))
    return checks
