"""Numerical integration and the indistinguishability experiment.

The integrator is the classic Fehlberg 4(5) embedded pair: the 4th-order
solution is propagated and the difference to the 5th-order solution
drives the step controller. Dense output uses cubic Hermite interpolation
on each accepted step, consistent with 4th-order accuracy.

The indistinguishability experiment co-integrates the original system and
the transformed one as a single 6-state ODE. The transformed eta is
evaluated pointwise from the co-integrated ORIGINAL states (its closed
form is a function of the original trajectory), so no interpolation error
enters the coupling. Reported are the worst relative deviation between
the two output pairs, and the stronger check: the worst deviation between
the integrated transformed states and the algebraic image of the original
states.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr
from .expr import AUX, Expression, Symbol, compile_float_fn, free_symbols
from .model import OdeModel, hiv_model, output_jet, output_symbol
from .ranktest import CORRECTED, PhiRelation, build_phi
from .transform import Params, TauFamily, admissible_tau_interval

__all__ = [
    "EtaSignal", "IndistReport", "NonFiniteState", "SimConfig",
    "StepSizeUnderflow", "TIME_SYMBOL", "Trajectory", "integrate",
    "phi_residual_along", "run_indistinguishability", "tau_sweep",
    "write_trajectory_csv",
]

TIME_SYMBOL = Symbol("t", AUX)


class StepSizeUnderflow(expr.ExprError):
    """The controller drove the step below resolvable size (stiffness or a
    singularity on the path)."""


class NonFiniteState(expr.ExprError):
    """A state stopped being finite during integration."""


class EtaSignal:
    """A time-varying parameter signal: a constant or an expression in t.

    The expression form supports exact repeated differentiation in t, so
    the derivative chain eta', eta'', ... needed by trajectory residual
    checks is available without numerics.
    """

    def __init__(self, expression: Expression):
        extra = free_symbols(expression) - {TIME_SYMBOL}
        if extra:
            names = ", ".join(sorted(s.display for s in extra))
            raise ValueError(f"eta signal may depend on t only, found: {names}")
        self.expression = expression
        self._fn = compile_float_fn(expression, [TIME_SYMBOL])

    @classmethod
    def constant(cls, value) -> "EtaSignal":
        if isinstance(value, float):
            value = _exact_fraction(value)
        return cls(expr.const(value))

    @classmethod
    def from_text(cls, text: str) -> "EtaSignal":
        table = expr.SymbolTable([TIME_SYMBOL])
        return cls(expr.parse_expression(text, table))

    def __call__(self, t):
        return self._fn(t)

    def derivative_chain(self, order: int) -> list[Callable]:
        """Compiled [eta, eta', ..., eta^(order)] as functions of t."""
        chain = [self.expression]
        for _ in range(order):
            chain.append(expr.differentiate(chain[-1], TIME_SYMBOL))
        return [compile_float_fn(e, [TIME_SYMBOL]) for e in chain]

    def text(self) -> str:
        return expr.to_text(self.expression)


def _exact_fraction(value: float) -> Fraction:
    # prefer the short form (1/2, not 4503599627370496/9007199254740992)
    # whenever it is exactly the same number
    exact = Fraction(value)
    short = exact.limit_denominator(10**12)
    return short if short == exact else exact


@dataclass(frozen=True)
class SimConfig:
    """Integration window, tolerances and dense-output grid size."""

    t0: float = 0.0
    tf: float = 10.0
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float | None = None
    dense_output_points: int = 401

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError("tf must exceed t0")
        for tol in (self.abs_tol, self.rel_tol):
            if not (0 < tol <= 1e-2):
                raise ValueError("tolerances must lie in (0, 1e-2]")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if self.dense_output_points < 2:
            raise ValueError("dense output grid needs at least 2 points")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t0, self.tf, self.dense_output_points)

    def to_dict(self) -> dict:
        return {"t0": self.t0, "tf": self.tf, "abs_tol": self.abs_tol,
                "rel_tol": self.rel_tol, "max_step": self.max_step,
                "dense_output_points": self.dense_output_points}


@dataclass(frozen=True)
class Trajectory:
    """Dense-output samples of one integration."""

    times: np.ndarray
    states: np.ndarray           # shape (n_points, n_states)
    outputs: np.ndarray          # shape (n_points, n_outputs)
    state_names: tuple[str, ...]
    output_names: tuple[str, ...]


# --------------------------------------------------------- RKF45 kernel

_C = (0.0, 1/4, 3/8, 12/13, 1.0, 1/2)
_A = (
    (),
    (1/4,),
    (3/32, 9/32),
    (1932/2197, -7200/2197, 7296/2197),
    (439/216, -8.0, 3680/513, -845/4104),
    (-8/27, 2.0, -3554/2565, 1859/4104, -11/40),
)
_B4 = (25/216, 0.0, 1408/2565, 2197/4104, -1/5, 0.0)
_B5 = (16/135, 0.0, 6656/12825, 28561/56430, -9/50, 2/55)
_E = tuple(b4 - b5 for b4, b5 in zip(_B4, _B5))

_SAFETY = 0.9
_MIN_SHRINK = 0.2
_MAX_GROW = 5.0


def _rkf45_steps(f, t0: float, tf: float, y0: np.ndarray,
                 rtol: float, atol: float, max_step: float):
    """Adaptive RKF45 from t0 to tf. Yields accepted steps as
    (t_left, h, y_left, y_right, f_left, f_right)."""
    t = t0
    y = np.asarray(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteState("initial state is not finite")
    f_left = np.asarray(f(t, y), dtype=float)
    h = min(max_step, (tf - t0) / 100.0)
    steps = []
    k = [None] * 6
    while True:
        remaining = tf - t
        if remaining <= 1e-13 * max(abs(tf), 1.0):
            break
        h = min(h, max_step, remaining)
        if h < 1e-14 * max(abs(t), 1.0):
            raise StepSizeUnderflow(f"step size underflow at t = {t}")
        k[0] = f_left
        failed = False
        for i in range(1, 6):
            yi = y + h * sum(a * ki for a, ki in zip(_A[i], k[:i]))
            if not np.all(np.isfinite(yi)):
                failed = True
                break
            k[i] = np.asarray(f(t + _C[i] * h, yi), dtype=float)
        if not failed:
            y4 = y + h * sum(b * ki for b, ki in zip(_B4, k))
            err_vec = h * sum(e * ki for e, ki in zip(_E, k))
            if not (np.all(np.isfinite(y4)) and np.all(np.isfinite(err_vec))):
                failed = True
        if failed:
            h *= _MIN_SHRINK
            continue
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y4))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if err <= 1.0:
            f_right = np.asarray(f(t + h, y4), dtype=float)
            if not np.all(np.isfinite(f_right)):
                raise NonFiniteState(f"derivative not finite at t = {t + h}")
            steps.append((t, h, y, y4, f_left, f_right))
            t += h
            y = y4
            f_left = f_right
            if err == 0:
                h *= _MAX_GROW
            else:
                h *= min(_MAX_GROW, max(_MIN_SHRINK, _SAFETY * err ** -0.2))
        else:
            h *= max(_MIN_SHRINK, _SAFETY * err ** -0.2)
    return steps


def _hermite(step, ts: np.ndarray) -> np.ndarray:
    t0, h, y0, y1, f0, f1 = step
    theta = ((ts - t0) / h)[:, None]
    d = y1 - y0
    return ((1 - theta) * y0 + theta * y1
            + theta * (theta - 1)
            * ((1 - 2 * theta) * d + (theta - 1) * h * f0 + theta * h * f1))


def _dense_eval(steps, grid: np.ndarray) -> np.ndarray:
    out = np.empty((len(grid), len(steps[0][2])))
    idx = 0
    for i, step in enumerate(steps):
        t0, h = step[0], step[1]
        t1 = t0 + h
        last = i == len(steps) - 1
        hi = idx
        while hi < len(grid) and (grid[hi] <= t1 + 1e-12 if last else grid[hi] < t1):
            hi += 1
        if hi > idx:
            out[idx:hi] = _hermite(step, grid[idx:hi])
            idx = hi
    if idx < len(grid):  # numerical edge: clamp trailing points to the end
        t0, h, y0, y1, f0, f1 = steps[-1]
        out[idx:] = y1
    return out


# ------------------------------------------------------------- integrate

def _compile_rhs(m: OdeModel, params: Mapping[str, float],
                 eta: "EtaSignal | Mapping[str, EtaSignal] | None"):
    """Vector field f(t, y) for the model with parameters bound and
    time-varying parameters driven by their signals."""
    signals: dict[str, EtaSignal] = {}
    if m.tv_params:
        if eta is None:
            raise ValueError("model has time-varying parameters; pass eta")
        if isinstance(eta, EtaSignal):
            if len(m.tv_params) != 1:
                raise ValueError("several tv parameters need a name -> signal map")
            signals[m.tv_params[0].name] = eta
        else:
            signals = dict(eta)
        for s in m.tv_params:
            if s.name not in signals:
                raise ValueError(f"no signal for tv parameter {s.name}")

    missing = [s.name for s in m.const_params if s.name not in params]
    if missing:
        raise ValueError("missing parameter value(s): " + ", ".join(missing))

    args = list(m.states) + list(m.tv_params) + list(m.const_params)
    fns = [compile_float_fn(rhs, args) for rhs in m.rhs]
    pvals = [float(params[s.name]) for s in m.const_params]
    sigs = [signals[s.name] for s in m.tv_params]

    def f(t, y):
        tv = [sig(t) for sig in sigs]
        all_args = list(y) + tv + pvals
        return [fn(*all_args) for fn in fns]

    return f, sigs


def integrate(m: OdeModel, params: Mapping[str, float],
              init: Sequence[float], eta=None,
              cfg: SimConfig = SimConfig()) -> Trajectory:
    """Integrate the model and sample it on the dense-output grid.

    Outputs are recomputed from the sampled states, so the reported
    outputs satisfy the output definitions exactly by construction.
    Time-varying signals must be nonnegative at the grid sample points.
    """
    if len(init) != len(m.states):
        raise ValueError(f"expected {len(m.states)} initial values")
    f, sigs = _compile_rhs(m, params, eta)
    grid = cfg.grid()
    for sig in sigs:
        vals = np.asarray(sig(grid), dtype=float)
        vals = np.broadcast_to(vals, grid.shape)
        if np.any(vals < 0):
            raise ValueError("time-varying signal goes negative on the window")
    max_step = cfg.max_step if cfg.max_step is not None else (cfg.tf - cfg.t0)
    steps = _rkf45_steps(f, cfg.t0, cfg.tf, np.asarray(init, dtype=float),
                         cfg.rel_tol, cfg.abs_tol, max_step)
    states = _dense_eval(steps, grid)
    if not np.all(np.isfinite(states)):
        raise NonFiniteState("trajectory left the finite domain")
    outputs = _outputs_on_grid(m, params, states, grid, sigs)
    return Trajectory(
        times=grid, states=states, outputs=outputs,
        state_names=tuple(s.name for s in m.states),
        output_names=m.output_names,
    )


def _outputs_on_grid(m, params, states, grid, sigs) -> np.ndarray:
    args = list(m.states) + list(m.tv_params) + list(m.const_params)
    cols = [states[:, i] for i in range(states.shape[1])]
    cols += [np.broadcast_to(np.asarray(sig(grid), dtype=float), grid.shape)
             for sig in sigs]
    cols += [np.full_like(grid, float(params[s.name])) for s in m.const_params]
    out = np.empty((len(grid), len(m.outputs)))
    for j, (_, e) in enumerate(m.outputs):
        out[:, j] = compile_float_fn(e, args)(*cols)
    return out


# ---------------------------------------------- indistinguishability run

@dataclass(frozen=True)
class IndistReport:
    """Worst-case deviations between the original system and one
    transformed twin over the integration window."""

    tau: float
    max_rel_output_dev: float
    max_rel_state_map_dev: float
    grid_size: int
    params: Params
    params_prime: Params
    admissible_tau_interval: tuple[float | None, float | None]
    eta_text: str
    config: SimConfig

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "params": self.params.as_dict(),
            "params_prime": self.params_prime.as_dict(),
            "admissible_tau_interval": list(self.admissible_tau_interval),
            "max_rel_output_dev": self.max_rel_output_dev,
            "max_rel_state_map_dev": self.max_rel_state_map_dev,
            "grid_size": self.grid_size,
            "eta": self.eta_text,
            "config": self.config.to_dict(),
        }


def run_indistinguishability(params: Params, init: Sequence[float],
                             eta: EtaSignal, tau: float,
                             cfg: SimConfig = SimConfig()
                             ) -> tuple[IndistReport, Trajectory, Trajectory]:
    """Co-integrate the original and transformed systems and measure how far
    the twin drifts from indistinguishability.

    Returns the report plus the original and transformed trajectories on
    the same grid. Inadmissible tau raises SingularTau before any
    integration starts.
    """
    family = TauFamily(tau=tau, params=params)   # raises SingularTau if bad
    inst = family.instance()
    pp = inst.params_prime

    m = hiv_model()
    args = list(m.states) + list(m.tv_params) + list(m.const_params)
    rhs_fns = [compile_float_fn(r, args) for r in m.rhs]
    out_fns = [compile_float_fn(e, list(m.states)) for _, e in m.outputs]
    pd, ppd = params.as_dict(), pp.as_dict()
    base_vals = [float(pd[s.name]) for s in m.const_params]
    prim_vals = [float(ppd[s.name]) for s in m.const_params]

    def f(t, y):
        et = eta(t)
        orig_args = [y[0], y[1], y[2], et] + base_vals
        et_p = inst.eta(y[0], y[1], y[2], et)
        prim_args = [y[3], y[4], y[5], et_p] + prim_vals
        return [fn(*orig_args) for fn in rhs_fns] + \
               [fn(*prim_args) for fn in rhs_fns]

    grid = cfg.grid()
    eta_vals = np.broadcast_to(np.asarray(eta(grid), dtype=float), grid.shape)
    if np.any(eta_vals < 0):
        raise ValueError("eta goes negative on the window")

    init = [float(v) for v in init]
    init_primed = inst.map_state(*init)
    y0 = np.array(init + list(init_primed), dtype=float)
    max_step = cfg.max_step if cfg.max_step is not None else (cfg.tf - cfg.t0)
    steps = _rkf45_steps(f, cfg.t0, cfg.tf, y0, cfg.rel_tol, cfg.abs_tol,
                         max_step)
    dense = _dense_eval(steps, grid)
    orig_states = dense[:, :3]
    prim_states = dense[:, 3:]

    def traj(states):
        cols = [states[:, i] for i in range(3)]
        outputs = np.column_stack([fn(*cols) for fn in out_fns])
        return Trajectory(times=grid, states=states, outputs=outputs,
                          state_names=tuple(s.name for s in m.states),
                          output_names=m.output_names)

    orig = traj(orig_states)
    prim = traj(prim_states)

    out_dev = np.abs(prim.outputs - orig.outputs) / (1.0 + np.abs(orig.outputs))
    mapped = np.column_stack(inst.map_state(orig_states[:, 0],
                                            orig_states[:, 1],
                                            orig_states[:, 2]))
    map_dev = np.abs(prim_states - mapped) / (1.0 + np.abs(mapped))

    report = IndistReport(
        tau=tau,
        max_rel_output_dev=float(np.max(out_dev)),
        max_rel_state_map_dev=float(np.max(map_dev)),
        grid_size=len(grid),
        params=params,
        params_prime=pp,
        admissible_tau_interval=admissible_tau_interval(params),
        eta_text=eta.text(),
        config=cfg,
    )
    return report, orig, prim


def tau_sweep(params: Params, init: Sequence[float], eta: EtaSignal,
              taus: Sequence[float], cfg: SimConfig = SimConfig()
              ) -> list[IndistReport]:
    return [run_indistinguishability(params, init, eta, tau, cfg)[0]
            for tau in taus]


# --------------------------------------------------- relation residuals

def phi_residual_along(trajectory: Trajectory, params: Params,
                       eta: EtaSignal, variant: str = CORRECTED,
                       phi: PhiRelation | None = None) -> float:
    """Worst scaled residual of the input-output relation along a
    trajectory.

    Output derivatives come from the exact jets evaluated on the sampled
    states with the eta chain differentiated symbolically in t. The
    residual at each grid point is |sum of terms| / max |term|, so it is
    dimensionless; an identically satisfied relation stays at rounding
    level while a wrong one is order one. An empty grid returns 0.
    """
    if len(trajectory.times) == 0:
        return 0.0
    m = hiv_model()
    phi = phi or build_phi(variant, m)

    max_eta_order = 1  # the relation is second order, jets to order 2
    jet_exprs: dict[Symbol, Expression] = {}
    for i in (1, 2):
        jet = output_jet(m, i, 2)
        for k, e in enumerate(jet.entries):
            jet_exprs[output_symbol(m, i, k)] = e

    tv = m.tv_params[0]
    eta_fns = eta.derivative_chain(max_eta_order)
    grid = trajectory.times
    eta_cols = {tv.derivative(k) if k else tv:
                np.broadcast_to(np.asarray(fn(grid), dtype=float), grid.shape)
                for k, fn in enumerate(eta_fns)}

    args = list(m.states) + list(m.const_params) + list(eta_cols.keys())
    cols = [trajectory.states[:, i] for i in range(3)]
    pd = params.as_dict()
    cols += [np.full_like(grid, float(pd[s.name])) for s in m.const_params]
    cols += list(eta_cols.values())

    jet_vals = {s: compile_float_fn(e, args)(*cols) for s, e in jet_exprs.items()}

    terms = phi.expression.args if isinstance(phi.expression, expr.Sum) \
        else (phi.expression,)
    term_args = sorted({s for t in terms for s in free_symbols(t)},
                       key=Symbol.sort_key)
    term_cols = []
    for s in term_args:
        if s.kind == expr.OUTPUT_DERIV:
            term_cols.append(jet_vals[s])
        else:
            term_cols.append(np.full_like(grid, float(pd[s.name])))
    term_vals = np.column_stack(
        [np.broadcast_to(compile_float_fn(t, term_args)(*term_cols), grid.shape)
         for t in terms])

    total = np.abs(term_vals.sum(axis=1))
    scale = np.abs(term_vals).max(axis=1)
    residual = np.where(scale > 0, total / np.where(scale > 0, scale, 1.0), 0.0)
    return float(residual.max())


# ----------------------------------------------------------- CSV export

def write_trajectory_csv(fileobj, trajectory: Trajectory,
                         primed: Trajectory | None = None) -> None:
    """Header: t,T_U,T_I,V,y1,y2 and, with a twin, the _p columns."""
    writer = csv.writer(fileobj)
    header = (["t"] + list(trajectory.state_names) + list(trajectory.output_names))
    if primed is not None:
        header += [f"{n}_p" for n in primed.state_names]
        header += [f"{n}_p" for n in primed.output_names]
    writer.writerow(header)
    for i, t in enumerate(trajectory.times):
        row = [repr(float(t))]
        row += [repr(float(v)) for v in trajectory.states[i]]
        row += [repr(float(v)) for v in trajectory.outputs[i]]
        if primed is not None:
            row += [repr(float(v)) for v in primed.states[i]]
            row += [repr(float(v)) for v in primed.outputs[i]]
        writer.writerow(row)
