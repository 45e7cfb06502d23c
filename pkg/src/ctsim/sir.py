"""Well-mixed SIR baseline: derivative, fixed-step RK4 and R0 helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SirState:
    s: float
    i: float
    r: float
    t: float = 0.0

    @property
    def total(self) -> float:
        return self.s + self.i + self.r


@dataclass(frozen=True)
class SirParams:
    """Rates are per tick.

    ``tau``, ``c_bar`` and ``d`` only feed the contact-based R0 formula;
    ``beta``/``gamma`` drive the ODE itself.
    """

    beta: float
    gamma: float
    n: float
    tau: float = 0.0
    c_bar: float = 0.0
    d: float = 1.0

    def check(self) -> None:
        values = (self.beta, self.gamma, self.n, self.tau, self.c_bar, self.d)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("SIR parameters must be finite")
        if self.n <= 0:
            raise ValueError("population n must be positive")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")


def sir_derivative(state: SirState, params: SirParams) -> tuple[float, float, float]:
    if params.n == 0:
        raise ValueError("population n must be non-zero")
    flow = params.beta * state.s * state.i / params.n
    recover = params.gamma * state.i
    return -flow, flow - recover, recover


def integrate(initial: SirState, params: SirParams, horizon: float, step: float = 0.1) -> list[SirState]:
    """Fixed-step RK4 from ``initial.t`` to ``initial.t + horizon``.

    Returns one sample per step, initial state included.  If ``horizon`` is
    not a whole number of steps the last step is shortened to land on it.
    """
    params.check()
    if not (math.isfinite(step) and math.isfinite(horizon)):
        raise ValueError("horizon and step must be finite")
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < step:
        raise ValueError("horizon must be at least one step")

    beta, gamma, n = params.beta, params.gamma, params.n

    def rhs(s, i):
        flow = beta * s * i / n
        return -flow, flow - gamma * i, gamma * i

    nfull = int(math.floor(horizon / step + 1e-9))
    steps = [step] * nfull
    rest = horizon - nfull * step
    if rest > 1e-9 * step:
        steps.append(rest)

    s, i, r = initial.s, initial.i, initial.r
    out = [initial]
    for k, h in enumerate(steps, start=1):
        a1, b1, c1 = rhs(s, i)
        a2, b2, c2 = rhs(s + 0.5 * h * a1, i + 0.5 * h * b1)
        a3, b3, c3 = rhs(s + 0.5 * h * a2, i + 0.5 * h * b2)
        a4, b4, c4 = rhs(s + h * a3, i + h * b3)
        s += h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        i += h / 6.0 * (b1 + 2 * b2 + 2 * b3 + b4)
        r += h / 6.0 * (c1 + 2 * c2 + 2 * c3 + c4)
        t = initial.t + (k * step if k <= nfull else horizon)
        out.append(SirState(s, i, r, t))
    return out


def trajectory_array(states: list[SirState]) -> np.ndarray:
    """Columns t, S, I, R."""
    return np.array([(st.t, st.s, st.i, st.r) for st in states], dtype=float)


def r0_from_rates(params: SirParams) -> float:
    if params.gamma <= 0:
        raise ValueError("gamma must be positive")
    return params.beta / params.gamma


def r0_from_contact(params: SirParams, alternate: bool = False) -> float:
    """Contact-based R0.

    The default divides by ``d`` (infection probability times contact rate
    over ``d``).  With ``alternate=True`` it multiplies instead, which is
    the dimensionally consistent form when ``d`` is a duration rather than
    a rate.
    """
    if params.d <= 0:
        raise ValueError("d must be positive")
    if alternate:
        return params.tau * params.c_bar * params.d
    return params.tau * params.c_bar / params.d
