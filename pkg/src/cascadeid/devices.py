"""Component models: TCSC reactance regulation, HVDC converter terminals, relays.

All step functions are pure: they take a state value and return a new one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

# Relay counting time is kept on a 1e-12 s grid so that accumulating dt does not
# drift across the preset time (100 * 0.01 must equal 1.0, not 1.0000000000000007).
_TIMER_DIGITS = 12

ALPHA_BAND = (math.pi / 30, math.pi / 2)
GAMMA_BAND = (math.pi / 12, math.pi / 9)
_BRIDGE = 3.0 * math.sqrt(3.0) / math.pi


class DeviceConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TcscState:
    """Series compensator on one branch.

    ``reactance`` is the compensation reactance added in series with the line.
    The gains act on the regulation error ``ref - |P|`` (non-positive while the
    branch is above its reference flow), so negative gains mean "add reactance
    when overloaded".
    """

    reactance: float = 0.0
    x_min: float = 0.0
    x_max: float = 10.0
    x_ref: float = 0.0
    time_constant: float = 0.05
    kp: float = -4.0
    ki: float = -3.0
    kd: float = -2.0
    pid_integral: float = 0.0
    pid_prev_error: float = 0.0

    def __post_init__(self):
        if not self.time_constant > 0:
            raise DeviceConfigError("TCSC time constant must be > 0")
        if self.x_min > self.x_max:
            raise DeviceConfigError("TCSC x_min must not exceed x_max")
        if not self.x_min <= self.reactance <= self.x_max:
            raise DeviceConfigError("TCSC reactance outside [x_min, x_max]")


def regulation_error(measured_flow: float, reference_flow: float) -> float:
    mag = abs(measured_flow)
    return reference_flow - mag if mag >= reference_flow else 0.0


def tcsc_step(state: TcscState, measured_flow: float, reference_flow: float, dt: float) -> TcscState:
    """Advance the PID-regulated first-order TCSC model by one explicit Euler step.

    ``T_C dX/dt = -X + X* + u`` with ``u = Kp e + Ki ∫e + Kd de/dt``; the integral
    uses the rectangle rule and the derivative a backward difference. The result
    is clamped to ``[x_min, x_max]``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    e = regulation_error(measured_flow, reference_flow)
    integral = state.pid_integral + e * dt
    u = state.kp * e + state.ki * integral + state.kd * (e - state.pid_prev_error) / dt
    moved = tcsc_relax(state, u, dt)
    return replace(moved, pid_integral=integral, pid_prev_error=e)


def tcsc_relax(state: TcscState, u: float, dt: float) -> TcscState:
    """One Euler step of the reactance dynamics under a fixed control input ``u``."""
    x = state.reactance + dt / state.time_constant * (-state.reactance + state.x_ref + u)
    return replace(state, reactance=min(max(x, state.x_min), state.x_max))


@dataclass(frozen=True)
class HvdcLink:
    rectifier_bus: int
    inverter_bus: int
    alpha: float = math.pi / 15
    gamma: float = math.pi / 4
    r_cr: float = 0.1
    r_ci: float = 0.1
    r_line: float = 0.1
    allow_gamma_override: bool = True

    def __post_init__(self):
        lo, hi = ALPHA_BAND
        if not lo <= self.alpha <= hi:
            raise DeviceConfigError(f"alpha={self.alpha} outside [pi/30, pi/2]")
        lo, hi = GAMMA_BAND
        if not lo <= self.gamma <= hi:
            if not self.allow_gamma_override:
                raise DeviceConfigError(f"gamma={self.gamma} outside [pi/12, pi/9]")
            warnings.warn(
                f"HVDC gamma={self.gamma:.4f} rad is outside [pi/12, pi/9]; using it as given",
                stacklevel=3,
            )
        if self.r_cr + self.r_line - self.r_ci == 0:
            raise DeviceConfigError("HVDC resistances give a zero current denominator")

    @property
    def flagged_out_of_band(self) -> bool:
        return not GAMMA_BAND[0] <= self.gamma <= GAMMA_BAND[1]


def hvdc_injections(link: HvdcLink) -> tuple[float, float, float]:
    """Return ``(P_r, P_i, I_d)``: rectifier consumption, inverter generation, DC current."""
    denom = math.pi * (link.r_cr + link.r_line - link.r_ci)
    if denom == 0:
        raise DeviceConfigError("HVDC resistances give a zero current denominator")
    i_d = 3.0 * math.sqrt(3.0) * (math.cos(link.alpha) - math.cos(link.gamma)) / denom
    p_r = _BRIDGE * i_d * math.cos(link.alpha) - link.r_cr * i_d**2
    p_i = _BRIDGE * i_d * math.cos(link.gamma) - link.r_ci * i_d**2
    return p_r, p_i, i_d


@dataclass(frozen=True)
class RelayState:
    preset_time: float
    threshold: float
    counting_time: float = 0.0


def relay_step(state: RelayState, flow: float, dt: float) -> tuple[RelayState, bool]:
    """Advance an overcurrent timer; the timer resets as soon as the overload clears."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if abs(flow) > state.threshold:
        t_c = float(np.round(state.counting_time + dt, _TIMER_DIGITS))
        return replace(state, counting_time=t_c), t_c > state.preset_time
    return replace(state, counting_time=0.0), False


# ---------------------------------------------------------------------------
# Vectorized forms used by the cascade engine. Same semantics as the scalar
# functions above, element by element.
# ---------------------------------------------------------------------------

def tcsc_step_arrays(x, integral, prev_error, flow, reference, dt, params: TcscState):
    mag = np.abs(flow)
    e = np.where(mag >= reference, reference - mag, 0.0)
    integral = integral + e * dt
    u = params.kp * e + params.ki * integral + params.kd * (e - prev_error) / dt
    x = x + dt / params.time_constant * (-x + params.x_ref + u)
    return np.clip(x, params.x_min, params.x_max), integral, e


def relay_step_arrays(counting_time, flow, threshold, preset_time, dt):
    over = np.abs(flow) > threshold
    t_c = np.where(over, np.round(counting_time + dt, _TIMER_DIGITS), 0.0)
    return t_c, over & (t_c > preset_time), over
