"""Psychrometrics: relative humidity from dew point and wet-bulb temperature.

The wet-bulb temperature ``Tw`` is the root of

    f(Tw) = Tw - Ta + (Lv/Cp) * eps * A * (1/(P exp(B/Tw) - A) - RH/(P exp(B/Ta) - A))

which is strictly increasing in ``Tw``; it is solved by Newton-Raphson
started at ``Ta`` and safeguarded by bisection on ``[Ta - 60, Ta]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from wbsnow.grid import GridError, GridField

LATENT_HEAT = 2.501e6  # J/kg
SPECIFIC_HEAT = 1005.0  # J/(kg K)
GAS_RATIO = 0.622
A_SAT = 2.53e9  # mb
B_SAT = 5420.0  # K

BRACKET_WIDTH = 60.0
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 50

PSYCHRO_SCALE = LATENT_HEAT / SPECIFIC_HEAT * GAS_RATIO * A_SAT


class ConvergenceError(RuntimeError):
    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class DewpointClampWarning(UserWarning):
    """Dew point above air temperature; humidity clamped to saturation."""


@dataclass(frozen=True)
class PsychroConstants:
    latent_heat: float = LATENT_HEAT
    specific_heat: float = SPECIFIC_HEAT
    gas_ratio: float = GAS_RATIO
    a: float = A_SAT
    b: float = B_SAT


@dataclass(frozen=True)
class AtmosState:
    t_air: float
    rh: float
    pressure: float

    def __post_init__(self):
        if not self.t_air > 150:
            raise ValueError(f"t_air must exceed 150 K, got {self.t_air}")
        if not 0 < self.rh <= 1:
            raise ValueError(f"rh must lie in (0, 1], got {self.rh}")
        if not self.pressure > 100:
            raise ValueError(f"pressure must exceed 100 mb, got {self.pressure}")

    @classmethod
    def from_dewpoint(cls, t_air, t_dew, pressure) -> "AtmosState":
        return cls(t_air, float(rh_from_dewpoint(t_air, t_dew)), pressure)


def rh_from_dewpoint(t_air, t_dew):
    """Relative humidity (fraction) from air and dew-point temperature in K.

    Dew points above the air temperature are clamped to saturation and
    reported through a :class:`DewpointClampWarning` carrying the count.
    """
    t_air = np.asarray(t_air, dtype=float)
    t_dew = np.asarray(t_dew, dtype=float)
    if np.any(t_air <= 32.19) or np.any(t_dew <= 32.19):
        raise ValueError("temperatures must exceed 32.19 K")
    clamp = t_dew > t_air
    n_clamped = int(np.count_nonzero(clamp))
    if n_clamped:
        warnings.warn(f"{n_clamped} dew point(s) above air temperature clamped to rh=1",
                      DewpointClampWarning, stacklevel=2)
        t_dew = np.where(clamp, t_air, t_dew)
    rh = np.exp(17.502 * ((t_dew - 273.16) / (t_dew - 32.19) - (t_air - 273.16) / (t_air - 32.19)))
    return rh if rh.ndim else float(rh)


def wet_bulb_residual(t_w, t_air, rh, pressure):
    return t_w - t_air + PSYCHRO_SCALE * (
        1.0 / (pressure * np.exp(B_SAT / t_w) - A_SAT)
        - rh / (pressure * np.exp(B_SAT / t_air) - A_SAT)
    )


def _residual_slope(t_w, pressure):
    e = pressure * np.exp(B_SAT / t_w)
    return 1.0 + PSYCHRO_SCALE * e * B_SAT / (t_w**2 * (e - A_SAT) ** 2)


def wet_bulb_array(t_air, rh, pressure, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Vectorised wet-bulb solve; NaN in any input yields NaN."""
    t_air, rh, pressure = np.broadcast_arrays(
        np.asarray(t_air, float), np.asarray(rh, float), np.asarray(pressure, float)
    )
    out = np.full(t_air.shape, np.nan)
    ok = ~(np.isnan(t_air) | np.isnan(rh) | np.isnan(pressure))
    if not ok.any():
        return out
    ta, h, p = t_air[ok], rh[ok], pressure[ok]
    if np.any(ta <= 150) or np.any(h <= 0) or np.any(h > 1) or np.any(p <= 100):
        raise ValueError("inputs outside valid range (t_air > 150 K, 0 < rh <= 1, P > 100 mb)")
    if np.any(p * np.exp(B_SAT / ta) <= A_SAT):
        raise ValueError("saturation vapour pressure exceeds pressure")

    x = ta.copy()
    lo = ta - BRACKET_WIDTH
    hi = ta.copy()
    f = wet_bulb_residual(x, ta, h, p)
    active = np.abs(f) >= tol
    for _ in range(max_iter):
        if not active.any():
            break
        i = np.flatnonzero(active)
        xi, fi = x[i], f[i]
        # f increases in Tw, so the sign of f tells which side the root is on
        hi[i] = np.where(fi > 0, xi, hi[i])
        lo[i] = np.where(fi < 0, xi, lo[i])
        step = xi - fi / _residual_slope(xi, p[i])
        inside = (step > lo[i]) & (step < hi[i])
        x[i] = np.where(inside, step, 0.5 * (lo[i] + hi[i]))
        f[i] = wet_bulb_residual(x[i], ta[i], h[i], p[i])
        active[i] = np.abs(f[i]) >= tol
    if active.any():
        j = np.flatnonzero(active)[0]
        raise ConvergenceError(
            f"wet-bulb solve did not converge in {max_iter} iterations "
            f"(t_air={ta[j]}, rh={h[j]}, P={p[j]})",
            last_iterate=float(x[j]),
            residual=float(f[j]),
        )
    out[ok] = x
    return out


def wet_bulb(state: AtmosState, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> float:
    """Wet-bulb temperature (K) for one atmospheric state."""
    return float(wet_bulb_array(state.t_air, state.rh, state.pressure, tol, max_iter)[()])


def wet_bulb_field(t_air: GridField, humidity: GridField, pressure: GridField,
                   humidity_kind: str = "rh", tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> GridField:
    """Pointwise wet-bulb temperature over matching fields.

    ``humidity_kind`` is ``"rh"`` (fraction) or ``"dewpoint"`` (K).
    """
    for other in (humidity, pressure):
        if other.grid != t_air.grid or other.times != t_air.times:
            raise GridError("t_air, humidity and pressure must share grid and time axis")
    if humidity_kind == "dewpoint":
        finite = ~(np.isnan(t_air.values) | np.isnan(humidity.values))
        rh = np.full(t_air.values.shape, np.nan)
        rh[finite] = rh_from_dewpoint(t_air.values[finite], humidity.values[finite])
    elif humidity_kind == "rh":
        rh = humidity.values
    else:
        raise ValueError(f"humidity_kind must be 'rh' or 'dewpoint', not {humidity_kind!r}")
    tw = wet_bulb_array(t_air.values, rh, pressure.values, tol, max_iter)
    return t_air.with_values(tw, units="K", variable="wet_bulb")


def rh_for_wet_bulb(t_air, t_w, pressure):
    """Relative humidity at which ``t_w`` is the wet-bulb temperature of ``t_air``.

    Closed-form inverse of the wet-bulb relation for fixed Ta and Tw.
    """
    t_air = np.asarray(t_air, float)
    t_w = np.asarray(t_w, float)
    pressure = np.asarray(pressure, float)
    return (pressure * np.exp(B_SAT / t_air) - A_SAT) * (
        1.0 / (pressure * np.exp(B_SAT / t_w) - A_SAT) - (t_air - t_w) / PSYCHRO_SCALE
    )


def dewpoint_from_rh(t_air, rh):
    """Invert the dew-point humidity formula for the dew point (K)."""
    t_air = np.asarray(t_air, float)
    g = np.log(rh) / 17.502 + (t_air - 273.16) / (t_air - 32.19)
    return (273.16 - 32.19 * g) / (1.0 - g)
