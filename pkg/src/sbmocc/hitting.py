"""Radial solutions of Delta u = 2 u^2 outside a ball, blowing up on its boundary.

With s = log r and v = r^2 u the radial equation becomes autonomous,

    v'' + (d - 6) v' + (8 - 2d) v = 2 v^2,

so every exterior solution is a translate (in s) of one trajectory per
dimension.  That trajectory leaves the far-field equilibrium along its
slow manifold (v -> 1 for d = 3, v -> 0 otherwise) and reaches v = +inf at
a finite s_b.  We integrate it backwards from the far field, which is the
numerically stable direction, and switch to z = v^(-1/2) near the
singularity, where z vanishes linearly with slope 1/sqrt(3).  Translating
s_b onto log(eps) gives u_eps.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .kernel import GAMMA, DimensionParams, DomainError, NumericError

V_SWITCH = 100.0
Z_STOP = 1e-9
_RTOL = 1e-12


def _v_rhs(d):
    a, b = d - 6.0, 8.0 - 2.0 * d

    def rhs(s, y):
        v, dv = y
        return [dv, -a * dv - b * v + 2.0 * v * v]

    return rhs


def _z_rhs(d):
    a, c = d - 6.0, 4.0 - d

    def rhs(s, y):
        z, dz = y
        return [dz, (3.0 * dz * dz - 1.0) / z - a * dz + c * z]

    return rhs


def _d4_slow_slope(v):
    # center manifold of the d=4 origin: v' = -v^2 + v^3 - 5/2 v^4 + O(v^5)
    return -v * v + v**3 - 2.5 * v**4


def _stable_exponent(d):
    if d == 3:
        return (3.0 - math.sqrt(17.0)) / 2.0
    return 4.0 - d


@dataclass(frozen=True)
class _Trajectory:
    """One dimension's trajectory in native s-coordinates (blow-up at s_b)."""

    d: int
    s_b: float
    s_switch: float
    s_far: float
    v_far: float
    outer: object  # dense output of (v, v') on [s_switch, s_far]
    inner: object  # dense output of (z, z') on [s_stop, s_switch]
    s_stop: float
    far_tail: object = None  # d=4 only: v on [s_far, ...]

    def v(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s)
        far = s > self.s_far
        mid = (s >= self.s_switch) & ~far
        near = (s < self.s_switch) & (s >= self.s_stop)
        tiny = s < self.s_stop
        if np.any(s <= self.s_b):
            raise DomainError("evaluation point inside the target ball")
        if np.any(mid):
            out[mid] = self.outer(s[mid])[0]
        if np.any(near):
            out[near] = self.inner(s[near])[0] ** -2
        if np.any(tiny):
            tau = s[tiny] - self.s_b
            z = tau / math.sqrt(3.0) * (1.0 + (self.d - 6.0) * tau / 10.0)
            out[tiny] = z**-2
        if np.any(far):
            out[far] = self._far_v(s[far])
        return out

    def _far_v(self, s):
        lam = _stable_exponent(self.d)
        if self.d == 3:
            return 1.0 + (self.v_far - 1.0) * np.exp(lam * (s - self.s_far))
        if self.d >= 5:
            return self.v_far * np.exp(lam * (s - self.s_far))
        return self.far_tail(s)


def _far_start(d):
    """Initial state on the slow manifold of the far-field equilibrium, plus an atol."""
    if d == 3:
        delta = 1e-9
        return 0.0, 1.0 + delta, _stable_exponent(3) * delta, 1e-15
    if d == 4:
        v0 = 1e-3
        return 0.0, v0, _d4_slow_slope(v0), 1e-18
    v0 = 1e-12
    return 0.0, v0, _stable_exponent(d) * v0, 1e-26


def _trace(d: int) -> _Trajectory:
    s0, v0, dv0, atol = _far_start(d)
    hit_switch = lambda s, y: y[0] - V_SWITCH  # noqa: E731
    hit_switch.terminal = True
    span = 5000.0
    outer = solve_ivp(_v_rhs(d), (s0, s0 - span), [v0, dv0], method="DOP853",
                      rtol=_RTOL, atol=atol, dense_output=True, events=hit_switch)
    if outer.status != 1:
        raise NumericError(f"d={d}: backward trajectory did not blow up within {span} log-radius units "
                           f"(final v={outer.y[0, -1]:.3g})")
    s_sw = float(outer.t_events[0][0])
    v_sw, dv_sw = outer.y_events[0][0]
    z_sw = v_sw**-0.5
    dz_sw = -0.5 * v_sw**-1.5 * dv_sw

    hit_zero = lambda s, y: y[0] - Z_STOP  # noqa: E731
    hit_zero.terminal = True
    inner = solve_ivp(_z_rhs(d), (s_sw, s_sw - 10.0), [z_sw, dz_sw], method="DOP853",
                      rtol=_RTOL, atol=1e-20, dense_output=True, events=hit_zero)
    if inner.status != 1:
        raise NumericError(f"d={d}: blow-up layer not resolved (z={inner.y[0, -1]:.3g})")
    s_stop = float(inner.t_events[0][0])
    z_stop, dz_stop = inner.y_events[0][0]
    if abs(dz_stop * math.sqrt(3.0) - 1.0) > 1e-6:
        raise NumericError(f"d={d}: blow-up slope {dz_stop:.8g} differs from 1/sqrt(3)")
    s_b = s_stop - z_stop / dz_stop

    tail = None
    if d == 4:
        tail = _D4Tail(s0, v0)
    return _Trajectory(d=d, s_b=s_b, s_switch=s_sw, s_far=s0, v_far=v0, outer=outer.sol,
                       inner=inner.sol, s_stop=s_stop, far_tail=tail)


class _D4Tail:
    """Far-field continuation for d=4 along the one-dimensional slow flow."""

    def __init__(self, s0, v0):
        self.s0, self.v0 = s0, v0
        self._sol = None
        self._end = s0

    def _extend(self, s_max):
        end = max(s_max, self.s0 + 1.0) * 2.0 - self.s0
        sol = solve_ivp(lambda s, y: [_d4_slow_slope(y[0])], (self.s0, end), [self.v0],
                        method="DOP853", rtol=_RTOL, atol=1e-18, dense_output=True)
        self._sol, self._end = sol.sol, end

    def __call__(self, s):
        if s.max() > self._end:
            self._extend(float(s.max()))
        return self._sol(s)[0]


@dataclass(frozen=True)
class SemilinearSolution:
    """u_eps(r) = N_x[Z(B_eps) > 0] at |x| = r, sampled on ``radii``."""

    params: DimensionParams
    epsilon: float
    radii: np.ndarray
    u_values: np.ndarray
    farfield_amplitude: float
    residual_norm: float
    _traj: _Trajectory = field(repr=False)

    @property
    def _shift(self):
        return self._traj.s_b - math.log(self.epsilon)

    def u(self, r):
        """Evaluate u_eps at radius r (> eps), off-grid allowed."""
        r = np.asarray(r, dtype=float)
        if np.any(r <= self.epsilon):
            raise DomainError("u_eps is only defined outside the ball of radius eps")
        out = r**-2 * self._traj.v(np.log(r) + self._shift)
        return float(out[0]) if r.ndim == 0 else out

    def boundary_layer(self, rel_offset):
        """u(r) (r - eps)^2 at r = eps (1 + rel_offset); tends to 3 at the boundary."""
        rel_offset = np.asarray(rel_offset, dtype=float)
        r = self.epsilon * (1.0 + rel_offset)
        return self.u(r) * (r - self.epsilon) ** 2

    def to_rows(self):
        return np.column_stack([self.radii, self.u_values])

    def metadata(self) -> dict:
        return {"d": self.params.d, "epsilon": self.epsilon, "gamma": GAMMA,
                "residual_norm": self.residual_norm, "farfield_amplitude": self.farfield_amplitude,
                "r_min": float(self.radii[0]), "r_max": float(self.radii[-1])}


def _stencil_d1(f, x, h):
    """Fourth-order central difference of the second component of a dense output."""
    return (-f(x + 2 * h)[1] + 8 * f(x + h)[1] - 8 * f(x - h)[1] + f(x - 2 * h)[1]) / (12 * h)


def _scaled_residual(traj: _Trajectory, s: np.ndarray) -> float:
    """Sup over s of the ODE residual divided by the size of its largest term.

    Second derivatives come from differencing the dense output, so this is a
    check on the interpolated solution, not on the right-hand side itself.
    """
    d = traj.d
    worst = 0.0
    h = 1e-3 * np.minimum(1.0, s - traj.s_b)
    out = (s - 2 * h >= traj.s_switch) & (s + 2 * h <= traj.s_far)
    if np.any(out):
        so, ho = s[out], h[out]
        v, dv = traj.outer(so)
        d2v = _stencil_d1(traj.outer, so, ho)
        terms = np.abs(np.vstack([d2v, (d - 6) * dv, (8 - 2 * d) * v, 2 * v * v]))
        res = np.abs(d2v + (d - 6) * dv + (8 - 2 * d) * v - 2 * v * v)
        worst = max(worst, float(np.max(res / terms.max(axis=0))))
    inner = (s + 2 * h < traj.s_switch) & (s - 2 * h > traj.s_stop)
    if np.any(inner):
        si, hi = s[inner], h[inner]
        z, dz = traj.inner(si)
        lhs = z * _stencil_d1(traj.inner, si, hi)
        rhs = 3 * dz * dz - 1 - (d - 6) * z * dz + (4 - d) * z * z
        terms = np.abs(np.vstack([lhs, 3 * dz * dz, np.ones_like(z), (d - 6) * z * dz, (4 - d) * z * z]))
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / terms.max(axis=0))))
    return worst


def solve_radial(params: DimensionParams, epsilon: float, r_max: float, n_points: int = 2000) -> SemilinearSolution:
    """Solve Delta u = 2u^2 on {eps < |x| < r_max} with u = inf on |x| = eps, u -> 0 at infinity."""
    if not epsilon > 0:
        raise DomainError("inner radius must be positive")
    if not epsilon < r_max / 10:
        raise DomainError("need eps < r_max / 10")
    traj = _trace(params.d)
    shift = traj.s_b - math.log(epsilon)
    radii = epsilon * np.concatenate([[1.0 + 1e-8], np.geomspace(1.0 + 1e-6, r_max / epsilon, n_points - 1)])
    s_native = np.log(radii) + shift
    u_values = radii**-2 * traj.v(s_native)
    if not (np.all(u_values > 0) and np.all(np.diff(u_values) < 0)):
        raise NumericError("solution is not positive and strictly decreasing")
    residual = _scaled_residual(traj, s_native[1:])
    amplitude = _farfield_fit(params.d, radii, u_values)
    return SemilinearSolution(params, float(epsilon), radii, u_values, amplitude, residual, traj)


def _farfield_fit(d, radii, u_values):
    """Intercept of log u vs log r with slope fixed at the far-field decay, last two decades."""
    window = radii >= radii[-1] / 100.0
    slope = 2.0 - d if d >= 5 else -2.0
    return float(np.exp(np.mean(np.log(u_values[window]) - slope * np.log(radii[window]))))


def exact_point_hitting(params: DimensionParams, distance: float, gamma: float = GAMMA) -> float:
    """N_x(0 in range) = (8 - 2d)/gamma |x|^-2, valid for d <= 3."""
    if params.d > 3:
        raise DomainError("points are polar for d >= 4")
    if not distance > 0:
        raise DomainError("distance must be positive")
    return (8 - 2 * params.d) / gamma * distance**-2.0


def iscoe_ratio(solution: SemilinearSolution, distance) -> float:
    """u_eps(x) |x|^2 log(1/eps); tends to 1 as eps -> 0 in d=4."""
    if solution.params.d != 4:
        raise DomainError("the log-corrected hitting asymptotic is specific to d=4")
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= solution.epsilon) or np.any(distance >= solution.radii[-1] / 10):
        raise DomainError("need eps < |x| < r_max/10")
    out = solution.u(distance) * distance**2 * math.log(1.0 / solution.epsilon)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class KappaEstimate:
    kappa: float
    fit_residual: float
    window: tuple


def estimate_kappa(solution: SemilinearSolution) -> KappaEstimate:
    """kappa_d = gamma * lim u_1(r) r^(d-2), fitted over the last two decades."""
    d = solution.params.d
    if d <= 4:
        raise DomainError("kappa_d is defined for d >= 5")
    if not math.isclose(solution.epsilon, 1.0):
        raise DomainError("kappa_d is read off the unit-ball solution (eps = 1)")
    r, u = solution.radii, solution.u_values
    window = r >= r[-1] / 100.0
    logs = np.log(u[window]) - (2.0 - d) * np.log(r[window])
    intercept = float(np.mean(logs))
    return KappaEstimate(kappa=GAMMA * math.exp(intercept), fit_residual=float(np.max(np.abs(logs - intercept))),
                         window=(float(r[window][0]), float(r[-1])))
