"""ODE systems, fixed and adaptive integrators, linear-system helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from ._accel import USE_NUMBA, njit
from .errors import DivergenceError, StalledError, ValidationError

__all__ = [
    "OdeSystem",
    "Trajectory",
    "EigenDecomposition",
    "IntegratorMethod",
    "StepStats",
    "integrate_fixed",
    "integrate_adaptive",
    "analytic_linear_solution",
    "eigen_symmetric",
    "fd_jacobian",
    "get_system",
    "decay_system",
    "stiff_sine_system",
    "linear_system",
]


def fd_jacobian(rhs, u, t=0.0):
    """Central finite-difference Jacobian, column step ``1e-6 * (1 + |u_j|)``."""
    u = np.asarray(u, dtype=np.float64)
    d = u.shape[0]
    jac = np.empty((d, d))
    for j in range(d):
        h = 1e-6 * (1.0 + abs(u[j]))
        up = u.copy()
        um = u.copy()
        up[j] += h
        um[j] -= h
        jac[:, j] = (np.asarray(rhs(up, t)) - np.asarray(rhs(um, t))) / (up[j] - um[j])
    return jac


@dataclass(frozen=True)
class OdeSystem:
    """Right-hand side ``du/dt = rhs(u, t)`` plus optional extras.

    ``jit_rhs`` is a numba-compiled twin of ``rhs`` used by the fixed-step
    Euler kernel; ``exact(t, u0)`` is an analytic solution when one is known.
    """

    name: str
    dimension: int
    rhs: Callable[[np.ndarray, float], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    exact: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    jit_rhs: Optional[Callable] = field(default=None, compare=False, repr=False)
    stiffness: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError(f"dimension must be positive, got {self.dimension}")

    def f(self, u, t=0.0):
        out = np.asarray(self.rhs(u, t), dtype=np.float64)
        if out.shape != (self.dimension,):
            raise ValidationError(
                f"{self.name}: rhs returned shape {out.shape}, expected ({self.dimension},)"
            )
        return out

    def jac(self, u, t=0.0):
        if self.jacobian is not None:
            return np.asarray(self.jacobian(u), dtype=np.float64)
        return fd_jacobian(self.rhs, u, t)


def _freeze(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Ordered states with per-transition step sizes and stage boundaries.

    Step sizes are floats (scalar Δt) or 1-d arrays (attention step sizes),
    and may be mixed within one trajectory. States may change width between
    stages.
    """

    states: tuple
    step_sizes: tuple
    stage_boundaries: tuple = (0,)
    source: str = "ode"

    def __init__(self, states, step_sizes, stage_boundaries=(0,), source="ode"):
        states = tuple(_freeze(np.atleast_1d(s)) for s in states)
        steps = []
        for s in step_sizes:
            if np.ndim(s) == 0:
                steps.append(float(s))
            else:
                steps.append(_freeze(s))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "step_sizes", tuple(steps))
        object.__setattr__(self, "stage_boundaries", tuple(int(b) for b in stage_boundaries))
        object.__setattr__(self, "source", str(source))
        self._validate()

    def _validate(self):
        n = len(self.states)
        if n < 1:
            raise ValidationError("trajectory has no states")
        if len(self.step_sizes) != n - 1:
            raise ValidationError(
                f"step_sizes has length {len(self.step_sizes)}, expected len(states)-1 = {n - 1}"
            )
        for k, s in enumerate(self.step_sizes):
            if isinstance(s, float):
                if not s > 0:
                    raise ValidationError(f"step_sizes[{k}] = {s} must be > 0")
            elif not (np.all(s > 0) and np.all(s <= 1)):
                raise ValidationError(f"step_sizes[{k}] has entries outside (0, 1]")
        b = self.stage_boundaries
        if not b or b[0] != 0:
            raise ValidationError("stage_boundaries must start with 0")
        if any(x >= y for x, y in zip(b, b[1:])) or b[-1] >= n:
            raise ValidationError(f"stage_boundaries {list(b)} not sorted within [0, {n})")
        if self.source not in ("ode", "network"):
            raise ValidationError(f"unknown trajectory source {self.source!r}")

    def __len__(self):
        return len(self.states)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        if (self.source, self.stage_boundaries) != (other.source, other.stage_boundaries):
            return False
        if len(self.states) != len(other.states):
            return False
        if not all(np.array_equal(a, b) for a, b in zip(self.states, other.states)):
            return False
        return all(
            type(a) is type(b) and np.array_equal(a, b)
            for a, b in zip(self.step_sizes, other.step_sizes)
        )

    __hash__ = None

    def stage_ranges(self):
        """Yield ``(start, stop)`` state-index ranges, one per stage."""
        b = self.stage_boundaries + (len(self.states),)
        return [(b[i], b[i + 1]) for i in range(len(b) - 1)]

    def as_array(self):
        return np.vstack(self.states)


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns are eigenvectors

    def vector(self, i):
        return self.eigenvectors[:, i]

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


@dataclass(frozen=True)
class IntegratorMethod:
    kind: str
    dt: Optional[float] = None
    tolerance: Optional[float] = None
    max_steps: int = 1_000_000
    # Divergence bound on |u|; ``None`` means only non-finite values count.
    blowup: Optional[float] = 1e3

    def __post_init__(self):
        if self.kind not in ("forward_euler", "rk4", "rkf45_adaptive"):
            raise ValidationError(f"unknown integrator kind {self.kind!r}")
        if self.kind == "rkf45_adaptive":
            if self.tolerance is None or self.dt is not None:
                raise ValidationError("rkf45_adaptive takes a tolerance and no dt")
            if not self.tolerance > 0:
                raise ValidationError("tolerance must be positive")
        else:
            if self.dt is None or self.tolerance is not None:
                raise ValidationError(f"{self.kind} takes a dt and no tolerance")
            if not self.dt > 0:
                raise ValidationError("dt must be positive")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be positive")


@dataclass(frozen=True)
class StepStats:
    rhs_evals: int
    accepted: int
    rejected: int


def _blowup_bound(method, u0):
    if method.blowup is None:
        return np.inf
    return method.blowup * max(1.0, float(np.max(np.abs(u0))))


def integrate_fixed(system, u0, method, n_steps, t0=0.0):
    """Integrate ``n_steps`` fixed steps of size ``method.dt``.

    Raises :class:`DivergenceError` carrying the step index when the state
    becomes non-finite or exceeds the method's blow-up bound.
    """
    if n_steps < 1:
        raise ValidationError("n_steps must be >= 1")
    if method.kind == "rkf45_adaptive":
        raise ValidationError("integrate_fixed needs a fixed-step method")
    if n_steps > method.max_steps:
        raise ValidationError(f"n_steps {n_steps} exceeds max_steps {method.max_steps}")
    u0 = np.asarray(u0, dtype=np.float64).reshape(-1)
    if u0.shape[0] != system.dimension:
        raise ValidationError(f"u0 has dimension {u0.shape[0]}, system expects {system.dimension}")
    dt = float(method.dt)
    bound = _blowup_bound(method, u0)

    if method.kind == "forward_euler":
        if USE_NUMBA and system.jit_rhs is not None:
            states, bad = kernels.euler_states(system.jit_rhs, u0, float(t0), dt, n_steps, bound)
        else:
            states, bad = kernels._euler_states_python(system.f, u0, float(t0), dt, n_steps, bound)
        if bad >= 0:
            raise DivergenceError(bad, states[-1])
    else:
        states = np.empty((n_steps + 1, u0.shape[0]))
        states[0] = u0
        f = system.f
        for k in range(n_steps):
            t = t0 + k * dt
            u = states[k]
            k1 = f(u, t)
            k2 = f(u + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = f(u + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = f(u + dt * k3, t + dt)
            states[k + 1] = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            row = states[k + 1]
            if not np.all(np.isfinite(row)) or np.max(np.abs(row)) > bound:
                raise DivergenceError(k + 1, row)
    return Trajectory(states, [dt] * n_steps, (0,), "ode")


def euler_endpoint(system, u0, dt, n_steps, t0=0.0, blowup=1e3):
    """Final forward-Euler state without storing the path.

    Returns ``(state, diverged_step)`` with ``diverged_step == -1`` on success.
    """
    u0 = np.asarray(u0, dtype=np.float64).reshape(-1)
    bound = np.inf if blowup is None else blowup * max(1.0, float(np.max(np.abs(u0))))
    if USE_NUMBA and system.jit_rhs is not None:
        u, bad = kernels.euler_final(system.jit_rhs, u0, float(t0), float(dt), int(n_steps), bound)
    else:
        u, bad = kernels._euler_final_python(system.f, u0, float(t0), float(dt), int(n_steps), bound)
    return np.asarray(u), int(bad)


# Fehlberg 4(5) tableau; the 5th-order solution is propagated (local
# extrapolation) and the 4th-order one only feeds the error estimate.
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
_E = _B5 - _B4


def _rkf45_step(f, u, t, h):
    k = np.empty((6, u.shape[0]))
    k[0] = f(u, t)
    for i in range(1, 6):
        k[i] = f(u + h * (np.asarray(_A[i]) @ k[:i]), t + _C[i] * h)
    return u + h * (_B5 @ k), h * (_E @ k)


def integrate_adaptive(system, u0, t_span, tolerance, max_steps=1_000_000):
    """Adaptive Runge-Kutta-Fehlberg 4(5) integration over ``t_span``.

    Returns ``(trajectory, StepStats)``.

    The local error is the RMS over components of ``err / (tol + tol*|u|)``;
    a step is accepted when that norm is at most one. The last step is
    clipped so the trajectory ends exactly at ``t1``.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValidationError("t_span must satisfy t1 > t0")
    if not tolerance > 0:
        raise ValidationError("tolerance must be positive")
    u = np.asarray(u0, dtype=np.float64).reshape(-1).copy()
    if u.shape[0] != system.dimension:
        raise ValidationError(f"u0 has dimension {u.shape[0]}, system expects {system.dimension}")
    f = system.f
    span = t1 - t0
    atol = rtol = float(tolerance)

    def err_norm(err, a, b):
        scale = atol + rtol * np.maximum(np.abs(a), np.abs(b))
        return float(np.sqrt(np.mean((err / scale) ** 2)))

    # Starting step from two rhs probes (Hairer, Norsett & Wanner, II.4).
    sc = atol + rtol * np.abs(u)
    f0 = f(u, t0)
    d0 = float(np.sqrt(np.mean((u / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 * span if (d0 < 1e-5 or d1 < 1e-5) else min(span, 0.01 * d0 / d1)
    f1 = f(u + h0 * f0, t0 + h0)
    evals = 2
    d2 = float(np.sqrt(np.mean(((f1 - f0) / sc) ** 2))) / h0
    if max(d1, d2) == 0.0:
        h = span
    else:
        h = min(100.0 * h0, (0.01 / max(d1, d2)) ** 0.2, span)

    states = [u.copy()]
    steps = []
    t = t0
    accepted = rejected = 0
    h_min = 1e-14 * span
    while t < t1:
        if accepted + rejected >= max_steps:
            raise StalledError(t, f"max_steps={max_steps} reached at t={t}")
        last = t + h >= t1
        if last:
            h = t1 - t
        u_new, err = _rkf45_step(f, u, t, h)
        evals += 6
        en = err_norm(err, u, u_new)
        if not np.all(np.isfinite(u_new)):
            en = np.inf
        if en <= 1.0:
            t = t1 if last else t + h
            u = u_new
            states.append(u.copy())
            steps.append(h)
            accepted += 1
            factor = 5.0 if en == 0.0 else min(5.0, max(0.2, 0.9 * en ** -0.2))
        else:
            rejected += 1
            factor = 0.2 if not np.isfinite(en) else min(1.0, max(0.2, 0.9 * en ** -0.2))
        h = h * factor
        if h < h_min and t < t1:
            raise StalledError(t, f"step size {h:.3e} fell below {h_min:.3e} at t={t}")
    # The first rhs evaluation only seeds the initial step; count it.
    return Trajectory(states, steps, (0,), "ode"), StepStats(evals, accepted, rejected)


def analytic_linear_solution(eig, coeffs, t):
    """``sum_i c_i v_i exp(lambda_i t)`` for the homogeneous system ``u' = J u``."""
    c = np.asarray(coeffs, dtype=np.float64)
    return eig.eigenvectors @ (c * np.exp(eig.eigenvalues * t))


def eigen_symmetric(matrix):
    """Symmetric eigen-decomposition by cyclic Jacobi rotations.

    Eigenvalues are sorted by decreasing magnitude (ties: larger value
    first); each eigenvector's largest-magnitude component is made positive.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    asym = np.max(np.sum(np.abs(a - a.T), axis=1)) if a.size else 0.0
    if not asym < 1e-10:
        raise ValidationError(f"matrix is not symmetric (||A - A^T||_inf = {asym:.3e})")
    a = 0.5 * (a + a.T)
    w, v, _ = kernels.jacobi_eigh(a)
    order = sorted(range(len(w)), key=lambda i: (-abs(w[i]), -w[i], i))
    w = w[order]
    v = v[:, order]
    for i in range(v.shape[1]):
        j = int(np.argmax(np.abs(v[:, i])))
        if v[j, i] < 0:
            v[:, i] = -v[:, i]
    return EigenDecomposition(_freeze(w), _freeze(v))


# -- system catalog -----------------------------------------------------------

@njit
def _decay_jit(u, t):
    return -u


@njit
def _stiff_sine_jit(u, t):
    out = np.empty_like(u)
    out[0] = -1000.0 * (u[0] - np.sin(t)) + np.cos(t)
    return out


def decay_system(rate=1.0):
    rate = float(rate)

    def rhs(u, t):
        return -rate * np.asarray(u, dtype=np.float64)

    return OdeSystem(
        name="decay" if rate == 1.0 else f"decay:{rate:g}",
        dimension=1,
        rhs=rhs,
        jacobian=lambda u: np.array([[-rate]]),
        exact=lambda t, u0: np.asarray(u0, dtype=np.float64) * np.exp(-rate * t),
        jit_rhs=_decay_jit if rate == 1.0 else None,
        stiffness=rate,
    )


def stiff_sine_system(lam=-1000.0):
    """``u' = lam (u - sin t) + cos t``; ``u(t) = (u0 e^{lam t}) + sin t``."""
    lam = float(lam)

    def rhs(u, t):
        u = np.asarray(u, dtype=np.float64)
        return lam * (u - np.sin(t)) + np.cos(t)

    def exact(t, u0):
        return np.asarray(u0, dtype=np.float64) * np.exp(lam * t) + np.sin(t)

    return OdeSystem(
        name="stiff_sine",
        dimension=1,
        rhs=rhs,
        jacobian=lambda u: np.array([[lam]]),
        exact=exact,
        jit_rhs=_stiff_sine_jit if lam == -1000.0 else None,
        stiffness=abs(lam),
    )


def linear_system(matrix, name="linear_sym"):
    """``u' = A u`` for a symmetric ``A``; exact solution via the eigenbasis."""
    a = _freeze(matrix)
    eig = eigen_symmetric(a)

    def exact(t, u0):
        c = eig.eigenvectors.T @ np.asarray(u0, dtype=np.float64)
        return analytic_linear_solution(eig, c, t)

    return OdeSystem(
        name=name,
        dimension=a.shape[0],
        rhs=lambda u, t: a @ np.asarray(u, dtype=np.float64),
        jacobian=lambda u: np.array(a),
        exact=exact,
        stiffness=float(np.max(np.abs(eig.eigenvalues))),
    )


def get_system(name):
    """Look up ``decay``, ``stiff_sine`` or ``linear_sym:<file.json>``.

    Returns ``(system, default_u0)``.
    """
    if name == "decay":
        return decay_system(), np.array([1.0])
    if name == "stiff_sine":
        return stiff_sine_system(), np.array([0.0])
    if name.startswith("linear_sym:"):
        from .io import load_linear_system

        matrix, u0 = load_linear_system(name.split(":", 1)[1])
        return linear_system(matrix, name=name), u0
    raise ValidationError(f"unknown system {name!r} (expected decay, stiff_sine, linear_sym:<file>)")
