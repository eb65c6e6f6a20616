"""Stiffness indices over ODE and network trajectories.

Covers the Jacobian stiffness index (SI), the data-driven stiffness-aware
index (SAI) and its vector form, the per-block neural stiffness index (NSI),
the exceedance fraction delta(M), total neural stiffness (TNS) by midpoint
quadrature, the threshold cap beyond which delta vanishes, and the stiffness
proportion.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateBoundsError, ValidationError, ZeroNormStateError
from .ode import eigen_symmetric

NSI_MODES = ("unit_step", "recorded_step")

__all__ = [
    "ThresholdPair",
    "StageStats",
    "TnsEstimate",
    "TrajectoryBounds",
    "stiffness_index_si",
    "stiffness_aware_index_sai",
    "simplified_sai",
    "nsi",
    "nsi_profile",
    "pool_stage_means",
    "delta_estimate",
    "delta_grid",
    "tns",
    "tns_refinement",
    "trajectory_bounds",
    "lemma1_cap",
    "stiffness_proportion",
]


@dataclass(frozen=True)
class ThresholdPair:
    m1: float  # relative threshold, scales the stage mean
    m2: float  # absolute threshold

    def __post_init__(self):
        for name in ("m1", "m2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValidationError(f"threshold {name}={v} must be finite and >= 0")


@dataclass(frozen=True)
class StageStats:
    """NSI values of one stage of one trajectory.

    ``values`` holds every transition inside the stage, ``included`` marks
    the ones that survive the first-block exclusion. ``mu`` is the mean of
    the included values (or a pooled mean, see :func:`pool_stage_means`).
    """

    stage_index: int
    values: tuple
    included: tuple
    mu: float
    degenerate: bool = False
    pooled: bool = False

    @property
    def nsi_values(self):
        return tuple(v for v, keep in zip(self.values, self.included) if keep)


@dataclass(frozen=True)
class TnsEstimate:
    value: float
    grid: tuple  # (m1_max, m2_max, n)
    cap_applied: Optional[float] = None
    refinement_delta: Optional[float] = None

    def to_dict(self, refinements=()):
        m1_max, m2_max, n = self.grid
        return {
            "value": self.value,
            "grid": {"m1_max": m1_max, "m2_max": m2_max, "n": n},
            "cap": self.cap_applied,
            "refinement_delta": self.refinement_delta,
            "refinements": [
                {"n": r.grid[2], "value": r.value, "refinement_delta": r.refinement_delta}
                for r in refinements
            ],
        }


@dataclass(frozen=True)
class TrajectoryBounds:
    k1: float  # min state norm
    k2: float  # max state norm
    a: float   # min step size
    b: float   # max step size

    def __post_init__(self):
        if not (0 < self.k1 <= self.k2):
            raise ValidationError(f"need 0 < k1 <= k2, got k1={self.k1}, k2={self.k2}")
        if not (0 < self.a <= self.b):
            raise ValidationError(f"need 0 < a <= b, got a={self.a}, b={self.b}")


# -- point indices ------------------------------------------------------------

def stiffness_index_si(jacobian):
    """``max_i |Re(lambda_i)|``; symmetric Jacobians only."""
    jac = np.asarray(jacobian, dtype=np.float64)
    if not np.all(np.isfinite(jac)):
        raise ValidationError("jacobian has non-finite entries")
    if jac.ndim != 2 or jac.shape[0] != jac.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {jac.shape}")
    if np.max(np.sum(np.abs(jac - jac.T), axis=1), initial=0.0) >= 1e-10:
        raise ValidationError("unsupported: SI requires symmetric Jacobian in this artifact")
    if jac.size == 0:
        return 0.0
    return float(np.max(np.abs(eigen_symmetric(jac).eigenvalues)))


def simplified_sai(u_i, u_next, t_i, t_next):
    if not t_next > t_i:
        raise ValidationError("t_next must exceed t_i")
    return (np.asarray(u_next, dtype=np.float64) - np.asarray(u_i, dtype=np.float64)) / (
        t_next - t_i
    )


def stiffness_aware_index_sai(u_i, u_next, t_i, t_next):
    norm = float(np.linalg.norm(u_i))
    if norm == 0.0:
        raise ZeroNormStateError("zero-norm state: SAI is undefined")
    return float(np.linalg.norm(simplified_sai(u_i, u_next, t_i, t_next))) / norm


def _check_mode(mode):
    if mode not in NSI_MODES:
        raise ValidationError(f"unknown NSI mode {mode!r}; expected one of {NSI_MODES}")


def nsi(trajectory, t, mode="unit_step"):
    """NSI at transition ``t`` (from ``states[t]`` to ``states[t+1]``).

    ``unit_step`` uses ``||x_{t+1} - x_t|| / ||x_t||``. ``recorded_step``
    first divides the difference elementwise by the recorded step size.
    """
    _check_mode(mode)
    if not 0 <= t < len(trajectory.states) - 1:
        raise ValidationError(f"transition index {t} out of range")
    x, y = trajectory.states[t], trajectory.states[t + 1]
    if x.shape != y.shape:
        raise ValidationError(f"transition {t} changes width ({x.shape} -> {y.shape})")
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ZeroNormStateError(f"zero-norm state at index {t}")
    diff = y - x
    if mode == "recorded_step":
        step = trajectory.step_sizes[t]
        if np.any(np.asarray(step) == 0):
            raise ValidationError(f"zero step size at transition {t}")
        diff = diff / step
    return float(np.linalg.norm(diff)) / norm


def nsi_profile(trajectory, mode="unit_step", exclude_first=True):
    """Per-stage NSI with the first transition of every stage dropped.

    Transitions that cross a stage boundary are never measured. A stage with
    no value left after exclusion is flagged ``degenerate`` (``mu`` is NaN).
    """
    _check_mode(mode)
    out = []
    for s, (start, stop) in enumerate(trajectory.stage_ranges()):
        values, included = [], []
        for t in range(start, stop - 1):
            values.append(nsi(trajectory, t, mode))
            included.append(not (exclude_first and t == start))
        kept = [v for v, k in zip(values, included) if k]
        degenerate = not kept
        mu = float("nan") if degenerate else float(np.mean(kept))
        out.append(StageStats(s, tuple(values), tuple(included), mu, degenerate))
    return out


def pool_stage_means(profiles):
    """Replace every per-input stage mean with the mean pooled over inputs."""
    n_stages = max(len(p) for p in profiles)
    pooled = []
    for s in range(n_stages):
        vals = [v for p in profiles if s < len(p) and not p[s].degenerate for v in p[s].nsi_values]
        pooled.append(float(np.mean(vals)) if vals else float("nan"))
    return [
        [st if st.degenerate else replace(st, mu=pooled[st.stage_index], pooled=True) for st in p]
        for p in profiles
    ]


# -- exceedance -----------------------------------------------------------------

def _flatten(profiles):
    if len(profiles) == 0:
        raise ValidationError("delta requires at least one profile")
    vals, mus, offsets = [], [], [0]
    for prof in profiles:
        for st in prof:
            if st.degenerate:
                continue
            kept = st.nsi_values
            vals.extend(kept)
            mus.extend([st.mu] * len(kept))
        offsets.append(len(vals))
    return (
        np.asarray(vals, dtype=np.float64),
        np.asarray(mus, dtype=np.float64),
        np.asarray(offsets, dtype=np.int64),
    )


def delta_grid(profiles, m1_points, m2_points):
    """Exceedance fraction on the outer product of two threshold axes."""
    vals, mus, offsets = _flatten(profiles)
    m1 = np.ascontiguousarray(m1_points, dtype=np.float64)
    m2 = np.ascontiguousarray(m2_points, dtype=np.float64)
    counts = kernels.delta_counts(vals, mus, offsets, m1, m2)
    return counts / (len(offsets) - 1)


def delta_estimate(profiles, m):
    """Fraction of inputs with some included NSI >= max(mu (1 + M1), M2)."""
    if isinstance(m, tuple):
        m = ThresholdPair(*m)
    return float(delta_grid(profiles, [m.m1], [m.m2])[0, 0])


def _exceed_counts(profiles, m):
    counts = []
    for prof in profiles:
        c = 0
        for st in prof:
            if st.degenerate:
                continue
            thr = max(st.mu * (1.0 + m.m1), m.m2)
            c += sum(1 for v in st.nsi_values if v >= thr)
        counts.append(c)
    return counts


def stiffness_proportion(profiles, m, n_blocks):
    """Expected number of exceeding blocks per trajectory, divided by ``n_blocks``."""
    if len(profiles) == 0:
        raise ValidationError("stiffness proportion requires at least one profile")
    if n_blocks < 1:
        raise ValidationError("n_blocks must be >= 1")
    if isinstance(m, tuple):
        m = ThresholdPair(*m)
    counts = _exceed_counts(profiles, m)
    return float(np.mean(counts)) / n_blocks


# -- total neural stiffness ---------------------------------------------------

def _midpoints(hi, n):
    return (np.arange(n, dtype=np.float64) + 0.5) * (hi / n)


def tns(profiles, grid=(10.0, 10.0, 64), cap=None, previous=None):
    """Midpoint-rule integral of delta over ``[0, m1_max] x [0, m2_max]``.

    ``cap`` may be a :class:`TrajectoryBounds` (or a precomputed float); both
    maxima are then set to the cap, beyond which delta is identically zero.
    """
    m1_max, m2_max, n = grid
    n = int(n)
    cap_value = None
    if cap is not None:
        cap_value = lemma1_cap(cap) if isinstance(cap, TrajectoryBounds) else float(cap)
        m1_max = m2_max = cap_value
    if n < 2:
        raise ValidationError("grid needs n >= 2 cells per axis")
    if not (m1_max > 0 and m2_max > 0):
        raise ValidationError("grid maxima must be positive")
    vals, mus, offsets = _flatten(profiles)
    counts = kernels.delta_counts(
        vals, mus, offsets, _midpoints(float(m1_max), n), _midpoints(float(m2_max), n)
    )
    n_inputs = len(offsets) - 1
    # mean delta over the cells first, so the value never exceeds the box area
    frac = int(counts.sum()) / (n * n * n_inputs)
    value = frac * (float(m1_max) * float(m2_max))
    delta = None
    if previous is not None:
        prev = previous.value
        # relative to the larger value, so a change away from zero stays finite
        scale = max(abs(prev), abs(value))
        delta = 0.0 if scale == 0.0 else abs(value - prev) / scale
    return TnsEstimate(float(value), (float(m1_max), float(m2_max), n), cap_value, delta)


def tns_refinement(profiles, grid_caps=(10.0, 10.0), levels=(16, 32, 64, 128), cap=None):
    """TNS at successive grid sizes, each carrying its change from the last."""
    out = []
    prev = None
    for n in levels:
        est = tns(profiles, (grid_caps[0], grid_caps[1], n), cap=cap, previous=prev)
        out.append(est)
        prev = est
    return out


def trajectory_bounds(trajectories, mode="unit_step", exclude_first=True):
    """Norm and step bounds over the transitions that enter the NSI statistics."""
    _check_mode(mode)
    norms, steps = [], []
    for tr in trajectories:
        for start, stop in tr.stage_ranges():
            for t in range(start, stop - 1):
                if exclude_first and t == start:
                    continue
                norms.append(np.linalg.norm(tr.states[t]))
                norms.append(np.linalg.norm(tr.states[t + 1]))
                if mode == "recorded_step":
                    s = np.asarray(tr.step_sizes[t])
                    steps.extend([float(np.min(s)), float(np.max(s))])
                else:
                    steps.append(1.0)
    if not norms:
        raise ValidationError("no included transitions to bound")
    return TrajectoryBounds(float(min(norms)), float(max(norms)), float(min(steps)), float(max(steps)))


def lemma1_cap(bounds):
    """Threshold level beyond which delta vanishes for the given bounds."""
    k1, k2, a, b = bounds.k1, bounds.k2, bounds.a, bounds.b
    if k1 == k2:
        raise DegenerateBoundsError("degenerate bounds: k1 == k2 makes the cap singular")
    relative = b * k2 * (k1 + k2) / (a * k1 * abs(k1 - k2)) - 1.0
    absolute = (1.0 / a) * (1.0 + k2 / k1)
    return float(max(relative, absolute))
