"""Numerical checks of the SAI/SI asymptotics, the delta cap and TNS
convergence, and the adaptive-versus-fixed step claim on stiff problems."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError
from .metrics import delta_grid, lemma1_cap, stiffness_aware_index_sai, tns
from .ode import EigenDecomposition, analytic_linear_solution, euler_endpoint, integrate_adaptive

DEFAULT_GAPS = (1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class Theorem2Report:
    eigenvalues: tuple
    coeffs: tuple
    gap: float
    si: float
    sai_measured: float
    ratio: float
    ratio_limit: float     # |c_1| / ||c||, lambda_1 the largest in magnitude
    closed_form: float     # gap -> 0 ratio sqrt(sum l^2 c^2 / sum c^2) / |l_1|
    q_term: float          # ratio^2 - c

    def to_dict(self):
        d = asdict(self)
        d["eigenvalues"] = list(self.eigenvalues)
        d["coeffs"] = list(self.coeffs)
        return d


@dataclass(frozen=True)
class ConvergenceReport:
    levels: tuple           # ((n, value), ...)
    deltas: tuple
    cap: float
    zero_region_verified: bool
    zero_region_points: int

    def to_dict(self):
        return {
            "levels": [{"n": n, "value": v} for n, v in self.levels],
            "deltas": list(self.deltas),
            "cap": self.cap,
            "zero_region_verified": self.zero_region_verified,
            "zero_region_points": self.zero_region_points,
        }


@dataclass(frozen=True)
class ComparisonReport:
    system: str
    tolerance: float
    adaptive_evals: int
    adaptive_error: float
    fixed_evals_at_matched_error: Optional[int]
    fixed_error_at_match: Optional[float]
    matched: bool
    fixed_diverged_dt: tuple   # every probed dt that diverged, descending
    errors_vs_exact: dict

    def to_dict(self):
        d = asdict(self)
        d["fixed_diverged_dt"] = list(self.fixed_diverged_dt)
        return d


def theorem2_closed_form(eigenvalues, coeffs):
    lam = np.asarray(eigenvalues, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    return float(np.sqrt(np.sum(lam**2 * c**2) / np.sum(c**2)) / np.max(np.abs(lam)))


def verify_theorem2(eigenvalues, coeffs, gaps=DEFAULT_GAPS):
    """SAI/SI on ``u' = diag(eigenvalues) u`` started at ``sum c_i e_i``.

    One report per gap. The next state comes from the exact exponential
    solution, so the only error is that of the forward difference quotient.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    c = np.asarray(coeffs, dtype=np.float64)
    if lam.ndim != 1 or lam.shape != c.shape:
        raise ValidationError("eigenvalues and coeffs must be 1-d and of equal length")
    if not np.all(lam < 0):
        raise ValidationError("all eigenvalues must be negative")
    if len(np.unique(lam)) != len(lam):
        raise ValidationError("eigenvalues must be distinct")
    if not np.any(c != 0):
        raise ValidationError("at least one coefficient must be nonzero")

    order = np.argsort(-np.abs(lam), kind="stable")
    eig = EigenDecomposition(lam[order], np.eye(len(lam))[:, order])
    c_sorted = c[order]
    u0 = analytic_linear_solution(eig, c_sorted, 0.0)
    si = float(abs(eig.eigenvalues[0]))
    const = float(c_sorted[0] ** 2 / np.sum(c**2))
    closed = theorem2_closed_form(lam, c)
    reports = []
    for gap in gaps:
        u1 = analytic_linear_solution(eig, c_sorted, gap)
        sai = stiffness_aware_index_sai(u0, u1, 0.0, gap)
        ratio = sai / si
        reports.append(
            Theorem2Report(
                tuple(float(x) for x in lam),
                tuple(float(x) for x in c),
                float(gap),
                si,
                sai,
                ratio,
                float(np.sqrt(const)),
                closed,
                ratio**2 - const,
            )
        )
    return reports


def theorem2_sweep(lambda1s=(10.0, 1e2, 1e3, 1e4), coeffs=(1.0, 1.0), gap=1e-6, slow=1.0):
    """One report per ``lambda_1`` for the eigenvalue pair ``(-lambda_1, -slow)``."""
    return [verify_theorem2((-l1, -slow), coeffs, (gap,))[0] for l1 in lambda1s]


def verify_lemma1_and_tns(profiles, bounds, levels=(16, 32, 64, 128), zero_grid=32, span=4.0):
    """Check delta == 0 beyond the cap and report TNS at each grid level.

    The zero region is probed on a ``zero_grid x zero_grid`` lattice over
    ``(cap, span * cap]^2`` plus the corner just above the cap.
    """
    cap = lemma1_cap(bounds)
    axis = cap + (np.arange(1, zero_grid + 1) / zero_grid) * (span - 1.0) * cap
    axis = np.concatenate([[np.nextafter(cap, np.inf)], axis])
    beyond = delta_grid(profiles, axis, axis)
    zero_ok = bool(np.all(beyond == 0.0))

    vals, deltas = [], []
    prev = None
    for n in levels:
        est = tns(profiles, (cap, cap, n), cap=cap, previous=prev)
        vals.append((int(n), est.value))
        if prev is not None:
            deltas.append(est.refinement_delta)
        prev = est
    return ConvergenceReport(tuple(vals), tuple(deltas), cap, zero_ok, int(axis.size**2))


def _euler_error(system, u0, t0, t1, n, exact_end):
    u, bad = euler_endpoint(system, u0, (t1 - t0) / n, n, t0=t0)
    if bad >= 0:
        return None
    return float(np.max(np.abs(u - exact_end)))


def stiff_solver_comparison(system, u0, t_span, tolerance, probe_dts=(), max_fixed_steps=50_000_000):
    """Adaptive RKF45 against fixed-step forward Euler on a system with a
    known solution.

    The fixed-step sweep doubles the step count until the Euler endpoint
    error is no worse than the adaptive one, then bisects on the step count
    for the coarsest matching grid. ``probe_dts`` are additionally run and
    recorded if they diverge.
    """
    if system.exact is None:
        raise ValidationError(f"system {system.name!r} has no registered analytic solution")
    t0, t1 = float(t_span[0]), float(t_span[1])
    u0 = np.asarray(u0, dtype=np.float64).reshape(-1)
    exact_end = system.exact(t1, u0)
    traj, stats = integrate_adaptive(system, u0, (t0, t1), tolerance)
    adaptive_error = float(np.max(np.abs(traj.states[-1] - exact_end)))

    diverged = []
    errors = {}
    n = 8
    lo_fail = None
    match_n = None
    while n <= max_fixed_steps:
        err = _euler_error(system, u0, t0, t1, n, exact_end)
        dt = (t1 - t0) / n
        if err is None:
            diverged.append(dt)
        else:
            errors[f"{dt:.17g}"] = err
        if err is not None and err <= adaptive_error:
            match_n = n
            break
        lo_fail = n
        n *= 2
    matched_err = None
    if match_n is not None:
        lo = lo_fail if lo_fail is not None else 0
        hi = match_n
        matched_err = errors[f"{(t1 - t0) / hi:.17g}"]
        while hi - lo > 1:
            mid = (lo + hi) // 2
            err = _euler_error(system, u0, t0, t1, mid, exact_end)
            if err is not None and err <= adaptive_error:
                hi, matched_err = mid, err
            else:
                lo = mid
                if err is None:
                    diverged.append((t1 - t0) / mid)
        match_n = hi
    for dt in probe_dts:
        steps = max(1, int(round((t1 - t0) / dt)))
        u, bad = euler_endpoint(system, u0, dt, steps, t0=t0)
        if bad >= 0:
            diverged.append(float(dt))
    return ComparisonReport(
        system=system.name,
        tolerance=float(tolerance),
        adaptive_evals=stats.rhs_evals,
        adaptive_error=adaptive_error,
        fixed_evals_at_matched_error=match_n,
        fixed_error_at_match=matched_err,
        matched=match_n is not None,
        fixed_diverged_dt=tuple(sorted(set(diverged), reverse=True)),
        errors_vs_exact=errors,
    )


def random_trajectory_set(rng, n_inputs=20, n_stages=2, blocks=4, dim=3, norm_range=(0.5, 2.0), step_range=(0.2, 1.0)):
    """Random trajectories whose state norms and vector step sizes lie inside
    the given ranges, so their norm and step bounds are known in advance."""
    from .ode import Trajectory

    out = []
    for _ in range(n_inputs):
        states, steps, bounds = [], [], []
        for s in range(n_stages):
            bounds.append(len(states))
            if s:
                steps.append(1.0)
            for _ in range(blocks + 1):
                v = rng.standard_normal(dim)
                states.append(v / np.linalg.norm(v) * rng.uniform(*norm_range))
            steps.extend(rng.uniform(*step_range, size=(blocks, dim)))
        out.append(Trajectory(states, steps, bounds, "network"))
    return out
