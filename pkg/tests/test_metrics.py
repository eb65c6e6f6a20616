import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from _oracles import exact_tns, profile
from stiffkit.errors import DegenerateBoundsError, ValidationError, ZeroNormStateError
from stiffkit.metrics import (
    ThresholdPair,
    TrajectoryBounds,
    delta_estimate,
    delta_grid,
    lemma1_cap,
    nsi,
    nsi_profile,
    pool_stage_means,
    simplified_sai,
    stiffness_aware_index_sai,
    stiffness_index_si,
    stiffness_proportion,
    tns,
    tns_refinement,
    trajectory_bounds,
)
from stiffkit.ode import Trajectory
from stiffkit.theory import random_trajectory_set, theorem2_closed_form


def traj_from_nsi(values, dim=2):
    """Single-stage trajectory whose unit-step NSI sequence is ``values``.

    Each state is the previous one scaled by ``1 + v`` so that
    ``||x_{t+1} - x_t|| / ||x_t|| = v``.
    """
    x = np.ones(dim) / math.sqrt(dim)
    states = [x]
    for v in values:
        x = x * (1.0 + v)
        states.append(x)
    return Trajectory(states, [1.0] * len(values))


# -- SI / SAI -------------------------------------------------------------------------

def test_si_examples():
    assert stiffness_index_si(np.diag([-1000.0, -1.0])) == 1000.0
    assert stiffness_index_si(np.zeros((3, 3))) == 0.0
    assert stiffness_index_si([[-2.0, 1.0], [1.0, -2.0]]) == pytest.approx(3.0, abs=1e-14)


def test_si_rejects_nonsymmetric():
    with pytest.raises(ValidationError, match="unsupported: SI requires symmetric Jacobian"):
        stiffness_index_si([[0.0, 1.0], [0.0, 0.0]])


def test_sai_examples():
    assert stiffness_aware_index_sai([1.0, 0.0], [1.0, 1.0], 0.0, 1.0) == 1.0
    assert stiffness_aware_index_sai([1.0, 2.0], [1.0, 2.0], 0.0, 0.5) == 0.0
    assert stiffness_aware_index_sai([1.0], [math.exp(-0.05)], 0.0, 0.01) == pytest.approx(4.87706, abs=1e-5)
    with pytest.raises(ZeroNormStateError):
        stiffness_aware_index_sai([0.0, 0.0], [1.0, 0.0], 0.0, 1.0)


def test_simplified_sai_examples():
    np.testing.assert_array_equal(simplified_sai([0.0, 0.0], [2.0, 4.0], 0.0, 2.0), [1.0, 2.0])
    np.testing.assert_array_equal(simplified_sai([1.0, 1.0], [1.0, 1.0], 0.0, 1.0), [0.0, 0.0])
    np.testing.assert_allclose(simplified_sai([1.0, 1.0], [1.1, 0.9], 0.0, 0.1), [1.0, -1.0], rtol=1e-12)
    with pytest.raises(ValidationError):
        simplified_sai([1.0], [1.0], 1.0, 1.0)


def test_sai_matches_closed_form_on_linear_system():
    lam, c, gap = np.array([-50.0, -3.0, -0.5]), np.array([0.3, -1.0, 2.0]), 1e-6
    u0 = c
    u1 = c * np.exp(lam * gap)
    closed = theorem2_closed_form(lam, c) * 50.0
    assert stiffness_aware_index_sai(u0, u1, 0.0, gap) == pytest.approx(closed, rel=1e-4)


def test_sai_is_rotation_invariant():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    lam, c, gap = np.array([-100.0, -2.0, -1.0]), np.array([1.0, 1.0, 1.0]), 1e-6
    u0, u1 = c, c * np.exp(lam * gap)
    assert stiffness_aware_index_sai(q @ u0, q @ u1, 0.0, gap) == pytest.approx(
        stiffness_aware_index_sai(u0, u1, 0.0, gap), rel=1e-9
    )


# -- NSI ------------------------------------------------------------------------------

def test_nsi_examples():
    t = Trajectory([[3.0, 4.0], [3.0, 4.0]], [1.0])
    assert nsi(t, 0) == 0.0
    assert nsi(Trajectory([[1.0, 0.0, 0.0], [1.0, 2.0, 0.0]], [1.0]), 0) == 2.0
    assert nsi(Trajectory([[0.6, 0.8], [0.0, 0.0]], [1.0]), 0) == pytest.approx(1.0)


def test_nsi_recorded_step_divides_elementwise():
    t = Trajectory([[1.0, 0.0], [1.5, 0.25]], [np.array([0.5, 0.25])])
    assert nsi(t, 0, "unit_step") == pytest.approx(math.hypot(0.5, 0.25))
    assert nsi(t, 0, "recorded_step") == pytest.approx(math.hypot(1.0, 1.0))


def test_nsi_errors():
    t = Trajectory([[0.0, 0.0], [1.0, 0.0]], [1.0])
    with pytest.raises(ZeroNormStateError):
        nsi(t, 0)
    with pytest.raises(ValidationError):
        nsi(t, 1)
    with pytest.raises(ValidationError):
        nsi(Trajectory([[1.0], [2.0]], [1.0]), 0, "bogus")


def test_profile_exclusion():
    prof = nsi_profile(traj_from_nsi([9.0, 1.0, 1.0, 4.0]))
    assert len(prof) == 1
    np.testing.assert_allclose(prof[0].nsi_values, [1.0, 1.0, 4.0])
    assert prof[0].mu == pytest.approx(2.0)


def test_profile_constant_trajectory():
    prof = nsi_profile(Trajectory([[1.0, 1.0]] * 5, [1.0] * 4))
    assert prof[0].nsi_values == (0.0, 0.0, 0.0)
    assert prof[0].mu == 0.0


def test_profile_two_stages():
    states = [np.full(2, 1.0 + k) for k in range(4)] + [np.full(3, 1.0 + k) for k in range(4)]
    t = Trajectory(states, [1.0] * 7, stage_boundaries=(0, 4))
    prof = nsi_profile(t)
    assert [len(s.nsi_values) for s in prof] == [2, 2]
    assert [len(s.values) for s in prof] == [3, 3]


def test_profile_degenerate_stage():
    t = Trajectory([[1.0], [2.0], [3.0], [4.0], [5.0]], [1.0] * 4, stage_boundaries=(0, 2))
    prof = nsi_profile(t)
    assert prof[0].degenerate and math.isnan(prof[0].mu)
    assert not prof[1].degenerate


def test_pooled_means():
    a = profile([[1.0, 3.0]])
    b = profile([[5.0, 7.0]])
    pooled = pool_stage_means([a, b])
    assert pooled[0][0].mu == 4.0 and pooled[0][0].pooled
    assert pooled[1][0].mu == 4.0


# -- delta, proportion ---------------------------------------------------------------

def test_delta_examples():
    assert delta_estimate([profile([[1.0, 1.0, 1.0]])], ThresholdPair(0.5, 0.0)) == 0.0
    p = [profile([[1.0, 1.0, 4.0]])]
    assert delta_estimate(p, ThresholdPair(0.5, 0.0)) == 1.0
    assert delta_estimate(p, ThresholdPair(0.5, 10.0)) == 0.0


def test_delta_ties_count():
    # threshold exactly equal to the value: >= counts it
    assert delta_estimate([profile([[1.0, 3.0]])], (0.5, 3.0)) == 1.0


def test_delta_errors():
    with pytest.raises(ValidationError):
        delta_estimate([], (0.0, 0.0))
    with pytest.raises(ValidationError):
        ThresholdPair(-1.0, 0.0)
    with pytest.raises(ValidationError):
        ThresholdPair(0.0, float("inf"))


def test_proportion_examples():
    p = [profile([[1.0, 1.0, 4.0]])]
    assert stiffness_proportion(p, (0.5, 0.0), 3) == pytest.approx(1 / 3)
    assert stiffness_proportion(p, (0.5, 100.0), 3) == 0.0
    assert stiffness_proportion([profile([[2.0, 2.0, 2.0]])], (0.0, 0.0), 3) == 1.0


profile_sets = st.lists(
    st.lists(
        st.lists(st.floats(0.0, 50.0, allow_nan=False), min_size=1, max_size=6), min_size=1, max_size=3
    ),
    min_size=1,
    max_size=8,
)


@given(sets=profile_sets, m=st.tuples(st.floats(0, 20), st.floats(0, 60)))
@settings(max_examples=150)
def test_proportion_bounds(sets, m):
    profs = [profile(s) for s in sets]
    L = max(sum(len(x) for x in s) for s in sets)
    p = stiffness_proportion(profs, m, L)
    assert 0.0 <= p <= 1.0
    assert p * L >= delta_estimate(profs, m) - 1e-12


# -- TNS ------------------------------------------------------------------------------

def test_tns_constant_profiles_are_zero():
    profs = [profile([[2.0, 2.0, 2.0]]), profile([[0.5, 0.5]])]
    assert tns(profs, (10.0, 10.0, 16)).value == 0.0


def test_tns_saturated_box():
    profs = [profile([[1e-9] * 9 + [1e12]])]
    est = tns(profs, (3.0, 4.0, 32))
    assert est.value == pytest.approx(12.0)


def test_tns_validation():
    p = [profile([[1.0, 2.0]])]
    with pytest.raises(ValidationError):
        tns(p, (10.0, 10.0, 1))
    with pytest.raises(ValidationError):
        tns(p, (0.0, 10.0, 8))


def test_tns_refinement_reports_change():
    p = [profile([[1.0, 2.0, 5.0]]), profile([[0.3, 0.9, 1.1]])]
    levels = tns_refinement(p, (10.0, 10.0), (16, 32))
    assert levels[0].refinement_delta is None
    assert levels[1].refinement_delta == pytest.approx(
        abs(levels[1].value - levels[0].value) / max(levels[0].value, levels[1].value)
    )


@given(sets=profile_sets, n=st.sampled_from([8, 32, 128]))
@settings(max_examples=100)
def test_tns_midpoint_matches_exact_area(sets, n):
    assume(all(v > 0 for s in sets for stage in s for v in stage))
    profs = [profile(s) for s in sets]
    a, b = 6.0, 8.0
    exact = exact_tns(profs, a, b)
    # a monotone staircase crosses at most 2n cells of the grid
    assert abs(tns(profs, (a, b, n)).value - exact) <= 2 * a * b / n + 1e-9


def test_tns_converges_to_exact_area():
    rng = np.random.default_rng(1)
    profs = [profile([rng.lognormal(size=6).tolist(), rng.lognormal(size=4).tolist()]) for _ in range(40)]
    exact = exact_tns(profs, 5.0, 5.0)
    errs = [abs(tns(profs, (5.0, 5.0, n)).value - exact) for n in (32, 128, 512)]
    assert errs[2] < errs[0] and errs[2] < 1e-2 * exact


# -- bounds and cap -------------------------------------------------------------------

def test_cap_examples():
    assert lemma1_cap(TrajectoryBounds(1.0, 2.0, 1.0, 1.0)) == 5.0
    assert lemma1_cap(TrajectoryBounds(1.0, 3.0, 1.0, 1.0)) == 5.0
    with pytest.raises(DegenerateBoundsError):
        lemma1_cap(TrajectoryBounds(2.0, 2.0, 1.0, 1.0))
    with pytest.raises(ValidationError):
        TrajectoryBounds(2.0, 1.0, 1.0, 1.0)


def test_bounds_cover_included_transitions():
    rng = np.random.default_rng(4)
    trajs = random_trajectory_set(rng, n_inputs=5)
    b = trajectory_bounds(trajs, "recorded_step")
    assert 0.5 <= b.k1 <= b.k2 <= 2.0
    assert 0.2 <= b.a <= b.b <= 1.0


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_lemma1_zero_region_is_exact(seed):
    rng = np.random.default_rng(seed)
    trajs = random_trajectory_set(rng, n_inputs=6, blocks=3)
    for mode in ("unit_step", "recorded_step"):
        profs = [nsi_profile(t, mode) for t in trajs]
        cap = lemma1_cap(trajectory_bounds(trajs, mode))
        axis = np.nextafter(cap, np.inf) * np.array([1.0, 1.5, 3.0, 100.0])
        assert np.all(delta_grid(profs, axis, axis) == 0.0)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30)
def test_nsi_upper_bound_pointwise(seed):
    rng = np.random.default_rng(seed)
    for t in random_trajectory_set(rng, n_inputs=3):
        for k in range(len(t.states) - 1):
            if t.states[k].shape != t.states[k + 1].shape:
                continue
            ratio = np.linalg.norm(t.states[k + 1]) / np.linalg.norm(t.states[k])
            assert nsi(t, k, "unit_step") <= 1.0 + ratio + 1e-12


def test_nsi_upper_bound_equality_on_antiparallel_states():
    t = Trajectory([[1.0, 2.0], [-2.0, -4.0]], [1.0])
    assert nsi(t, 0) == pytest.approx(1.0 + 2.0)
