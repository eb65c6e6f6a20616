import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stiffkit.datasets import DATASET_KINDS, Dataset, synth_dataset
from stiffkit.errors import ValidationError


@pytest.mark.parametrize("kind", DATASET_KINDS)
def test_same_seed_gives_identical_data(kind):
    a, b = synth_dataset(kind, n=100, seed=3), synth_dataset(kind, n=100, seed=3)
    np.testing.assert_array_equal(a.X_train, b.X_train)
    np.testing.assert_array_equal(a.y_test, b.y_test)
    c = synth_dataset(kind, n=100, seed=4)
    assert not np.array_equal(a.X_train, c.X_train)


@given(kind=st.sampled_from(DATASET_KINDS), n=st.integers(20, 400), seed=st.integers(0, 10_000))
@settings(max_examples=40)
def test_split_and_standardisation(kind, n, seed):
    ds = synth_dataset(kind, n=n, noise=0.2, seed=seed)
    assert len(ds.X_train) == round(0.8 * n) and len(ds.X_train) + len(ds.X_test) == n
    np.testing.assert_allclose(ds.X_train.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(ds.X_train.std(axis=0), 1.0, rtol=1e-12)
    assert set(np.unique(np.r_[ds.y_train, ds.y_test])) <= set(range(ds.num_classes))
    assert ds.input_dim == 2


def test_noise_free_blobs_are_linearly_separable():
    ds = synth_dataset("blobs", n=300, noise=0.0, seed=1, classes=2)
    X = np.r_[ds.X_train, ds.X_test]
    y = np.r_[ds.y_train, ds.y_test]
    # the two class means define a separating hyperplane
    m0, m1 = X[y == 0].mean(axis=0), X[y == 1].mean(axis=0)
    w = m1 - m0
    b = -w @ (m0 + m1) / 2
    assert np.all((X @ w + b > 0) == (y == 1))


def test_class_defaults():
    assert synth_dataset("blobs", n=30).num_classes == 3
    assert synth_dataset("moons", n=30).num_classes == 2
    assert synth_dataset("spirals", n=30, classes=3).num_classes == 3


@pytest.mark.parametrize("kwargs", [dict(kind="circles"), dict(kind="blobs", n=19)])
def test_bad_arguments(kwargs):
    with pytest.raises(ValidationError):
        synth_dataset(**kwargs)


def test_dict_round_trip():
    ds = synth_dataset("moons", n=40, seed=2)
    back = Dataset.from_dict(ds.to_dict())
    assert back.name == ds.name and back.num_classes == ds.num_classes
    np.testing.assert_array_equal(back.X_train, ds.X_train)
    np.testing.assert_array_equal(back.y_test, ds.y_test)
