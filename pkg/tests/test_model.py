import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clustermio.errors import (
    EmptyCluster,
    EmptyClusterWarning,
    LengthMismatch,
    MissingAuxiliary,
    ShapeMismatch,
    UnknownLabel,
)
from clustermio.model import (
    ClusteredDataset,
    build_extended_design,
    concat,
    design_for,
    one_hot_assignment,
    split_coefficients,
)


def test_one_hot_basic():
    A = one_hot_assignment(["c1", "c1", "c2"], ["c1", "c2"])
    np.testing.assert_array_equal(A, [[1, 0], [1, 0], [0, 1]])


def test_one_hot_permutation():
    A = one_hot_assignment(["c2", "c1"], ["c1", "c2"])
    np.testing.assert_array_equal(A, [[0, 1], [1, 0]])


def test_one_hot_counts(rng):
    labels = rng.integers(0, 4, size=200)
    A = one_hot_assignment(labels, [0, 1, 2, 3])
    assert np.all(A.sum(axis=1) == 1)
    assert A.sum() == 200
    for j in range(4):
        assert A[:, j].sum() == np.sum(labels == j)


def test_one_hot_unknown_label():
    with pytest.raises(UnknownLabel):
        one_hot_assignment(["a", "z"], ["a", "b"])


def test_one_hot_empty_cluster_policy():
    with pytest.warns(EmptyClusterWarning):
        one_hot_assignment(["a", "a"], ["a", "b"])
    with pytest.raises(EmptyCluster):
        one_hot_assignment(["a", "a"], ["a", "b"], empty="error")


def test_design_q1_by_hand():
    data = ClusteredDataset(X=np.ones((2, 1)), y=[0, 0], labels=[0, 1])
    d = build_extended_design(data, np.eye(2), q=1)
    np.testing.assert_array_equal(d.Xt, [[1, 1, 0], [1, 0, 1]])
    assert (d.p, d.K, d.q, d.n_columns) == (1, 2, 1, 3)


def test_design_q2_by_hand():
    data = ClusteredDataset(X=[[1.0], [2.0]], y=[0, 0], labels=[0, 1], z=[3.0, 4.0])
    d = build_extended_design(data, np.eye(2), q=2)
    np.testing.assert_array_equal(d.Xt, [[1, 1, 0, 3, 0], [2, 0, 1, 0, 4]])
    np.testing.assert_array_equal(d.block_index, [0, 1, 1, 2, 2])
    assert d.block_slice(2) == slice(3, 5)


def test_design_q2_matches_loop(rng):
    n, p, K = 50, 10, 4
    labels = rng.integers(0, K, size=n)
    labels[:K] = np.arange(K)
    z = rng.normal(size=n)
    data = ClusteredDataset(X=rng.normal(size=(n, p)), y=rng.normal(size=n), labels=labels, z=z)
    d = design_for(data, cluster_order=list(range(K)), q=2)
    for j in range(K):
        for i in range(n):
            assert d.Xt[i, p + K + j] == (z[i] if labels[i] == j else 0.0)


def test_design_q2_needs_z():
    data = ClusteredDataset(X=np.ones((2, 1)), y=[0, 0], labels=[0, 1])
    with pytest.raises(MissingAuxiliary):
        build_extended_design(data, np.eye(2), q=2)


def test_split_coefficients_examples():
    s = split_coefficients([1.0, 2.0, 3.0], p=1, K=2, q=1)
    np.testing.assert_array_equal(s.beta, [1])
    np.testing.assert_array_equal(s.Gamma, [[2, 3]])
    z = split_coefficients(np.zeros(11), p=5, K=3, q=2)
    assert not z.beta.any() and not z.Gamma.any() and z.Gamma.shape == (2, 3)
    with pytest.raises(LengthMismatch):
        split_coefficients(np.zeros(4), p=1, K=2, q=1)


@given(st.integers(0, 6), st.integers(1, 6), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_split_round_trip(p, K, q, seed):
    v = np.random.default_rng(seed).normal(size=p + q * K)
    np.testing.assert_array_equal(split_coefficients(v, p, K, q).concatenate(), v)


@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 2), st.integers(0, 2**31 - 1))
def test_design_reproduces_offset_model(p, K, q, seed):
    rng = np.random.default_rng(seed)
    n = 3 * K
    labels = rng.permutation(np.repeat(np.arange(K), 3))
    z = rng.normal(size=n)
    data = ClusteredDataset(X=rng.normal(size=(n, p)), y=np.zeros(n), labels=labels, z=z)
    order = data.cluster_order()
    d = design_for(data, order, q=q)
    v = rng.normal(size=p + q * K)
    s = split_coefficients(v, p, K, q)
    codes = np.array([order.index(l) for l in labels])
    expect = data.X @ s.beta + s.Gamma[0, codes]
    if q == 2:
        expect = expect + z * s.Gamma[1, codes]
    np.testing.assert_allclose(d.Xt @ v, expect, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(d.Xt, design_for(data, order, q=q).Xt)


def test_dataset_validation():
    with pytest.raises(LengthMismatch):
        ClusteredDataset(X=np.zeros((3, 2)), y=np.zeros(2), labels=[0, 0, 1])
    with pytest.raises(ShapeMismatch):
        ClusteredDataset(X=[[np.nan, 1.0]], y=[0.0], labels=[0])
    with pytest.raises(LengthMismatch):
        ClusteredDataset(X=np.zeros((2, 1)), y=np.zeros(2), labels=[0, 1], z=[1.0])
    with pytest.raises(ValueError):
        ClusteredDataset(X=np.zeros((2, 1)), y=np.zeros(2), labels=[0, 1], role=["train", "holdout"])


def test_dataset_is_read_only():
    d = ClusteredDataset(X=np.zeros((2, 1)), y=np.zeros(2), labels=[0, 1])
    with pytest.raises(ValueError):
        d.X[0, 0] = 1.0


def test_roles_order_and_intercept():
    d = ClusteredDataset(X=np.arange(8.0).reshape(4, 2), y=np.arange(4.0), labels=["b", "a", "b", "c"],
                         role=["train", "validation", "train", "test"])
    assert d.cluster_order() == ["b", "a", "c"]
    assert d.with_role("train").n == 2
    assert d.with_role("train", "validation").n == 3
    w = d.with_intercept()
    assert w.feature_names[0] == "(intercept)" and np.all(w.X[:, 0] == 1) and w.p == 3
    both = concat([d.with_role("train"), d.with_role("test")])
    assert both.n == 3 and list(both.labels) == ["b", "b", "c"]
