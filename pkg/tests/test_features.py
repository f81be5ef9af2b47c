import numpy as np
import pytest

from ambclab.features import (
    batch_block_features,
    block_feature,
    sample_covariance,
    to_feature_tensor,
)
from ambclab.rng import substream
from ambclab.simcore import _crandn


def test_identity_columns():
    r = sample_covariance(np.eye(2, dtype=complex))
    np.testing.assert_allclose(r, 0.5 * np.eye(2), atol=1e-15)


def test_single_column_rank_one():
    x = np.array([[1 + 1j], [2 - 1j]])
    r = sample_covariance(x)
    np.testing.assert_allclose(r, np.outer(x[:, 0], x[:, 0].conj()), atol=1e-15)


def test_large_sample_diagonal_limit():
    rng = substream(0, 0)
    sigma2 = 2.5
    x = np.sqrt(sigma2) * _crandn(rng, 8, 100_000)
    r = sample_covariance(x)
    target = sigma2 * np.eye(8)
    assert np.linalg.norm(r - target) / np.linalg.norm(target) < 0.05


def test_covariance_is_hermitian_psd():
    rng = substream(0, 1)
    for _ in range(1000):
        x = _crandn(rng, 4, 6)
        r = sample_covariance(x)
        np.testing.assert_allclose(r, r.conj().T, atol=1e-12)
        assert np.linalg.eigvalsh(r).min() >= -1e-10


def test_trace_equals_mean_column_energy():
    rng = substream(0, 2)
    x = _crandn(rng, 5, 7)
    r = sample_covariance(x)
    energy = np.sum(np.abs(x) ** 2)
    assert np.trace(r).real == pytest.approx(energy / 7, rel=1e-12)


def test_covariance_input_validation():
    with pytest.raises(ValueError):
        sample_covariance(np.zeros(4))
    with pytest.raises(ValueError):
        sample_covariance(np.zeros((3, 0)))


def test_feature_tensor_identity():
    t = to_feature_tensor(np.eye(3, dtype=complex))
    np.testing.assert_array_equal(t[:, :, 0], np.eye(3))
    np.testing.assert_array_equal(t[:, :, 1], np.zeros((3, 3)))


def test_feature_tensor_entry_placement():
    r = np.zeros((2, 2), dtype=complex)
    r[0, 1] = 1 + 2j
    r[1, 0] = 1 - 2j
    t = to_feature_tensor(r)
    assert t[0, 1, 0] == 1.0
    assert t[0, 1, 1] == 2.0


def test_feature_tensor_round_trip():
    rng = substream(0, 3)
    x = _crandn(rng, 6, 9)
    r = sample_covariance(x)
    t = to_feature_tensor(r)
    np.testing.assert_array_equal(t[:, :, 0] + 1j * t[:, :, 1], r)


def test_feature_tensor_channel_symmetries():
    rng = substream(0, 4)
    t = block_feature(_crandn(rng, 6, 9))
    np.testing.assert_allclose(t[:, :, 0], t[:, :, 0].T, atol=1e-12)
    np.testing.assert_allclose(t[:, :, 1], -t[:, :, 1].T, atol=1e-12)
    np.testing.assert_allclose(np.diag(t[:, :, 1]), 0.0, atol=1e-12)


def test_feature_tensor_rejects_non_square():
    with pytest.raises(ValueError):
        to_feature_tensor(np.zeros((2, 3), dtype=complex))


def test_batch_matches_per_block():
    rng = substream(0, 5)
    xs = _crandn(rng, 10, 6, 9)
    batch = batch_block_features(xs)
    singles = np.stack([block_feature(x) for x in xs])
    np.testing.assert_allclose(batch, singles, atol=1e-13)
