import numpy as np
import pytest

from ambclab.cmnet import (
    SOURCE,
    STAGE_FRESH,
    STAGE_PRETRAINED,
    STAGE_TRANSFERRED,
    TARGET,
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    CmnetModel,
    LabeledCovarianceSet,
    TrainConfig,
    build_cmnet,
    checkpoint_bytes,
    detect,
    detect_batch,
    evaluate_accuracy,
    evaluate_loss,
    gradcheck,
    labels_to_onehot,
    load_checkpoint,
    model_from_bytes,
    save_checkpoint,
    train_offline,
    transfer_finetune,
)
from ambclab.features import to_feature_tensor
from ambclab.nn.losses import softmax
from ambclab.rng import substream


def _random_features(rng, count, m, dtype=np.float64):
    """Random symmetric-real / antisymmetric-imag feature tensors."""
    out = np.empty((count, m, m, 2), dtype=dtype)
    for i in range(count):
        a = rng.standard_normal((m, m))
        b = rng.standard_normal((m, m))
        out[i, :, :, 0] = (a + a.T) / 2
        out[i, :, :, 1] = (b - b.T) / 2
    return out


def _source_set(rng, count, m, dtype=np.float32):
    features = _random_features(rng, count, m, dtype=dtype)
    labels = (1 - np.arange(count) % 2).astype(int)
    return LabeledCovarianceSet(features, labels, SOURCE)


def test_architecture_flatten_dims():
    assert build_cmnet(8, substream(4, 0)).f1.w.shape == (128, 32 * 4 * 4)
    assert build_cmnet(12, substream(4, 0)).f1.w.shape == (128, 32 * 6 * 6)


def test_architecture_rejects_bad_antenna_counts():
    for m in (7, 2, 3, 0):
        with pytest.raises(ValueError):
            build_cmnet(m, substream(4, 0))


def test_scores_normalized_and_eval_repeatable():
    model = build_cmnet(8, substream(4, 1))
    feats = _random_features(substream(4, 2), 6, 8)
    scores = model.forward_scores(feats)
    assert scores.shape == (6, 2)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(scores, model.forward_scores(feats))


def test_feature_shape_checking():
    model = build_cmnet(8, substream(4, 3))
    single = _random_features(substream(4, 4), 1, 8)[0]
    batch = model.forward_scores(single)  # 3-D promotes to a batch of one
    assert batch.shape == (1, 2)
    with pytest.raises(ValueError):
        model.forward_scores(np.zeros((6, 6, 2)))
    with pytest.raises(ValueError):
        model.forward_scores(np.zeros((1, 8, 8, 3)))


def test_bias_free_network_is_scale_covariant():
    # With all biases zero the conv stack is homogeneous of degree 1, so the
    # logits of sigma2 * I are exactly sigma2 times the logits of I; an
    # independent dense-weight evaluation confirms the factorization.
    model = CmnetModel(8, dtype=np.float64, rng=substream(4, 5))
    for layer in (model.c1, model.c2, model.f1, model.f2):
        layer.b[:] = 0.0
    u = model.prefix_forward(to_feature_tensor(np.eye(8, dtype=complex)))[0]
    for sigma2 in (0.5, 2.0, 7.0):
        got = model.forward_scores(
            to_feature_tensor(sigma2 * np.eye(8, dtype=complex)))[0]
        hidden = np.maximum(model.f1.w @ (sigma2 * u), 0.0)
        expected = softmax((model.f2.w @ hidden)[None, :])[0]
        np.testing.assert_allclose(got, expected, atol=1e-9)


def test_fresh_model_starts_at_coin_flip():
    data = _source_set(substream(4, 7), 200, 8)
    # Uniform scores cost exactly ln 2; rng=None leaves every weight at zero,
    # so the logits are identically zero and the scores exactly uniform.
    uniform = CmnetModel(8)
    assert evaluate_loss(uniform, data) == pytest.approx(np.log(2.0), abs=1e-7)
    # A randomly initialized model knows nothing about the labels either: its
    # loss can only sit above the uniform baseline and its accuracy at chance.
    model = build_cmnet(8, substream(4, 6))
    assert evaluate_loss(model, data) > np.log(2.0) - 0.02
    assert abs(evaluate_accuracy(model, data) - 0.5) < 0.12


def test_offline_training_memorizes_tiny_set():
    model = build_cmnet(8, substream(4, 8), dtype=np.float64)
    data = _source_set(substream(4, 9), 2, 8, dtype=np.float64)
    report = train_offline(model, data, TrainConfig(200, 2, 1e-3), substream(4, 10))
    assert report.final_loss < 0.01
    assert model.stage == STAGE_PRETRAINED
    assert len(report.epoch_losses) == 200


def test_low_loss_implies_high_train_accuracy():
    model = build_cmnet(8, substream(4, 11), dtype=np.float64)
    data = _source_set(substream(4, 12), 40, 8, dtype=np.float64)
    report = train_offline(model, data, TrainConfig(300, 40, 3e-3), substream(4, 13))
    assert report.final_loss < 0.05
    assert evaluate_accuracy(model, data) >= 0.99


def test_stage_and_domain_gating():
    rng = substream(4, 14)
    source = _source_set(substream(4, 15), 4, 8)
    target = LabeledCovarianceSet(source.features, source.labels, TARGET)
    cfg = TrainConfig(1, 4, 1e-3)

    model = build_cmnet(8, rng)
    with pytest.raises(ValueError):
        transfer_finetune(model, target, cfg, rng)  # not pretrained yet
    with pytest.raises(ValueError):
        train_offline(model, target, cfg, rng)  # wrong domain
    empty = LabeledCovarianceSet(np.zeros((0, 8, 8, 2)), np.zeros(0, dtype=int),
                                 SOURCE)
    with pytest.raises(ValueError):
        train_offline(model, empty, cfg, rng)

    train_offline(model, source, cfg, rng)
    with pytest.raises(ValueError):
        train_offline(model, source, cfg, rng)  # no longer fresh
    with pytest.raises(ValueError):
        transfer_finetune(model, source, cfg, rng)  # wrong domain
    empty_target = LabeledCovarianceSet(np.zeros((0, 8, 8, 2)),
                                        np.zeros(0, dtype=int), TARGET)
    with pytest.raises(ValueError):
        transfer_finetune(model, empty_target, cfg, rng)


def test_source_sets_must_be_balanced():
    feats = np.zeros((10, 8, 8, 2))
    labels = np.ones(10, dtype=int)
    with pytest.raises(ValueError):
        LabeledCovarianceSet(feats, labels, SOURCE)
    LabeledCovarianceSet(feats, labels, TARGET)  # target sets are unconstrained


def test_zero_epoch_transfer_changes_nothing_but_state():
    model = build_cmnet(8, substream(4, 16))
    source = _source_set(substream(4, 17), 8, 8)
    train_offline(model, source, TrainConfig(1, 8, 1e-3), substream(4, 18))
    target = LabeledCovarianceSet(source.features[:4], source.labels[:4], TARGET)
    probe = _random_features(substream(4, 19), 3, 8, dtype=np.float32)
    before = model.forward_scores(probe)
    transfer_finetune(model, target, TrainConfig(0, 4, 1e-4), substream(4, 20))
    assert model.stage == STAGE_TRANSFERRED
    assert model.freeze_mask == {"c1": True, "c2": True, "f1": False, "f2": False}
    np.testing.assert_array_equal(model.forward_scores(probe), before)


def test_transfer_keeps_conv_parameters_bitwise():
    model = build_cmnet(8, substream(4, 21))
    source = _source_set(substream(4, 22), 16, 8)
    train_offline(model, source, TrainConfig(2, 8, 1e-3), substream(4, 23))
    c1w, c2w = model.c1.w.tobytes(), model.c2.w.tobytes()
    f1w = model.f1.w.tobytes()
    target = LabeledCovarianceSet(source.features[:6], source.labels[:6], TARGET)
    transfer_finetune(model, target, TrainConfig(10, 6, 1e-3), substream(4, 24))
    assert model.c1.w.tobytes() == c1w
    assert model.c2.w.tobytes() == c2w
    assert model.f1.w.tobytes() != f1w  # the head actually moved


def test_detect_score_ratio_and_tie():
    model = build_cmnet(8, substream(4, 25))
    for layer in (model.c1, model.c2, model.f1, model.f2):
        layer.w[:] = 0.0
        layer.b[:] = 0.0
    r = np.eye(8, dtype=complex)
    bit, ratio = detect(model, r)
    assert (bit, ratio) == (0, 1.0)  # exact tie resolves to the resting bit
    model.f2.b[:] = [1.0, 0.0]
    bit, ratio = detect(model, r)
    assert bit == 1
    assert ratio == pytest.approx(np.e, rel=1e-6)
    feats = np.stack([to_feature_tensor(r)] * 3)
    np.testing.assert_array_equal(detect_batch(model, feats), [1, 1, 1])


def test_detect_accepts_raw_covariance_or_feature():
    model = build_cmnet(8, substream(4, 26))
    r = np.eye(8, dtype=complex) * 1.7
    assert detect(model, r) == detect(model, to_feature_tensor(r))


def test_labels_to_onehot_index_convention():
    onehot = labels_to_onehot(np.array([1, 0]))
    np.testing.assert_array_equal(onehot, [[1.0, 0.0], [0.0, 1.0]])


def test_clone_is_independent():
    model = build_cmnet(8, substream(4, 27))
    probe = _random_features(substream(4, 28), 2, 8, dtype=np.float32)
    twin = model.clone()
    np.testing.assert_array_equal(model.forward_scores(probe),
                                  twin.forward_scores(probe))
    twin.f2.w[:] = 0.0
    assert not np.array_equal(model.f2.w, twin.f2.w)


def test_gradcheck_small_model():
    model = CmnetModel(8, dtype=np.float64, rng=substream(4, 29))
    feats = _random_features(substream(4, 30), 4, 8)
    labels = np.array([1, 0, 1, 0])
    errors = gradcheck(model, feats, labels)
    assert set(errors) == {"c1.w", "c1.b", "c2.w", "c2.b",
                           "f1.w", "f1.b", "f2.w", "f2.b"}
    assert max(errors.values()) < 1e-3


def test_gradcheck_rejects_float32():
    model = build_cmnet(8, substream(4, 31))
    feats = _random_features(substream(4, 32), 2, 8, dtype=np.float32)
    with pytest.raises(TypeError):
        gradcheck(model, feats, np.array([1, 0]))


def _trained_model():
    model = build_cmnet(8, substream(4, 33), seed=77)
    source = _source_set(substream(4, 34), 8, 8)
    train_offline(model, source, TrainConfig(1, 8, 1e-3), substream(4, 35))
    target = LabeledCovarianceSet(source.features[:4], source.labels[:4], TARGET)
    transfer_finetune(model, target, TrainConfig(2, 4, 1e-4), substream(4, 36))
    return model


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = _trained_model()
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    for (name, src), (_, dst) in zip(model.named_param_layers(),
                                     back.named_param_layers()):
        assert src.w.tobytes() == dst.w.tobytes(), name
        assert src.b.tobytes() == dst.b.tobytes(), name
    assert back.stage == STAGE_TRANSFERRED
    assert back.seed == 77
    assert back.freeze_mask == model.freeze_mask
    assert back.provenance == model.provenance
    assert checkpoint_bytes(back) == checkpoint_bytes(model)


def test_checkpoint_rejects_bad_magic():
    data = bytearray(checkpoint_bytes(_trained_model()))
    data[0] ^= 0xFF
    with pytest.raises(CheckpointFormatError):
        model_from_bytes(bytes(data))


def test_checkpoint_rejects_unknown_version():
    data = bytearray(checkpoint_bytes(_trained_model()))
    data[8:10] = (2).to_bytes(2, "little")
    with pytest.raises(CheckpointVersionError):
        model_from_bytes(bytes(data))


def test_checkpoint_rejects_truncation():
    data = checkpoint_bytes(_trained_model())
    for cut in (5, len(data) // 2, len(data) - 1):
        with pytest.raises(CheckpointTruncatedError):
            model_from_bytes(data[:cut])


def test_checkpoint_rejects_trailing_bytes():
    data = checkpoint_bytes(_trained_model())
    with pytest.raises(CheckpointFormatError):
        model_from_bytes(data + b"\x00")


def test_checkpoint_rejects_shape_mismatch():
    # Re-declaring the antenna count changes the expected dense fan-in, so
    # the stored f1 tensor no longer fits.
    data = bytearray(checkpoint_bytes(_trained_model()))
    data[10:12] = (10).to_bytes(2, "little")
    with pytest.raises(CheckpointShapeError):
        model_from_bytes(bytes(data))


def test_checkpoint_restores_fresh_stage_too():
    model = build_cmnet(8, substream(4, 37))
    back = model_from_bytes(checkpoint_bytes(model))
    assert back.stage == STAGE_FRESH
    assert back.seed is None
