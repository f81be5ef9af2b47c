import numpy as np
import pytest

from ambclab.cmnet import TrainConfig, build_cmnet, save_checkpoint
from ambclab.rng import substream
from ambclab.sweep import (
    CSV_HEADER,
    DETECTOR_NAMES,
    ExperimentConfig,
    PathLossParams,
    emit_csv,
    fixed_params,
    make_ber_point,
    params_at,
    preset,
    read_csv,
    run_ber_sweep,
    train_base_models,
    zeta_from_distance,
)
from ambclab.sweep import _run_group, _tasks_for, _worker_init


def run_sweep_tallied(cfg):
    """run_ber_sweep twin that also returns per-frame-group error counts.

    Returns ``(points, tallies)`` where ``tallies[(detector, point_idx)]``
    lists ``(errors, trials)`` per frame group in group order.  Every block
    in a group shares one channel draw, so sweep BER estimates are clustered
    samples; the per-group counts are what a standard-error estimate has to
    be built from.  Runs the same tasks as run_ber_sweep, sequentially and
    in-process.
    """
    bases = train_base_models(cfg)
    _worker_init(cfg, bases)
    tallies = {}
    for task in _tasks_for(cfg):
        point_idx, counts = _run_group(task)
        for det, (errors, total) in counts.items():
            tallies.setdefault((det, point_idx), []).append((errors, total))
    points = []
    for det in sorted(set(cfg.detectors)):
        for point_idx, value in enumerate(cfg.sweep_values):
            groups = tallies[(det, point_idx)]
            points.append(make_ber_point(det, cfg.sweep_var, value,
                                         sum(t for _, t in groups),
                                         sum(e for e, _ in groups)))
    return points, tallies


def _tiny_config(**kw):
    base = dict(
        m=6, n=8, snr_db=6.0, zeta_db=-5.0, source_kind="psk", q=4,
        num_symbols=12, pilot_count=4,
        sweep_var="snr_db", sweep_values=(2.0, 6.0),
        trials=32, detectors=("lrt", "cmnet", "ed"), seed=7, workers=1,
        transfer_every=2, offline_count=200,
        offline_cfg=TrainConfig(2, 64, 1e-3),
        transfer_cfg=TrainConfig(2, 64, 2e-4),
        target_count=64, aug_sigma2=1e-3, ed_cal_trials=1000)
    base.update(kw)
    return ExperimentConfig(**base)


def test_path_loss_reference_value():
    pl = PathLossParams()  # 900 MHz, 1 m reference
    assert pl.beta == pytest.approx(7.0265e-4, rel=1e-3)
    assert zeta_from_distance(pl, 1.0) == pytest.approx(pl.beta, rel=1e-12)


def test_path_loss_doubling_ratio():
    pl = PathLossParams()
    ratio = zeta_from_distance(pl, 2.4) / zeta_from_distance(pl, 1.2)
    assert ratio == pytest.approx(2.0 ** -2.7, rel=1e-12)


def test_path_loss_rejects_bad_inputs():
    with pytest.raises(ValueError):
        zeta_from_distance(PathLossParams(), 0.0)
    with pytest.raises(ValueError):
        zeta_from_distance(PathLossParams(), -1.0)
    with pytest.raises(ValueError):
        PathLossParams(f_c=-1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        _tiny_config(sweep_var="bandwidth")
    with pytest.raises(ValueError):
        _tiny_config(sweep_values=())
    with pytest.raises(ValueError):
        _tiny_config(trials=0)
    with pytest.raises(ValueError):
        _tiny_config(detectors=("lrt", "oracle"))
    with pytest.raises(ValueError):
        _tiny_config(detectors=())
    with pytest.raises(ValueError):
        _tiny_config(pilot_count=12)
    with pytest.raises(ValueError):
        _tiny_config(workers=0)
    with pytest.raises(ValueError):
        _tiny_config(transfer_every=0)
    assert _tiny_config().data_per_frame == 8


def test_params_at_each_sweep_variable():
    cfg = _tiny_config()
    p = params_at(cfg, -2.0)
    assert (p.snr_db, p.n, p.m, p.zeta_db) == (-2.0, 8, 6, -5.0)

    p = params_at(_tiny_config(sweep_var="n", sweep_values=(16,)), 16)
    assert (p.n, p.snr_db) == (16, 6.0)
    assert isinstance(p.n, int)

    p = params_at(_tiny_config(sweep_var="m", sweep_values=(10,)), 10)
    assert (p.m, p.n) == (10, 8)

    p = params_at(_tiny_config(sweep_var="zeta_db", sweep_values=(-12.5,)), -12.5)
    assert p.zeta_db == -12.5

    cfg = _tiny_config(sweep_var="distance_m", sweep_values=(2.0,))
    p = params_at(cfg, 2.0)
    expected = 10.0 * np.log10(zeta_from_distance(cfg.path_loss, 2.0))
    assert p.zeta_db == pytest.approx(expected, rel=1e-12)
    assert p.snr_db == 6.0  # direct-link SNR is untouched by tag distance


def test_fixed_params_reflects_config():
    p = fixed_params(_tiny_config())
    assert (p.m, p.n, p.snr_db, p.zeta_db) == (6, 8, 6.0, -5.0)
    assert p.source.kind == "psk"


def test_make_ber_point_interval():
    pt = make_ber_point("lrt", "snr_db", 4.0, 400, 100)
    assert pt.ber == pytest.approx(0.25)
    assert pt.ci95 == pytest.approx(1.96 * np.sqrt(0.25 * 0.75 / 400))
    zero = make_ber_point("ed", "snr_db", 4.0, 400, 0)
    assert (zero.ber, zero.ci95) == (0.0, 0.0)


def test_csv_round_trip_preserves_every_digit(tmp_path):
    points = [make_ber_point("cmnet", "snr_db", v, 977, e)
              for v, e in ((-2.0, 481), (0.0, 233), (1e-3, 7))]
    points += [make_ber_point("lrt", "snr_db", -2.0, 977, 399)]
    path = tmp_path / "sweep.csv"
    emit_csv(points, path)
    text = path.read_text()
    assert text.splitlines()[0] == CSV_HEADER
    assert text.endswith("\n")
    assert read_csv(path) == sorted(points,
                                    key=lambda p: (p.detector, p.sweep_value))


def test_csv_orders_rows_by_detector_then_value(tmp_path):
    points = [make_ber_point("lrt", "n", 40.0, 10, 1),
              make_ber_point("ed", "n", 5.0, 10, 2),
              make_ber_point("lrt", "n", 5.0, 10, 3)]
    path = tmp_path / "sweep.csv"
    emit_csv(points, path)
    rows = path.read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["ed", "lrt", "lrt"]
    assert [float(r.split(",")[2]) for r in rows] == [5.0, 5.0, 40.0]


def test_csv_rejects_empty_point_list(tmp_path):
    with pytest.raises(ValueError):
        emit_csv([], tmp_path / "empty.csv")


def test_presets_cover_the_scenario_grid():
    fig7a = preset("fig7a")
    assert fig7a.source_kind == "psk" and fig7a.q == 4
    assert fig7a.sweep_var == "snr_db"
    assert fig7a.sweep_values == (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    assert (fig7a.m, fig7a.n, fig7a.zeta_db) == (8, 20, -20.0)
    assert (fig7a.num_symbols, fig7a.pilot_count) == (250, 10)

    assert preset("fig7b").source_kind == "gaussian"

    fig8a = preset("fig8a")
    assert (fig8a.sweep_var, fig8a.sweep_values) == ("n", (5, 10, 20, 40))
    assert fig8a.snr_db == 6.0

    fig8b = preset("fig8b")
    assert (fig8b.sweep_var, fig8b.sweep_values) == ("m", (6, 8, 10, 12))
    assert (fig8b.n, fig8b.snr_db) == (25, 5.0)

    fig9a = preset("fig9a")
    assert fig9a.sweep_var == "zeta_db"
    assert fig9a.sweep_values == (-20.0, -17.5, -15.0, -12.5, -10.0, -7.5, -5.0)
    assert (fig9a.n, fig9a.snr_db) == (10, 2.0)

    fig9b = preset("fig9b")
    assert fig9b.sweep_var == "distance_m"
    assert fig9b.sweep_values == (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0)
    assert (fig9b.n, fig9b.snr_db) == (20, 28.0)

    with pytest.raises(ValueError):
        preset("fig1")


def test_base_model_checkpoint_override(tmp_path):
    model = build_cmnet(6, substream(6, 0))
    path = tmp_path / "base.ckpt"
    save_checkpoint(model, path)
    cfg = _tiny_config(checkpoint=str(path))
    bases = train_base_models(cfg)
    assert set(bases) == {(6, 8)}
    assert bases[(6, 8)] == path.read_bytes()

    mismatched = _tiny_config(sweep_var="m", sweep_values=(8, 10),
                              checkpoint=str(path))
    with pytest.raises(ValueError):
        train_base_models(mismatched)


def test_base_models_skipped_without_cmnet():
    assert train_base_models(_tiny_config(detectors=("lrt", "ed"))) == {}


def test_tallied_runner_matches_pooled_sweep():
    cfg = _tiny_config()
    points, tallies = run_sweep_tallied(cfg)
    assert points == run_ber_sweep(cfg)
    # two groups of 2 frames x 8 decisions per point, summing to the point
    for (det, point_idx), groups in tallies.items():
        assert [t for _, t in groups] == [16, 16]
        point = next(p for p in points
                     if p.detector == det
                     and p.sweep_value == cfg.sweep_values[point_idx])
        assert sum(e for e, _ in groups) == point.errors


def test_sweep_results_do_not_depend_on_worker_count(tmp_path):
    cfg = _tiny_config()
    single = run_ber_sweep(cfg)
    double = run_ber_sweep(ExperimentConfig(**{**cfg.__dict__, "workers": 2}))
    assert single == double

    p1, p2 = tmp_path / "w1.csv", tmp_path / "w2.csv"
    emit_csv(single, p1)
    emit_csv(double, p2)
    assert p1.read_bytes() == p2.read_bytes()

    for pt in single:
        assert pt.detector in DETECTOR_NAMES
        assert pt.trials == 32  # ceil(32/8) frames of 8 decisions each
        assert 0.0 <= pt.ber <= 1.0
    assert len(single) == 6  # 3 detectors x 2 grid points
