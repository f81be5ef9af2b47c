"""Monte Carlo BER sweeps with a deterministic worker pool.

A sweep varies one scenario knob (snr_db, n, m, zeta_db, or distance_m) over
a grid and measures each detector's bit error rate on the data symbols of
simulated frames.  Every frame group derives its random streams from the
master seed and the group counter alone, and all per-frame math runs inside
spawned worker processes whose BLAS is pinned to one thread, so the output
is byte-identical for any worker count.

Within one frame the channel is constant: the detectors get the true
channel (LRT), a calibration pass over it (energy detector), or a dense-head
fine-tune on the frame's pilot blocks (CMNet).  ``transfer_every`` lets k
consecutive frames share one channel draw and one fine-tune to amortize the
training cost.
"""
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import multiprocessing as mp

import numpy as np

from .cmnet import (
    SOURCE,
    LabeledCovarianceSet,
    TrainConfig,
    build_cmnet,
    checkpoint_bytes,
    detect_batch,
    model_from_bytes,
    offline_defaults,
    train_offline,
    transfer_finetune,
)
from .datasets import build_offline_dataset, build_online_dataset
from .detectors import (
    GaussianLrtDetector,
    ModulatedLrtDetector,
    calibrate_ed_threshold,
)
from .features import batch_block_features, to_feature_tensor
from .rng import substream
from .simcore import GAUSSIAN, PSK, AmbientSource, SimParams, _crandn, draw_channel, generate_frame

SPEED_OF_LIGHT = 299792458.0

# Stream tags: every random draw in a sweep lives under (seed, tag, ...).
_S_OFFLINE = 0
_S_CHANNEL = 1
_S_FRAME = 2
_S_EDCAL = 3
_S_AUG = 4
_S_TRANSFER = 5
_S_ASYMPTOTIC = 6

DETECTOR_NAMES = ("lrt", "cmnet", "ed")
SWEEP_VARS = ("snr_db", "n", "m", "zeta_db", "distance_m")


@dataclass(frozen=True)
class PathLossParams:
    """Free-space-anchored power law: zeta(d) = beta * (d/d0)^(-gamma)."""

    f_c: float = 900e6
    d0: float = 1.0
    gamma: float = 2.7

    def __post_init__(self):
        if self.f_c <= 0 or self.d0 <= 0:
            raise ValueError("carrier frequency and reference distance must be positive")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    @property
    def beta(self):
        """Reference ratio at d0: (wavelength / (4 pi d0))^2."""
        return (self.wavelength / (4.0 * np.pi * self.d0)) ** 2


def zeta_from_distance(path_loss, d):
    """Linear tag-path strength zeta at tag-reader distance d (meters)."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return path_loss.beta * (d / path_loss.d0) ** (-path_loss.gamma)


def sweep_transfer_defaults():
    """Per-frame fine-tune schedule used inside sweeps.

    Shorter and hotter than transfer_defaults(): the fine-tune repeats for
    every frame group of every grid point, and 12 epochs at lr 2e-4 over a
    2000-example target set reaches the same decisions as the long schedule
    at a fraction of the cost.
    """
    return TrainConfig(epochs=12, batch_size=64, lr=2e-4)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a BER sweep needs; immutable and picklable."""

    m: int = 8
    n: int = 20
    snr_db: float = 0.0
    zeta_db: float = -20.0
    source_kind: str = PSK
    q: int = 4
    num_symbols: int = 250
    pilot_count: int = 10
    sweep_var: str = "snr_db"
    sweep_values: tuple = (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    trials: int = 2000
    detectors: tuple = DETECTOR_NAMES
    seed: int = 0
    workers: int = 1
    transfer_every: int = 1
    offline_count: int = 10000
    offline_cfg: TrainConfig = field(default_factory=offline_defaults)
    transfer_cfg: TrainConfig = field(default_factory=sweep_transfer_defaults)
    target_count: int = 2000
    aug_sigma2: float = 1e-3
    ed_cal_trials: int = 2000
    path_loss: PathLossParams = field(default_factory=PathLossParams)
    checkpoint: str = ""

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {SWEEP_VARS}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be nonempty")
        if self.trials < 1:
            raise ValueError("trials must be positive")
        unknown = set(self.detectors) - set(DETECTOR_NAMES)
        if unknown or not self.detectors:
            raise ValueError(f"detectors must be a nonempty subset of {DETECTOR_NAMES}")
        if self.pilot_count >= self.num_symbols:
            raise ValueError("pilot_count must be smaller than num_symbols")
        if self.workers < 1 or self.transfer_every < 1:
            raise ValueError("workers and transfer_every must be positive")

    @property
    def data_per_frame(self):
        return self.num_symbols - self.pilot_count


def fixed_params(cfg):
    """SimParams of the config's fixed operating point (sweep grid ignored)."""
    return SimParams(m=cfg.m, n=cfg.n, snr_db=cfg.snr_db, zeta_db=cfg.zeta_db,
                     source=AmbientSource(kind=cfg.source_kind, q=cfg.q))


def params_at(cfg, value):
    """SimParams of the grid point at the given sweep value."""
    source = AmbientSource(kind=cfg.source_kind, q=cfg.q)
    kw = dict(m=cfg.m, n=cfg.n, snr_db=cfg.snr_db, zeta_db=cfg.zeta_db,
              source=source)
    if cfg.sweep_var == "distance_m":
        zeta = zeta_from_distance(cfg.path_loss, float(value))
        kw["zeta_db"] = 10.0 * math.log10(zeta)
    elif cfg.sweep_var in ("n", "m"):
        kw[cfg.sweep_var] = int(value)
    else:
        kw[cfg.sweep_var] = float(value)
    return SimParams(**kw)


@dataclass(frozen=True)
class BerPoint:
    """One detector's error count at one grid point."""

    detector: str
    sweep_var: str
    sweep_value: float
    trials: int
    errors: int
    ber: float
    ci95: float


def make_ber_point(detector, sweep_var, sweep_value, trials, errors):
    ber = errors / trials
    ci95 = 1.96 * math.sqrt(ber * (1.0 - ber) / trials)
    return BerPoint(detector=detector, sweep_var=sweep_var,
                    sweep_value=sweep_value, trials=trials, errors=errors,
                    ber=ber, ci95=ci95)


# --- offline base models -----------------------------------------------------

def _model_groups(cfg):
    """Map (m, n) -> list of point params sharing that antenna/sample shape.

    Points sharing a shape also share one offline base model, trained on a
    corpus that cycles through all of their operating points (a sweep over
    snr, zeta, or distance therefore pre-trains on the mixed grid).
    """
    groups = {}
    for value in cfg.sweep_values:
        p = params_at(cfg, value)
        groups.setdefault((p.m, p.n), []).append(p)
    return groups


def train_base_models(cfg, progress=None):
    """Train (or load) the pretrained base model bytes for each shape group."""
    if "cmnet" not in cfg.detectors:
        return {}
    groups = _model_groups(cfg)
    if cfg.checkpoint:
        with open(cfg.checkpoint, "rb") as fh:
            raw = fh.read()
        model = model_from_bytes(raw)
        for (m, _n) in groups:
            if m != model.m:
                raise ValueError(f"checkpoint is for m={model.m}, sweep needs m={m}")
        return {key: raw for key in groups}
    bases = {}
    for gi, (key, plist) in enumerate(sorted(groups.items())):
        if progress:
            progress(f"training offline base model for m={key[0]} n={key[1]}")
        corpus = build_offline_dataset(substream(cfg.seed, _S_OFFLINE, gi, 0),
                                       plist, cfg.offline_count)
        model = build_cmnet(key[0], substream(cfg.seed, _S_OFFLINE, gi, 1),
                            seed=cfg.seed)
        train_offline(model, corpus, cfg.offline_cfg,
                      substream(cfg.seed, _S_OFFLINE, gi, 2))
        bases[key] = checkpoint_bytes(model)
    return bases


# --- worker side -------------------------------------------------------------

_WORKER = {}


def _worker_init(cfg, bases):
    _WORKER["cfg"] = cfg
    _WORKER["models"] = {key: model_from_bytes(raw) for key, raw in bases.items()}


def _run_group(task):
    """Process one frame group: one channel draw, k frames, all detectors.

    Random streams depend only on (seed, tag, group counter), never on the
    grid point, so a sweep over snr or zeta reuses common random numbers
    across its points and trend comparisons are paired.
    """
    point_idx, value, group_idx, n_frames = task
    cfg = _WORKER["cfg"]
    params = params_at(cfg, value)
    ch = draw_channel(substream(cfg.seed, _S_CHANNEL, group_idx), params)
    frames = [generate_frame(substream(cfg.seed, _S_FRAME, group_idx, j), ch,
                             params, cfg.num_symbols, cfg.pilot_count)
              for j in range(n_frames)]
    xs = np.stack([b.x for fr in frames for b in fr.data_blocks])
    labels = np.array([b.label for fr in frames for b in fr.data_blocks])

    counts = {}
    if "lrt" in cfg.detectors:
        if params.source.kind == GAUSSIAN:
            det = GaussianLrtDetector.from_channel(ch, params.sigma_s2,
                                                   params.sigma_u2)
        else:
            det = ModulatedLrtDetector.from_channel(
                ch, params.effective_source().constellation(), params.sigma_u2)
        bits = (det.llr_batch(xs) > 0.0).astype(int)
        counts["lrt"] = (int((bits != labels).sum()), labels.size)
    if "ed" in cfg.detectors:
        det = calibrate_ed_threshold(ch, params, cfg.ed_cal_trials,
                                     substream(cfg.seed, _S_EDCAL, group_idx))
        bits = det.decide_batch(xs)
        counts["ed"] = (int((bits != labels).sum()), labels.size)
    if "cmnet" in cfg.detectors:
        model = _WORKER["models"][(params.m, params.n)].clone()
        target = build_online_dataset(substream(cfg.seed, _S_AUG, group_idx),
                                      frames[0], cfg.target_count,
                                      cfg.aug_sigma2)
        transfer_finetune(model, target, cfg.transfer_cfg,
                          substream(cfg.seed, _S_TRANSFER, group_idx))
        feats = batch_block_features(xs, dtype=model.dtype)
        bits = detect_batch(model, feats)
        counts["cmnet"] = (int((bits != labels).sum()), labels.size)
    return point_idx, counts


_PINNED_ENV = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")


def _tasks_for(cfg):
    frames_per_point = math.ceil(cfg.trials / cfg.data_per_frame)
    tasks = []
    for point_idx, value in enumerate(cfg.sweep_values):
        for group_idx in range(0, frames_per_point, cfg.transfer_every):
            n_frames = min(cfg.transfer_every, frames_per_point - group_idx)
            tasks.append((point_idx, value, group_idx // cfg.transfer_every,
                          n_frames))
    return tasks


def run_ber_sweep(cfg, progress=None):
    """Run the sweep; returns BerPoints ordered by detector then sweep value.

    All frame-level computation happens in spawned workers started with
    single-threaded BLAS (the environment is pinned before the spawn), so
    results do not depend on cfg.workers or the host's core count.
    """
    bases = train_base_models(cfg, progress=progress)
    tasks = _tasks_for(cfg)
    accum = {(pi, det): [0, 0] for pi in range(len(cfg.sweep_values))
             for det in cfg.detectors}

    saved_env = {k: os.environ.get(k) for k in _PINNED_ENV}
    for k in _PINNED_ENV:
        os.environ[k] = "1"
    try:
        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=cfg.workers, mp_context=ctx,
                                 initializer=_worker_init,
                                 initargs=(cfg, bases)) as pool:
            done = 0
            for point_idx, counts in pool.map(_run_group, tasks):
                for det, (errors, total) in counts.items():
                    accum[(point_idx, det)][0] += errors
                    accum[(point_idx, det)][1] += total
                done += 1
                if progress and (done % 25 == 0 or done == len(tasks)):
                    progress(f"{done}/{len(tasks)} frame groups done")
    finally:
        for k, v in saved_env.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v

    points = []
    for det in sorted(set(cfg.detectors)):
        for point_idx, value in enumerate(cfg.sweep_values):
            errors, total = accum[(point_idx, det)]
            points.append(make_ber_point(det, cfg.sweep_var, value, total, errors))
    return points


CSV_HEADER = "detector,sweep_var,sweep_value,trials,errors,ber,ci95"


def _fmt(value):
    return repr(float(value)) if isinstance(value, float) else str(value)


def emit_csv(points, path):
    """Write BerPoints as CSV; float fields use repr so parsing is lossless."""
    if not points:
        raise ValueError("no BER points to write")
    ordered = sorted(points, key=lambda p: (p.detector, p.sweep_value))
    lines = [CSV_HEADER]
    for p in ordered:
        lines.append(",".join([
            p.detector, p.sweep_var, _fmt(p.sweep_value), str(p.trials),
            str(p.errors), _fmt(p.ber), _fmt(p.ci95),
        ]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Parse an emit_csv file back into BerPoints."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError("not a BER sweep CSV")
    points = []
    for line in lines[1:]:
        det, var, value, trials, errors, ber, ci95 = line.split(",")
        points.append(BerPoint(detector=det, sweep_var=var,
                               sweep_value=float(value), trials=int(trials),
                               errors=int(errors), ber=float(ber),
                               ci95=float(ci95)))
    return points


# --- large-sample equivalence experiment -------------------------------------

@dataclass(frozen=True)
class AsymptoticReport:
    agreement: float
    implied_sigma2: float
    gamma: float
    trials: int


def _diagonal_feature_set(rng, m, n, count, sigma0_sq, sigma1_sq, domain=SOURCE):
    """Blocks with exactly diagonal population covariance sigma_c^2 * I."""
    features = np.empty((count, m, m, 2), dtype=np.float32)
    labels = (1 - np.arange(count) % 2).astype(int)
    energies = np.empty(count)
    chunk = max(1, 2_000_000 // (m * n))
    for start in range(0, count, chunk):
        stop = min(count, start + chunk)
        x = _crandn(rng, stop - start, m, n)
        scale = np.where(labels[start:stop] == 1, math.sqrt(sigma1_sq),
                         math.sqrt(sigma0_sq))
        x *= scale[:, None, None]
        features[start:stop] = batch_block_features(x, dtype=np.float32)
        energies[start:stop] = np.sum(np.abs(x) ** 2, axis=(1, 2))
    return LabeledCovarianceSet(features=features, labels=labels,
                                domain=domain, ident="diag-synthetic"), energies


def run_asymptotic_check(m=8, n=500, trials=10000, seed=0, sigma0_sq=1.0,
                         sigma1_sq=1.2, train_count=4000, train_cfg=None):
    """Check that CMNet behaves as an energy detector for diagonal covariances.

    Trains a model on synthetic blocks whose population covariances are
    sigma1^2 I vs sigma0^2 I, finds the scalar boundary t* where the model's
    decision on t*I flips (bisection), and measures how often the model's
    decisions match thresholding the block energy at gamma = n*m*t*.
    """
    if train_cfg is None:
        train_cfg = TrainConfig(epochs=8, batch_size=128, lr=1e-3)
    train_set, _ = _diagonal_feature_set(substream(seed, _S_ASYMPTOTIC, 0),
                                         m, n, train_count, sigma0_sq, sigma1_sq)
    model = build_cmnet(m, substream(seed, _S_ASYMPTOTIC, 1), seed=seed)
    train_offline(model, train_set, train_cfg, substream(seed, _S_ASYMPTOTIC, 2))

    def margin(t):
        feature = to_feature_tensor(t * np.eye(m), dtype=np.float32)
        scores = model.forward_scores(feature)[0]
        return float(scores[0] - scores[1])

    lo, hi = sigma0_sq, sigma1_sq
    if not (margin(lo) < 0 < margin(hi)):
        implied = 0.5 * (sigma0_sq + sigma1_sq)  # degenerate model; report midpoint
    else:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if margin(mid) > 0:
                hi = mid
            else:
                lo = mid
        implied = 0.5 * (lo + hi)
    gamma = n * m * implied

    test_set, energies = _diagonal_feature_set(
        substream(seed, _S_ASYMPTOTIC, 3), m, n, trials, sigma0_sq, sigma1_sq)
    cm_bits = detect_batch(model, test_set.features)
    ed_bits = (energies > gamma).astype(int)
    agreement = float((cm_bits == ed_bits).mean())
    return AsymptoticReport(agreement=agreement, implied_sigma2=implied,
                            gamma=float(gamma), trials=trials)


# --- figure presets ----------------------------------------------------------

def preset(name):
    """Named scenario grids; trials/seed/workers are meant to be overridden."""
    base = ExperimentConfig()
    table = {
        "fig7a": replace(base, source_kind=PSK),
        "fig7b": replace(base, source_kind=GAUSSIAN),
        "fig8a": replace(base, sweep_var="n", sweep_values=(5, 10, 20, 40),
                         snr_db=6.0),
        "fig8b": replace(base, sweep_var="m", sweep_values=(6, 8, 10, 12),
                         n=25, snr_db=5.0),
        "fig9a": replace(base, sweep_var="zeta_db",
                         sweep_values=(-20.0, -17.5, -15.0, -12.5, -10.0,
                                       -7.5, -5.0),
                         n=10, snr_db=2.0),
        "fig9b": replace(base, sweep_var="distance_m",
                         sweep_values=(1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0),
                         n=20, snr_db=28.0),
    }
    if name not in table:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return table[name]
