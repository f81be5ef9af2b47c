"""Command-line interface.

Subcommands mirror the workflow stages: ``train`` pre-trains a model on a
simulated corpus, ``transfer`` fine-tunes it on one frame's pilots,
``detect`` decodes that frame's data symbols, ``sweep`` runs Monte Carlo
BER experiments, and ``gradcheck``/``asymptotic`` run the numerical
verification experiments.

Exit codes: 0 on success, 1 on usage errors (bad flags, malformed config),
2 on runtime failures (missing files, invalid parameters, failed checks).

Scenario settings come from, in increasing precedence: built-in defaults,
``--preset``, ``--config`` (a key=value file, ``#`` comments allowed), and
explicit flags.  Config keys match ExperimentConfig field names (m, n,
snr_db, zeta_db, source_kind, q, num_symbols, pilot_count, sweep_var,
sweep_values, trials, detectors, seed, workers, transfer_every,
offline_count, target_count, aug_sigma2, ed_cal_trials) plus the schedule
keys offline_epochs/offline_batch/offline_lr, transfer_epochs/
transfer_batch/transfer_lr and the path-loss keys f_c/d0/path_gamma.
"""
import argparse
import dataclasses
import sys

import numpy as np

from .cmnet import (
    TrainConfig,
    build_cmnet,
    detect_batch,
    evaluate_accuracy,
    gradcheck,
    load_checkpoint,
    save_checkpoint,
    train_offline,
    transfer_finetune,
)
from .datasets import build_offline_dataset, build_online_dataset
from .features import batch_block_features
from .rng import substream
from .simcore import draw_channel, generate_frame
from .sweep import (
    _S_AUG,
    _S_CHANNEL,
    _S_FRAME,
    _S_OFFLINE,
    _S_TRANSFER,
    DETECTOR_NAMES,
    ExperimentConfig,
    PathLossParams,
    emit_csv,
    fixed_params,
    preset,
    run_asymptotic_check,
    run_ber_sweep,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

GRADCHECK_TOL = 1e-3
ASYMPTOTIC_BAR = 0.95


class UsageError(Exception):
    """Raised for malformed configs; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- config handling ---------------------------------------------------------

_INT_KEYS = {"m", "n", "q", "num_symbols", "pilot_count", "trials", "seed",
             "workers", "transfer_every", "offline_count", "target_count",
             "ed_cal_trials", "offline_epochs", "offline_batch",
             "transfer_epochs", "transfer_batch"}
_FLOAT_KEYS = {"snr_db", "zeta_db", "aug_sigma2", "offline_lr", "transfer_lr",
               "f_c", "d0", "path_gamma"}
_STR_KEYS = {"source_kind", "sweep_var", "checkpoint"}
_LIST_KEYS = {"sweep_values", "detectors"}


def parse_config_file(path):
    """Read a key=value file into a typed dict; unknown keys are rejected."""
    overrides = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                overrides[key] = _parse_value(key, value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return overrides


def _parse_value(key, value):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _STR_KEYS:
        return value
    if key in _LIST_KEYS:
        items = [v.strip() for v in value.split(",") if v.strip()]
        if key == "detectors":
            return tuple(items)
        return tuple(float(v) for v in items)
    raise ValueError(f"unknown config key {key!r}")


def _apply_overrides(cfg, overrides):
    """Fold typed key=value overrides into an ExperimentConfig."""
    fields = {}
    schedule = {}
    path_loss = {}
    for key, value in overrides.items():
        if key in ("offline_epochs", "offline_batch", "offline_lr",
                   "transfer_epochs", "transfer_batch", "transfer_lr"):
            schedule[key] = value
        elif key in ("f_c", "d0", "path_gamma"):
            path_loss[key] = value
        else:
            fields[key] = value
    if schedule:
        for stage in ("offline", "transfer"):
            tc = getattr(cfg, f"{stage}_cfg")
            fields.setdefault(f"{stage}_cfg", TrainConfig(
                epochs=schedule.get(f"{stage}_epochs", tc.epochs),
                batch_size=schedule.get(f"{stage}_batch", tc.batch_size),
                lr=schedule.get(f"{stage}_lr", tc.lr)))
    if path_loss:
        pl = cfg.path_loss
        fields["path_loss"] = PathLossParams(
            f_c=path_loss.get("f_c", pl.f_c),
            d0=path_loss.get("d0", pl.d0),
            gamma=path_loss.get("path_gamma", pl.gamma))
    return dataclasses.replace(cfg, **fields)


def _build_config(args):
    """Resolve preset, config file and flags into one ExperimentConfig."""
    cfg = preset(args.preset) if getattr(args, "preset", None) else ExperimentConfig()
    if getattr(args, "config", None):
        cfg = _apply_overrides(cfg, parse_config_file(args.config))
    flags = {}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        flags["trials"] = args.trials
    if getattr(args, "workers", None) is not None:
        flags["workers"] = args.workers
    if getattr(args, "transfer_every", None) is not None:
        flags["transfer_every"] = args.transfer_every
    if getattr(args, "checkpoint", None) is not None:
        flags["checkpoint"] = args.checkpoint
    if getattr(args, "detectors", None) is not None:
        flags["detectors"] = tuple(args.detectors.split(","))
    if getattr(args, "snr_grid", None) is not None:
        flags["sweep_var"] = "snr_db"
        flags["sweep_values"] = tuple(float(v) for v in args.snr_grid.split(","))
    return dataclasses.replace(cfg, **flags)


# --- subcommands -------------------------------------------------------------

def _cmd_train(args):
    cfg = _build_config(args)
    params = fixed_params(cfg)
    corpus = build_offline_dataset(substream(cfg.seed, _S_OFFLINE, 0, 0),
                                   params, cfg.offline_count)
    model = build_cmnet(params.m, substream(cfg.seed, _S_OFFLINE, 0, 1),
                        seed=cfg.seed)
    report = train_offline(model, corpus, cfg.offline_cfg,
                           substream(cfg.seed, _S_OFFLINE, 0, 2))
    save_checkpoint(model, args.out)
    acc = evaluate_accuracy(model, corpus)
    print(f"trained on {len(corpus)} examples: final loss {report.final_loss:.4f}, "
          f"train accuracy {acc:.4f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _scenario_frame(cfg):
    """The single channel + frame that `transfer` and `detect` both target."""
    params = fixed_params(cfg)
    ch = draw_channel(substream(cfg.seed, _S_CHANNEL, 0), params)
    frame = generate_frame(substream(cfg.seed, _S_FRAME, 0, 0), ch, params,
                           cfg.num_symbols, cfg.pilot_count)
    return params, ch, frame


def _cmd_transfer(args):
    cfg = _build_config(args)
    model = load_checkpoint(args.checkpoint)
    _params, _ch, frame = _scenario_frame(cfg)
    target = build_online_dataset(substream(cfg.seed, _S_AUG, 0), frame,
                                  cfg.target_count, cfg.aug_sigma2)
    report = transfer_finetune(model, target, cfg.transfer_cfg,
                               substream(cfg.seed, _S_TRANSFER, 0))
    save_checkpoint(model, args.out)
    print(f"fine-tuned on {len(target)} pilot-derived examples: "
          f"final loss {report.final_loss:.4f}")
    print(f"checkpoint written to {args.out}")
    return EXIT_OK


def _cmd_detect(args):
    cfg = _build_config(args)
    model = load_checkpoint(args.checkpoint)
    _params, _ch, frame = _scenario_frame(cfg)
    xs = np.stack([b.x for b in frame.data_blocks])
    labels = np.array([b.label for b in frame.data_blocks])
    bits = detect_batch(model, batch_block_features(xs, dtype=model.dtype))
    errors = int((bits != labels).sum())
    print(f"decoded {labels.size} data symbols: {errors} errors "
          f"(ber {errors / labels.size:.4f})")
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write("symbol,decision,label\n")
            for i, (b, l) in enumerate(zip(bits, labels)):
                fh.write(f"{i},{int(b)},{int(l)}\n")
        print(f"decisions written to {args.out}")
    return EXIT_OK


def _cmd_sweep(args):
    cfg = _build_config(args)
    points = run_ber_sweep(cfg, progress=lambda msg: print(msg, file=sys.stderr))
    emit_csv(points, args.out)
    for p in points:
        print(f"{p.detector:6s} {p.sweep_var}={p.sweep_value:g} "
              f"ber={p.ber:.6f} ±{p.ci95:.6f} ({p.errors}/{p.trials})")
    print(f"results written to {args.out}")
    return EXIT_OK


def _cmd_gradcheck(args):
    cfg = _build_config(args)
    rng = substream(cfg.seed, _S_OFFLINE, 0, 0)
    model = build_cmnet(cfg.m, rng, dtype=np.float64, seed=cfg.seed)
    features = rng.standard_normal((4, cfg.m, cfg.m, 2))
    features = (features + features.transpose(0, 2, 1, 3)) / 2.0
    labels = rng.integers(0, 2, size=4)
    errors = gradcheck(model, features, labels)
    worst = max(errors.values())
    for name in sorted(errors):
        status = "ok" if errors[name] <= GRADCHECK_TOL else "FAIL"
        print(f"{name:6s} max relative error {errors[name]:.3e}  {status}")
    if worst > GRADCHECK_TOL:
        print(f"gradient check FAILED (worst {worst:.3e} > {GRADCHECK_TOL})")
        return EXIT_RUNTIME
    print(f"gradient check passed (worst {worst:.3e})")
    return EXIT_OK


def _cmd_asymptotic(args):
    cfg = _build_config(args)
    report = run_asymptotic_check(m=cfg.m, trials=cfg.trials, seed=cfg.seed)
    print(f"agreement with energy detector: {report.agreement:.4f} over "
          f"{report.trials} trials (implied variance {report.implied_sigma2:.4f}, "
          f"threshold {report.gamma:.1f})")
    if report.agreement < ASYMPTOTIC_BAR:
        print(f"equivalence check FAILED (< {ASYMPTOTIC_BAR})")
        return EXIT_RUNTIME
    return EXIT_OK


# --- entry point -------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="ambclab",
                     description="Ambient backscatter detection laboratory")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common(p, *names):
        if "config" in names:
            p.add_argument("--config", help="key=value settings file")
        if "preset" in names:
            p.add_argument("--preset",
                           choices=("fig7a", "fig7b", "fig8a", "fig8b",
                                    "fig9a", "fig9b"),
                           help="named experiment scenario")
        p.add_argument("--seed", type=int, help="master seed (default 0)")

    p = sub.add_parser("train", help="pre-train a model on a simulated corpus")
    common(p, "config", "preset")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("transfer", help="fine-tune a checkpoint on one frame's pilots")
    common(p, "config", "preset")
    p.add_argument("--checkpoint", required=True, help="pre-trained checkpoint")
    p.add_argument("--out", required=True, help="fine-tuned checkpoint output path")
    p.set_defaults(func=_cmd_transfer)

    p = sub.add_parser("detect", help="decode one frame's data symbols")
    common(p, "config", "preset")
    p.add_argument("--checkpoint", required=True, help="fine-tuned checkpoint")
    p.add_argument("--out", help="optional decisions CSV path")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("sweep", help="run a Monte Carlo BER sweep")
    common(p, "config", "preset")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--trials", type=int, help="Monte Carlo trials per grid point")
    p.add_argument("--snr-grid", help="comma-separated SNR grid in dB")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--transfer-every", type=int,
                   help="frames sharing one channel draw and fine-tune")
    p.add_argument("--detectors", help="comma-separated subset of "
                                       + ",".join(DETECTOR_NAMES))
    p.add_argument("--checkpoint", help="reuse a pre-trained base checkpoint")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck", help="verify analytic gradients numerically")
    common(p, "config")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("asymptotic",
                       help="check the large-sample energy-detector equivalence")
    common(p, "config")
    p.add_argument("--trials", type=int, help="test decisions (default 2000)")
    p.set_defaults(func=_cmd_asymptotic)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ambclab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"ambclab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
