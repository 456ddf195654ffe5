"""Command-line entry point: ``pnstrace <subcommand> --workdir DIR ...``.

Exit codes: 0 success, 1 I/O or input-file error, 2 usage or configuration
error, 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import __version__, data_io, synth
from .config import PRESETS, TrainConfig, parse_config_text
from .errors import ConfigError, Divergence, ParseError, ShapeMismatch
from .estimator import check_scenes
from .model import PnSNet, prepare, scene_candidates
from .nn import ParamStore
from .plot import render_svg
from .tracing import candidate_filter, label_scene
from .train import AXES, ablation_run, evaluate, format_ablation, predict_all, train

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("pnstrace")


class UsageError(Exception):
    pass


# -- helpers -----------------------------------------------------------------


def _path(args, name):
    return name if os.path.isabs(name) else os.path.join(args.workdir, name)


def _fingerprint(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load_scenes(args, name):
    scenes, _ = data_io.load_archive(_path(args, name))
    if not scenes:
        raise UsageError(f"{name} holds no scenes")
    return scenes


def _load_truth(args, name):
    tp = data_io.truth_path(_path(args, name))
    return data_io.load_truth(tp) if os.path.exists(tp) else None


# config flags shared by train and ablate; each maps to a TrainConfig field
_CFG_FLAGS = [
    ("--lr", "lr", float, "Adam learning rate"),
    ("--lr-decay", "lr_decay", float, "per-epoch learning-rate multiplier"),
    ("--epochs", "epochs", int, "maximum training epochs"),
    ("--batch-size", "batch_size", int, "scenes per optimisation step"),
    ("--patience", "patience", int, "epochs without validation improvement before stopping"),
    ("--hidden", "hidden", int, "hidden width of every layer"),
    ("--k", "k", int, "number of top predecessors fed to the decoder"),
    ("--n-modes", "n_modes", int, "mixture modes M"),
    ("--lam", "lam", float, "weight of the predecessor loss"),
    ("--tau", "tau", float, "temperature of the soft mode targets"),
    ("--metric", "metric", str, "trace distance for labels (l1 or l2)"),
    ("--attention", "attention", str, "cross-attention form (temporal or single)"),
    ("--dmax", "filter_dmax", float, "candidate distance threshold in metres (unset: no filter)"),
    ("--fov", "filter_fov", float, "candidate half field of view in degrees"),
    ("--seed", "seed", int, "random seed"),
]
_DEFAULTS = TrainConfig().to_dict()


def _add_config_flags(p):
    p.add_argument("--config", default=None, help="flat key = value config file (default: none, built-in defaults)")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="dataset preset applied before the config file (default: none)")
    for flag, key, kind, text in _CFG_FLAGS:
        p.add_argument(flag, dest=key, type=kind, default=None,
                       help=f"{text} (default: config value, else {_DEFAULTS[key]})")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--pt", dest="pt_enabled", action="store_true", default=None,
                   help=f"enable predecessor tracing (default: config value, else {_DEFAULTS['pt_enabled']})")
    g.add_argument("--no-pt", dest="pt_enabled", action="store_false", help="disable predecessor tracing (default: see --pt)")


def _config_from_args(args):
    """Preset, then config file, then flags; later sources win."""
    values = {}
    if args.preset:
        values.update(PRESETS[args.preset])
    if args.config:
        with open(_path(args, args.config), encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    names = [f.name for f in fields(TrainConfig)]
    for key in names:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if values.get("filter_dmax") is not None and values.get("filter_fov") is None:
        values["filter_fov"] = 90.0
    if values.get("filter_fov") is not None and values.get("filter_dmax") is None:
        raise ConfigError("--fov needs --dmax")
    return TrainConfig.from_dict(values)


def _load_checkpoint(path):
    values, header = ParamStore.read(path)
    meta = header.get("meta") or {}
    if "config" not in meta or "t_f" not in meta:
        raise ConfigError(f"{path} carries no model configuration")
    cfg = TrainConfig.from_dict(meta["config"])
    net = PnSNet(cfg, meta["t_f"], rng=np.random.default_rng(0))
    net.store.load_values(values)
    return net, meta


# -- subcommands ---------------------------------------------------------------


def cmd_gen_data(args):
    try:
        scenes = synth.generate(args.scenes, seed=args.seed, family=args.family, noise_sigma=args.noise,
                                n_distractors=args.distractors, follow_delay=args.delay)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _path(args, args.out)
    meta = {"generator": "synth", "scenes": args.scenes, "seed": args.seed, "family": args.family,
            "noise": args.noise, "distractors": args.distractors, "delay": args.delay}
    data_io.save_archive(out, [s.scene for s in scenes], meta)
    data_io.save_truth(data_io.truth_path(out), scenes)
    print(f"wrote {len(scenes)} scenes to {out}")
    return EXIT_OK


def cmd_label(args):
    scenes = _load_scenes(args, args.input)
    if args.fov is not None and args.dmax is None:
        raise UsageError("--fov needs --dmax")
    truth = _load_truth(args, args.input)
    records, counts, hits, total = [], [], 0, 0
    for i, s in enumerate(scenes):
        base = s.neighbor_mask()
        cand = base if args.dmax is None else candidate_filter(s, args.dmax, args.fov or 90.0, base)
        _, idx, dist = label_scene(s, args.metric, cand)
        counts.append(int(cand.sum()))
        records.append({"scene": i, "candidates": int(cand.sum()), "labels": data_io.label_records(s, idx, dist)})
        if truth is not None:
            t = truth[i]
            hits += int((idx == t)[t >= 0].sum())
            total += int((t >= 0).sum())
    out = _path(args, args.out)
    _write_json(out, {"format": data_io.ARCHIVE_FORMAT + "-labels", "metric": args.metric,
                      "dmax": args.dmax, "fov": args.fov, "scenes": records})
    print(f"labelled {len(scenes)} scenes with {args.metric}; mean candidates {np.mean(counts):.3f}")
    if total:
        print(f"agreement with planted predecessors {hits / total:.4f}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config_from_args(args)
    data = _path(args, args.data)
    scenes = check_scenes(_load_scenes(args, args.data))
    ckpt, curve, manifest = _path(args, args.out), _path(args, args.curve), _path(args, args.manifest)
    _write_json(manifest, {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "data": {args.data: _fingerprint(data)},
        "artifacts": {"checkpoint": args.out, "loss_curve": args.curve},
    })
    result = train(cfg, scenes)
    result.net.store.save(ckpt, {"config": cfg.to_dict(), "t_h": scenes[0].t_h, "t_f": scenes[0].t_f})
    _write_text(curve, result.loss_curve_csv())
    print(f"trained {len(result.history)} epochs, best epoch {result.best_epoch}; checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args):
    net, meta = _load_checkpoint(_path(args, args.checkpoint))
    scenes = check_scenes(_load_scenes(args, args.data), meta.get("t_h"), meta["t_f"])
    ks = tuple(args.k or (5, 10))
    if max(ks) > net.cfg.n_modes:
        raise UsageError(f"K={max(ks)} exceeds the model's {net.cfg.n_modes} modes")
    report = evaluate(net, scenes, ks, truth=_load_truth(args, args.data))
    _write_json(_path(args, args.out), report.to_dict())
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config_from_args(args)
    scenes = check_scenes(_load_scenes(args, args.data))
    truth = _load_truth(args, args.data)
    n_test = max(1, int(round(args.test_fraction * len(scenes))))
    if n_test >= len(scenes):
        raise UsageError("--test-fraction leaves no training scenes")
    train_s, test_s = scenes[:-n_test], scenes[-n_test:]
    test_truth = truth[-n_test:] if truth is not None else None
    seeds = tuple(range(args.seeds))
    ks = tuple(k for k in (5, 10) if k <= cfg.n_modes)
    rows = ablation_run(cfg, args.axis or ["pt"], train_s, test_s, seeds=seeds, ks=ks, truth=test_truth)
    table = format_ablation(rows, ks)
    _write_json(_path(args, args.out), {"config": cfg.to_dict(), "seeds": list(seeds), "rows": rows})
    print(table, end="")
    return EXIT_OK


def cmd_plot(args):
    scenes = _load_scenes(args, args.data)
    if not 0 <= args.scene < len(scenes):
        raise UsageError(f"--scene {args.scene} out of range [0, {len(scenes)})")
    scene = scenes[args.scene]
    modes = probs = None
    preds = ()
    if args.checkpoint:
        net, meta = _load_checkpoint(_path(args, args.checkpoint))
        check_scenes([scene], meta.get("t_h"), meta["t_f"])
        pred = predict_all(net, [prepare(scene, net.cfg)])
        modes, probs = pred["mu"][0], pred["pi"][0]
        if "probs" in pred and not pred["empty"][0]:
            p = np.asarray(pred["probs"][0])[:, : scene.n_agents]
            preds = sorted(set(int(a) for a in p.argmax(axis=1)))
    else:
        _, idx, _ = label_scene(scene, "l2", scene_candidates(scene, TrainConfig()))
        preds = sorted(set(int(a) for a in idx if a >= 0))
    out = _path(args, args.out)
    _write_text(out, render_svg(scene, modes, probs, preds))
    print(f"wrote {out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append ``(default: ...)`` unless the help text already states one."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default:" in text or action.required:
            return text
        return super()._get_help_string(action)


def build_parser():
    fmt = _HelpFormatter
    parser = argparse.ArgumentParser(prog="pnstrace", description="Trajectory prediction with predecessor tracing.",
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False, formatter_class=fmt)
    common.add_argument("--workdir", required=True, help="directory every relative path is resolved against (required)")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", parents=[common], formatter_class=fmt, help="generate a synthetic scene archive")
    p.add_argument("--scenes", type=int, default=1000, help="number of scenes")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--family", default="mixed", help=f"path family: one of {', '.join(synth.FAMILIES)}, follow, mixed")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian position noise sigma in metres")
    p.add_argument("--distractors", type=int, default=3, help="distractor agents per scene")
    p.add_argument("--delay", type=int, default=8, help="steps the successor trails its leader")
    p.add_argument("--out", default="scenes.json", help="output archive; the truth sidecar sits next to it")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", parents=[common], formatter_class=fmt, help="export nearest-trace predecessor labels")
    p.add_argument("--in", dest="input", default="scenes.json", help="scene archive")
    p.add_argument("--metric", choices=["l1", "l2"], default="l2", help="trace distance")
    p.add_argument("--dmax", type=float, default=None, help="candidate distance threshold in metres")
    p.add_argument("--fov", type=float, default=None, help="candidate half field of view in degrees (90 when only --dmax)")
    p.add_argument("--out", default="labels.json", help="label table output")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], formatter_class=fmt, help="train a model")
    p.add_argument("--data", default="scenes.json", help="training scene archive")
    p.add_argument("--out", default="model.npz", help="checkpoint output")
    p.add_argument("--curve", default="loss_curve.csv", help="per-epoch loss curve output")
    p.add_argument("--manifest", default="manifest.json", help="run manifest, written before training starts")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt, help="evaluate a checkpoint")
    p.add_argument("--checkpoint", default="model.npz", help="checkpoint to evaluate")
    p.add_argument("--data", default="scenes.json", help="evaluation scene archive")
    p.add_argument("--k", type=int, action="append", default=None, help="K for mADE_K/mFDE_K, repeatable (default: 5 and 10)")
    p.add_argument("--out", default="report.json", help="report output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], formatter_class=fmt, help="train variants along ablation axes")
    p.add_argument("--data", default="scenes.json", help="scene archive; its tail is the test split")
    p.add_argument("--axis", action="append", choices=sorted(AXES), default=None, help="axis to sweep, repeatable (default: pt)")
    p.add_argument("--seeds", type=int, default=3, help="seeds 0..n-1 per variant")
    p.add_argument("--test-fraction", type=float, default=0.2, help="fraction of scenes held out for testing")
    p.add_argument("--out", default="ablation.json", help="ablation result output")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", parents=[common], formatter_class=fmt, help="render one scene as SVG")
    p.add_argument("--data", default="scenes.json", help="scene archive")
    p.add_argument("--scene", type=int, default=0, help="scene index in the archive")
    p.add_argument("--checkpoint", default=None, help="checkpoint whose predictions are drawn (default: labels only)")
    p.add_argument("--out", default="scene.svg", help="SVG output")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not os.path.isdir(args.workdir):
        print(f"error: workdir {args.workdir} does not exist", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except (Divergence, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ConfigError, ShapeMismatch, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
