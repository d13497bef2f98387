"""Command-line entry point.

    spue generate --out DIR [--config FILE] [--set key=value ...]
    spue train    --out DIR [--config FILE] [--set key=value ...]
    spue eval     --out DIR [--config FILE] [--set key=value ...]
    spue ablate   --out DIR [--config FILE] [--set key=value ...]

The config file is JSON; --set overrides individual keys (dotted paths
reach nested keys, e.g. --set synth.overlap=0.4). The SPUE_SEED
environment variable overrides both the training and the synthetic
seeds. Exit codes: 0 success, 2 config/validation error, 3 numerical
failure. All outputs land under --out; a run is reproducible from the
run_config.json saved there.
"""

import argparse
import copy
import dataclasses
import json
import os
import sys

from . import kernels
from .data import SynthSpec, generate_synthetic, load_features, one_shot_split, save_features
from .encoder import load_checkpoint, save_checkpoint
from .evaluate import EvalResult, evaluate_retrieval, make_unlabeled_protocol
from .losses import LossBreakdown
from .selfpaced import IterationRecord, run_self_paced
from .train import EpochLog, TrainConfig

TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))
SYNTH_KEYS = tuple(f.name for f in dataclasses.fields(SynthSpec))
ABLATION_VARIANTS = ("full", "no_coop", "no_coop_no_unc")

DEFAULT_CONFIG = {
    **{k: getattr(TrainConfig(), k) for k in TRAIN_KEYS},
    "synth": {k: getattr(SynthSpec(), k) for k in SYNTH_KEYS},
    "dataset_path": None,
    "checkpoint": None,
}


def load_config(path, overrides, env=os.environ):
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            user = json.load(fh)
        _merge(cfg, user, source=path)
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        _set_path(cfg, key.strip(), value)
    if "SPUE_SEED" in env:
        seed = int(env["SPUE_SEED"])
        cfg["seed"] = seed
        if cfg["synth"] is not None:
            cfg["synth"]["seed"] = seed
    return cfg


def _merge(cfg, user, source):
    for key, value in user.items():
        if key == "synth":
            if value is None:
                cfg["synth"] = None
                continue
            unknown = set(value) - set(SYNTH_KEYS)
            if unknown:
                raise ValueError(f"{source}: unknown synth keys {sorted(unknown)}")
            if cfg["synth"] is None:
                cfg["synth"] = {k: getattr(SynthSpec(), k) for k in SYNTH_KEYS}
            cfg["synth"].update(value)
        elif key in cfg:
            cfg[key] = value
        else:
            raise ValueError(f"{source}: unknown config key {key!r}")


def _set_path(cfg, dotted, value):
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if part == "synth" and node.get("synth") is None:
            node["synth"] = {k: getattr(SynthSpec(), k) for k in SYNTH_KEYS}
        if not isinstance(node.get(part), dict):
            raise ValueError(f"unknown config key {dotted!r}")
        node = node[part]
    leaf = parts[-1]
    if leaf not in node:
        raise ValueError(f"unknown config key {dotted!r}")
    node[leaf] = value


def _train_config(cfg):
    return TrainConfig(**{k: cfg[k] for k in TRAIN_KEYS})


def _resolve_dataset(cfg):
    has_synth = cfg.get("synth") is not None
    has_path = cfg.get("dataset_path") is not None
    if has_synth == has_path:
        raise ValueError("provide exactly one of synth spec or dataset_path")
    if has_path:
        return load_features(cfg["dataset_path"])
    return generate_synthetic(SynthSpec(**cfg["synth"]))


def _write_lines(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _save_run_config(cfg, out_dir):
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_generate(cfg, out_dir):
    dataset = _resolve_dataset(cfg)
    split = one_shot_split(dataset)
    path = os.path.join(out_dir, "dataset.csv")
    save_features(dataset, path)
    _save_run_config(cfg, out_dir)
    print(f"wrote {path}: n={split.n} m={split.m} D_in={split.d_in}")
    return 0


def _run_training(cfg, out_dir):
    config = _train_config(cfg)
    dataset = one_shot_split(_resolve_dataset(cfg))
    report = run_self_paced(dataset, config)
    _write_lines(os.path.join(out_dir, "iterations.csv"), IterationRecord.CSV_HEADER,
                 (r.csv_row() for r in report.records))
    _write_lines(os.path.join(out_dir, "epochs.csv"), EpochLog.CSV_HEADER,
                 (e.csv_row() for e in report.epoch_logs))
    if config.log_steps:
        _write_lines(os.path.join(out_dir, "steps.csv"), LossBreakdown.CSV_HEADER,
                     (s.csv_row() for s in report.step_logs))
    for state in report.states:
        rows = []
        for e in state.subset_a:
            rows.append(f"{e.sample_id},A,{e.label},{repr(e.conf)}")
        for e in state.subset_b:
            rows.append(f"{e.sample_id},B,{e.label},{repr(e.conf)}")
        for pos, sid in enumerate(state.index_ids):
            rows.append(f"{sid},I,{pos},")
        _write_lines(os.path.join(out_dir, f"selection_t{state.t:02d}.csv"),
                     "sample_id,subset,label,conf", rows)
    save_checkpoint(report.model, os.path.join(out_dir, "checkpoint.txt"))
    final = report.records[-1]
    summary = {
        "final": {
            "t": final.t, "mAP": final.map, "rank1": final.rank1, "rank5": final.rank5,
            "rank10": final.rank10, "rank20": final.rank20,
        },
        "iterations": [dataclasses.asdict(r) for r in report.records],
        "backend": kernels.BACKEND,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _save_run_config(cfg, out_dir)
    return report


def cmd_train(cfg, out_dir):
    report = _run_training(cfg, out_dir)
    final = report.records[-1]
    print(f"trained {len(report.records)} iterations; "
          f"final mAP={final.map:.4f} rank1={final.rank1:.4f} (outputs in {out_dir})")
    return 0


def cmd_eval(cfg, out_dir):
    if not cfg.get("checkpoint"):
        raise ValueError("eval requires a checkpoint path in the config")
    model = load_checkpoint(cfg["checkpoint"])
    dataset = one_shot_split(_resolve_dataset(cfg))
    if dataset.d_in != model.dims.d_in:
        raise ValueError(
            f"dataset D_in {dataset.d_in} does not match checkpoint D_in {model.dims.d_in}"
        )
    protocol = make_unlabeled_protocol(dataset, cfg["same_camera_excluded"])
    res = evaluate_retrieval(model, dataset, protocol, max_rank=cfg["max_rank"])
    _write_lines(os.path.join(out_dir, "eval.csv"), EvalResult.CSV_HEADER, [res.csv_row(0)])
    _save_run_config(cfg, out_dir)
    print(f"mAP={res.map:.6f} rank1={res.rank(1):.6f} rank5={res.rank(5):.6f} "
          f"rank10={res.rank(10):.6f} rank20={res.rank(20):.6f} "
          f"queries={res.num_queries_used}")
    return 0


def cmd_ablate(cfg, out_dir):
    merged = []
    for variant in ABLATION_VARIANTS:
        vcfg = copy.deepcopy(cfg)
        vcfg["ablation"] = variant
        vdir = os.path.join(out_dir, variant)
        os.makedirs(vdir, exist_ok=True)
        report = _run_training(vcfg, vdir)
        for r in report.records:
            merged.append(f"{variant},{r.csv_row()}")
        print(f"{variant}: final rank1={report.records[-1].rank1:.4f} "
              f"mAP={report.records[-1].map:.4f}")
    _write_lines(os.path.join(out_dir, "ablation.csv"),
                 "variant," + IterationRecord.CSV_HEADER, merged)
    _save_run_config(cfg, out_dir)
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="spue", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.out)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
