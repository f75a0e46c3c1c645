"""Command-line interface: ``spgen {train,adapt,infer,eval,synth}``.

Exit codes:
    0  success
    2  configuration or argument error
    3  data error (missing/malformed manifest, image, scanpath file, I/O)
    4  non-finite training loss (the last finite parameters are still written)
    5  eval found no prediction whose id matches the ground truth

Diagnostics go to stderr; stdout carries only machine-readable summaries.
Every command that takes ``--seed`` writes byte-identical files for a fixed seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import CheckpointError, parse_config
from .data import (
    DataError,
    load_dataset,
    load_image,
    load_saliency,
    read_manifest,
    read_scanpath_file,
    save_saliency,
    synthetic_dataset,
    write_dataset,
    write_scanpaths,
)
from .metrics import batch_evaluate, build_saliency_map, columns
from .metrics.saliency import SaliencyMap
from .model import NOISE_KINDS, ModelConfig, ModelParams, predict_scanpath
from .training import TrainConfig, TrainingDiverged, adapt, probe_accuracy, train

log = logging.getLogger("spgen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONFINITE, EXIT_NO_MATCH = 0, 2, 3, 4, 5
CHECKPOINT_NAME = "model.spgn"
REPORT_NAME = "report.csv"


class ConfigError(ValueError):
    pass


class NoMatchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config handling


def _convert(value: str, default, key: str):
    try:
        if isinstance(default, bool):
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if isinstance(default, tuple):
            return tuple(int(x) for x in value.split(",") if x.strip())
        if isinstance(default, float):
            return float(value)
        if isinstance(default, int) or default is None:
            return int(value)
        return value
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r}") from None


def read_config_file(path) -> dict[str, str]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        return parse_config(text)
    except CheckpointError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def build_configs(values: dict[str, str], allow_model: bool = True) -> tuple[TrainConfig, ModelConfig]:
    """Split merged ``key=value`` settings into training and model configs."""
    train_fields = {f.name: f.default for f in fields(TrainConfig)}
    model_fields = {f.name: f.default for f in fields(ModelConfig)}
    tkw, mkw = {}, {}
    for key, raw in values.items():
        if key in train_fields:
            tkw[key] = _convert(str(raw), train_fields[key], key)
        elif key in model_fields:
            if not allow_model:
                raise ConfigError(f"config key {key!r}: the model shape comes from the checkpoint")
            mkw[key] = _convert(str(raw), model_fields[key], key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return TrainConfig(**tkw), ModelConfig(**mkw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _merged_settings(args, flag_map: dict[str, str]) -> dict[str, str]:
    values = read_config_file(getattr(args, "config", None))
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = str(v)
    return values


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_run(out: Path, params: ModelParams, report, extra: dict) -> None:
    params.save(out / CHECKPOINT_NAME, extra)
    report.write_csv(out / REPORT_NAME)


def _load_checkpoint(path) -> ModelParams:
    try:
        return ModelParams.load(path)
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    except (CheckpointError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc


# ---------------------------------------------------------------------------
# commands

TRAIN_FLAGS = {"seed": "seed", "epochs": "epochs", "lr": "lr", "batch_size": "batch_size",
               "max_steps": "max_steps"}


def cmd_train(args) -> int:
    tcfg, mcfg = build_configs(_merged_settings(args, TRAIN_FLAGS))
    data = load_dataset(args.manifest, mcfg.height, mcfg.width, split="train")
    if not data:
        raise DataError(f"{args.manifest}: no entries in the train split")
    out = _prepare_out(args.out)
    try:
        params, report = train(data, tcfg, model_config=mcfg)
    except TrainingDiverged as exc:
        _write_run(out, exc.last_good, exc.report, {"seed": tcfg.seed})
        log.error("%s; last finite parameters written to %s", exc, out / CHECKPOINT_NAME)
        return EXIT_NONFINITE
    _write_run(out, params, report, {"seed": tcfg.seed})
    last = report.rows[-1].scanpath_loss if report.rows else float("nan")
    print(f"steps={len(report.step_losses)} final_loss={last!r} checkpoint={out / CHECKPOINT_NAME}")
    return EXIT_OK


ADAPT_FLAGS = dict(TRAIN_FLAGS, lambda_="da_weight", domain_lr_scale="domain_lr_scale",
                   probe_every="probe_every")


def cmd_adapt(args) -> int:
    init = _load_checkpoint(args.from_checkpoint) if args.from_checkpoint else None
    tcfg, mcfg = build_configs(_merged_settings(args, ADAPT_FLAGS), allow_model=init is None)
    if init is not None:
        mcfg = init.config
    source = load_dataset(args.source_manifest, mcfg.height, mcfg.width, split="train")
    if not source:
        raise DataError(f"{args.source_manifest}: no entries in the train split")
    target_entries = read_manifest(args.target_manifest)
    if any(e.scanpaths is not None for e in target_entries):
        log.warning("target manifest %s lists scanpaths; they are ignored", args.target_manifest)
    target = load_dataset(args.target_manifest, mcfg.height, mcfg.width, with_scanpaths=False)
    if not target:
        raise DataError(f"{args.target_manifest}: no target images")
    out = _prepare_out(args.out)
    try:
        params, report = adapt(source, target, tcfg, init=init, model_config=mcfg)
    except TrainingDiverged as exc:
        _write_run(out, exc.last_good, exc.report, {"seed": tcfg.seed})
        log.error("%s; last finite parameters written to %s", exc, out / CHECKPOINT_NAME)
        return EXIT_NONFINITE
    _write_run(out, params, report, {"seed": tcfg.seed})
    probe = probe_accuracy(params, source, target, seed=tcfg.seed)
    print(f"steps={len(report.step_losses)} probe_acc={probe!r} checkpoint={out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_infer(args) -> int:
    if args.temperature < 0:
        raise ConfigError(f"--temperature must be >= 0, got {args.temperature}")
    if args.samples < 1:
        raise ConfigError(f"--samples must be >= 1, got {args.samples}")
    params = _load_checkpoint(args.checkpoint)
    cfg = params.config
    image = load_image(args.image, cfg.height, cfg.width)
    with Image.open(args.image) as im:
        width, height = im.size
    rng = np.random.default_rng(args.seed)
    paths = predict_scanpath(image, params, rng=rng, temperature=args.temperature,
                             noise_kind=args.noise, n_samples=args.samples)
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        write_scanpaths(out, paths, Path(args.image).name, width, height,
                        observers=[f"sample{k}" for k in range(len(paths))])
        if args.heatmap:
            Path(args.heatmap).parent.mkdir(parents=True, exist_ok=True)
            sal = build_saliency_map(paths, min(width, height) / 26, height, width)
            save_saliency(args.heatmap, sal)
    except OSError as exc:
        raise DataError(f"cannot write output: {exc}") from exc
    print(json.dumps({"samples": len(paths), "lengths": [len(p) for p in paths], "out": str(out)}))
    return EXIT_OK


def _gt_saliency(entry, gt_file) -> SaliencyMap:
    if entry.saliency is not None:
        return load_saliency(entry.saliency)
    h, w = gt_file.height, gt_file.width
    return build_saliency_map(gt_file.scanpaths, min(h, w) / 26, h, w)


def evaluate_predictions(pred_dir, gt_manifest, metric: str, workers: int = 1) -> dict[str, list]:
    """Score predictions against ground truth, in sorted id / sample order.

    Returns ``{"multimatch": [(id_a, id_b, values, error)], "saliency":
    [(id, values, error)]}``; a table is empty when ``metric`` does not ask for
    it.  MultiMatch compares every predicted sample with every ground-truth
    observer of the same image.  NSS and Congruency use the ground-truth
    saliency map, taken from the manifest or rebuilt from the fixations.
    """
    gt = {}
    for e in read_manifest(gt_manifest):
        if e.scanpaths is not None:
            gt[e.id] = e
    if not Path(pred_dir).is_dir():
        raise DataError(f"prediction directory not found: {pred_dir}")
    preds = {p.stem: p for p in sorted(Path(pred_dir).glob("*.json"))}
    matched = sorted(set(gt) & set(preds))
    for missing in sorted(set(preds) - set(gt)):
        log.warning("prediction %s has no ground truth", missing)
    for missing in sorted(set(gt) - set(preds)):
        log.warning("ground truth %s has no prediction", missing)
    if not matched:
        raise NoMatchError(f"no prediction id in {pred_dir} matches {gt_manifest}")

    want_mm = metric in ("multimatch", "all")
    sal_kind = None if metric == "multimatch" else metric
    mm_pairs, mm_ids, sal_pairs, sal_ids = [], [], [], []
    for img_id in matched:
        gt_file = read_scanpath_file(gt[img_id].scanpaths)
        pred_file = read_scanpath_file(preds[img_id])
        sal = _gt_saliency(gt[img_id], gt_file) if sal_kind else None
        for obs, sp in zip(pred_file.observers, pred_file.scanpaths):
            id_a = f"{img_id}/{obs}"
            if want_mm:
                for g_obs, g in zip(gt_file.observers, gt_file.scanpaths):
                    mm_pairs.append((sp, g))
                    mm_ids.append((id_a, f"{img_id}/{g_obs}"))
            if sal is not None:
                sal_pairs.append((sp, sal))
                sal_ids.append(id_a)

    tables = {"multimatch": [], "saliency": []}
    if mm_pairs:
        rows = batch_evaluate(mm_pairs, "multimatch", workers)
        tables["multimatch"] = [(a, b, r.values, r.error) for (a, b), r in zip(mm_ids, rows)]
    if sal_pairs:
        rows = batch_evaluate(sal_pairs, sal_kind, workers)
        tables["saliency"] = [(i, r.values, r.error) for i, r in zip(sal_ids, rows)]
    return tables


def metric_columns(metric: str) -> tuple[str, ...]:
    if metric == "all":
        return columns("multimatch") + columns("all")
    return columns(metric)


def _fmt(v) -> str:
    return repr(float(v))


def _column_means(rows, n_cols: int) -> list[float]:
    vals = np.array([r for r in rows if r is not None], dtype=np.float64).reshape(-1, n_cols)
    if not len(vals):
        return [math.nan] * n_cols
    return vals.mean(axis=0).tolist()


def _write_table(path, header, body, means) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    w.writerow(means)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(buf.getvalue())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def saliency_csv_path(out) -> Path:
    """Where ``eval --metric all`` puts the NSS / Congruency table."""
    out = Path(out)
    return out.with_name(out.stem + "_saliency" + out.suffix)


def cmd_eval(args) -> int:
    if args.workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {args.workers}")
    tables = evaluate_predictions(args.pred_dir, args.gt_manifest, args.metric, args.workers)
    summary = []
    mm_cols = columns("multimatch")
    if args.metric in ("multimatch", "all"):
        rows = tables["multimatch"]
        means = _column_means([r[2] for r in rows], len(mm_cols))
        summary += means
        if args.out:
            body = [[a, b, *(map(_fmt, v) if v else [""] * len(mm_cols)), e or ""] for a, b, v, e in rows]
            _write_table(args.out, ["id_a", "id_b", *mm_cols, "error"], body,
                         ["mean", "", *map(_fmt, means), ""])
    if args.metric != "multimatch":
        sal_cols = columns(args.metric)
        rows = tables["saliency"]
        means = _column_means([r[1] for r in rows], len(sal_cols))
        summary += means
        if args.out:
            path = saliency_csv_path(args.out) if args.metric == "all" else args.out
            body = [[i, *(map(_fmt, v) if v else [""] * len(sal_cols)), e or ""] for i, v, e in rows]
            _write_table(path, ["id", *sal_cols, "error"], body, ["mean", *map(_fmt, means), ""])
    print(",".join(metric_columns(args.metric)))
    print(",".join(map(_fmt, summary)))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 1:
        raise ConfigError(f"--n must be >= 1, got {args.n}")
    if args.size < 8:
        raise ConfigError(f"--size must be >= 8, got {args.size}")
    if args.domain_shift < 0:
        raise ConfigError(f"--domain-shift must be >= 0, got {args.domain_shift}")
    samples = synthetic_dataset(args.seed, args.n, args.size, args.size, args.domain_shift, domain=args.domain)
    try:
        manifest = write_dataset(samples, args.out, split=args.split)
    except OSError as exc:
        raise DataError(f"cannot write dataset to {args.out}: {exc}") from exc
    print(json.dumps({"images": len(samples), "manifest": str(manifest)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spgen", description="Stochastic scanpath generation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def training_flags(p):
        p.add_argument("--config", help="key=value file; flags override its entries")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--max-steps", dest="max_steps", type=int)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="fit a model on a labelled manifest")
    p.add_argument("manifest")
    training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="domain-adversarial training against unlabelled target images")
    p.add_argument("source_manifest")
    p.add_argument("target_manifest")
    p.add_argument("--from-checkpoint", dest="from_checkpoint")
    p.add_argument("--lambda", dest="lambda_", type=float, help="domain-loss weight")
    p.add_argument("--domain-lr-scale", dest="domain_lr_scale", type=float)
    p.add_argument("--probe-every", dest="probe_every", type=int, default=1)
    training_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("infer", help="sample scanpaths for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--noise", choices=NOISE_KINDS, default="uniform")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="scanpath JSON to write")
    p.add_argument("--heatmap", help="optional fixation-density PNG")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted scanpaths against a ground-truth manifest")
    p.add_argument("pred_dir")
    p.add_argument("gt_manifest")
    p.add_argument("--metric", choices=("multimatch", "nss", "congruency", "all"), default="all")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="per-pair CSV with a trailing mean row; with --metric all the "
                   "NSS / Congruency table goes to <stem>_saliency.csv beside it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic blob dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--domain-shift", dest="domain_shift", type=float, default=0.0)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--split", choices=("train", "val", "test"), default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors already
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NoMatchError as exc:
        log.error("%s", exc)
        return EXIT_NO_MATCH


if __name__ == "__main__":
    sys.exit(main())
