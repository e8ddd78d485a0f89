"""Command-line entry point: synth, pfm, train, explain, global-explain.

Exit codes are stable API: 0 ok, 2 config/usage problems, 3 I/O or parse
failures, 4 training divergence.  No output carries timestamps, so reruns
with the same inputs and seed produce byte-identical artifacts.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    value = os.environ.get("EPU_THREADS")
    if value:
        for var in (
            "OPENBLAS_NUM_THREADS",
            "OMP_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ[var] = value


# must run before numpy first loads its threading backends
_cap_threads()

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402

import numpy as np  # noqa: E402

from .config import load_config_file, parse_blocks, parse_bool, resolve_settings  # noqa: E402
from .data import (  # noqa: E402
    MANIFEST_NAME,
    SynthConfig,
    decode_ppm,
    encode_pgm,
    encode_ppm,
    load_dataset,
    load_images,
    resize_bilinear,
    synth_generate,
)
from .errors import (  # noqa: E402
    ConfigError,
    ContractError,
    DegenerateInputError,
    IngestionError,
    MetricError,
    ParseError,
    TrainingDivergedError,
)
from .interpret import (  # noqa: E402
    build_prm,
    global_rss_stats,
    overlay_prm,
    render_global_chart,
    render_local_chart,
    rss_sidecar,
)
from .model import epu_forward  # noqa: E402
from .pfm import PFM_SLUGS, build_pfm_stack  # noqa: E402
from .train import (  # noqa: E402
    cross_validate,
    evaluate,
    fit,
    kfold_split,
    load_checkpoint,
    make_samples,
    save_checkpoint,
    summarize_folds,
)


def _read_rgb(path: str):
    with open(path, "rb") as fh:
        return decode_ppm(fh.read())


def _write_bytes(path: str, blob: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(blob)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _overrides_from_args(args) -> dict:
    mapping = (
        ("arch", "preset", "preset"),
        ("arch", "blocks", "blocks"),
        ("arch", "kernel_size", "kernel_size"),
        ("arch", "fc_width", "fc_width"),
        ("arch", "input_side", "input_side"),
        ("train", "batch_size", "batch_size"),
        ("train", "lr", "lr"),
        ("train", "epochs", "epochs"),
        ("train", "seed", "seed"),
        ("train", "augment", "augment"),
        ("train", "folds", "folds"),
        ("train", "holdout", "holdout"),
        ("pfm", "side", "side"),
        ("interpret", "layer", "layer"),
        ("interpret", "bins", "bins"),
        ("output", "dir", "out"),
    )
    overrides: dict = {}
    for section, key, attr in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    return overrides


def _settings(args):
    file_values = load_config_file(args.config) if getattr(args, "config", None) else None
    return resolve_settings(file_values, _overrides_from_args(args))


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    config = SynthConfig(count=args.count, side=args.side, seed=args.seed)
    synth_generate(config, args.out)
    print(os.path.join(args.out, MANIFEST_NAME))
    return 0


def cmd_pfm(args) -> int:
    settings = _settings(args)
    image = _read_rgb(args.image)
    stack = build_pfm_stack(image, settings.pfm_side)
    out_dir = settings.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    stem = _stem(args.image)
    for slug, plane in zip(PFM_SLUGS, stack.maps):
        gray = np.clip(np.rint((plane.astype(np.float64) + 1.0) * 0.5 * 255.0), 0, 255)
        path = os.path.join(out_dir, f"{stem}.pfm-{slug}.pgm")
        _write_bytes(path, encode_pgm(gray.astype(np.uint8)))
        print(path)
    return 0


def _holdout_split(labels, holdout: float, seed: int):
    folds = max(2, round(1.0 / holdout))
    return kfold_split(labels, folds, seed)[0]


def cmd_train(args) -> int:
    settings = _settings(args)
    out_dir = settings.out_dir
    if out_dir is None:
        raise ConfigError("no output directory; pass --out or set [output] dir")
    manifest = load_dataset(args.data, mode="binary")
    images, labels = load_images(manifest)
    paths = [rel for rel, _ in manifest.entries]

    if settings.use_folds:
        reports = cross_validate(
            images,
            labels,
            settings.arch,
            settings.train,
            class_names=manifest.class_names,
            paths=paths,
            log=lambda fold, rep: print(
                f"fold {fold}: auc={rep.auc:.4f} accuracy={rep.accuracy:.4f}"
                f" a_int={rep.interp_accuracy:.4f}"
            ),
        )
        summary = summarize_folds(reports)
        for key, label in (("auc", "auc"), ("accuracy", "accuracy"), ("interp_accuracy", "a_int")):
            mean, std = summary[key]
            print(f"{label} mean={mean:.4f} std={std:.4f}")
        return 0

    train_idx, val_idx = _holdout_split(labels, settings.holdout, settings.train.seed)
    os.makedirs(out_dir, exist_ok=True)
    epoch_lines: list = []

    def log(epoch, stats):
        line = f"epoch {epoch} loss={stats.loss!r} accuracy={stats.accuracy!r}"
        epoch_lines.append(line)
        print(line)

    try:
        result = fit(
            [images[i] for i in train_idx],
            labels[train_idx],
            settings.arch,
            settings.train,
            class_names=manifest.class_names,
            paths=[paths[i] for i in train_idx],
            log=log,
        )
    except TrainingDivergedError as exc:
        last = "none" if not exc.epoch else str(exc.epoch - 1)
        print(f"training diverged at epoch {exc.epoch}; last finite epoch: {last}", file=sys.stderr)
        return 4

    val_samples = make_samples(
        [images[i] for i in val_idx], labels[val_idx], settings.arch.input_side,
        [paths[i] for i in val_idx],
    )
    report = evaluate(result.model, val_samples)
    val_line = (
        f"val auc={report.auc!r} accuracy={report.accuracy!r}"
        f" a_int={report.interp_accuracy!r}"
    )
    print(val_line)

    ckpt_path = os.path.join(out_dir, "checkpoint.epu")
    save_checkpoint(result.model, ckpt_path, epoch=settings.train.epochs, seed=settings.train.seed)
    _write_text(os.path.join(out_dir, "metrics.txt"), "\n".join(epoch_lines + [val_line]) + "\n")
    rows = [
        {"epoch": i, "loss": h.loss, "accuracy": h.accuracy}
        for i, h in enumerate(result.history)
    ]
    rows.append(
        {
            "split": "val",
            "auc": report.auc,
            "accuracy": report.accuracy,
            "a_int": report.interp_accuracy,
        }
    )
    _write_text(
        os.path.join(out_dir, "metrics.jsonl"),
        "\n".join(json.dumps(r) for r in rows) + "\n",
    )
    print(ckpt_path)
    return 0


def cmd_explain(args) -> int:
    settings = _settings(args)
    model = load_checkpoint(args.model)
    side = model.arch.input_side
    if args.side is not None and args.side != side:
        print(f"input side {args.side} does not match checkpoint side {side}", file=sys.stderr)
        return 2
    image = _read_rgb(args.image)
    stack = build_pfm_stack(image, side)
    pred = epu_forward(model, stack)
    names = model.class_names or ("class0", "class1")
    print(
        f"predicted={names[pred.label]}"
        f" probability={float(pred.probability)!r} beta={float(pred.beta[0])!r}"
    )
    out_dir = settings.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    stem = _stem(args.image)

    chart_path = os.path.join(out_dir, f"{stem}.chart.svg")
    _write_text(chart_path, render_local_chart(pred.rss, names))
    print(chart_path)

    resized = resize_bilinear(image, side)
    for i, slug in enumerate(PFM_SLUGS[: model.n_pfms]):
        prm = build_prm(
            model.subnets[i].cached_activations,
            settings.layer,
            side,
            side,
            pfm_index=i,
            bins=settings.bins,
        )
        path = os.path.join(out_dir, f"{stem}.prm-{slug}.ppm")
        _write_bytes(path, encode_ppm(overlay_prm(resized, prm)))
        print(path)

    sidecar_path = os.path.join(out_dir, f"{stem}.rss.jsonl")
    _write_text(sidecar_path, rss_sidecar(pred.rss))
    print(sidecar_path)
    return 0


def cmd_global_explain(args) -> int:
    settings = _settings(args)
    model = load_checkpoint(args.model)
    manifest = load_dataset(args.data, mode="binary")
    if model.class_names and tuple(model.class_names) != tuple(manifest.class_names):
        raise ConfigError(
            f"checkpoint classes {model.class_names} do not match dataset"
            f" classes {manifest.class_names}"
        )
    images, labels = load_images(manifest)
    samples = make_samples(
        images, labels, model.arch.input_side, [rel for rel, _ in manifest.entries]
    )
    report = evaluate(model, samples)
    rss_rows = np.stack([r.rss for r in report.records])
    rec_labels = np.array([r.label for r in report.records], dtype=np.int64)
    names = model.class_names or manifest.class_names
    stats = global_rss_stats(rss_rows, rec_labels, names, model.pfm_labels)

    out_dir = settings.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for c, cls in enumerate(stats.class_names):
        for p, pfm in enumerate(stats.pfm_labels):
            lines.append(
                f"class={cls} pfm={pfm}"
                f" mean={float(stats.means[c, p])!r} std={float(stats.stds[c, p])!r}"
            )
    table_path = os.path.join(out_dir, "global-stats.txt")
    _write_text(table_path, "\n".join(lines) + "\n")
    chart_path = os.path.join(out_dir, "global.chart.svg")
    _write_text(chart_path, render_global_chart(stats))
    print(f"auc={report.auc!r} accuracy={report.accuracy!r} a_int={report.interp_accuracy!r}")
    print(table_path)
    print(chart_path)
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch


def _add_config_flags(sub, arch=True):
    sub.add_argument("--config", help="sectioned key = value config file")
    sub.add_argument("--out", help="output directory")
    if arch:
        sub.add_argument("--preset", help="architecture preset name")
        sub.add_argument("--blocks", type=parse_blocks, help="conv blocks, e.g. 2x8,2x16,3x32")
        sub.add_argument("--kernel-size", dest="kernel_size", type=int)
        sub.add_argument("--fc-width", dest="fc_width", type=int)
        sub.add_argument("--input-side", dest="input_side", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epu", description=__doc__)
    subs = parser.add_subparsers(dest="command")

    p = subs.add_parser("synth", help="generate the synthetic crescent/disk dataset")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--count", type=int, default=100, help="images per class")
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("pfm", help="emit the four perceptual feature maps as PGM")
    p.add_argument("--image", required=True, help="input PPM image")
    p.add_argument("--side", type=int, help="feature map side (default: arch input side)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_pfm)

    p = subs.add_parser("train", help="train a binary model on a class-per-directory dataset")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--augment", type=parse_bool, help="true/false (default true)")
    p.add_argument("--folds", type=int, help="run k-fold cross-validation instead of holdout")
    p.add_argument("--holdout", type=float, help="held-out fraction (default 0.2)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("explain", help="per-image prediction, score chart, relevance overlays")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--image", required=True, help="input PPM image")
    p.add_argument("--side", type=int, help="must match the checkpoint input side if given")
    p.add_argument("--layer", type=int, help="1-based conv layer for relevance maps")
    p.add_argument("--bins", type=int)
    _add_config_flags(p, arch=False)
    p.set_defaults(func=cmd_explain)

    p = subs.add_parser("global-explain", help="dataset-wide per-class score statistics")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="labeled dataset root")
    _add_config_flags(p, arch=False)
    p.set_defaults(func=cmd_global_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, ContractError, IngestionError, MetricError, DegenerateInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def run() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    run()
