"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/model error.  Diagnostics go to
stderr; data goes to files (or stdout where noted).
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import autodiff as ad
from .charset import CharSet, encode_label
from .corruption import CorruptionPolicy, corrupt_twice, make_benchmark, sample_rng
from .errors import TextledError
from .evaluation import (
    ReportRow,
    breakdown,
    led_metrics,
    read_report,
    rank_and_remove,
    write_report,
)
from .manifest import manifest_dir, read_manifest, write_manifest
from .model import ModelConfig, Tensor, init_params, make_batch, match_probabilities, total_loss
from .similarity import (
    DEFAULT_TAU,
    build_transition_matrix,
    builtin_variant_set,
    load_external_features,
    load_transition_matrix,
    pairwise_similarity,
    save_transition_matrix,
)
from .toydata import ToyDatasetSpec, gen_toy_dataset, render_label_image
from .training import (
    TrainSettings,
    load_checkpoint,
    load_images,
    save_checkpoint,
    train_from_manifest,
    write_metrics,
)

PROG = "textled"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a toy dataset of rendered labels")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--min-len", type=int, default=1)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jitter", action="store_true")

    p = sub.add_parser("build-matrix", help="build the substitution transition matrix")
    p.add_argument("--charset", choices=["default36"], default="default36")
    p.add_argument("--features", default=None, help="external feature TSV (one row per variant)")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out", required=True)

    p = sub.add_parser("corrupt", help="corrupt a manifest into a benchmark with ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the detection model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--config", default=None, help="key=value model config overrides")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=["sslc", "cobs"], default="sslc")
    p.add_argument("--no-aux", action="store_true", help="disable the auxiliary recognition head")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--metrics", default=None, help="write the per-step metrics log here")

    p = sub.add_parser("detect", help="score manifest pairs with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--raw-weights", action="store_true",
                   help="use the raw weights instead of the EMA shadow")

    p = sub.add_parser("evaluate", help="score a detection report against ground truth")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--breakdown", action="store_true",
                   help="also write per-noise-type counts next to the metrics")

    p = sub.add_parser("remove", help="drop the k lowest-probability samples from a manifest")
    p.add_argument("--report", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="compare model gradients against finite differences")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--coords", type=int, default=6,
                   help="randomly checked coordinates per parameter tensor")
    return parser


def _load_config(path) -> ModelConfig:
    if path is None:
        return ModelConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return ModelConfig.from_kv_text(fh.read())


def _cmd_gen_data(args) -> int:
    spec = ToyDatasetSpec(args.count, args.min_len, args.max_len, jitter=args.jitter)
    manifest = gen_toy_dataset(spec, args.out, args.seed)
    print(manifest)
    return 0


def _cmd_build_matrix(args) -> int:
    charset = CharSet.default36()
    if args.features:
        variants = load_external_features(args.features, charset)
    else:
        variants = builtin_variant_set(charset)
    matrix = build_transition_matrix(pairwise_similarity(variants), args.tau)
    save_transition_matrix(matrix, args.out)
    return 0


def _cmd_corrupt(args) -> int:
    entries = read_manifest(args.manifest)
    matrix = load_transition_matrix(args.matrix)
    charset = CharSet.default36()
    rng = sample_rng(args.seed, "benchmark")
    write_manifest(make_benchmark(entries, matrix, charset, args.rate, rng), args.out)
    return 0


def _cmd_train(args) -> int:
    charset = CharSet.default36()
    matrix = load_transition_matrix(args.matrix)
    cfg = _load_config(args.config)
    if args.no_aux:
        cfg = dataclasses.replace(cfg, alpha=0.0)
    policy = CorruptionPolicy.named(args.policy)
    settings = TrainSettings(epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)

    def progress(epoch, mean_loss):
        print(f"epoch {epoch}: mean total loss {mean_loss:.4f}", file=sys.stderr)

    params, ema, metrics = train_from_manifest(
        args.manifest, matrix, policy, charset, cfg, settings, progress=progress
    )
    save_checkpoint(args.out, cfg, params, ema)
    if args.metrics:
        write_metrics(metrics, args.metrics)
    if ad.clamp_event_count():
        print(f"log clamp events during training: {ad.clamp_event_count()}", file=sys.stderr)
    return 0


def _cmd_detect(args) -> int:
    cfg, params, ema = load_checkpoint(args.model)
    if not args.raw_weights:
        params = {name: Tensor(arr) for name, arr in ema.items()}
    threshold = cfg.threshold if args.threshold is None else args.threshold
    entries = read_manifest(args.manifest)
    charset = CharSet.default36()
    images = load_images(entries, manifest_dir(args.manifest))
    labels = [encode_label(e.label, charset) for e in entries]
    rows = []
    for start in range(0, len(entries), 64):
        chunk = slice(start, start + 64)
        probs = match_probabilities(
            np.stack(images[chunk]), labels[chunk], charset, params, cfg
        )
        for entry, prob in zip(entries[chunk], probs):
            rows.append(ReportRow(entry.sample_id, float(prob), float(prob) < threshold))
    metadata = {
        "threshold": threshold,
        "checkpoint": os.path.basename(args.model),
        "weights": "raw" if args.raw_weights else "ema",
    }
    write_report(rows, args.out, metadata)
    return 0


def _cmd_evaluate(args) -> int:
    rows = read_report(args.report)
    truth = read_manifest(args.truth)
    metrics = led_metrics(rows, truth)
    tmp = f"{args.out}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for name, value in (
            ("precision", metrics.precision), ("recall", metrics.recall), ("f1", metrics.f1),
            ("tp", metrics.tp), ("fp", metrics.fp), ("tn", metrics.tn), ("fn", metrics.fn),
        ):
            fh.write(f"{name}\t{value!r}\n")
    os.replace(tmp, args.out)
    if args.breakdown:
        per_type = breakdown(rows, truth)
        bd_path = f"{args.out}.breakdown.tsv"
        tmp = f"{bd_path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("type\tdetected\tmissed\n")
            for kind, (det, miss) in per_type.items():
                fh.write(f"{kind}\t{det}\t{miss}\n")
        os.replace(tmp, bd_path)
    return 0


def _cmd_remove(args) -> int:
    rows = read_report(args.report)
    entries = read_manifest(args.manifest)
    write_manifest(rank_and_remove(rows, entries, args.k), args.out)
    return 0


def _gradcheck_batch(cfg: ModelConfig, charset: CharSet, seed: int):
    """Tiny deterministic batch: two rendered labels with corruption-derived
    negatives."""
    from .similarity import default_transition_matrix

    matrix = default_transition_matrix(charset)
    policy = CorruptionPolicy.sslc_default()
    texts = ["ab3", "q"]
    images, labels, negatives = [], [], []
    for i, text in enumerate(texts):
        images.append(render_label_image(text, cfg.image_height, cfg.image_width))
        label = encode_label(text, charset)
        labels.append(label)
        first, second, _ = corrupt_twice(
            label, matrix, policy, charset, sample_rng(seed, "gradcheck", i)
        )
        negatives.append((first, second))
    return make_batch(images, labels, negatives, charset, cfg)


def _cmd_gradcheck(args) -> int:
    cfg = _load_config(args.config)
    charset = CharSet.default36()
    rng = sample_rng(args.seed, "gradcheck-init")
    params = init_params(cfg, rng)
    # zero-init heads have exactly-zero finite differences at some coords;
    # perturb them so the check is informative
    for name in ("itm_w", "itm_b", "str_w", "str_b"):
        params[name].data += sample_rng(args.seed, "head", name).normal(
            0.0, cfg.init_scale, size=params[name].shape
        )
    batch = _gradcheck_batch(cfg, charset, args.seed)

    def loss_fn():
        return total_loss(batch, params, cfg)[0]

    worst = ad.grad_check(loss_fn, params, eps=1e-5, sample=args.coords, select="largest")
    print(f"{worst:.3e}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "build-matrix": _cmd_build_matrix,
    "corrupt": _cmd_corrupt,
    "train": _cmd_train,
    "detect": _cmd_detect,
    "evaluate": _cmd_evaluate,
    "remove": _cmd_remove,
    "gradcheck": _cmd_gradcheck,
}


def cli_dispatch(argv) -> int:
    parser = _build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return _COMMANDS[args.command](args)
    except TextledError as exc:
        print(f"{PROG}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
