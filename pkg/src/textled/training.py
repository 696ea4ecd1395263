"""Training loop, learning-rate schedule, metrics log, and checkpoint format.

Checkpoints are versioned binary: magic `SELECTv1`, a key=value config block,
a section manifest (name, shape, offset), then little-endian float64 arrays.
Both the raw parameters and the EMA shadow are stored.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .charset import CharSet, encode_label
from .corruption import CorruptionPolicy, corrupt_twice, sample_rng
from .errors import DataError, ParseError, UnsupportedFormat
from .images import read_pgm
from .manifest import manifest_dir, read_manifest
from .model import ModelConfig, init_params, make_batch, total_loss
from .optim import OptimizerState, adamw_step, ema_init, ema_update

MAGIC = b"SELECTv1"


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 10
    batch_size: int = 16
    lr_base: float = 1e-3
    lr_warm: float = 1e-6
    warmup_steps: int = 200
    epoch_decay: float = 0.93
    weight_decay: float = 0.01
    seed: int = 0


def learning_rate(settings: TrainSettings, epoch: int, global_step: int) -> float:
    """Linear warm-up from lr_warm to the epoch's base rate, which itself
    decays geometrically per epoch."""
    base = settings.lr_base * settings.epoch_decay**epoch
    if global_step < settings.warmup_steps:
        return settings.lr_warm + (base - settings.lr_warm) * global_step / settings.warmup_steps
    return base


def load_images(entries, base_dir):
    """Read every referenced PGM; raises DataError naming the failing sample."""
    images = []
    for entry in entries:
        path = entry.image_path
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        try:
            images.append(read_pgm(path).pixels)
        except (OSError, ParseError, UnsupportedFormat) as exc:
            raise DataError(f"sample {entry.sample_id}: {exc}") from exc
    return images


def train(entries, base_dir, matrix, policy: CorruptionPolicy, charset: CharSet,
          cfg: ModelConfig, settings: TrainSettings, progress=None):
    """Train from scratch over the manifest entries.

    Per epoch every sample's label is corrupted twice (fresh draws each
    epoch) to form its two negatives.  Returns (params, ema, metrics) where
    metrics rows are (epoch, step, itm_loss, str_loss, total_loss, lr).
    """
    images = load_images(entries, base_dir)
    labels = [encode_label(e.label, charset) for e in entries]

    params = init_params(cfg, sample_rng(settings.seed, "init"))
    ema = ema_init(params)
    opt = OptimizerState(weight_decay=settings.weight_decay)
    metrics = []
    global_step = 0
    ad.reset_clamp_events()

    for epoch in range(settings.epochs):
        order = sample_rng(settings.seed, "order", epoch).permutation(len(entries))
        for start in range(0, len(order), settings.batch_size):
            chunk = order[start : start + settings.batch_size]
            negatives = []
            for idx in chunk:
                rng = sample_rng(settings.seed, "corrupt", epoch, int(idx))
                first, second, _plans = corrupt_twice(labels[idx], matrix, policy, charset, rng)
                negatives.append((first, second))
            batch = make_batch([images[i] for i in chunk], [labels[i] for i in chunk],
                               negatives, charset, cfg)
            loss, report = total_loss(batch, params, cfg)
            ad.backward(loss)
            lr = learning_rate(settings, epoch, global_step)
            adamw_step(params, opt, lr)
            ema_update(ema, params, cfg.ema_decay)
            metrics.append((epoch, global_step, report["itm_loss"], report["str_loss"],
                            report["total_loss"], lr))
            global_step += 1
        if progress is not None:
            epoch_rows = [m for m in metrics if m[0] == epoch]
            progress(epoch, float(np.mean([m[4] for m in epoch_rows])))
    return params, ema, metrics


def train_from_manifest(manifest_path, matrix, policy, charset, cfg, settings, progress=None):
    entries = read_manifest(manifest_path)
    return train(entries, manifest_dir(manifest_path), matrix, policy, charset, cfg,
                 settings, progress=progress)


def write_metrics(metrics, path) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("epoch\tstep\titm_loss\tstr_loss\ttotal_loss\tlr\n")
        for epoch, step, itm, s, total, lr in metrics:
            fh.write(f"{epoch}\t{step}\t{itm!r}\t{s!r}\t{total!r}\t{lr!r}\n")
    os.replace(tmp, path)


# --- checkpoints ---

def save_checkpoint(path, cfg: ModelConfig, params: dict, ema: dict) -> None:
    sections = [("model/" + name, p.data) for name, p in sorted(params.items())]
    sections += [("ema/" + name, arr) for name, arr in sorted(ema.items())]
    config_blob = cfg.to_kv_text().encode("utf-8")

    header = bytearray()
    offset = 0
    for name, arr in sections:
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded)) + encoded
        header += struct.pack("<B", arr.ndim)
        for extent in arr.shape:
            header += struct.pack("<Q", extent)
        header += struct.pack("<Q", offset)
        offset += arr.size * 8

    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        fh.write(struct.pack("<I", len(sections)))
        fh.write(bytes(header))
        for _, arr in sections:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (config, params, ema); params are graph leaves ready to train."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise UnsupportedFormat(f"{path}: bad checkpoint magic")
    pos = len(MAGIC)

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        values = struct.unpack_from(fmt, blob, pos)
        pos += size
        return values

    (config_len,) = unpack("<I")
    cfg = ModelConfig.from_kv_text(blob[pos : pos + config_len].decode("utf-8"))
    pos += config_len
    (n_sections,) = unpack("<I")
    manifest = []
    for _ in range(n_sections):
        (name_len,) = unpack("<H")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = unpack("<B")
        shape = tuple(unpack(f"<{ndim}Q")) if ndim else ()
        (offset,) = unpack("<Q")
        manifest.append((name, shape, offset))
    data_start = pos

    params, ema = {}, {}
    for name, shape, offset in manifest:
        count = int(np.prod(shape)) if shape else 1
        start = data_start + offset
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape).copy()
        kind, _, base = name.partition("/")
        if kind == "model":
            params[base] = Tensor(arr, requires_grad=True)
        elif kind == "ema":
            ema[base] = arr
        else:
            raise ParseError(f"{path}: unknown checkpoint section {name!r}")
    return cfg, params, ema
