"""Image-text matching network for label-error detection.

A small ViT-style visual encoder produces patch embeddings; a text encoder
runs self-attention over character tokens, cross-attention onto the visual
embeddings, and an FFN per block; the output at the [ENC] position feeds a
two-class match/mismatch head.  An auxiliary autoregressive recognition
decoder (teacher-forced during training) shares the visual embeddings.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .charset import CharSet, Label, tokenize_for_decoder, tokenize_for_encoder
from .errors import ParseError, ShapeMismatch

NEG_INF = -1e9

# itm class convention: column 0 = match, column 1 = mismatch
MATCH, MISMATCH = 0, 1


@dataclass(frozen=True)
class ModelConfig:
    image_height: int = 32
    image_width: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    num_heads: int = 4
    visual_depth: int = 2
    text_depth: int = 2
    decoder_depth: int = 1
    ffn_mult: int = 4
    charset_size: int = 36
    n_max: int = 25
    alpha: float = 1.0
    ema_decay: float = 0.999
    threshold: float = 0.5
    pre_norm: bool = True
    init_scale: float = 0.08

    def __post_init__(self):
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError("image dimensions must be divisible by the patch size")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")
        if min(self.visual_depth, self.text_depth, self.decoder_depth) < 1:
            raise ValueError("all depths must be >= 1")

    @property
    def n_patches(self) -> int:
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def vocab_size(self) -> int:
        return self.charset_size + 4

    @property
    def str_classes(self) -> int:
        """Character classes plus [EOS] for the recognition head."""
        return self.charset_size + 1

    def to_kv_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_kv_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, eq, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if eq != "=" or key not in types:
                raise ParseError(f"config line {lineno}: bad entry {line!r}")
            kind = types[key]
            if kind in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes", "on")
            elif kind in ("int", int):
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


def _attn_param_names(prefix):
    return [prefix + n for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict:
    """All learnable tensors. Output heads start at zero so the untrained
    model predicts uniform distributions."""
    d, s = cfg.embed_dim, cfg.init_scale
    params = {}

    def w(name, shape, zero=False):
        data = np.zeros(shape) if zero else rng.normal(0.0, s, size=shape)
        params[name] = Tensor(data, requires_grad=True)

    def ln(prefix):
        params[prefix + "g"] = Tensor(np.ones(d), requires_grad=True)
        params[prefix + "b"] = Tensor(np.zeros(d), requires_grad=True)

    def attn_block(prefix):
        for mat in ("wq", "wk", "wv", "wo"):
            w(prefix + mat, (d, d))
        for vec in ("bq", "bk", "bv", "bo"):
            w(prefix + vec, (d,), zero=True)

    def ffn_block(prefix):
        w(prefix + "ffn_w1", (d, cfg.ffn_mult * d))
        w(prefix + "ffn_b1", (cfg.ffn_mult * d,), zero=True)
        w(prefix + "ffn_w2", (cfg.ffn_mult * d, d))
        w(prefix + "ffn_b2", (d,), zero=True)

    w("patch_proj_w", (cfg.patch_size * cfg.patch_size, d))
    w("patch_proj_b", (d,), zero=True)
    w("cls_token", (1, d))
    w("vis_pos", (cfg.n_patches + 1, d))
    w("tok_embed", (cfg.vocab_size, d))
    w("text_pos", (cfg.n_max + 1, d))
    w("dec_pos", (cfg.n_max + 1, d))

    for i in range(cfg.visual_depth):
        p = f"vis{i}."
        ln(p + "ln1_")
        attn_block(p + "sa_")
        ln(p + "ln2_")
        ffn_block(p)
    ln("vis_lnf_")

    for i in range(cfg.text_depth):
        p = f"txt{i}."
        ln(p + "ln1_")
        attn_block(p + "sa_")
        ln(p + "ln2_")
        attn_block(p + "ca_")
        ln(p + "ln3_")
        ffn_block(p)
    ln("txt_lnf_")

    for i in range(cfg.decoder_depth):
        p = f"dec{i}."
        ln(p + "ln1_")
        attn_block(p + "sa_")
        ln(p + "ln2_")
        attn_block(p + "ca_")
        ln(p + "ln3_")
        ffn_block(p)
    ln("dec_lnf_")

    w("itm_w", (d, 2), zero=True)
    w("itm_b", (2,), zero=True)
    w("str_w", (d, cfg.str_classes), zero=True)
    w("str_b", (cfg.str_classes,), zero=True)
    return params


# --- building blocks ---

def _linear(x, params, w_name, b_name):
    return ad.add(ad.matmul(x, params[w_name]), params[b_name])


def _attention(q_in, kv_in, prefix, params, cfg: ModelConfig, mask=None):
    """Multi-head attention; queries from q_in, keys/values from kv_in.
    `mask` is an additive numpy array broadcastable to (B, H, Tq, Tk)."""
    b, tq = q_in.shape[0], q_in.shape[-2]
    tk = kv_in.shape[-2]
    h, hd = cfg.num_heads, cfg.head_dim

    def split_heads(x, t):
        return ad.transpose(ad.reshape(x, (b, t, h, hd)), (0, 2, 1, 3))

    q = split_heads(_linear(q_in, params, prefix + "wq", prefix + "bq"), tq)
    k = split_heads(_linear(kv_in, params, prefix + "wk", prefix + "bk"), tk)
    v = split_heads(_linear(kv_in, params, prefix + "wv", prefix + "bv"), tk)
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / math.sqrt(hd))
    if mask is not None:
        scores = ad.add(scores, Tensor(mask))
    attn = ad.softmax(scores, axis=-1)
    merged = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, tq, cfg.embed_dim))
    return _linear(merged, params, prefix + "wo", prefix + "bo")


def _ffn(x, prefix, params):
    hidden = ad.gelu(_linear(x, params, prefix + "ffn_w1", prefix + "ffn_b1"))
    return _linear(hidden, params, prefix + "ffn_w2", prefix + "ffn_b2")


def _ln(x, prefix, params):
    return ad.layer_norm(x, params[prefix + "g"], params[prefix + "b"])


def _visual_block(x, prefix, params, cfg, mask=None):
    normed = _ln(x, prefix + "ln1_", params)
    x = ad.add(x, _attention(normed, normed, prefix + "sa_", params, cfg, mask))
    return ad.add(x, _ffn(_ln(x, prefix + "ln2_", params), prefix, params))


def image_text_block(t, z, prefix, params, cfg: ModelConfig, self_mask=None):
    """One text-encoder block: self-attention, cross-attention onto the
    visual embeddings, FFN.  Pre-norm + FFN residual by default; with
    pre_norm off, the bare form (no norms, no FFN residual) is used."""
    if cfg.pre_norm:
        normed = _ln(t, prefix + "ln1_", params)
        t = ad.add(t, _attention(normed, normed, prefix + "sa_", params, cfg, self_mask))
        t = ad.add(t, _attention(_ln(t, prefix + "ln2_", params), z, prefix + "ca_", params, cfg))
        return ad.add(t, _ffn(_ln(t, prefix + "ln3_", params), prefix, params))
    t = ad.add(t, _attention(t, t, prefix + "sa_", params, cfg, self_mask))
    t = ad.add(t, _attention(t, z, prefix + "ca_", params, cfg))
    return _ffn(t, prefix, params)


def patchify(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(B, H, W) -> (B, M, patch*patch), raster order over patch grid."""
    if images.ndim != 3 or images.shape[1:] != (cfg.image_height, cfg.image_width):
        raise ShapeMismatch(
            f"images {images.shape} vs configured {(cfg.image_height, cfg.image_width)}"
        )
    b = images.shape[0]
    p = cfg.patch_size
    gh, gw = cfg.image_height // p, cfg.image_width // p
    patches = images.reshape(b, gh, p, gw, p).transpose(0, 1, 3, 2, 4)
    return patches.reshape(b, gh * gw, p * p)


def encode_image(images: np.ndarray, params: dict, cfg: ModelConfig) -> Tensor:
    """(B, H, W) intensities -> visual embeddings (B, M+1, d), [CLS] first."""
    b = images.shape[0]
    x = _linear(Tensor(patchify(images, cfg)), params, "patch_proj_w", "patch_proj_b")
    cls = ad.add(ad.reshape(params["cls_token"], (1, 1, cfg.embed_dim)),
                 Tensor(np.zeros((b, 1, cfg.embed_dim))))
    x = ad.add(ad.concat([cls, x], axis=-2), params["vis_pos"])
    for i in range(cfg.visual_depth):
        x = _visual_block(x, f"vis{i}.", params, cfg)
    return _ln(x, "vis_lnf_", params)


def _pad_key_mask(pad_mask: np.ndarray) -> np.ndarray:
    # (B, L) with 1 = real token -> additive (B, 1, 1, L)
    return ((1.0 - pad_mask) * NEG_INF)[:, None, None, :]


def _causal_mask(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), NEG_INF), k=1)[None, None, :, :]


def encode_image_text(z: Tensor, token_ids: np.ndarray, pad_mask: np.ndarray,
                      params: dict, cfg: ModelConfig) -> Tensor:
    """Joint representation f_IT: the text-encoder output at the [ENC]
    position, shape (B, d)."""
    length = token_ids.shape[1]
    t = ad.add(ad.embedding(params["tok_embed"], token_ids),
               ad.narrow(params["text_pos"], 0, 0, length))
    mask = _pad_key_mask(pad_mask)
    for i in range(cfg.text_depth):
        t = image_text_block(t, z, f"txt{i}.", params, cfg, self_mask=mask)
    t = _ln(t, "txt_lnf_", params)
    return ad.reshape(ad.narrow(t, t.data.ndim - 2, 0, 1), (token_ids.shape[0], cfg.embed_dim))


def itm_forward(f_it: Tensor, params: dict) -> Tensor:
    """Two-class probabilities (B, 2); column 0 is the match class."""
    return ad.softmax(_linear(f_it, params, "itm_w", "itm_b"), axis=-1)


def itm_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean NLL of the true match/mismatch class over the batch."""
    if probs.shape[-1] != 2 or targets.shape != probs.shape[:-1]:
        raise ShapeMismatch(f"itm targets {targets.shape} vs probs {probs.shape}")
    one_hot = np.eye(2)[targets]
    return ad.cross_entropy(probs, one_hot)


def str_decode_teacher_forced(z: Tensor, dec_input: np.ndarray, pad_mask: np.ndarray,
                              params: dict, cfg: ModelConfig) -> Tensor:
    """Per-position distributions (B, L, charset+1) under a causal mask."""
    length = dec_input.shape[1]
    t = ad.add(ad.embedding(params["tok_embed"], dec_input),
               ad.narrow(params["dec_pos"], 0, 0, length))
    mask = _causal_mask(length) + _pad_key_mask(pad_mask)
    for i in range(cfg.decoder_depth):
        t = image_text_block(t, z, f"dec{i}.", params, cfg, self_mask=mask)
    t = _ln(t, "dec_lnf_", params)
    return ad.softmax(_linear(t, params, "str_w", "str_b"), axis=-1)


def str_loss(distributions: Tensor, targets: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """Mean NLL over real (non-pad) target positions."""
    if targets.shape != distributions.shape[:-1]:
        raise ShapeMismatch(f"str targets {targets.shape} vs probs {distributions.shape}")
    one_hot = np.eye(distributions.shape[-1])[targets]
    return ad.cross_entropy(distributions, one_hot, weights=target_mask)


@dataclass
class Batch:
    """One training batch: B images, their clean labels, two corrupted labels
    per image, and teacher-forcing arrays for the recognition decoder."""

    images: np.ndarray          # (B, H, W)
    pos_ids: np.ndarray         # (B, Lp) encoder-input tokens of clean labels
    pos_mask: np.ndarray
    neg1_ids: np.ndarray
    neg1_mask: np.ndarray
    neg2_ids: np.ndarray
    neg2_mask: np.ndarray
    dec_input: np.ndarray       # (B, Ld) [BOS]+chars
    dec_target: np.ndarray      # (B, Ld) chars+[EOS], str-head class ids
    dec_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.images.shape[0]


def _pad_token_rows(rows, pad_id):
    length = max(len(r) for r in rows)
    ids = np.full((len(rows), length), pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), length))
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
        mask[i, : len(r)] = 1.0
    return ids, mask


def make_batch(images, labels, negatives, charset: CharSet, cfg: ModelConfig) -> Batch:
    """Assemble padded arrays from per-sample labels and negative pairs."""
    pos_rows = [tokenize_for_encoder(lab, charset).ids for lab in labels]
    neg1_rows = [tokenize_for_encoder(pair[0], charset).ids for pair in negatives]
    neg2_rows = [tokenize_for_encoder(pair[1], charset).ids for pair in negatives]
    dec_in_rows, dec_tgt_rows = [], []
    for lab in labels:
        dec_in, dec_tgt = tokenize_for_decoder(lab, charset)
        dec_in_rows.append(dec_in.ids)
        # recognition-head classes: 0..K-1 chars, K = [EOS]
        dec_tgt_rows.append(tuple(
            cfg.charset_size if t == charset.eos_id else t for t in dec_tgt.ids
        ))
    pos_ids, pos_mask = _pad_token_rows(pos_rows, charset.pad_id)
    neg1_ids, neg1_mask = _pad_token_rows(neg1_rows, charset.pad_id)
    neg2_ids, neg2_mask = _pad_token_rows(neg2_rows, charset.pad_id)
    dec_input, dec_mask = _pad_token_rows(dec_in_rows, charset.pad_id)
    dec_target, _ = _pad_token_rows(dec_tgt_rows, 0)
    return Batch(
        np.stack(images), pos_ids, pos_mask, neg1_ids, neg1_mask,
        neg2_ids, neg2_mask, dec_input, dec_target, dec_mask,
    )


def total_loss(batch: Batch, params: dict, cfg: ModelConfig):
    """ITM loss over the 1 positive + 2 negative pairs per image, plus
    alpha * recognition loss on the clean labels. Returns (loss, sub-losses)."""
    z = encode_image(batch.images, params, cfg)
    f_pos = encode_image_text(z, batch.pos_ids, batch.pos_mask, params, cfg)
    f_neg1 = encode_image_text(z, batch.neg1_ids, batch.neg1_mask, params, cfg)
    f_neg2 = encode_image_text(z, batch.neg2_ids, batch.neg2_mask, params, cfg)
    b = batch.size
    probs = itm_forward(ad.concat([f_pos, f_neg1, f_neg2], axis=0), params)
    targets = np.concatenate([np.full(b, MATCH), np.full(2 * b, MISMATCH)])
    loss_itm = itm_loss(probs, targets)
    report = {"itm_loss": loss_itm.item()}
    if cfg.alpha > 0:
        dists = str_decode_teacher_forced(z, batch.dec_input, batch.dec_mask, params, cfg)
        loss_str = str_loss(dists, batch.dec_target, batch.dec_mask)
        report["str_loss"] = loss_str.item()
        total = ad.add(loss_itm, ad.scale(loss_str, cfg.alpha))
    else:
        report["str_loss"] = 0.0
        total = loss_itm
    report["total_loss"] = total.item()
    return total, report


def match_probabilities(images: np.ndarray, labels, charset: CharSet,
                        params: dict, cfg: ModelConfig) -> np.ndarray:
    """Match probability per (image, label) pair, shape (B,)."""
    rows = [tokenize_for_encoder(lab, charset).ids for lab in labels]
    ids, mask = _pad_token_rows(rows, charset.pad_id)
    z = encode_image(images, params, cfg)
    f_it = encode_image_text(z, ids, mask, params, cfg)
    return itm_forward(f_it, params).data[:, MATCH].copy()


def detect(image: np.ndarray, label: Label, charset: CharSet, params: dict,
           cfg: ModelConfig, threshold=None) -> dict:
    """Single-pair detection: flag the pair when the match probability falls
    below the threshold."""
    threshold = cfg.threshold if threshold is None else threshold
    prob = float(match_probabilities(image[None], [label], charset, params, cfg)[0])
    return {"match_probability": prob, "flagged": prob < threshold}


def greedy_decode(image: np.ndarray, charset: CharSet, params: dict, cfg: ModelConfig,
                  max_len=None) -> str:
    """Autoregressive recognition with the auxiliary head (greedy argmax)."""
    max_len = cfg.n_max if max_len is None else max_len
    z = encode_image(image[None], params, cfg)
    ids = [charset.bos_id]
    out = []
    for _ in range(max_len):
        arr = np.array([ids], dtype=np.int64)
        dist = str_decode_teacher_forced(z, arr, np.ones_like(arr, dtype=np.float64),
                                         params, cfg)
        nxt = int(np.argmax(dist.data[0, -1]))
        if nxt == cfg.charset_size:  # [EOS]
            break
        out.append(charset.symbol(nxt))
        ids.append(nxt)
    return "".join(out)
