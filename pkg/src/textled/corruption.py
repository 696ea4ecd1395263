"""Sequence-label corruption: single edit operations, the online corruption
policy (1-2 distinct ops in canonical order), and benchmark generation.

Canonical application order is deletion, substitution, transposition,
insertion, so the ops of one plan never interfere with each other.
Positions are 1-based and always refer to the label state at the point the
op is applied.
"""

import bisect
import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .charset import N_MAX, CharSet, Label, decode_label, encode_label
from .errors import (
    InvalidPosition,
    NoFeasibleOp,
    NoOpTransposition,
    ParseError,
    SelfSubstitution,
    WouldEmpty,
)
from .similarity import TransitionMatrix

logger = logging.getLogger("textled.corruption")

DELETION = "deletion"
SUBSTITUTION = "substitution"
TRANSPOSITION = "transposition"
INSERTION = "insertion"

CANONICAL_ORDER = (DELETION, SUBSTITUTION, TRANSPOSITION, INSERTION)
_RANK = {kind: i for i, kind in enumerate(CANONICAL_ORDER)}
_CODE = {DELETION: "D", SUBSTITUTION: "S", TRANSPOSITION: "T", INSERTION: "I"}
_KIND = {v: k for k, v in _CODE.items()}


@dataclass(frozen=True)
class CorruptionOp:
    """One edit. `position` is 1-based; `symbol` is set for insertion and
    substitution only."""

    kind: str
    position: int
    symbol: str = ""

    def serialize(self) -> str:
        if self.kind in (INSERTION, SUBSTITUTION):
            return f"{_CODE[self.kind]}@{self.position}={self.symbol}"
        return f"{_CODE[self.kind]}@{self.position}"


def parse_op(text: str) -> CorruptionOp:
    try:
        head, _, symbol = text.partition("=")
        code, at, pos = head.partition("@")
        if at != "@" or code not in _KIND:
            raise ValueError
        kind = _KIND[code]
        position = int(pos)
    except ValueError:
        raise ParseError(f"bad op spec {text!r}") from None
    if kind in (INSERTION, SUBSTITUTION) and len(symbol) != 1:
        raise ParseError(f"op {text!r} needs exactly one symbol")
    if kind in (DELETION, TRANSPOSITION) and symbol:
        raise ParseError(f"op {text!r} takes no symbol")
    return CorruptionOp(kind, position, symbol)


def serialize_plan_ops(ops) -> str:
    return ";".join(op.serialize() for op in ops)


def parse_plan_ops(text: str):
    return tuple(parse_op(part) for part in text.split(";") if part)


@dataclass(frozen=True)
class CorruptionPolicy:
    """Operation weights (normalized before sampling) and num-ops distribution."""

    weights: dict
    num_ops_weights: dict
    mode: str = "sslc"

    def __post_init__(self):
        if any(w < 0 for w in self.weights.values()) or not any(
            w > 0 for w in self.weights.values()
        ):
            raise ValueError("op weights must be non-negative with at least one positive")

    @classmethod
    def sslc_default(cls) -> "CorruptionPolicy":
        # substitution is favored 30 vs 20 for the other three ops
        return cls(
            weights={DELETION: 20.0, SUBSTITUTION: 30.0, TRANSPOSITION: 20.0, INSERTION: 20.0},
            num_ops_weights={1: 1.0, 2: 1.0},
            mode="sslc",
        )

    @classmethod
    def cobs(cls) -> "CorruptionPolicy":
        """Corruption only by substitution: one substitution per plan."""
        return cls(
            weights={DELETION: 0.0, SUBSTITUTION: 1.0, TRANSPOSITION: 0.0, INSERTION: 0.0},
            num_ops_weights={1: 1.0},
            mode="cobs",
        )

    @classmethod
    def named(cls, name: str) -> "CorruptionPolicy":
        if name == "sslc":
            return cls.sslc_default()
        if name == "cobs":
            return cls.cobs()
        raise ValueError(f"unknown policy {name!r}")


@dataclass(frozen=True)
class CorruptionPlan:
    """Ops actually applied (canonical order), with source and result labels."""

    ops: tuple
    source: Label
    result: Label

    def serialize(self) -> str:
        return serialize_plan_ops(self.ops)


def make_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_rng(master_seed: int, *keys) -> np.random.Generator:
    """Independent per-purpose stream; deterministic and order-free.

    String keys are folded to integers so streams can be tagged by purpose.
    """
    entropy = tuple(
        zlib.crc32(k.encode("utf-8")) if isinstance(k, str) else int(k) for k in keys
    )
    return np.random.default_rng(np.random.SeedSequence((int(master_seed),) + entropy))


# --- applying ops ---

def _apply_chars(chars: list, op: CorruptionOp) -> list:
    """Apply without validation; `chars` is a list of single-char strings."""
    i = op.position
    if op.kind == INSERTION:
        return chars[: i - 1] + [op.symbol] + chars[i - 1 :]
    if op.kind == DELETION:
        return chars[: i - 1] + chars[i:]
    if op.kind == SUBSTITUTION:
        return chars[: i - 1] + [op.symbol] + chars[i:]
    return chars[: i - 2] + [chars[i - 1], chars[i - 2]] + chars[i:]


def apply_op(label: Label, op: CorruptionOp, charset: CharSet) -> Label:
    """Validated single-op application. Raises on out-of-range positions,
    self-substitutions, no-op transpositions, and deletions that would empty
    the label."""
    n = len(label)
    chars = list(decode_label(label, charset))
    if op.kind == INSERTION:
        if not 1 <= op.position <= n + 1:
            raise InvalidPosition(f"insertion position {op.position} for length {n}")
        if op.symbol not in charset:
            raise InvalidPosition(f"insertion symbol {op.symbol!r} not in charset")
    elif op.kind == DELETION:
        if not 1 <= op.position <= n:
            raise InvalidPosition(f"deletion position {op.position} for length {n}")
        if n == 1:
            raise WouldEmpty("deleting the only symbol would empty the label")
    elif op.kind == SUBSTITUTION:
        if not 1 <= op.position <= n:
            raise InvalidPosition(f"substitution position {op.position} for length {n}")
        if op.symbol == chars[op.position - 1]:
            raise SelfSubstitution(f"substituting {op.symbol!r} for itself at {op.position}")
        if op.symbol not in charset:
            raise InvalidPosition(f"substitution symbol {op.symbol!r} not in charset")
    elif op.kind == TRANSPOSITION:
        if not 2 <= op.position <= n:
            raise InvalidPosition(f"transposition position {op.position} for length {n}")
        if chars[op.position - 2] == chars[op.position - 1]:
            raise NoOpTransposition(f"equal symbols at positions {op.position - 1},{op.position}")
    else:
        raise ValueError(f"unknown op kind {op.kind!r}")
    return encode_label("".join(_apply_chars(chars, op)), charset)


def replay_plan(source: Label, ops, charset: CharSet) -> Label:
    chars = list(decode_label(source, charset))
    for op in ops:
        chars = _apply_chars(chars, op)
    return encode_label("".join(chars), charset)


# --- sampling ---

def _feasible(kind: str, chars: list, charset: CharSet) -> bool:
    n = len(chars)
    if kind == DELETION:
        return n >= 2
    if kind == SUBSTITUTION:
        return charset.size >= 2
    if kind == TRANSPOSITION:
        return n >= 2 and any(chars[i] != chars[i + 1] for i in range(n - 1))
    return n < N_MAX  # insertion


def _weighted_choice(options: dict, rng: np.random.Generator):
    keys = sorted(options)
    weights = np.array([options[k] for k in keys], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise NoFeasibleOp("no positive-weight option available")
    cdf = np.cumsum(weights / total)
    idx = int(np.searchsorted(cdf, rng.random(), side="right"))
    return keys[min(idx, len(keys) - 1)]


def sample_substitution_symbol(
    matrix: TransitionMatrix, original: str, rng: np.random.Generator
) -> str:
    return matrix.sample_replacement(original, rng)


def _sample_op(kind: str, chars: list, matrix, charset: CharSet, rng) -> CorruptionOp:
    n = len(chars)
    if kind == INSERTION:
        pos = int(rng.integers(1, n + 2))
        symbol = charset.symbols[int(rng.integers(0, charset.size))]
        return CorruptionOp(INSERTION, pos, symbol)
    if kind == DELETION:
        return CorruptionOp(DELETION, int(rng.integers(1, n + 1)))
    if kind == SUBSTITUTION:
        pos = int(rng.integers(1, n + 1))
        symbol = sample_substitution_symbol(matrix, chars[pos - 1], rng)
        return CorruptionOp(SUBSTITUTION, pos, symbol)
    valid = [i for i in range(2, n + 1) if chars[i - 2] != chars[i - 1]]
    return CorruptionOp(TRANSPOSITION, valid[int(rng.integers(0, len(valid)))])


def sample_plan(
    label: Label,
    policy: CorruptionPolicy,
    matrix: TransitionMatrix,
    charset: CharSet,
    rng: np.random.Generator,
) -> CorruptionPlan:
    """Draw k distinct op types by weight, resolve infeasible types, sample
    positions/symbols sequentially in canonical order, and return the plan
    together with the resulting label."""
    k = _weighted_choice(policy.num_ops_weights, rng)
    available = {kd: w for kd, w in policy.weights.items() if w > 0}
    chosen = []
    for _ in range(min(k, len(available))):
        kd = _weighted_choice(available, rng)
        chosen.append(kd)
        del available[kd]

    chars = list(decode_label(label, charset))
    pending = sorted(chosen, key=_RANK.get)
    ops = []
    before_last = chars
    while pending:
        kind = pending.pop(0)
        if not _feasible(kind, chars, charset):
            # resample a replacement type that is feasible now and keeps the
            # canonical order relative to the ops already applied
            floor_rank = _RANK[ops[-1].kind] if ops else -1
            candidates = {
                kd: w
                for kd, w in available.items()
                if _RANK[kd] > floor_rank and _feasible(kd, chars, charset)
            }
            if candidates:
                replacement = _weighted_choice(candidates, rng)
                del available[replacement]
                bisect.insort(pending, replacement, key=_RANK.get)
            continue
        op = _sample_op(kind, chars, matrix, charset, rng)
        before_last = chars
        chars = _apply_chars(chars, op)
        ops.append(op)
    if not ops:
        raise NoFeasibleOp(f"no corruption op feasible for label of length {len(label)}")
    # a deletion/insertion pair can reconstruct the source (delete a symbol,
    # then insert it back at the same spot); redraw the final insertion until
    # the result actually differs
    source = list(decode_label(label, charset))
    while chars == source:
        op = _sample_op(INSERTION, before_last, matrix, charset, rng)
        chars = _apply_chars(before_last, op)
        ops[-1] = op
    return CorruptionPlan(tuple(ops), label, encode_label("".join(chars), charset))


def corrupt(label, matrix, policy, charset, rng):
    """One online-corruption draw: returns (corrupted label, plan)."""
    plan = sample_plan(label, policy, matrix, charset, rng)
    return plan.result, plan


def corrupt_twice(label, matrix, policy, charset, rng):
    """Two independent corruptions from split rng streams (the two results may
    coincide with each other but never with the source)."""
    rng_a, rng_b = rng.spawn(2)
    first, plan_a = corrupt(label, matrix, policy, charset, rng_a)
    second, plan_b = corrupt(label, matrix, policy, charset, rng_b)
    return first, second, (plan_a, plan_b)


# --- benchmark construction ---

def make_benchmark(entries, matrix, charset, rate: float, rng: np.random.Generator):
    """Corrupt floor(rate * n) samples, one op each, four types in equal
    proportions, recording ground truth. Samples that cannot host their
    assigned type are reassigned to substitution (logged)."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"corruption rate {rate} outside [0, 1]")
    count = int(rate * len(entries))
    if count == 0:
        return list(entries)
    picked = rng.choice(len(entries), size=count, replace=False)
    assigned = {int(idx): CANONICAL_ORDER[i % 4] for i, idx in enumerate(picked)}
    out = []
    reassigned = 0
    for idx, entry in enumerate(entries):
        if idx not in assigned:
            out.append(
                entry.__class__(entry.sample_id, entry.image_path, entry.label, False, None, None)
            )
            continue
        kind = assigned[idx]
        label = encode_label(entry.label, charset)
        chars = list(decode_label(label, charset))
        if not _feasible(kind, chars, charset):
            logger.warning(
                "sample %s cannot host %s; reassigned to substitution", entry.sample_id, kind
            )
            kind = SUBSTITUTION
            reassigned += 1
        op = _sample_op(kind, chars, matrix, charset, rng)
        result = encode_label("".join(_apply_chars(chars, op)), charset)
        out.append(
            entry.__class__(
                entry.sample_id,
                entry.image_path,
                decode_label(result, charset),
                True,
                entry.label,
                op.serialize(),
            )
        )
    if reassigned:
        logger.info("reassigned %d infeasible benchmark corruptions to substitution", reassigned)
    return out
