"""Scoring detection runs: precision/recall/F1, error-type classification via
edit-script alignment, word accuracy, and ranked sample removal."""

import os
from dataclasses import dataclass

from .corruption import (
    CANONICAL_ORDER,
    DELETION,
    INSERTION,
    SUBSTITUTION,
    TRANSPOSITION,
    parse_plan_ops,
)
from .errors import IdenticalLabels, IdMismatch, KTooLarge, LengthMismatch, ParseError

MULTIPLE = "multiple"

# lexicographic op-type order, used for backtrace tie-breaking
_TIE_ORDER = (DELETION, INSERTION, SUBSTITUTION, TRANSPOSITION)


@dataclass(frozen=True)
class ReportRow:
    sample_id: str
    match_probability: float
    flagged: bool


@dataclass(frozen=True)
class LedMetrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        flagged = self.tp + self.fp
        return self.tp / flagged if flagged else 0.0

    @property
    def recall(self) -> float:
        positives = self.tp + self.fn
        return self.tp / positives if positives else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def write_report(rows, path, metadata=None) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}\t{value}\n")
        for row in rows:
            fh.write(f"{row.sample_id}\t{row.match_probability!r}\t{int(row.flagged)}\n")
    os.replace(tmp, path)


def read_report(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields")
            try:
                rows.append(ReportRow(fields[0], float(fields[1]), fields[2] == "1"))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad probability {fields[1]!r}") from None
    return rows


def _truth_by_id(truth_entries):
    return {e.sample_id: e for e in truth_entries}


def _check_ids(rows, truth):
    report_ids = {r.sample_id for r in rows}
    truth_ids = set(truth)
    if report_ids != truth_ids:
        extra = sorted(report_ids - truth_ids)[:3]
        missing = sorted(truth_ids - report_ids)[:3]
        raise IdMismatch(f"report/truth id sets differ (extra {extra}, missing {missing})")


def led_metrics(rows, truth_entries) -> LedMetrics:
    """Positive class = the label is erroneous; flagged & corrupted = TP."""
    truth = _truth_by_id(truth_entries)
    _check_ids(rows, truth)
    tp = fp = tn = fn = 0
    for row in rows:
        corrupted = bool(truth[row.sample_id].is_corrupted)
        if row.flagged and corrupted:
            tp += 1
        elif row.flagged:
            fp += 1
        elif corrupted:
            fn += 1
        else:
            tn += 1
    return LedMetrics(tp, fp, tn, fn)


def word_accuracy(predictions, labels) -> float:
    """Fraction of predictions matching their label exactly."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        return 0.0
    return sum(p == l for p, l in zip(predictions, labels)) / len(labels)


def classify_error_type(original: str, corrupted: str) -> frozenset:
    """Op types of an optimal edit script under unit Damerau-Levenshtein costs.

    Ties prefer fewer ops (inherent in unit costs), a transposition over a
    substitution pair (cheaper), then lexicographic op-type order.
    """
    if original == corrupted:
        raise IdenticalLabels("labels are identical; nothing to classify")
    a, b = original, corrupted
    n, m = len(a), len(b)
    inf = n + m + 1
    dp = [[inf] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = dp[i - 1][j - 1] + (a[i - 1] != b[j - 1])
            best = min(best, dp[i - 1][j] + 1, dp[i][j - 1] + 1)
            if (
                i >= 2 and j >= 2
                and a[i - 2] == b[j - 1] and a[i - 1] == b[j - 2]
                and a[i - 2] != a[i - 1]
            ):
                best = min(best, dp[i - 2][j - 2] + 1)
            dp[i][j] = best

    kinds = set()
    i, j = n, m
    while i > 0 or j > 0:
        cost = dp[i][j]
        if i > 0 and j > 0 and a[i - 1] == b[j - 1] and dp[i - 1][j - 1] == cost:
            i, j = i - 1, j - 1
            continue
        moved = False
        for kind in _TIE_ORDER:
            if kind == DELETION and i > 0 and dp[i - 1][j] + 1 == cost:
                kinds.add(DELETION)
                i -= 1
            elif kind == INSERTION and j > 0 and dp[i][j - 1] + 1 == cost:
                kinds.add(INSERTION)
                j -= 1
            elif (
                kind == SUBSTITUTION and i > 0 and j > 0
                and a[i - 1] != b[j - 1] and dp[i - 1][j - 1] + 1 == cost
            ):
                kinds.add(SUBSTITUTION)
                i, j = i - 1, j - 1
            elif (
                kind == TRANSPOSITION and i >= 2 and j >= 2
                and a[i - 2] == b[j - 1] and a[i - 1] == b[j - 2]
                and a[i - 2] != a[i - 1] and dp[i - 2][j - 2] + 1 == cost
            ):
                kinds.add(TRANSPOSITION)
                i, j = i - 2, j - 2
            else:
                continue
            moved = True
            break
        if not moved:  # unreachable for a well-formed table
            raise RuntimeError("edit-script backtrace failed")
    return frozenset(kinds)


def enumerate_single_op_types(original: str, corrupted: str, symbols) -> set:
    """All op types that map `original` to `corrupted` with exactly one edit.
    Brute force; used to verify classification uniqueness."""
    found = set()
    n = len(original)
    for j in range(n + 1):
        for sym in symbols:
            if original[:j] + sym + original[j:] == corrupted:
                found.add(INSERTION)
    for i in range(n):
        if original[:i] + original[i + 1 :] == corrupted:
            found.add(DELETION)
        for sym in symbols:
            if sym != original[i] and original[:i] + sym + original[i + 1 :] == corrupted:
                found.add(SUBSTITUTION)
    for i in range(1, n):
        if original[i - 1] != original[i]:
            swapped = original[: i - 1] + original[i] + original[i - 1] + original[i + 1 :]
            if swapped == corrupted:
                found.add(TRANSPOSITION)
    return found


def breakdown(rows, truth_entries) -> dict:
    """Detected/missed counts per planted noise type; plans spanning several
    types are tallied under 'multiple'."""
    truth = _truth_by_id(truth_entries)
    _check_ids(rows, truth)
    counts = {kind: [0, 0] for kind in CANONICAL_ORDER + (MULTIPLE,)}
    for row in rows:
        entry = truth[row.sample_id]
        if not entry.is_corrupted:
            continue
        kinds = {op.kind for op in parse_plan_ops(entry.plan or "")}
        key = MULTIPLE if len(kinds) >= 2 else next(iter(kinds))
        counts[key][0 if row.flagged else 1] += 1
    return {kind: (det, miss) for kind, (det, miss) in counts.items()}


def rank_and_remove(rows, entries, k: int):
    """Drop the k samples with the lowest match probability (ties by id)."""
    if k > len(entries):
        raise KTooLarge(f"k={k} exceeds manifest size {len(entries)}")
    _check_ids(rows, _truth_by_id(entries))
    ranked = sorted(rows, key=lambda r: (r.match_probability, r.sample_id))
    removed = {r.sample_id for r in ranked[:k]}
    return [e for e in entries if e.sample_id not in removed]
