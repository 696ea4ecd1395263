import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from textled.charset import N_MAX, CharSet, decode_label, encode_label
from textled.corruption import (
    CANONICAL_ORDER,
    DELETION,
    INSERTION,
    SUBSTITUTION,
    TRANSPOSITION,
    CorruptionOp,
    CorruptionPolicy,
    apply_op,
    corrupt,
    corrupt_twice,
    make_benchmark,
    parse_op,
    parse_plan_ops,
    replay_plan,
    sample_plan,
    sample_rng,
    serialize_plan_ops,
)
from textled.errors import (
    InvalidPosition,
    NoOpTransposition,
    ParseError,
    SelfSubstitution,
    WouldEmpty,
)
from textled.manifest import ManifestEntry

CS = CharSet.default36()
_RANK = {kind: i for i, kind in enumerate(CANONICAL_ORDER)}

labels = st.text(alphabet=CS.symbols, min_size=1, max_size=N_MAX)


def lab(text):
    return encode_label(text, CS)


def txt(label):
    return decode_label(label, CS)


# --- single ops ---

def test_apply_deletion():
    assert txt(apply_op(lab("abc"), CorruptionOp(DELETION, 2), CS)) == "ac"


def test_apply_transposition():
    assert txt(apply_op(lab("abc"), CorruptionOp(TRANSPOSITION, 2), CS)) == "bac"


def test_transposition_of_equal_symbols_rejected():
    with pytest.raises(NoOpTransposition):
        apply_op(lab("aab"), CorruptionOp(TRANSPOSITION, 2), CS)


def test_apply_substitution():
    assert txt(apply_op(lab("abc"), CorruptionOp(SUBSTITUTION, 1, "x"), CS)) == "xbc"


def test_self_substitution_rejected():
    with pytest.raises(SelfSubstitution):
        apply_op(lab("abc"), CorruptionOp(SUBSTITUTION, 1, "a"), CS)


def test_apply_insertion_bounds():
    assert txt(apply_op(lab("ab"), CorruptionOp(INSERTION, 1, "z"), CS)) == "zab"
    assert txt(apply_op(lab("ab"), CorruptionOp(INSERTION, 3, "z"), CS)) == "abz"
    with pytest.raises(InvalidPosition):
        apply_op(lab("ab"), CorruptionOp(INSERTION, 4, "z"), CS)


def test_deletion_would_empty():
    with pytest.raises(WouldEmpty):
        apply_op(lab("a"), CorruptionOp(DELETION, 1), CS)


def test_position_range_checks():
    for op in (
        CorruptionOp(DELETION, 0),
        CorruptionOp(DELETION, 4),
        CorruptionOp(SUBSTITUTION, 4, "x"),
        CorruptionOp(TRANSPOSITION, 1),
        CorruptionOp(TRANSPOSITION, 4),
    ):
        with pytest.raises(InvalidPosition):
            apply_op(lab("abc"), op, CS)


# --- plan serialization ---

def test_op_serialization_round_trip():
    ops = (
        CorruptionOp(DELETION, 3),
        CorruptionOp(SUBSTITUTION, 2, "x"),
        CorruptionOp(TRANSPOSITION, 2),
        CorruptionOp(INSERTION, 1, "q"),
    )
    text = serialize_plan_ops(ops)
    assert text == "D@3;S@2=x;T@2;I@1=q"
    assert parse_plan_ops(text) == ops


def test_parse_op_errors():
    for bad in ("X@1", "D3", "S@2", "D@2=x", "I@1=xy", "S@=x", ""):
        with pytest.raises(ParseError):
            parse_op(bad)


# --- policies and sampling ---

def test_policy_named():
    assert CorruptionPolicy.named("sslc").mode == "sslc"
    assert CorruptionPolicy.named("cobs").mode == "cobs"
    with pytest.raises(ValueError):
        CorruptionPolicy.named("other")


def test_cobs_plans_are_single_substitutions(transition_matrix):
    policy = CorruptionPolicy.cobs()
    for i in range(200):
        _, plan = corrupt(lab("hello3"), transition_matrix, policy, CS,
                          sample_rng(4, "cobs", i))
        assert len(plan.ops) == 1
        assert plan.ops[0].kind == SUBSTITUTION


def test_length_one_labels_never_deleted(transition_matrix):
    policy = CorruptionPolicy.sslc_default()
    for i in range(300):
        _, plan = corrupt(lab("a"), transition_matrix, policy, CS, sample_rng(5, "one", i))
        kinds = {op.kind for op in plan.ops}
        assert DELETION not in kinds
        assert TRANSPOSITION not in kinds


def test_max_length_labels_never_inserted(transition_matrix):
    policy = CorruptionPolicy.sslc_default()
    long = lab("ab" * 12 + "c")
    assert len(long) == N_MAX
    for i in range(300):
        result, plan = corrupt(long, transition_matrix, policy, CS, sample_rng(5, "max", i))
        kinds = {op.kind for op in plan.ops}
        # insertion is only possible after a deletion freed a slot
        if INSERTION in kinds:
            assert DELETION in kinds
        assert len(result) <= N_MAX


def test_seed_determinism(transition_matrix):
    policy = CorruptionPolicy.sslc_default()
    a = corrupt(lab("hello3"), transition_matrix, policy, CS, sample_rng(9, "x"))
    b = corrupt(lab("hello3"), transition_matrix, policy, CS, sample_rng(9, "x"))
    assert a[0] == b[0]
    assert a[1].ops == b[1].ops


def test_sample_rng_streams_are_independent():
    a = sample_rng(0, "alpha", 1).random(4)
    b = sample_rng(0, "beta", 1).random(4)
    c = sample_rng(0, "alpha", 2).random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(a, sample_rng(0, "alpha", 1).random(4))


def test_corrupt_twice(transition_matrix):
    policy = CorruptionPolicy.sslc_default()
    source = lab("w0rld")
    first, second, plans = corrupt_twice(source, transition_matrix, policy, CS,
                                         sample_rng(3, "twice"))
    assert first != source and second != source
    again = corrupt_twice(source, transition_matrix, policy, CS, sample_rng(3, "twice"))
    assert again[0] == first and again[1] == second
    assert plans[0].result == first and plans[1].result == second


def test_delete_insert_pairs_never_restore_source(transition_matrix):
    # a deletion followed by an insertion could put the deleted symbol back;
    # the sampler must redraw until the result differs from the source
    policy = CorruptionPolicy(
        weights={DELETION: 1.0, SUBSTITUTION: 0.0, TRANSPOSITION: 0.0, INSERTION: 1.0},
        num_ops_weights={2: 1.0},
    )
    source = lab("ab")
    for i in range(5000):
        result, plan = corrupt(source, transition_matrix, policy, CS,
                               sample_rng(6, "undo", i))
        assert result != source
        assert replay_plan(source, plan.ops, CS) == result


@settings(max_examples=200, deadline=None)
@given(labels, st.integers(0, 2**31 - 1))
def test_corruption_invariants(text, seed):
    from conftest import uniform_transition

    matrix = uniform_transition(CS.symbols)
    policy = CorruptionPolicy.sslc_default()
    source = lab(text)
    result, plan = corrupt(source, matrix, policy, CS, sample_rng(seed, "prop"))
    assert result != source
    assert abs(len(result) - len(source)) <= 1
    assert 1 <= len(result) <= N_MAX
    assert replay_plan(source, plan.ops, CS) == result
    ranks = [_RANK[op.kind] for op in plan.ops]
    assert ranks == sorted(ranks)
    assert len(set(op.kind for op in plan.ops)) == len(plan.ops)
    assert 1 <= len(plan.ops) <= 2


def test_single_op_type_frequencies(transition_matrix):
    # multinomial oracle: conditioned on single-op plans, type frequencies
    # follow the normalized weights (2/9, 3/9, 2/9, 2/9)
    policy = CorruptionPolicy.sslc_default()
    source = lab("abcdefghij")
    counts = {kind: 0 for kind in CANONICAL_ORDER}
    singles = 0
    n = 30_000
    for i in range(n):
        plan = sample_plan(source, policy, transition_matrix, CS, sample_rng(77, "freq", i))
        if len(plan.ops) == 1:
            counts[plan.ops[0].kind] += 1
            singles += 1
    expected = {DELETION: 2 / 9, SUBSTITUTION: 3 / 9, TRANSPOSITION: 2 / 9, INSERTION: 2 / 9}
    assert singles > n / 3  # k=1 drawn half the time
    for kind, p in expected.items():
        sigma = np.sqrt(p * (1 - p) / singles)
        assert abs(counts[kind] / singles - p) <= 3 * sigma, kind


def test_substitution_symbols_follow_matrix(transition_matrix):
    policy = CorruptionPolicy.cobs()
    source = lab("a")
    n = 20_000
    counts = {}
    for i in range(n):
        plan = sample_plan(source, policy, transition_matrix, CS, sample_rng(88, "sub", i))
        sym = plan.ops[0].symbol
        counts[sym] = counts.get(sym, 0) + 1
    row = transition_matrix.row("a")
    for j, sym in enumerate(transition_matrix.symbols):
        expected = row[j] * n
        if expected < 5:
            continue
        sigma = np.sqrt(row[j] * (1 - row[j]) / n)
        assert abs(counts.get(sym, 0) / n - row[j]) <= 3 * sigma, sym


# --- benchmark construction ---

def entries_for(texts):
    return [ManifestEntry(f"s{i}", f"s{i}.pgm", t) for i, t in enumerate(texts)]


def test_benchmark_rate_zero_is_identity(transition_matrix):
    entries = entries_for(["abc", "de1"])
    out = make_benchmark(entries, transition_matrix, CS, 0.0, sample_rng(1, "b"))
    assert out == entries


def test_benchmark_rate_validation(transition_matrix):
    with pytest.raises(ValueError):
        make_benchmark(entries_for(["ab"]), transition_matrix, CS, 1.5, sample_rng(1, "b"))


def test_benchmark_half_rate(transition_matrix):
    entries = entries_for(["abcd"] * 100)
    out = make_benchmark(entries, transition_matrix, CS, 0.5, sample_rng(2, "b"))
    corrupted = [e for e in out if e.is_corrupted]
    assert len(corrupted) == 50
    kinds = [parse_plan_ops(e.plan)[0].kind for e in corrupted]
    assert all(len(parse_plan_ops(e.plan)) == 1 for e in corrupted)
    for kind in CANONICAL_ORDER:
        assert abs(kinds.count(kind) - 12.5) <= 1


def test_benchmark_truth_replays(transition_matrix):
    entries = entries_for(["hello", "w0rld", "abc", "de1f", "xyz9", "q2w"])
    out = make_benchmark(entries, transition_matrix, CS, 1.0, sample_rng(3, "b"))
    for entry in out:
        assert entry.is_corrupted
        assert entry.label != entry.original_label
        ops = parse_plan_ops(entry.plan)
        replayed = replay_plan(lab(entry.original_label), ops, CS)
        assert txt(replayed) == entry.label


def test_benchmark_length_delta_matches_type(transition_matrix):
    entries = entries_for(["hello", "w0rld", "abc", "de1f", "xyz9", "q2w", "mnop"])
    out = make_benchmark(entries, transition_matrix, CS, 1.0, sample_rng(4, "b"))
    delta = {INSERTION: 1, DELETION: -1, SUBSTITUTION: 0, TRANSPOSITION: 0}
    for entry in out:
        op = parse_plan_ops(entry.plan)[0]
        assert len(entry.label) - len(entry.original_label) == delta[op.kind]


def test_benchmark_infeasible_reassigned_to_substitution(transition_matrix, caplog):
    # length-1 labels cannot host deletion or transposition
    entries = entries_for(["a", "b", "c", "d", "e", "f", "g", "h"])
    with caplog.at_level("WARNING", logger="textled.corruption"):
        out = make_benchmark(entries, transition_matrix, CS, 1.0, sample_rng(5, "b"))
    kinds = {parse_plan_ops(e.plan)[0].kind for e in out}
    assert kinds <= {SUBSTITUTION, INSERTION}
    assert any("reassigned" in r.message for r in caplog.records)


def test_benchmark_deterministic(transition_matrix):
    entries = entries_for(["hello", "w0rld", "abc", "de1f"])
    a = make_benchmark(entries, transition_matrix, CS, 0.5, sample_rng(6, "b"))
    b = make_benchmark(entries, transition_matrix, CS, 0.5, sample_rng(6, "b"))
    assert a == b
