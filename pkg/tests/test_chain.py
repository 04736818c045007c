import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from services.chain_service import (
    APPLICABLE,
    CYCLIC,
    TransitionMatrix,
    classify,
    estimate,
    matrix_from_array,
    mixes_performing,
    read_matrix,
    to_blocks,
    write_matrix,
)
from services.config_service import ChainConfig
from services.errors import EmptyInput, InvariantViolation, ParseError, ZeroRow
from services.loan_tape_service import ObservedTransition

from conftest import fixture_path, random_applicable_entries

SMALL = ChainConfig(n_writeoff=4, npl_threshold=2)


def obs(from_state, to_state, weight=1.0, loan_id="L"):
    return ObservedTransition(loan_id, from_state, to_state, weight)


def test_estimate_equal_counts(chain_cfg):
    A = estimate([obs(3, 0), obs(3, 0), obs(3, 1), obs(3, 1)], chain_cfg)
    np.testing.assert_allclose(A.entries[3], [0.5, 0.5] + [0.0] * 8)
    np.testing.assert_array_equal(A.entries[0], np.eye(10)[0])
    np.testing.assert_array_equal(A.entries[1], np.eye(10)[1])
    assert A.observation_counts[3] == 4


def test_estimate_single_observation_and_zero_rows(chain_cfg):
    A = estimate([obs(5, 0)], chain_cfg)
    np.testing.assert_array_equal(A.entries[5], np.eye(10)[0])
    # every other transitive row was never observed and goes to lost
    np.testing.assert_array_equal(A.entries[4], np.eye(10)[1])
    codes = [w.code for w in A.warnings]
    assert codes.count("ZERO_ROW_IMPUTED") == 7


def test_zero_row_error_policy():
    cfg = ChainConfig(zero_row_policy="error")
    with pytest.raises(ZeroRow) as err:
        estimate([obs(s, 0) for s in range(2, 10) if s != 4], cfg)
    assert "S4" in str(err.value)
    assert err.value.exit_code == 4


def test_estimate_rejects_bad_input(chain_cfg):
    with pytest.raises(EmptyInput):
        estimate([], chain_cfg)
    with pytest.raises(InvariantViolation):
        estimate([obs(3, 12)], chain_cfg)
    with pytest.raises(InvariantViolation):
        estimate([obs(2, 4)], chain_cfg)


def test_balance_weights(chain_cfg):
    A = estimate([obs(3, 0, 300.0), obs(3, 1, 100.0)], chain_cfg)
    np.testing.assert_allclose(A.entries[3, :2], [0.75, 0.25])


observation = st.tuples(st.integers(2, 5), st.integers(0, 5), st.floats(0.01, 1000.0))


@given(st.lists(observation, min_size=1, max_size=60), st.floats(0.01, 100.0))
def test_estimate_is_row_stochastic_and_scale_free(raw, scale):
    transitions = [obs(f, 0 if f == 2 and t >= 2 else t, w) for f, t, w in raw]
    A = estimate(transitions, SMALL)
    np.testing.assert_allclose(A.entries.sum(axis=1), 1.0, atol=1e-9)
    assert A.entries.min() >= 0

    scaled = estimate([obs(t.from_state, t.to_state, t.weight * scale) for t in transitions], SMALL)
    np.testing.assert_allclose(scaled.entries, A.entries, atol=1e-12)


def test_transition_matrix_invariants():
    good = np.eye(6)
    good[2] = [0.37, 0.63, 0, 0, 0, 0]
    good[3:, 1] = 1.0
    good[3:, 3:] = 0.0
    TransitionMatrix(good, SMALL)

    bad_sum = good.copy()
    bad_sum[4, 0] = 0.2
    with pytest.raises(InvariantViolation):
        TransitionMatrix(bad_sum, SMALL)

    leaving_cured = good.copy()
    leaving_cured[0] = [0.5, 0.5, 0, 0, 0, 0]
    with pytest.raises(InvariantViolation):
        TransitionMatrix(leaving_cured, SMALL)

    forborne_to_past_due = good.copy()
    forborne_to_past_due[2] = [0.3, 0.3, 0, 0.4, 0, 0]
    with pytest.raises(InvariantViolation):
        TransitionMatrix(forborne_to_past_due, SMALL)

    with pytest.raises(InvariantViolation):
        TransitionMatrix(np.eye(5), SMALL)


def test_matrix_is_read_only(example1):
    with pytest.raises(ValueError):
        example1.entries[0, 0] = 0.5


def test_to_blocks_example1(example1):
    blocks = to_blocks(example1)
    assert blocks.T.shape == (8, 2)
    assert blocks.S.shape == (8, 8)
    np.testing.assert_allclose(blocks.T[0], [0.37, 0.63], atol=1e-12)
    np.testing.assert_array_equal(blocks.S, example1.entries[2:, 2:])
    np.testing.assert_allclose(blocks.T.sum(axis=1) + blocks.S.sum(axis=1), 1.0, atol=1e-9)


def test_to_blocks_all_lost():
    entries = np.zeros((6, 6))
    entries[0, 0] = 1.0
    entries[1:, 1] = 1.0
    blocks = to_blocks(TransitionMatrix(entries, SMALL))
    np.testing.assert_array_equal(blocks.T[:, 0], 0.0)
    np.testing.assert_array_equal(blocks.T[:, 1], 1.0)
    np.testing.assert_array_equal(blocks.S, 0.0)


def test_classify_example1(example1):
    classification = classify(example1)
    assert classification.verdict == APPLICABLE
    assert classification.applicable
    closed = [c.members for c in classification.classes if c.closed]
    assert closed == [(0,), (1,)]
    assert classification.warnings == ()


def test_classify_example2(example2):
    classification = classify(example2)
    assert classification.verdict == CYCLIC
    assert [c.members for c in classification.offending_classes] == [(3, 5, 6)]
    offending = classification.offending_classes[0]
    assert offending.labels() == [
        "S3 (1 month past due)", "S5 (3 months past due)", "S6 (4 months past due)",
    ]
    assert mixes_performing(offending, example2.cfg)
    assert [w.code for w in classification.warnings] == ["CYCLIC_CLASS"]


def test_classify_all_cured_rows():
    entries = np.zeros((6, 6))
    entries[1, 1] = 1.0
    entries[[0, 2, 3, 4, 5], 0] = 1.0
    classification = classify(TransitionMatrix(entries, SMALL))
    assert classification.applicable
    assert all(len(c.members) == 1 for c in classification.classes)
    assert sorted(m for c in classification.classes for m in c.members) == list(range(6))


def test_edge_threshold_drops_small_edges():
    entries = np.zeros((6, 6))
    entries[0, 0] = 1.0
    entries[1, 1] = 1.0
    entries[2, 0] = 1.0
    entries[5, 1] = 1.0
    # S3 <-> S4 with a 1e-4 leak to lost
    entries[3] = [0, 1e-4, 0, 0, 1 - 1e-4, 0]
    entries[4] = [0, 0, 0, 1.0, 0, 0]
    A = TransitionMatrix(entries, SMALL)
    assert classify(A).verdict == APPLICABLE
    noisy = classify(A, edge_threshold=1e-3)
    assert noisy.verdict == CYCLIC
    assert [c.members for c in noisy.offending_classes] == [(3, 4)]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 6), st.randoms(use_true_random=False))
def test_classify_invariant_under_relabeling(seed, n_writeoff, rnd):
    rng = np.random.default_rng(seed)
    entries = random_applicable_entries(rng, n_writeoff)
    # plant a closed class on the first two past-due states
    entries[3] = 0.0
    entries[4] = 0.0
    entries[3, 4] = 1.0
    entries[4, 3] = 1.0
    cfg = ChainConfig(n_writeoff=n_writeoff)
    original = classify(TransitionMatrix(entries, cfg))

    transitive = list(range(3, n_writeoff + 2))
    shuffled = transitive[:]
    rnd.shuffle(shuffled)
    perm = [0, 1, 2] + shuffled
    permuted = entries[np.ix_(perm, perm)]
    relabeled = classify(TransitionMatrix(permuted, cfg))

    assert relabeled.verdict == original.verdict == CYCLIC
    expected = sorted(perm.index(s) for s in (3, 4))
    assert [list(c.members) for c in relabeled.offending_classes] == [expected]


@pytest.mark.parametrize("n_writeoff", [4, 5, 6])
def test_applicable_chains_have_vanishing_s_powers(n_writeoff):
    for seed in range(5):
        entries = random_applicable_entries(np.random.default_rng(seed), n_writeoff)
        A = TransitionMatrix(entries, ChainConfig(n_writeoff=n_writeoff))
        assert classify(A).applicable
        S = to_blocks(A).S
        assert np.abs(np.linalg.matrix_power(S, 64)).max() < 1e-6


def test_example1_s_powers_vanish(example1):
    S = to_blocks(example1).S
    assert np.abs(np.linalg.matrix_power(S, 64)).max() < 1e-6


def test_read_matrix_renormalizes_rounded_rows(tmp_path, chain_cfg):
    rows = np.loadtxt(fixture_path("example1_A.csv"), delimiter=",")
    rows[3, 3] += 0.002
    path = tmp_path / "rounded.csv"
    np.savetxt(path, rows, delimiter=",")
    A = read_matrix(str(path), chain_cfg)
    np.testing.assert_allclose(A.entries.sum(axis=1), 1.0, atol=1e-12)
    assert [w.code for w in A.warnings] == ["ROW_RENORMALIZED"]


def test_read_matrix_rejects_bad_rows(tmp_path, chain_cfg):
    rows = np.loadtxt(fixture_path("example1_A.csv"), delimiter=",")
    rows[4, 0] += 0.2
    path = tmp_path / "bad.csv"
    np.savetxt(path, rows, delimiter=",")
    with pytest.raises(InvariantViolation) as err:
        read_matrix(str(path), chain_cfg)
    assert err.value.exit_code == 4


def test_matrix_size_defines_n(chain_cfg):
    entries = np.eye(6)
    entries[2] = [0.5, 0.5, 0, 0, 0, 0]
    entries[3:, 1] = 1.0
    entries[3:, 3:] = 0.0
    A = matrix_from_array(entries, chain_cfg)
    assert A.cfg.n_writeoff == 4
    assert [w.code for w in A.warnings] == ["N_FROM_MATRIX"]


@pytest.mark.parametrize("raw", [
    [[1.0, 0.0], [0.0, 1.0]],
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    [[float("nan")] * 6] * 6,
])
def test_matrix_from_array_shape_errors(raw, chain_cfg):
    with pytest.raises(InvariantViolation):
        matrix_from_array(raw, chain_cfg)


def test_negative_entries_rejected(chain_cfg):
    entries = np.loadtxt(fixture_path("example1_A.csv"), delimiter=",")
    entries[3, 0] = -0.1
    entries[3, 1] += 0.1
    with pytest.raises(InvariantViolation, match="negative"):
        matrix_from_array(entries, chain_cfg)


def test_read_matrix_parse_errors(tmp_path, chain_cfg):
    path = tmp_path / "text.csv"
    path.write_text("a,b\nc,d\n")
    with pytest.raises(ParseError):
        read_matrix(str(path), chain_cfg)
    with pytest.raises(ParseError):
        read_matrix(str(tmp_path / "missing.csv"), chain_cfg)


def test_write_matrix_six_decimals(tmp_path, example1):
    path = tmp_path / "out.csv"
    write_matrix(example1.entries, str(path))
    lines = path.read_text().splitlines()
    assert len(lines) == 10
    assert lines[2].startswith("0.370000,0.630000,0.000000")
