import numpy as np
import pytest

from services.absorption_service import absorb_matrix, early_warning_times, limit_matrix
from services.chain_service import TransitionMatrix
from services.config_service import ChainConfig, SimConfig
from services.errors import InvariantViolation
from services.simulation_service import (
    BLOCK_SIZE,
    TRACE_COLUMNS,
    compare_with_analytic,
    simulate_paths,
    simulate_portfolio,
)

from conftest import random_applicable_entries


def within(value, target, se, n_se=3.0):
    return abs(value - target) <= n_se * se + 1e-12


def test_example1_cure_from_s5(example1):
    sim = simulate_paths(example1, SimConfig(seed=7, n_paths=100_000, start_state=5))
    analytic = absorb_matrix(example1)
    estimate = sim.for_state(5)
    assert analytic.t_inf[3, 0] == pytest.approx(0.155, abs=0.01)
    assert estimate.n_paths == 100_000
    assert within(estimate.cured, analytic.t_inf[3, 0], estimate.se_cured)
    assert estimate.cured + estimate.lost + estimate.unabsorbed == pytest.approx(1.0, abs=1e-12)


def test_example1_time_and_visits_from_s3(example1):
    sim = simulate_paths(example1, SimConfig(seed=11, n_paths=100_000, start_state=3))
    analytic = absorb_matrix(example1)
    estimate = sim.for_state(3)
    assert analytic.expected_time[1] == pytest.approx(2.026, abs=0.02)
    assert within(estimate.mean_steps, analytic.expected_time[1], estimate.se_steps)
    for col in range(8):
        assert within(estimate.mean_visits[col], analytic.fundamental[1, col], estimate.se_visits[col], 4.0)


def random_chain(seed):
    rng = np.random.default_rng(seed)
    n_writeoff = int(rng.choice([4, 5, 6]))
    return TransitionMatrix(random_applicable_entries(rng, n_writeoff), ChainConfig(n_writeoff=n_writeoff))


@pytest.mark.slow
def test_random_chains_agree_with_analytic():
    deviations = []
    for seed in range(20):
        A = random_chain(seed)
        sim = simulate_paths(A, SimConfig(seed=seed, n_paths=100_000, start_state=3))
        (row,) = compare_with_analytic(sim, absorb_matrix(A))
        deviations.extend(abs(z) for z in (row["cure_z"], row["time_z"]))

    # 40 comparisons at P(|z| > 3) = 0.0027 expect 0.1 exceedances; three or more
    # happen with probability about 2e-4, any beyond 5 SE about 2e-5
    assert len(deviations) == 40
    assert sum(z > 3 for z in deviations) <= 2
    assert max(deviations) <= 5


@pytest.mark.slow
def test_cure_error_shrinks_like_root_n(example1):
    analytic = absorb_matrix(example1).t_inf[3, 0]
    sigma = np.sqrt(analytic * (1 - analytic))

    def rms_error(n_paths):
        errors = [
            simulate_paths(example1, SimConfig(seed=seed, n_paths=n_paths, start_state=5)).for_state(5).cured - analytic
            for seed in range(10)
        ]
        return float(np.sqrt(np.mean(np.square(errors))))

    small, large = rms_error(1_000), rms_error(100_000)
    assert 0.3 < small / (sigma / np.sqrt(1_000)) < 2.0
    assert 0.3 < large / (sigma / np.sqrt(100_000)) < 2.0
    assert 3 < small / large < 33


@pytest.mark.slow
def test_random_chain_visits_match_fundamental():
    for seed in range(100, 106):
        A = random_chain(seed)
        analytic = absorb_matrix(A)
        sim = simulate_paths(A, SimConfig(seed=seed, n_paths=50_000))
        for estimate in sim.per_start:
            row = analytic.fundamental[estimate.start_state - 2]
            slack = 4.0 * estimate.se_visits + 1e-3
            assert np.all(np.abs(estimate.mean_visits - row) <= slack), (seed, estimate.start_state)


@pytest.mark.slow
def test_early_warning_times_match_simulated_visits():
    for seed in range(200, 205):
        A = random_chain(seed)
        analytic = absorb_matrix(A)
        sim = simulate_paths(A, SimConfig(seed=seed, n_paths=100_000))

        # S2 only ever moves to cured or lost
        assert early_warning_times(analytic, 2, 3) == pytest.approx(0.0, abs=1e-12)
        assert sim.for_state(2).mean_visits[1] == 0.0

        from_s3 = sim.for_state(3)
        assert within(from_s3.mean_visits[2], early_warning_times(analytic, 3, 4), from_s3.se_visits[2], 4.0)


def test_results_do_not_depend_on_thread_count(example1):
    n_paths = 3 * BLOCK_SIZE + 100
    single = simulate_paths(example1, SimConfig(seed=3, n_paths=n_paths, threads=1))
    pooled = simulate_paths(example1, SimConfig(seed=3, n_paths=n_paths, threads=4))
    assert single.to_dict() == pooled.to_dict()


def test_different_seeds_differ(example1):
    a = simulate_paths(example1, SimConfig(seed=1, n_paths=2000, start_state=3))
    b = simulate_paths(example1, SimConfig(seed=2, n_paths=2000, start_state=3))
    assert a.to_dict() != b.to_dict()


def test_every_transitive_state_by_default(example1):
    sim = simulate_paths(example1, SimConfig(seed=5, n_paths=500))
    assert [e.start_state for e in sim.per_start] == list(range(2, 10))
    rows = compare_with_analytic(sim, absorb_matrix(example1))
    assert [r["start_state"] for r in rows] == list(range(2, 10))
    # S2 resolves in exactly one step
    assert sim.for_state(2).mean_steps == 1.0
    assert rows[0]["analytic_time"] == pytest.approx(1.0, abs=1e-12)


def test_single_path(example1):
    estimate = simulate_paths(example1, SimConfig(seed=9, n_paths=1, start_state=4)).for_state(4)
    assert estimate.cured in (0.0, 1.0)
    assert estimate.lost in (0.0, 1.0)
    assert estimate.cured + estimate.lost + estimate.unabsorbed == 1.0
    assert estimate.se_cured == 0.0


def test_start_row_straight_to_cured():
    entries = random_applicable_entries(np.random.default_rng(0), 4)
    entries[3] = np.eye(6)[0]
    A = TransitionMatrix(entries, ChainConfig(n_writeoff=4))
    estimate = simulate_paths(A, SimConfig(seed=1, n_paths=1000, start_state=3)).for_state(3)
    assert estimate.cured == 1.0
    assert estimate.mean_steps == 1.0
    assert estimate.se_steps == 0.0
    np.testing.assert_array_equal(estimate.mean_visits, [0.0, 1.0, 0.0, 0.0])


def test_starting_in_absorbing_state(example1):
    estimate = simulate_paths(example1, SimConfig(seed=1, n_paths=100, start_state=1)).for_state(1)
    assert estimate.lost == 1.0
    assert estimate.mean_steps == 0.0


def test_step_cap_reports_unabsorbed_mass(example1):
    sim = simulate_paths(example1, SimConfig(seed=2, n_paths=5000, max_steps=1, start_state=5))
    estimate = sim.for_state(5)
    assert estimate.unabsorbed > 0
    assert estimate.cured + estimate.lost + estimate.unabsorbed == pytest.approx(1.0, abs=1e-12)
    assert [w.code for w in sim.warnings] == ["UNABSORBED_MASS"]


def test_composition_start(example1):
    composition = (0, 0, 0.5, 0, 0, 0.5, 0, 0, 0, 0)
    sim = simulate_paths(example1, SimConfig(seed=4, n_paths=4000, start_state=composition))
    assert {e.start_state for e in sim.per_start} == {2, 5}
    assert sum(e.n_paths for e in sim.per_start) == 4000


def test_bad_start_states(example1):
    with pytest.raises(InvariantViolation):
        simulate_paths(example1, SimConfig(n_paths=10, start_state=10))
    with pytest.raises(InvariantViolation):
        simulate_paths(example1, SimConfig(n_paths=10, start_state=(1.0, 0.0, 0.0)))


def test_trace_frame(example1):
    sim = simulate_paths(example1, SimConfig(seed=6, n_paths=10, start_state=3, trace_paths=2))
    frame = sim.trace_frame()
    assert list(frame.columns) == TRACE_COLUMNS
    assert set(frame["path_id"]) == {0, 1}
    for _, path in frame.groupby("path_id"):
        assert path["step"].tolist() == list(range(len(path)))
        assert path["state"].iloc[0] == 3
        assert path["state"].iloc[-1] in (0, 1)


def test_trace_ids_are_unique_across_start_states(example1):
    sim = simulate_paths(example1, SimConfig(seed=6, n_paths=10, trace_paths=1))
    frame = sim.trace_frame()
    assert not frame.duplicated(["path_id", "step"]).any()
    first_states = frame[frame["step"] == 0].set_index("path_id")["state"]
    assert first_states.tolist() == list(range(2, 10))
    assert first_states.index.tolist() == [10 * run for run in range(8)]


def test_to_dict_is_json_friendly(example1):
    data = simulate_paths(example1, SimConfig(seed=1, n_paths=50, start_state=3)).to_dict()
    assert data["seed"] == 1
    assert len(data["per_start"]) == 1
    assert len(data["per_start"][0]["mean_visits"]) == 8


def test_portfolio_absorbing_mass_stays(example1):
    projection = simulate_portfolio(example1, np.eye(10)[0], horizon=5)
    np.testing.assert_array_equal(projection.yearly, np.tile(np.eye(10)[0], (5, 1)))


def test_portfolio_one_year_from_forborne(example1):
    projection = simulate_portfolio(example1, np.eye(10)[2], horizon=1)
    np.testing.assert_allclose(projection.yearly[0], [0.37, 0.63] + [0.0] * 8, atol=1e-12)


def test_portfolio_long_horizon_and_limit(example1):
    composition = np.full(10, 0.1)
    projection = simulate_portfolio(example1, composition, horizon=200)
    np.testing.assert_allclose(projection.yearly[-1, 2:], 0.0, atol=1e-9)
    expected_limit = composition @ limit_matrix(example1, absorb_matrix(example1))
    np.testing.assert_allclose(projection.limit, expected_limit, atol=1e-12)
    np.testing.assert_allclose(projection.yearly[-1], projection.limit, atol=1e-9)
    assert projection.yearly.sum(axis=1) == pytest.approx(np.ones(200), abs=1e-9)


def test_portfolio_cyclic_chain_has_no_limit(example2):
    projection = simulate_portfolio(example2, np.eye(10)[3], horizon=3)
    assert projection.limit is None
    assert projection.to_dict()["limit"] is None


def test_portfolio_validation(example1):
    with pytest.raises(InvariantViolation):
        simulate_portfolio(example1, np.ones(4), horizon=2)
    with pytest.raises(InvariantViolation):
        simulate_portfolio(example1, -np.eye(10)[3], horizon=2)
    with pytest.raises(InvariantViolation):
        simulate_portfolio(example1, np.eye(10)[3], horizon=0)
