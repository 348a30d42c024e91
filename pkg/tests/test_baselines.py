from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intercloud.baselines import (
    PLAIN_REQUEST_SIZE,
    STRUCTURE,
    BenchEnvironment,
    CostModel,
    block_sizes,
    calibrate,
    run_bench,
    run_variant,
    simulate,
    uncalibrated,
)
from intercloud.errors import CalibrationMissing, DegenerateFit, NonPositiveInput
from intercloud.metrics import GB, MB, VARIANTS, load_table1


@pytest.fixture(scope="module")
def calibration():
    return calibrate()


def test_baseline_100mb_is_12_5_seconds(calibration):
    assert run_variant(uncalibrated(), "baseline", 100 * MB).migration_time == 12.5
    assert run_variant(calibration, "baseline", 100 * MB).migration_time == 12.5


def test_plain_flow_matches_closed_form():
    env = BenchEnvironment(block_size=10 * MB)
    for size in (MB, 10 * MB, 35 * MB + 7, 100 * MB):
        sizes = block_sizes(size, env.block_size)
        expected = sum(sizes) * 8 / env.rate + (len(sizes) - 1) * PLAIN_REQUEST_SIZE * 8 / env.rate
        assert simulate(env, STRUCTURE["baseline"], size).migration_time == pytest.approx(expected, rel=1e-12)


def test_proposed_1gb_within_five_percent(calibration):
    assert run_variant(calibration, "proposed", GB).migration_time == pytest.approx(145.8, rel=0.05)


def test_every_cell_within_five_percent(calibration):
    table = load_table1()
    for v, row in table.items():
        for s, t in row.items():
            assert abs(run_variant(calibration, v, s).migration_time - t) / t <= 0.05, (v, s)
    assert calibration.max_abs_residual <= 0.05


def test_baseline_fit_has_no_cost_terms(calibration):
    assert calibration.models["baseline"] == CostModel()
    assert max(abs(r) for r in calibration.residuals["baseline"].values()) < 0.05


def test_secured2_costs_more_per_byte_than_proposed(calibration):
    assert calibration.models["secured2"].per_byte_crypto > calibration.models["proposed"].per_byte_crypto


def test_single_point_is_degenerate():
    with pytest.raises(DegenerateFit):
        calibrate({"baseline": {100 * MB: 12.5}, "proposed": {100 * MB: 12.7}})
    with pytest.raises(DegenerateFit):
        calibrate({"proposed": {100 * MB: 12.7, GB: 145.8}})


def test_missing_calibration():
    with pytest.raises(CalibrationMissing):
        run_variant(None, "proposed", MB)
    with pytest.raises(CalibrationMissing):
        run_variant(uncalibrated(), "mystery", MB)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(per_byte_crypto=-1)
    with pytest.raises(NonPositiveInput):
        block_sizes(0, 10)


def test_secdm_sends_one_ticket_per_block(calibration):
    env = calibration.environment
    r = simulate(env, calibration.models["secdm3"], 3 * env.block_size + 1)
    assert r.blocks == 4 and r.tickets == 4


@settings(max_examples=40, deadline=None)
@given(size=st.integers(1, 4 * GB))
def test_security_never_speeds_things_up(calibration, size):
    times = {v: run_variant(calibration, v, size).migration_time for v in VARIANTS}
    assert all(times["baseline"] < times[v] for v in VARIANTS[1:])


@settings(max_examples=40, deadline=None)
@given(size=st.integers(1024, 4 * GB))
def test_variant_ordering_from_one_kilobyte(calibration, size):
    times = {v: run_variant(calibration, v, size).migration_time for v in VARIANTS}
    assert times["baseline"] < times["proposed"] < times["secdm3"] < times["secured2"]


def test_ticket_frame_dominates_sub_kilobyte_files(calibration):
    # a 68-byte ticket outweighs secured2's per-byte crypto on a tiny block
    times = {v: run_variant(calibration, v, 100).migration_time for v in ("secdm3", "secured2")}
    assert times["secdm3"] > times["secured2"]


def test_bench_shape_and_determinism(calibration):
    recs = run_bench(calibration, [MB, 2 * MB], seed=3)
    assert len(recs) == 8
    assert recs == run_bench(calibration, [MB, 2 * MB], seed=3)
