"""Shared fixtures: the bundled case, its solution, and a desk-scale dataset.

Session scope keeps the expensive artifacts (the 288-point dataset above
all) built once and reused across test modules.
"""

from __future__ import annotations

import time

import pytest

from fdibench import (
    DatasetConfig,
    generate_attack_records,
    generate_normal_records,
    generate_measurements,
    load_wscc9,
    solve_ac_powerflow,
    synthesize_demand_profile,
    write_dataset,
)


@pytest.fixture(scope="session")
def wscc9():
    return load_wscc9()


@pytest.fixture(scope="session")
def base_state(wscc9):
    return solve_ac_powerflow(wscc9)


@pytest.fixture(scope="session")
def genuine_meas(wscc9, base_state):
    return generate_measurements(wscc9, base_state)


@pytest.fixture(scope="session")
def desk_dataset(wscc9, tmp_path_factory):
    """288 demand points -> 288 normal + 576 attack records, written once.

    Returns (records, manifest, elapsed_seconds, out_dir); the timing covers
    generation plus writing, which is what a user-facing run costs.
    """
    profile = synthesize_demand_profile(points=288, cadence_minutes=30)
    config = DatasetConfig()
    out = tmp_path_factory.mktemp("desk_dataset")
    skip_log: list = []
    t0 = time.perf_counter()
    records = list(generate_normal_records(profile, wscc9, config, skip_log))
    records += list(generate_attack_records(profile, wscc9, config, skip_log))
    manifest = write_dataset(
        iter(records), out, records_per_file=config.records_per_file,
        config=config, skip_log=skip_log, source=profile.source,
    )
    elapsed = time.perf_counter() - t0
    return records, manifest, elapsed, out
