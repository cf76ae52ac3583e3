"""Shared builders for small, fast task sequences used across the tests."""

import json

import pytest

from silf.config import build_datasets, parse_config
from silf.engine import run_sequence


def config_text(
    *,
    n=2,
    k=1,
    input_dim=6,
    hidden=(10, 6),
    first_ratios=(0.6, 0.0),
    second_ratios=(0.5, 0.5),
    seed=4242,
    sample_count=500,
    epochs_initial=25,
    epochs_cycle=8,
    cycles=1,
    base_lr=0.05,
    decay_every=10,
    specs=None,
    noise_sigma=0.02,
):
    """A JSON config string for a small sequence; specs default to
    (reference linear, 35 degree linear, anti of task 1) truncated to n + k."""
    if specs is None:
        specs = [
            {"generator": "linear-sigmoid", "relevance_angle": 0.0},
            {"generator": "linear-sigmoid", "relevance_angle": 35.0},
            {"generator": "anti", "base": 1},
        ][: n + k]
    return json.dumps(
        {
            "net": {"input_dim": input_dim, "hidden_dims": list(hidden)},
            "sequence": {
                "n": n,
                "k": k,
                "first_ratios": list(first_ratios),
                "second_ratios": list(second_ratios),
                "seed": seed,
                "epochs_initial": epochs_initial,
                "epochs_cycle": epochs_cycle,
                "cycles": cycles,
                "batch_size": 32,
            },
            "optimizer": {"base_lr": base_lr, "decay_factor": 0.5, "decay_every": decay_every},
            "tasks": {"sample_count": sample_count, "noise_sigma": noise_sigma, "specs": specs},
        }
    )


def run_from_text(text):
    setup = parse_config(text)
    datasets = build_datasets(setup)
    result = run_sequence(setup.config, datasets, config_json=setup.canonical_json)
    return setup, datasets, result


@pytest.fixture(scope="session")
def small_run():
    """One 2-preset + 1-additional sequence shared by read-only tests."""
    return run_from_text(config_text())
