"""Strict JSON run configuration.

One file with four sections (net, sequence, optimizer, tasks).  Unknown
keys anywhere are rejected so typos fail loudly instead of silently
falling back to defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .engine import OptimizerSettings, SequenceConfig
from .seeding import child_seed
from .tasksuite import Dataset, SyntheticTaskSpec, generate

DEFAULT_CONFIG_NAME = "default.json"


class ConfigError(ValueError):
    """The run configuration is invalid; the message names the constraint."""


@dataclass
class RunSetup:
    config: SequenceConfig
    task_specs: list[SyntheticTaskSpec]
    canonical_json: str
    input_dim: int


def _require_keys(section: dict, name: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> None:
    for key in section:
        if key not in required and key not in optional:
            raise ConfigError(f"unknown key {key!r} in section {name!r}")
    for key in required:
        if key not in section:
            raise ConfigError(f"section {name!r} is missing required key {key!r}")


def _number(section: dict, name: str, key: str, kind=float):
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}.{key} must be a number, got {value!r}")
    if kind is int and not isinstance(value, int):
        raise ConfigError(f"{name}.{key} must be an integer, got {value!r}")
    return kind(value)


def default_config_text() -> str:
    return resources.files("silf.configs").joinpath(DEFAULT_CONFIG_NAME).read_text(encoding="utf-8")


def parse_config(text: str, seed_override: int | None = None) -> RunSetup:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(raw, "config", ("net", "sequence", "optimizer", "tasks"))

    net = raw["net"]
    _require_keys(net, "net", ("input_dim", "hidden_dims"))
    input_dim = _number(net, "net", "input_dim", int)
    hidden = net["hidden_dims"]
    if not isinstance(hidden, list) or not hidden or not all(isinstance(h, int) and h > 0 for h in hidden):
        raise ConfigError("net.hidden_dims must be a non-empty list of positive integers")

    seq = raw["sequence"]
    _require_keys(
        seq,
        "sequence",
        ("n", "k", "first_ratios", "second_ratios", "seed"),
        ("lambda", "epochs_initial", "epochs_cycle", "cycles", "batch_size", "reclaim_policy"),
    )
    opt = raw["optimizer"]
    _require_keys(opt, "optimizer", (), ("base_lr", "decay_factor", "decay_every"))

    for ratios_key in ("first_ratios", "second_ratios"):
        value = seq[ratios_key]
        if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
        ):
            raise ConfigError(f"sequence.{ratios_key} must be a list of numbers")

    seed = _number(seq, "sequence", "seed", int)
    if seed_override is not None:
        seed = seed_override

    opt_kwargs = {}
    if "base_lr" in opt:
        opt_kwargs["base_lr"] = _number(opt, "optimizer", "base_lr")
    if "decay_factor" in opt:
        opt_kwargs["decay_factor"] = _number(opt, "optimizer", "decay_factor")
    if "decay_every" in opt:
        opt_kwargs["decay_every"] = _number(opt, "optimizer", "decay_every", int)
    optimizer = OptimizerSettings(**opt_kwargs)
    config = SequenceConfig(
        n=_number(seq, "sequence", "n", int),
        k=_number(seq, "sequence", "k", int),
        first_ratios=[float(v) for v in seq["first_ratios"]],
        second_ratios=[float(v) for v in seq["second_ratios"]],
        reuse_lambda=_number(seq, "sequence", "lambda") if "lambda" in seq else 0.5,
        epochs_initial=_number(seq, "sequence", "epochs_initial", int) if "epochs_initial" in seq else 80,
        epochs_cycle=_number(seq, "sequence", "epochs_cycle", int) if "epochs_cycle" in seq else 20,
        cycles=_number(seq, "sequence", "cycles", int) if "cycles" in seq else 2,
        batch_size=_number(seq, "sequence", "batch_size", int) if "batch_size" in seq else 32,
        seed=seed,
        reclaim_policy=seq.get("reclaim_policy", "reinit"),
        hidden_dims=tuple(hidden),
        optimizer=optimizer,
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    tasks = raw["tasks"]
    _require_keys(tasks, "tasks", ("sample_count", "specs"), ("noise_sigma",))
    sample_count = _number(tasks, "tasks", "sample_count", int)
    noise_default = _number(tasks, "tasks", "noise_sigma") if "noise_sigma" in tasks else 0.02
    spec_rows = tasks["specs"]
    if not isinstance(spec_rows, list):
        raise ConfigError("tasks.specs must be a list")
    if len(spec_rows) != config.n + config.k:
        raise ConfigError(
            f"tasks.specs must list exactly n + k = {config.n + config.k} tasks, got {len(spec_rows)}"
        )

    task_specs: list[SyntheticTaskSpec] = []
    for index, row in enumerate(spec_rows, start=1):
        if not isinstance(row, dict):
            raise ConfigError(f"tasks.specs[{index - 1}] must be an object")
        _require_keys(
            row, f"tasks.specs[{index - 1}]", ("generator",), ("relevance_angle", "base", "noise_sigma", "seed")
        )
        generator = row["generator"]
        base_spec = None
        if generator == "anti":
            if "base" not in row:
                raise ConfigError(f"task {index}: an anti task needs a 'base' task index")
            base_index = row["base"]
            if not isinstance(base_index, int) or not 1 <= base_index < index:
                raise ConfigError(f"task {index}: base must name an earlier task, got {base_index!r}")
            base_spec = task_specs[base_index - 1]
        try:
            task_specs.append(
                SyntheticTaskSpec(
                    input_dim=input_dim,
                    sample_count=sample_count,
                    generator=generator,
                    relevance_angle=float(row.get("relevance_angle", 0.0)),
                    noise_sigma=float(row.get("noise_sigma", noise_default)),
                    seed=row.get("seed", child_seed(seed, "task", index, "data")),
                    base=base_spec,
                )
            )
        except ValueError as exc:
            raise ConfigError(f"task {index}: {exc}") from exc

    effective = dict(raw)
    effective["sequence"] = dict(seq)
    effective["sequence"]["seed"] = seed
    canonical = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return RunSetup(config=config, task_specs=task_specs, canonical_json=canonical, input_dim=input_dim)


def load_config(path: str | Path | None, seed_override: int | None = None) -> RunSetup:
    """Parse the config file, or the bundled default when no path is given."""
    if path is None:
        return parse_config(default_config_text(), seed_override)
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config(p.read_text(encoding="utf-8"), seed_override)


def build_datasets(setup: RunSetup) -> list[Dataset]:
    """Generate every task's dataset, with task 1 as the shared reference."""
    reference = setup.task_specs[0] if setup.task_specs else None
    datasets = []
    for i, spec in enumerate(setup.task_specs):
        ref = None if i == 0 else reference
        datasets.append(generate(spec, reference=ref))
    return datasets
