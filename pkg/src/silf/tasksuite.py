"""Synthetic regression tasks with a controllable relevance structure.

Each task maps input vectors from the unit cube ``[-1, 1]^d`` to targets in
``[0, 1]``.  Linear tasks share a common reference direction; a task's
``relevance_angle`` rotates its own direction away from the reference, so 0
degrees reproduces the reference ranking, 90 degrees is unrelated, and an
``anti`` task reverses its base task's ranking exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .seeding import stream

GENERATORS = ("linear-sigmoid", "rbf-mixture", "anti")
TRAIN_FRACTION = 0.8
SQUASH_GAIN = 3.0
RBF_CENTERS = 4


class TaskSpecError(ValueError):
    """A synthetic task specification is inconsistent."""


class GenerationError(RuntimeError):
    """A generator produced unusable targets."""


class ParseError(ValueError):
    """A dataset CSV is malformed; the message carries the line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SyntheticTaskSpec:
    input_dim: int
    sample_count: int
    generator: str
    relevance_angle: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    base: "SyntheticTaskSpec | None" = None

    def __post_init__(self) -> None:
        if self.input_dim < 1:
            raise TaskSpecError("input_dim must be positive")
        if self.sample_count < 5:
            raise TaskSpecError("sample_count must be at least 5")
        if self.generator not in GENERATORS:
            raise TaskSpecError(f"unknown generator {self.generator!r}")
        if not 0.0 <= self.relevance_angle <= 180.0:
            raise TaskSpecError("relevance_angle must lie in [0, 180] degrees")
        if self.noise_sigma < 0.0:
            raise TaskSpecError("noise_sigma must be non-negative")
        if self.generator == "anti":
            if self.base is None:
                raise TaskSpecError("an anti task needs a base task")
            if self.base.generator == "anti":
                raise TaskSpecError("anti tasks cannot chain")
            if self.base.input_dim != self.input_dim:
                raise TaskSpecError("anti task must match its base's input_dim")
        elif self.base is not None:
            raise TaskSpecError("only anti tasks take a base task")


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self) -> None:
        n = self.inputs.shape[0]
        if self.targets.shape != (n,):
            raise ValueError("targets must match the number of input rows")
        if self.targets.size and (self.targets.min() < 0.0 or self.targets.max() > 1.0):
            raise ValueError("targets must lie in [0, 1]")
        combined = np.concatenate([self.train_idx, self.test_idx])
        if len(np.unique(combined)) != n or combined.size != n:
            raise ValueError("train/test split must be a disjoint, exhaustive partition")

    @property
    def sample_count(self) -> int:
        return int(self.inputs.shape[0])

    def train_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.train_idx], self.targets[self.train_idx]

    def test_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[self.test_idx], self.targets[self.test_idx]


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise GenerationError("degenerate zero direction")
    return v / norm


def direction_for(spec: SyntheticTaskSpec, reference: SyntheticTaskSpec | None) -> np.ndarray:
    """The task's weight direction, rotated ``relevance_angle`` degrees
    away from the reference task's direction (drawn from the reference seed)."""
    anchor = reference if reference is not None else spec
    ref_dir = _unit(stream(anchor.seed, "direction").standard_normal(spec.input_dim))
    angle = math.radians(spec.relevance_angle)
    if spec.relevance_angle == 0.0 or reference is None:
        return ref_dir
    raw = stream(spec.seed, "direction-ortho").standard_normal(spec.input_dim)
    raw = raw - (raw @ ref_dir) * ref_dir
    ortho = _unit(raw)
    return math.cos(angle) * ref_dir + math.sin(angle) * ortho


def _squash_rescale(z: np.ndarray) -> np.ndarray:
    spread = z.std()
    if spread == 0.0:
        raise GenerationError("constant raw targets; increase noise or sample diversity")
    zn = (z - z.mean()) / spread
    y = 1.0 / (1.0 + np.exp(-SQUASH_GAIN * zn))
    lo, hi = y.min(), y.max()
    if hi - lo < 0.5:
        raise GenerationError("squashed targets span too little of (0, 1)")
    return (y - lo) / (hi - lo)


def targets_on(
    spec: SyntheticTaskSpec,
    inputs: np.ndarray,
    noise_rng: np.random.Generator,
    *,
    reference: SyntheticTaskSpec | None = None,
) -> np.ndarray:
    """Apply a task's target pipeline to given inputs (shared with anti tasks)."""
    noise = noise_rng.normal(0.0, spec.noise_sigma, inputs.shape[0]) if spec.noise_sigma > 0 else 0.0
    if spec.generator == "linear-sigmoid":
        z = inputs @ direction_for(spec, reference) + noise
        return _squash_rescale(z)
    if spec.generator == "rbf-mixture":
        rng = stream(spec.seed, "rbf")
        centers = rng.uniform(-1.0, 1.0, size=(RBF_CENTERS, spec.input_dim))
        amplitudes = rng.uniform(0.5, 1.5, size=RBF_CENTERS) * np.where(
            np.arange(RBF_CENTERS) % 2 == 0, 1.0, -1.0
        )
        widths = rng.uniform(0.8, 1.4, size=RBF_CENTERS) * math.sqrt(spec.input_dim)
        dist2 = ((inputs[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        z = (amplitudes * np.exp(-dist2 / (2.0 * widths**2))).sum(axis=1) + noise
        return _squash_rescale(z)
    if spec.generator == "anti":
        base = spec.base
        assert base is not None
        return 1.0 - targets_on(base, inputs, noise_rng, reference=reference)
    raise TaskSpecError(f"unknown generator {spec.generator!r}")


def _split_indices(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    cut = int(math.floor(TRAIN_FRACTION * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def generate(spec: SyntheticTaskSpec, *, reference: SyntheticTaskSpec | None = None) -> Dataset:
    """Draw a full dataset for the spec, deterministic in the spec's seed."""
    inputs = stream(spec.seed, "inputs").uniform(-1.0, 1.0, size=(spec.sample_count, spec.input_dim))
    targets = targets_on(spec, inputs, stream(spec.seed, "noise"), reference=reference)
    train_idx, test_idx = _split_indices(spec.sample_count, stream(spec.seed, "split"))
    return Dataset(inputs, targets, train_idx, test_idx)


def resplit(dataset: Dataset, seed: int) -> Dataset:
    """Same samples, fresh deterministic 80/20 split."""
    train_idx, test_idx = _split_indices(dataset.sample_count, stream(seed, "resplit"))
    return Dataset(dataset.inputs, dataset.targets, train_idx, test_idx)


def repeat_splits(dataset: Dataset, trials: int, seeds: list[int] | None = None) -> list[Dataset]:
    """The original split plus ``trials - 1`` deterministic resplits."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if seeds is not None and len(seeds) != trials - 1:
        raise ValueError("need one seed per extra trial")
    out = [dataset]
    for i in range(trials - 1):
        out.append(resplit(dataset, seeds[i] if seeds is not None else i + 1))
    return out


# -- CSV round trip ----------------------------------------------------------

def _format(value: float) -> str:
    return format(value, ".17g")


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset with 17-significant-digit decimals; the round trip
    through :func:`load_csv` reproduces every float bit for bit."""
    d = dataset.inputs.shape[1]
    split = np.empty(dataset.sample_count, dtype=object)
    split[dataset.train_idx] = "train"
    split[dataset.test_idx] = "test"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join([f"x_{j}" for j in range(1, d + 1)] + ["y", "split"]) + "\n")
        for row in range(dataset.sample_count):
            cells = [_format(v) for v in dataset.inputs[row]]
            cells.append(_format(dataset.targets[row]))
            cells.append(split[row])
            fh.write(",".join(cells) + "\n")


def load_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(1, "empty file")
    header = lines[0].split(",")
    if len(header) < 3 or header[-2:] != ["y", "split"]:
        raise ParseError(1, f"expected header x_1..x_d,y,split, got {lines[0]!r}")
    d = len(header) - 2
    if header[:d] != [f"x_{j}" for j in range(1, d + 1)]:
        raise ParseError(1, f"expected header x_1..x_d,y,split, got {lines[0]!r}")

    inputs, targets, train_rows, test_rows = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != d + 2:
            raise ParseError(lineno, f"expected {d + 2} cells, got {len(cells)}")
        try:
            xs = [float(c) for c in cells[:d]]
            y = float(cells[d])
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        split = cells[d + 1]
        if split not in ("train", "test"):
            raise ParseError(lineno, f"split must be train or test, got {split!r}")
        row = len(inputs)
        inputs.append(xs)
        targets.append(y)
        (train_rows if split == "train" else test_rows).append(row)
    if not inputs:
        raise ParseError(2, "no data rows")
    return Dataset(
        np.array(inputs, dtype=np.float64),
        np.array(targets, dtype=np.float64),
        np.array(train_rows, dtype=np.int64),
        np.array(test_rows, dtype=np.int64),
    )


# -- default suite -----------------------------------------------------------

def default_suite(
    root_seed: int,
    n: int = 3,
    k: int = 3,
    input_dim: int = 8,
    sample_count: int = 2000,
    noise_sigma: float = 0.02,
) -> list[SyntheticTaskSpec]:
    """Six-task layout used by the bundled config.

    Preset stage: the reference linear task, a closely related 30 degree
    task, and an unrelated 90 degree task.  Additional stage: the exact
    reversal of task 1, a moderately related 45 degree task, and a
    nonlinear bump-mixture task.
    """
    from .seeding import child_seed

    def make(i: int, generator: str, angle: float = 0.0, base: SyntheticTaskSpec | None = None):
        return SyntheticTaskSpec(
            input_dim=input_dim,
            sample_count=sample_count,
            generator=generator,
            relevance_angle=angle,
            noise_sigma=noise_sigma,
            seed=child_seed(root_seed, "task", i, "data"),
            base=base,
        )

    plan: list[tuple[str, float, int | None]] = [
        ("linear-sigmoid", 0.0, None),
        ("linear-sigmoid", 30.0, None),
        ("linear-sigmoid", 90.0, None),
        ("anti", 0.0, 1),
        ("linear-sigmoid", 45.0, None),
        ("rbf-mixture", 0.0, None),
    ]
    if n + k > len(plan):
        raise TaskSpecError(f"the default suite covers at most {len(plan)} tasks")
    specs: list[SyntheticTaskSpec] = []
    for i, (gen, angle, base_idx) in enumerate(plan[: n + k], start=1):
        base = specs[base_idx - 1] if base_idx is not None else None
        specs.append(make(i, gen, angle, base))
    return specs
