"""End-to-end guarantees of the framework, one test per guarantee.

Each test states a behavioral contract and checks it at its stated
tolerance; the slow ones share a single full-scale run.
"""

import json
import math
import time

import numpy as np
import pytest

from silf import cli
from silf.config import build_datasets, default_config_text, parse_config
from silf.engine import probe_predictions, run_baseline, run_sequence
from silf.maskstore import MaskRegistry
from silf.metrics import (
    ScoreMatrix,
    average_accuracy,
    average_forgetting,
    average_plasticity,
)
from silf.neuralcore import (
    LayerSpec,
    NetworkParams,
    ParticipationView,
    backward,
    l1_loss,
    predict,
)
from silf.relevance import srcc

from conftest import config_text, run_from_text


@pytest.fixture(scope="module")
def default_run():
    """The bundled six-task sequence, timed end to end."""
    start = time.monotonic()
    setup, datasets, result = run_from_text(default_config_text())
    elapsed = time.monotonic() - start
    return setup, datasets, result, elapsed


def test_acceptance_01_preset_stage_replays_exactly_and_forgets_nothing():
    # three preset tasks, no additional stage: every archived probe must
    # replay bit for bit from the final model and no score may drop
    raw = json.loads(default_config_text())
    raw["sequence"]["k"] = 0
    raw["tasks"]["specs"] = raw["tasks"]["specs"][:3]
    start = time.monotonic()
    setup, datasets, result = run_from_text(json.dumps(raw))
    elapsed = time.monotonic() - start

    ckpt = result.checkpoint
    for task in (1, 2, 3):
        record = ckpt.records[task]
        assert probe_predictions(ckpt, task, "max").tobytes() == record.probe_max.tobytes()
        assert probe_predictions(ckpt, task, "min").tobytes() == record.probe_min.tobytes()
    assert average_forgetting(result.score_matrix) == 0.0
    assert elapsed < 60.0
    print(f"PASS 01: six probes bit-identical, forgetting exactly 0.0, {elapsed:.1f}s")


def test_acceptance_02_additional_tasks_live_entirely_off_reclaimed_weights(default_run):
    setup, datasets, result, elapsed = default_run
    ckpt = result.checkpoint
    registry = ckpt.registry

    # (a) the preset stage consumed the whole free pool
    assert registry.free_count() == 0
    assert registry.label_counts().get(0, 0) == 0

    # (b) each additional task owns exactly what its reclamation freed up
    counts = registry.label_counts()
    assert all(label > 0 for label in counts)
    for task in (4, 5, 6):
        reclaimed = ckpt.records[task].reclaimed_count
        assert reclaimed is not None and reclaimed > 0
        assert registry.owned_count(task) == reclaimed

    # (c) cannibalized preset tasks keep their minimum models bit for bit
    assert registry.cannibalized == {1, 2, 3}
    for task in (1, 2, 3):
        replay = probe_predictions(ckpt, task, "min").tobytes()
        assert replay == ckpt.records[task].probe_min.tobytes()

    # (d) no task ever grew the parameter or label storage
    weight_counts = {w for _, w, _ in result.storage_log}
    cell_counts = {c for _, _, c in result.storage_log}
    assert len(result.storage_log) == 6
    assert len(weight_counts) == 1
    assert cell_counts == {registry.storage_cells()}

    assert elapsed < 180.0
    print(
        "PASS 02: free pool 0, reclaimed pools "
        f"{[ckpt.records[t].reclaimed_count for t in (4, 5, 6)]} fully owned, "
        f"min models stable, storage constant, {elapsed:.1f}s"
    )


def test_acceptance_03_old_task_keeps_its_score_while_a_shared_model_loses_it():
    # a task followed by its own anti task: the framework must hold the first
    # score exactly, a single shared model must drop it by at least 0.3
    text = config_text(
        n=2,
        k=0,
        first_ratios=(0.6, 0.0),
        second_ratios=(0.5, 0.5),
        sample_count=1000,
        epochs_initial=40,
        specs=[
            {"generator": "linear-sigmoid", "relevance_angle": 0.0},
            {"generator": "anti", "base": 1},
        ],
    )
    start = time.monotonic()
    setup, datasets, result = run_from_text(text)
    matrix = result.score_matrix
    assert matrix.entry(2, 1) == matrix.entry(1, 1)

    shared = run_baseline(setup.config, datasets, "NO-RL").score_matrix
    assert shared.entry(2, 1) <= shared.entry(1, 1) - 0.3
    elapsed = time.monotonic() - start
    assert elapsed < 60.0
    print(
        f"PASS 03: isolated score held at {matrix.entry(1, 1):+.4f} exactly, "
        f"shared model fell {shared.entry(1, 1) - shared.entry(2, 1):+.4f}, {elapsed:.1f}s"
    )


def test_acceptance_04_muting_follows_the_measured_relevance(default_run):
    setup, datasets, result, _ = default_run
    ckpt = result.checkpoint
    rows = [(rep.task, row) for rep in result.relevance_reports for row in rep.rows]
    assert rows

    negative = [row for _, row in rows if row.srcc < -0.5]
    positive = [row for _, row in rows if row.srcc > 0.5]
    assert negative, "the suite must contain at least one strongly opposed pair"
    assert positive, "the suite must contain at least one strongly aligned pair"
    for row in negative:
        assert row.reuse_ratio <= 0.75
        assert row.reuse_ratio == 1.0 + setup.config.reuse_lambda * row.srcc
    for row in positive:
        assert row.reuse_ratio == 1.0

    # every measured pair mutes floor((1 - ratio) * owned) weights per layer,
    # where owned is what the earlier task still exposed at measurement time:
    # committed plus reclaimable until its heir (prev + n) has run, committed
    # only afterwards
    registry = ckpt.registry
    for task, row in rows:
        reuse = ckpt.records[task].reuse
        bitmaps = reuse.muted.get(row.prev_task) if reuse is not None else None
        total = 0
        for layer in range(len(registry.current)):
            got = int(bitmaps[layer].sum()) if bitmaps else 0
            if row.prev_task <= registry.n:
                snap = registry.archived_second[row.prev_task][layer]
                if task <= row.prev_task + registry.n:
                    owned = int((np.abs(snap) == row.prev_task).sum())
                else:
                    owned = int((snap == row.prev_task).sum())
            else:
                owned = int((registry.current[layer] == row.prev_task).sum())
            expected = math.floor((1.0 - row.reuse_ratio) * owned)
            assert abs(got - expected) <= 1
            total += got
        assert row.muted_count == total

    srccs = [row.srcc for _, row in rows]
    print(
        f"PASS 04: {len(rows)} measured pairs, srcc in [{min(srccs):+.3f}, {max(srccs):+.3f}], "
        "muting matches the floor rule per layer"
    )


def test_acceptance_05_summary_metrics_reproduce_reference_values():
    final = [0.8472, 0.8779, 0.8680, 0.8569, 0.8765, 0.8645]
    m = ScoreMatrix()
    for t in range(6):
        m.append_row(final[: t + 1])
    assert abs(average_accuracy(m) - 0.8652) < 0.0001

    two = ScoreMatrix()
    two.append_row([0.8039])
    two.append_row([0.0668, 0.8658])
    assert abs(average_forgetting(two) - 0.7371) < 1e-6
    assert abs(average_plasticity(two) - 0.83485) < 1e-6
    print("PASS 05: 0.8652 / 0.7371 / 0.83485 reproduced at stated tolerances")


def _rank_brute(values):
    v = np.asarray(values, dtype=np.float64)
    less = (v[:, None] > v[None, :]).sum(axis=1).astype(np.float64)
    equal = (v[:, None] == v[None, :]).sum(axis=1).astype(np.float64)
    return less + (equal + 1) / 2.0


def _srcc_brute(a, b):
    return float(np.corrcoef(_rank_brute(a), _rank_brute(b))[0, 1])


def test_acceptance_06_rank_correlation_matches_brute_force_everywhere():
    rng = np.random.default_rng(606)
    worst = 0.0
    for trial in range(1000):
        n = int(rng.integers(3, 51))
        if trial % 2 == 0:
            a = rng.normal(size=n)
            b = rng.normal(size=n)
        else:
            # coarse grids force heavy ties in both sequences
            a = rng.integers(0, 4, size=n).astype(np.float64)
            b = rng.integers(0, 4, size=n).astype(np.float64)
            if np.all(a == a[0]):
                a[0] += 1.0
            if np.all(b == b[0]):
                b[0] += 1.0
        diff = abs(srcc(a, b) - _srcc_brute(a, b))
        worst = max(worst, diff)
    assert worst < 1e-12

    # strictly increasing transforms must not move the statistic
    for trial in range(100):
        n = int(rng.integers(3, 51))
        a = rng.uniform(-2.0, 2.0, size=n)
        b = rng.uniform(-2.0, 2.0, size=n)
        reference = srcc(a, b)
        for transformed in (np.exp(a), a**3, 2.0 * a + 3.0):
            assert abs(srcc(transformed, b) - reference) < 1e-12
    print(f"PASS 06: 1000 pairs within {worst:.2e} of brute force, transforms invariant")


def _finite_difference(params, view, X, y, h=1e-5):
    grads_w = []
    grads_b = []
    for layer in range(len(params.specs)):
        gw = np.zeros_like(params.weights[layer])
        for idx in np.ndindex(*params.weights[layer].shape):
            orig = params.weights[layer][idx]
            params.weights[layer][idx] = orig + h
            up = l1_loss(params, view, X, y)
            params.weights[layer][idx] = orig - h
            down = l1_loss(params, view, X, y)
            params.weights[layer][idx] = orig
            gw[idx] = (up - down) / (2 * h)
        grads_w.append(gw)
        gb = np.zeros_like(params.biases[layer])
        for j in range(gb.size):
            orig = params.biases[layer][j]
            params.biases[layer][j] = orig + h
            up = l1_loss(params, view, X, y)
            params.biases[layer][j] = orig - h
            down = l1_loss(params, view, X, y)
            params.biases[layer][j] = orig
            gb[j] = (up - down) / (2 * h)
        grads_b.append(gb)
    return grads_w, grads_b


def _corner_margin(params, X, y):
    """Distance to the nearest loss corner: relu kinks and |pred - target|."""
    a = X
    margin = np.inf
    for spec, w, b in zip(params.specs, params.weights, params.biases):
        z = a @ w.T + b
        if spec.activation == "relu":
            margin = min(margin, float(np.abs(z).min()))
            a = np.maximum(z, 0.0)
        else:
            a = 1.0 / (1.0 + np.exp(-z))
    return min(margin, float(np.abs(a[:, 0] - y).min()))


def test_acceptance_07_analytic_gradients_match_central_differences():
    # central differences are invalid within h of a corner of the loss, so
    # nets whose pre-activations or residuals come too close are redrawn
    rng = np.random.default_rng(707)
    checked = 0
    worst = 0.0
    while checked < 20:
        depth = int(rng.integers(1, 4))
        dims = [int(rng.integers(2, 5)) for _ in range(depth)] + [1]
        specs = tuple(
            LayerSpec(dims[i], dims[i + 1], "sigmoid" if i == depth - 1 else "relu")
            for i in range(depth)
        )
        params = NetworkParams.init_random(specs, rng)
        for b in params.biases:
            b[:] = rng.uniform(-0.3, 0.3, size=b.shape)
        assert params.weight_count() <= 64
        view = ParticipationView.full(params)
        X = rng.uniform(-1, 1, size=(8, dims[0]))
        y = rng.uniform(0.05, 0.95, size=8)
        if _corner_margin(params, X, y) < 1e-3:
            continue

        an = backward(params, view, X, y)
        fd_w, fd_b = _finite_difference(params, view, X, y)
        for layer in range(len(params.specs)):
            for fd, got in ((fd_w[layer], an.weights[layer]), (fd_b[layer], an.biases[layer])):
                denom = np.maximum(np.maximum(np.abs(fd), np.abs(got)), 1e-6)
                worst = max(worst, float((np.abs(fd - got) / denom).max()))
        checked += 1
    assert worst < 1e-4
    print(f"PASS 07: 20 nets, max relative gradient error {worst:.2e}")


def test_acceptance_08_prune_keep_sets_match_an_exhaustive_sort():
    rng = np.random.default_rng(808)
    tie_grid = np.array([-0.3, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.3])
    for trial in range(200):
        c = int(rng.integers(1, 41))
        if trial % 2 == 0:
            w0 = rng.normal(size=c)
        else:
            w0 = rng.choice(tie_grid, size=c)
        spec = LayerSpec(c, 1, "sigmoid")
        params = NetworkParams.init_random((spec,), rng)
        params.weights[0][:] = w0.reshape(1, -1)
        registry = MaskRegistry.for_params(params, n=1, k=0)

        # scale keeps at least one weight to commit even for c == 1
        r1 = float(rng.uniform(0.0, 1.0)) * (c - 1) / c
        r2 = float(rng.uniform(0.0, 1.0))

        order = sorted(range(c), key=lambda i: (abs(w0[i]), i))
        count1 = math.ceil(r1 * c - 1e-9)
        zeroed = order[:count1]
        kept = sorted(order[count1:])

        registry.first_prune(params, 1, r1)
        labels = registry.current[0].reshape(-1)
        weights = params.weights[0].reshape(-1)
        assert np.flatnonzero(labels == 1).tolist() == kept
        assert all(weights[i] == 0.0 for i in zeroed)
        assert all(weights[i] == w0[i] for i in kept)

        order2 = sorted(kept, key=lambda i: (abs(w0[i]), i))
        count2 = math.ceil(r2 * len(kept) - 1e-9)
        flagged = sorted(order2[:count2])
        committed = sorted(order2[count2:])

        registry.second_prune(params, 1, r2)
        assert np.flatnonzero(labels == -1).tolist() == flagged
        assert np.flatnonzero(labels == 1).tolist() == committed
        assert all(weights[i] == w0[i] for i in kept)
    print("PASS 08: 200 random layers, both keep-sets exact including ties")


def test_acceptance_09_identical_runs_produce_identical_bytes(tmp_path):
    cfg = tmp_path / "default.json"
    cfg.write_text(default_config_text())
    outs = (tmp_path / "first", tmp_path / "second")
    for out in outs:
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    first, second = outs
    assert (first / "silf.ckpt").read_bytes() == (second / "silf.ckpt").read_bytes()
    matrix_bytes = (first / "score_matrix.csv").read_bytes()
    assert matrix_bytes == (second / "score_matrix.csv").read_bytes()
    print("PASS 09: checkpoint and score matrix byte-identical across reruns")


def test_acceptance_10_aligned_suite_makes_relevance_muting_a_no_op(tmp_path):
    # every pair ranks the same way, so nothing is ever muted and the run
    # must equal the zero-lambda baseline bit for bit
    text = config_text(
        n=3,
        k=0,
        first_ratios=(0.6, 0.3, 0.0),
        second_ratios=(0.5, 0.5, 0.5),
        seed=77,
        sample_count=1200,
        specs=[
            {"generator": "linear-sigmoid", "relevance_angle": angle}
            for angle in (0.0, 20.0, 40.0)
        ],
    )
    setup = parse_config(text)
    datasets = build_datasets(setup)
    guided = tmp_path / "guided.ckpt"
    unguided = tmp_path / "unguided.ckpt"

    result = run_sequence(
        setup.config, datasets, out_path=guided, config_json=setup.canonical_json
    )
    rows = [row for rep in result.relevance_reports for row in rep.rows]
    assert rows and all(row.srcc >= 0.0 for row in rows)
    assert all(row.reuse_ratio == 1.0 and row.muted_count == 0 for row in rows)

    run_baseline(setup.config, datasets, "NO-RR", out_path=unguided, config_json=setup.canonical_json)
    assert guided.read_bytes() == unguided.read_bytes()
    print(f"PASS 10: {len(rows)} aligned pairs, guided run equals zero-lambda run bit for bit")
