import numpy as np
import pytest

from silf.maskstore import (
    CapacityError,
    DoubleReclaimError,
    LifecycleError,
    MaskRegistry,
    ReuseRecord,
    ScalabilityExceededError,
    StaleModelError,
    count_from_ratio,
)
from silf.neuralcore import LayerSpec, NetworkParams


def _single_layer_params(weights_flat):
    """One sigmoid layer (d inputs, 1 output) with forced weight values."""
    w = np.asarray(weights_flat, dtype=np.float64).reshape(1, -1)
    spec = LayerSpec(w.shape[1], 1, "sigmoid")
    params = NetworkParams.init_random((spec,), np.random.default_rng(0))
    params.weights[0][:] = w
    return params


def test_count_from_ratio_acts_on_decimal_ratios_as_written():
    # 0.4 * 5 floats a hair above 2.0; the count must still be 2
    assert count_from_ratio(0.4, 5) == 2
    assert count_from_ratio(0.5, 3) == 2
    assert count_from_ratio(0.0, 7) == 0
    assert count_from_ratio(0.7, 10) == 7
    assert count_from_ratio(0.3, 0) == 0
    with pytest.raises(ValueError):
        count_from_ratio(1.0, 4)
    with pytest.raises(ValueError):
        count_from_ratio(-0.1, 4)
    with pytest.raises(ValueError):
        count_from_ratio(0.5, -1)


def test_first_prune_zeroes_smallest_and_commits_the_rest():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=2, k=1)
    out = reg.first_prune(params, 1, 0.5)

    # two smallest |w| (0.1 and 0.2) go back to the free pool at value 0
    assert reg.current[0].reshape(-1).tolist() == [0, 1, 1, 0]
    assert params.weights[0].reshape(-1).tolist() == [0.0, -0.5, 0.3, 0.0]
    assert out.stage == "first"
    assert out.kept_count == 2
    assert out.pruned_count == 2
    assert out.layers[0].threshold == 0.3
    # the post-pass labels are archived as the full-model snapshot
    assert reg.archived_first[1][0].reshape(-1).tolist() == [0, 1, 1, 0]


def test_first_prune_breaks_magnitude_ties_toward_lower_flat_index():
    params = _single_layer_params([0.2, -0.2, 0.2, 0.3])
    reg = MaskRegistry.for_params(params, n=1, k=0)
    reg.first_prune(params, 1, 0.5)
    assert reg.current[0].reshape(-1).tolist() == [0, 0, 1, 1]
    assert params.weights[0].reshape(-1).tolist() == [0.0, 0.0, 0.2, 0.3]


def test_second_prune_relabels_without_touching_values():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=2, k=1)
    reg.first_prune(params, 1, 0.5)
    before = params.weights[0].copy()

    out = reg.second_prune(params, 1, 0.5)
    assert reg.current[0].reshape(-1).tolist() == [0, 1, -1, 0]
    assert np.array_equal(params.weights[0], before)
    assert out.stage == "second"
    assert out.pruned_count == 1
    assert out.layers[0].threshold == 0.5
    assert reg.archived_second[1][0].reshape(-1).tolist() == [0, 1, -1, 0]


def test_second_prune_threshold_is_infinite_when_nothing_remains_committed():
    params = _single_layer_params([0.4, 0.6])
    reg = MaskRegistry.for_params(params, n=1, k=0)
    reg.first_prune(params, 1, 0.0)
    out = reg.second_prune(params, 1, 0.9)
    # ceil(0.9 * 2) = 2 flags everything; no committed weight sets a threshold
    assert out.layers[0].pruned_count == 2
    assert out.layers[0].threshold == float("inf")


def test_prune_lifecycle_errors():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=1, k=0)
    with pytest.raises(LifecycleError):
        reg.first_prune(params, 2, 0.5)
    with pytest.raises(LifecycleError):
        reg.second_prune(params, 1, 0.5)
    reg.first_prune(params, 1, 0.5)
    with pytest.raises(LifecycleError):
        reg.first_prune(params, 1, 0.5)
    reg.second_prune(params, 1, 0.5)
    with pytest.raises(LifecycleError):
        reg.second_prune(params, 1, 0.5)


def test_first_prune_capacity_error_when_nothing_would_be_kept():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=1, k=0)
    with pytest.raises(CapacityError) as err:
        reg.first_prune(params, 1, 0.99)
    assert "layer 0" in str(err.value)
    # the failed pass must not have altered anything
    assert reg.free_count() == 4
    assert params.weights[0].reshape(-1).tolist() == [0.1, -0.5, 0.3, -0.2]


def test_second_prune_capacity_error_names_the_empty_layer():
    params = NetworkParams.init_random(
        (LayerSpec(2, 2, "relu"), LayerSpec(2, 1, "sigmoid")), np.random.default_rng(3)
    )
    reg = MaskRegistry.for_params(params, n=1, k=0)
    # hand-built state: task 1 owns weights in layer 0 only
    reg.current[0][:] = 1
    reg.archived_first[1] = reg._snapshot()
    with pytest.raises(CapacityError) as err:
        reg.second_prune(params, 1, 0.5)
    assert "layer 1" in str(err.value)


def _two_task_registry():
    """Forced four-weight lifecycle used by the reclamation tests.

    After the two preset tasks: labels [2, 1, -1, -2], weights
    [0.4, -0.5, 0.3, 0.05].
    """
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=2, k=1)
    reg.first_prune(params, 1, 0.5)
    reg.second_prune(params, 1, 0.5)
    params.weights[0][0, 0] = 0.4
    params.weights[0][0, 3] = 0.05
    reg.first_prune(params, 2, 0.0)
    reg.second_prune(params, 2, 0.5)
    return params, reg


def test_reclaim_hands_the_donor_pool_to_the_additional_task():
    params, reg = _two_task_registry()
    assert reg.current[0].reshape(-1).tolist() == [2, 1, -1, -2]

    count = reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(7))
    assert count == 1
    assert reg.current[0].reshape(-1).tolist() == [2, 1, 3, -2]
    assert reg.cannibalized == {1}
    # reinitialized inside the seeded span, everything else untouched
    w = params.weights[0].reshape(-1)
    assert abs(w[2]) <= 0.01 and w[2] != 0.3
    assert w[0] == 0.4 and w[1] == -0.5 and w[3] == 0.05
    assert reg.archived_first[3][0].reshape(-1).tolist() == [2, 1, 3, -2]


def test_reclaim_keep_values_policy_preserves_weights():
    params, reg = _two_task_registry()
    reg.reclaim_for_additional(params, 3, policy="keep-values")
    assert params.weights[0].reshape(-1).tolist() == [0.4, -0.5, 0.3, 0.05]
    assert reg.current[0].reshape(-1).tolist() == [2, 1, 3, -2]


def test_reclaim_guards():
    params, reg = _two_task_registry()
    with pytest.raises(ValueError):
        reg.reclaim_for_additional(params, 3, policy="discard")
    with pytest.raises(ValueError):
        reg.reclaim_for_additional(params, 3)
    with pytest.raises(LifecycleError):
        reg.reclaim_for_additional(params, 2, rng=np.random.default_rng(0))
    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    with pytest.raises(DoubleReclaimError):
        reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))


def test_reclaim_scalability_limit_is_n_additional_tasks():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=1, k=2)
    reg.first_prune(params, 1, 0.5)
    reg.second_prune(params, 1, 0.5)
    with pytest.raises(ScalabilityExceededError):
        reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))


def test_reclaim_requires_a_finished_donor():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=1, k=1)
    reg.first_prune(params, 1, 0.5)
    with pytest.raises(LifecycleError):
        reg.reclaim_for_additional(params, 2, rng=np.random.default_rng(0))


def test_compose_view_max_and_min():
    params, reg = _two_task_registry()
    vmax = reg.compose_view(1, "max")
    vmin = reg.compose_view(1, "min")
    assert vmax.forward[0].reshape(-1).tolist() == [False, True, True, False]
    assert vmin.forward[0].reshape(-1).tolist() == [False, True, False, False]
    # inference views never train anything
    assert not vmax.trainable[0].any()
    assert not vmax.train_biases


def test_compose_view_errors():
    params, reg = _two_task_registry()
    with pytest.raises(ValueError):
        reg.compose_view(1, "full")
    with pytest.raises(LifecycleError):
        reg.compose_view(3, "max")
    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    with pytest.raises(StaleModelError) as err:
        reg.compose_view(1, "max")
    assert "min view" in str(err.value)
    # the min view survives cannibalization
    assert reg.compose_view(1, "min").forward[0].reshape(-1).tolist() == [False, True, False, False]


def test_reclaimed_positions_drop_out_of_borrower_views_automatically():
    params, reg = _two_task_registry()
    reuse = ReuseRecord(task=2, ratios={1: 1.0}, muted={1: [np.zeros((1, 4), dtype=bool)]})
    before = reg.compose_view(2, "max", reuse)
    assert before.forward[0].reshape(-1).tolist() == [True, True, True, True]

    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    after = reg.compose_view(2, "max", reuse)
    assert after.forward[0].reshape(-1).tolist() == [True, True, False, True]


def test_min_views_never_borrow_reclaimable_positions():
    # index 2 is task 1 reclaimable; a borrower's min view must not rest on
    # it even while it is still intact, or reclamation would change the view
    params, reg = _two_task_registry()
    reuse = ReuseRecord(task=2, ratios={1: 1.0}, muted={1: [np.zeros((1, 4), dtype=bool)]})
    before = reg.compose_view(2, "min", reuse)
    assert before.forward[0].reshape(-1).tolist() == [True, True, False, False]
    tmin = reg.trainable_view(2, "min_finetune", reuse)
    assert tmin.forward[0].reshape(-1).tolist() == [True, True, False, False]

    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    after = reg.compose_view(2, "min", reuse)
    assert after.forward[0].tobytes() == before.forward[0].tobytes()


def test_muted_positions_are_excluded_but_values_survive():
    params, reg = _two_task_registry()
    muted = [np.zeros((1, 4), dtype=bool)]
    muted[0][0, 1] = True
    reuse = ReuseRecord(task=2, ratios={1: 0.6}, muted={1: muted})
    assert reuse.muted_count(1) == 1
    assert reuse.muted_count(9) == 0
    view = reg.compose_view(2, "max", reuse)
    assert view.forward[0].reshape(-1).tolist() == [True, False, True, True]
    # muting is a view concern only; the owner's view and values are intact
    assert reg.compose_view(1, "max").forward[0].reshape(-1).tolist() == [False, True, True, False]
    assert params.weights[0][0, 1] == -0.5


def test_trainable_views_per_phase():
    params, reg = _two_task_registry()
    vmax = reg.trainable_view(1, "max_finetune")
    assert vmax.trainable[0].reshape(-1).tolist() == [False, True, True, False]
    vmin = reg.trainable_view(1, "min_finetune")
    assert vmin.trainable[0].reshape(-1).tolist() == [False, True, False, False]
    assert vmax.train_biases and vmin.train_biases

    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    v3 = reg.trainable_view(3, "max_finetune")
    assert v3.trainable[0].reshape(-1).tolist() == [False, False, True, False]


def test_trainable_view_lifecycle_errors():
    params, reg = _two_task_registry()
    with pytest.raises(ValueError):
        reg.trainable_view(1, "warmup")
    with pytest.raises(LifecycleError):
        reg.trainable_view(1, "initial")  # already owns weights
    with pytest.raises(LifecycleError):
        reg.trainable_view(3, "initial")  # additional tasks never train the free pool
    with pytest.raises(LifecycleError):
        reg.trainable_view(3, "max_finetune")  # owns nothing yet
    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    with pytest.raises(LifecycleError):
        reg.trainable_view(1, "min_finetune")  # cannibalized tasks cannot train


def test_initial_phase_trains_exactly_the_free_pool():
    params = _single_layer_params([0.1, -0.5, 0.3, -0.2])
    reg = MaskRegistry.for_params(params, n=2, k=0)
    reg.first_prune(params, 1, 0.5)
    view = reg.trainable_view(2, "initial")
    assert view.trainable[0].reshape(-1).tolist() == [True, False, False, True]
    assert view.forward[0].reshape(-1).tolist() == [True, False, False, True]


def test_counters_and_storage_are_stable():
    params, reg = _two_task_registry()
    assert reg.owned_count(1) == 2
    assert reg.owned_count(2) == 2
    assert reg.free_count() == 0
    assert reg.label_counts() == {-2: 1, -1: 1, 1: 1, 2: 1}
    cells = reg.storage_cells()
    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    assert reg.storage_cells() == cells == 4


def test_shape_mismatch_is_rejected():
    params, reg = _two_task_registry()
    other = _single_layer_params([0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        reg.first_prune(other, 2, 0.1)


def test_check_invariants_clean_registry_reports_nothing():
    params, reg = _two_task_registry()
    assert reg.check_invariants() == []
    reg.reclaim_for_additional(params, 3, rng=np.random.default_rng(0))
    assert reg.check_invariants() == []


def test_check_invariants_names_layer_and_index_of_violations():
    params, reg = _two_task_registry()
    reg.current[0][0, 1] = 0  # committed weight of task 1 lost its label
    problems = reg.check_invariants()
    assert any("layer 0 index 1" in p and "task 1" in p for p in problems)

    params, reg = _two_task_registry()
    reg.current[0][0, 0] = 9  # label beyond n + k
    problems = reg.check_invariants()
    assert any("layer 0 index 0" in p and "outside task range" in p for p in problems)

    params, reg = _two_task_registry()
    reg.current[0][0, 2] = -3  # reclaimable label on an additional task
    problems = reg.check_invariants()
    assert any("non-preset" in p for p in problems)
