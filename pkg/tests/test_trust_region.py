import numpy as np
import pytest

from trgp import network, subspace, trust_region
from trgp.errors import DimensionMismatch, ZeroGradient


def store_with(bases_per_task, width):
    store = subspace.SubspaceStore([width])
    for t, cols in enumerate(bases_per_task):
        b = np.asarray(cols, dtype=float)
        store.add_task(t, [subspace.LayerBasis(
            task_id=t, layer_id=0, basis=b,
            reused_flags=np.zeros(b.shape[1], dtype=bool))])
    return store


# -- probe_gradient --------------------------------------------------------------

def test_probe_zero_at_exact_minimum():
    # uniform prediction is the exact minimizer for one input with both labels
    model = network.ModelState([np.zeros((2, 3))])
    x = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
    y = np.array([0, 1])
    grads = trust_region.probe_gradient(model, x, y)
    assert np.max(np.abs(grads[0])) == 0.0


def test_probe_single_sample_closed_form():
    rng = np.random.default_rng(0)
    w = rng.standard_normal((3, 4))
    model = network.ModelState([w])
    x = rng.standard_normal((1, 4))
    y = np.array([2])
    grads = trust_region.probe_gradient(model, x, y)
    # oracle: (softmax(z) - onehot) outer x for a single linear layer
    z = w @ x[0]
    p = np.exp(z - z.max())
    p /= p.sum()
    p[2] -= 1.0
    assert np.allclose(grads[0], np.outer(p, x[0]), atol=1e-12)


def test_probe_deterministic_across_calls():
    rng = np.random.default_rng(1)
    model = network.init_mlp([5, 4, 3], rng)
    x = rng.standard_normal((8, 5))
    y = rng.integers(0, 3, size=8)
    a = trust_region.probe_gradient(model, x, y)
    b = trust_region.probe_gradient(model, x, y)
    for ga, gb in zip(a, b):
        assert np.array_equal(ga, gb)


# -- projection_ratio --------------------------------------------------------------

def test_ratio_inside_span_is_one():
    rng = np.random.default_rng(2)
    b = np.linalg.qr(rng.standard_normal((5, 2)))[0][:, :2]
    grad = rng.standard_normal((3, 2)) @ b.T  # rows inside span(b)
    assert trust_region.projection_ratio(grad, b) == pytest.approx(1.0, abs=1e-9)


def test_ratio_orthogonal_is_zero():
    b = np.array([[1.0], [0.0]])
    grad = np.array([[0.0, 2.0], [0.0, -1.0]])  # rows orthogonal to e1
    assert trust_region.projection_ratio(grad, b) == pytest.approx(0.0, abs=1e-9)


def test_ratio_diagonal_direction():
    grad = np.array([[1.0, 1.0]])
    b = np.array([[1.0], [0.0]])
    assert trust_region.projection_ratio(grad, b) == pytest.approx(1 / np.sqrt(2))


def test_ratio_rejects_zero_gradient_and_bad_shapes():
    b = np.array([[1.0], [0.0]])
    with pytest.raises(ZeroGradient):
        trust_region.projection_ratio(np.zeros((2, 2)), b)
    with pytest.raises(DimensionMismatch):
        trust_region.projection_ratio(np.ones((2, 3)), b)


@pytest.mark.parametrize("seed", range(5))
def test_ratio_scale_invariant_and_bounded(seed):
    rng = np.random.default_rng(800 + seed)
    grad = rng.standard_normal((4, 6))
    b = np.linalg.qr(rng.standard_normal((6, 3)))[0][:, :3]
    r = trust_region.projection_ratio(grad, b)
    assert 0.0 <= r <= 1.0 + 1e-9
    for c in (1e-3, 7.0, 1e4):
        assert trust_region.projection_ratio(c * grad, b) == pytest.approx(r, abs=1e-12)


def test_ratio_equals_cosine_of_principal_angle():
    rng = np.random.default_rng(3)
    grad = rng.standard_normal((3, 5))
    b = np.linalg.qr(rng.standard_normal((5, 2)))[0][:, :2]
    proj = (grad @ b) @ b.T
    cos_theta = np.sum(grad * proj) / (np.linalg.norm(grad) * np.linalg.norm(proj))
    assert trust_region.projection_ratio(grad, b) == pytest.approx(cos_theta)


# -- select_top_k --------------------------------------------------------------------

def test_select_filters_sorts_truncates():
    ratios = {0: {1: 0.9, 2: 0.6, 3: 0.3}}
    sel = trust_region.select_top_k(ratios, 0.5, 2, new_task_id=4)
    assert sel.per_layer[0] == [(1, 0.9), (2, 0.6)]


def test_select_empty_when_all_below_threshold():
    sel = trust_region.select_top_k({0: {1: 0.2, 2: 0.4}}, 0.5, 2, new_task_id=3)
    assert sel.per_layer[0] == []


def test_select_tie_breaks_to_smaller_task_id():
    sel = trust_region.select_top_k({0: {5: 0.8, 1: 0.8, 3: 0.8}}, 0.5, 2, new_task_id=6)
    assert sel.tasks_for_layer(0) == [1, 3]


def test_select_k1_is_prefix_of_k2():
    ratios = {0: {1: 0.9, 2: 0.6}, 1: {1: 0.55, 2: 0.95}}
    k1 = trust_region.select_top_k(ratios, 0.5, 1, new_task_id=3)
    k2 = trust_region.select_top_k(ratios, 0.5, 2, new_task_id=3)
    for layer in ratios:
        assert k2.tasks_for_layer(layer)[:1] == k1.tasks_for_layer(layer)


def test_selection_log_shape():
    sel = trust_region.select_top_k({0: {1: 0.7}}, 0.5, 2, new_task_id=2)
    log = sel.to_log()
    assert log["new_task"] == 2
    assert log["layers"][0]["chosen"] == [1]
    assert log["layers"][0]["candidates"] == [{"task": 1, "ratio": 0.7}]


# -- ratio_table / taskwise -----------------------------------------------------------

def test_ratio_table_skips_zero_gradient_layers():
    store = store_with([np.array([[1.0], [0.0]])], width=2)
    grads = [np.zeros((3, 2))]
    table = trust_region.ratio_table(grads, store, [0])
    assert table == {0: {}}


def test_taskwise_shares_selection_across_layers():
    rng = np.random.default_rng(4)
    store = subspace.SubspaceStore([4, 4])
    for t in range(2):
        bases = []
        for l in range(2):
            b = np.linalg.qr(rng.standard_normal((4, 2)))[0][:, :2]
            bases.append(subspace.LayerBasis(task_id=t, layer_id=l, basis=b,
                                             reused_flags=np.zeros(2, dtype=bool)))
        store.add_task(t, bases)
    grads = [rng.standard_normal((3, 4)) for _ in range(2)]
    sel = trust_region.select_taskwise(grads, store, [0, 1], 0.0, 1, new_task_id=2)
    assert sel.mode == "taskwise"
    assert sel.tasks_for_layer(0) == sel.tasks_for_layer(1)
    # oracle: whole-network ratio for the chosen task
    chosen = sel.tasks_for_layer(0)[0]
    num = sum(np.sum(((g @ store.basis_for(chosen, l).basis)) ** 2)
              for l, g in enumerate(grads))
    den = sum(np.sum(g ** 2) for g in grads)
    assert sel.per_layer[0][0][1] == pytest.approx(np.sqrt(num / den))
