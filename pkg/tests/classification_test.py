import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tests.gradcheck import assert_gradient

SEEDS = list(range(20))


def _distribution(rng, shape):
    values = rng.random(shape) + 0.05
    return values / values.sum(axis=-1, keepdims=True)


def test_head_params_validation():
    from scwm_reid.core.classification import LinearHeadParams
    from scwm_reid.core.exceptions import ShapeMismatchError

    with pytest.raises(ShapeMismatchError):
        LinearHeadParams(weight=np.zeros((3, 4)), bias=np.zeros(4))


def test_head_from_centroids_scales_weight():
    from scwm_reid.core.classification import LinearHeadParams

    head = LinearHeadParams.from_centroids(np.eye(3), scale=5.0)
    assert head.num_classes == 3
    np.testing.assert_array_equal(head.weight, 5.0 * np.eye(3))
    np.testing.assert_array_equal(head.bias, 0.0)


def test_head_forward_single_and_batch_agree():
    from scwm_reid.core.classification import LinearHeadParams, head_forward

    rng = np.random.default_rng(0)
    head = LinearHeadParams(weight=rng.normal(size=(4, 3)), bias=rng.normal(size=4))
    features = rng.normal(size=(2, 3))
    batch = head_forward(head, features)
    np.testing.assert_allclose(batch.sum(axis=1), 1.0)
    np.testing.assert_allclose(head_forward(head, features[1]), batch[1])


def test_head_forward_rejects_wrong_dimension():
    from scwm_reid.core.classification import LinearHeadParams, head_forward
    from scwm_reid.core.exceptions import ShapeMismatchError

    head = LinearHeadParams(weight=np.zeros((2, 3)), bias=np.zeros(2))
    with pytest.raises(ShapeMismatchError):
        head_forward(head, np.zeros(4))


@pytest.mark.parametrize("seed", SEEDS)
def test_head_backward(seed):
    from scwm_reid.core.classification import LinearHeadParams, head_backward

    rng = np.random.default_rng(seed)
    weight, bias = rng.normal(size=(4, 3)), rng.normal(size=4)
    features, upstream = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    grads, grad_features = head_backward(
        LinearHeadParams(weight=weight, bias=bias), features, upstream
    )

    def objective(weight_, bias_, features_):
        return float(np.sum(upstream * (features_ @ weight_.T + bias_)))

    assert_gradient(lambda w: objective(w, bias, features), weight, grads.weight)
    assert_gradient(lambda b: objective(weight, b, features), bias, grads.bias)
    assert_gradient(lambda f: objective(weight, bias, f), features, grad_features)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(min_value=0, max_value=10_000),
    st.floats(min_value=0.0, max_value=1.0),
    st.integers(min_value=2, max_value=6),
)
def test_refine_part_label_stays_on_simplex(seed, alpha, num_classes):
    from scwm_reid.core.classification import refine_part_label

    label = np.eye(num_classes)[np.random.default_rng(seed).integers(num_classes)]
    refined = refine_part_label(label, alpha)
    assert np.all(refined >= 0.0)
    assert refined.sum() == pytest.approx(1.0)


@pytest.mark.parametrize(
    "alpha, expected",
    [
        pytest.param(1.0, [0.0, 1.0, 0.0, 0.0], id="reliable_part_keeps_label"),
        pytest.param(0.0, [0.25, 0.25, 0.25, 0.25], id="unreliable_part_is_uniform"),
        pytest.param(0.5, [0.125, 0.625, 0.125, 0.125], id="half"),
    ],
)
def test_refine_part_label_values(alpha, expected):
    from scwm_reid.core.classification import refine_part_label

    np.testing.assert_allclose(refine_part_label(np.eye(4)[1], alpha), expected)


def test_refine_part_label_rejects_alpha_outside_unit_interval():
    from scwm_reid.core.classification import refine_part_label
    from scwm_reid.core.exceptions import InvalidParameterError

    with pytest.raises(InvalidParameterError):
        refine_part_label(np.eye(3)[0], 1.2)


def test_part_agreement_weights_favour_agreeing_parts():
    from scwm_reid.core.classification import part_agreement_weights

    weights = part_agreement_weights(np.array([0.9, 0.1, 0.5]))
    assert weights.sum() == pytest.approx(1.0)
    assert weights[0] > weights[2] > weights[1]


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000), st.floats(min_value=0.0, max_value=1.0))
def test_distill_global_label_stays_on_simplex(seed, beta):
    from scwm_reid.core.classification import distill_global_label, part_agreement_weights

    rng = np.random.default_rng(seed)
    label = np.eye(5)[rng.integers(5)]
    weights = part_agreement_weights(rng.random(3))
    distilled = distill_global_label(label, beta, weights, _distribution(rng, (3, 5)))
    assert np.all(distilled >= 0.0)
    assert distilled.sum() == pytest.approx(1.0)


def test_distill_global_label_copies_predictions():
    from scwm_reid.core.classification import distill_global_label

    predictions = np.full((2, 3), 1.0 / 3.0)
    distilled = distill_global_label(np.eye(3)[0], 0.5, np.array([0.5, 0.5]), predictions)
    predictions[:] = 0.0
    np.testing.assert_allclose(distilled, [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0])


def test_distill_global_label_shape_mismatch():
    from scwm_reid.core.classification import distill_global_label
    from scwm_reid.core.exceptions import ShapeMismatchError

    with pytest.raises(ShapeMismatchError):
        distill_global_label(np.eye(3)[0], 0.5, np.array([1.0]), np.full((2, 3), 1.0 / 3.0))


@pytest.mark.parametrize("seed", SEEDS)
def test_id_loss_gradient_wrt_logits(seed):
    from scwm_reid.core.classification import id_loss
    from scwm_reid.core.numerics import softmax

    rng = np.random.default_rng(seed)
    global_logits, part_logits = rng.normal(size=(2, 4)), rng.normal(size=(2, 3, 4))
    global_label, part_labels = _distribution(rng, (2, 4)), _distribution(rng, (2, 3, 4))
    active = rng.random((2, 3)) > 0.3

    def value(g, p):
        return id_loss(softmax(g, axis=-1), softmax(p, axis=-1), global_label, part_labels, active)

    _, grad_global, grad_parts = value(global_logits, part_logits)
    assert_gradient(lambda g: value(g, part_logits)[0], global_logits, grad_global)
    assert_gradient(lambda p: value(global_logits, p)[0], part_logits, grad_parts)


def test_id_loss_single_sample_matches_batch_of_one():
    from scwm_reid.core.classification import id_loss

    rng = np.random.default_rng(1)
    q_g, q_p = _distribution(rng, 4), _distribution(rng, (2, 4))
    y_g, y_p = np.eye(4)[0], np.eye(4)[[1, 2]]
    single = id_loss(q_g, q_p, y_g, y_p)
    batch = id_loss(q_g[None], q_p[None], y_g[None], y_p[None])
    assert single[0] == pytest.approx(batch[0])
    expected = -np.log(q_g[0]) - (np.log(q_p[0, 1]) + np.log(q_p[1, 2])) / 2
    assert single[0] == pytest.approx(expected)


def test_id_loss_rejects_zero_probability():
    from scwm_reid.core.classification import id_loss
    from scwm_reid.core.exceptions import NonPositiveProbabilityError

    with pytest.raises(NonPositiveProbabilityError):
        id_loss(np.array([1.0, 0.0]), np.full((1, 2), 0.5), np.eye(2)[0], np.full((1, 2), 0.5))


def test_total_loss_sums_values_and_gradients():
    from scwm_reid.core.classification import LossTerm, total_loss

    first = LossTerm(value=1.5, grads={"global": np.ones(2), "parts": np.ones((1, 2))})
    second = LossTerm(value=0.5, grads={"global": np.full(2, 2.0)})
    total = total_loss(first, second)
    assert total.value == 2.0
    np.testing.assert_array_equal(total.grads["global"], [3.0, 3.0])
    np.testing.assert_array_equal(total.grads["parts"], np.ones((1, 2)))
    # inputs are not modified in place
    np.testing.assert_array_equal(first.grads["global"], [1.0, 1.0])
