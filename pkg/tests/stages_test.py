import numpy as np
import pytest

from tests.gradcheck import numerical_gradient


def _config(**training):
    from scwm_reid.core.config.config import build_config

    settings = {"feature_dim": 6, "iterations": 2, "identities_per_batch": 2}
    settings.update(training)
    return build_config(
        {
            "synthetic": {
                "num_identities": 3,
                "samples_per_identity": 4,
                "in_channels": 4,
                "height": 10,
                "width": 6,
                "gt_parts": 2,
                "max_offset": 1,
                "camera_noise": 0.0,
                "pixel_noise": 0.02,
                "identity_scale": 1.0,
            },
            "parsing": {"num_parts": 3},
            "id_clustering": {"k1": 3, "eps": 0.5, "min_samples": 2},
            "memory": {"difficulty_k": 3},
            "training": settings,
            "evaluation": {"queries_per_identity": 1},
        }
    )


def _setup(seed=0, **training):
    from scwm_reid.core.pipeline.model import init_model
    from scwm_reid.core.pipeline.synthetic import synth_generate

    config = _config(**training)
    dataset = synth_generate(config.synthetic, seed=seed)
    params = init_model(config, np.random.default_rng(seed))
    return config, dataset, params


def test_clustering_stage_recovers_identities_and_freezes_the_model():
    from sklearn.metrics import adjusted_rand_score

    from scwm_reid.core.pipeline.stages import clustering_stage

    config, dataset, params = _setup()
    before = {name: array.copy() for name, array in params.arrays().items()}
    cluster = clustering_stage(dataset.inputs, params, config)

    for name, array in params.arrays().items():
        np.testing.assert_array_equal(array, before[name])
    assert adjusted_rand_score(dataset.identities, cluster.labels) == 1.0
    assert cluster.num_clusters == 3 and cluster.num_outliers == 0
    assert cluster.pseudo_masks.shape == (12, 3, 10, 6)
    np.testing.assert_array_equal(cluster.smoothed_masks, cluster.pseudo_masks)
    assert cluster.alpha_p.shape == (12, 3)
    assert np.all((cluster.alpha_g >= 0.0) & (cluster.alpha_g <= 1.0))
    for centroids in cluster.bank.centroids:
        np.testing.assert_allclose(np.linalg.norm(centroids, axis=1), 1.0)


@pytest.mark.parametrize(
    "gamma, expected",
    [
        pytest.param(0.0, "pseudo", id="gamma_0_takes_new_masks"),
        pytest.param(1.0, "previous", id="gamma_1_keeps_previous_masks"),
    ],
)
def test_clustering_stage_mask_smoothing(gamma, expected):
    from scwm_reid.core.pipeline.stages import clustering_stage

    config, dataset, params = _setup()
    previous = np.full((12, 3, 10, 6), 1.0 / 3.0)
    cluster = clustering_stage(dataset.inputs, params, config, previous, gamma=gamma)
    target = cluster.pseudo_masks if expected == "pseudo" else previous
    np.testing.assert_array_equal(cluster.smoothed_masks, target)


def test_parse_masks_is_the_same_with_worker_threads():
    from scwm_reid.core.pipeline.model import extract_features
    from scwm_reid.core.pipeline.stages import parse_masks

    config, dataset, params = _setup()
    feature_maps = extract_features(params, dataset.inputs).feature_maps
    threaded = config.copy(update={"parsing": config.parsing.copy(update={"num_workers": 3})})
    np.testing.assert_array_equal(
        parse_masks(feature_maps, config), parse_masks(feature_maps, threaded)
    )


def test_clustering_stage_raises_when_everything_is_an_outlier():
    from scwm_reid.core.exceptions import EmptyClusteringError
    from scwm_reid.core.pipeline.stages import clustering_stage

    config, dataset, params = _setup()
    strict = config.copy(
        update={"id_clustering": config.id_clustering.copy(update={"min_samples": 13})}
    )
    with pytest.raises(EmptyClusteringError):
        clustering_stage(dataset.inputs, params, strict)


def test_sample_batch_is_identity_balanced():
    from scwm_reid.core.pipeline.stages import sample_batch

    labels = np.array([0, 0, 0, 1, -1, 2, 2, 2, 2])
    batch = sample_batch(labels, identities=2, per_identity=3, rng=np.random.default_rng(0))
    assert batch.size == 6
    picked = labels[batch]
    assert -1 not in picked
    values, counts = np.unique(picked, return_counts=True)
    assert values.size == 2 and counts.tolist() == [3, 3]


def test_sample_batch_resamples_small_clusters():
    from scwm_reid.core.pipeline.stages import sample_batch

    labels = np.array([0, 1, 1])
    batch = sample_batch(labels, identities=5, per_identity=4, rng=np.random.default_rng(1))
    assert batch.size == 8
    assert np.sum(labels[batch] == 0) == 4


def test_sample_batch_without_clusters():
    from scwm_reid.core.exceptions import EmptyClusteringError
    from scwm_reid.core.pipeline.stages import sample_batch

    with pytest.raises(EmptyClusteringError):
        sample_batch(np.array([-1, -1]), 2, 2, np.random.default_rng(0))


def test_training_with_zero_learning_rate_only_moves_the_memory():
    from scwm_reid.core.pipeline.stages import LOSS_TERMS, clustering_stage, training_stage

    config, dataset, params = _setup()
    cluster = clustering_stage(dataset.inputs, params, config)
    result = training_stage(dataset.inputs, cluster, params, config, learning_rate=0.0)

    assert result.params.has_heads
    for name, array in params.arrays().items():
        np.testing.assert_array_equal(result.params.arrays()[name], array)
    moved = [
        not np.array_equal(new, old)
        for new, old in zip(result.bank.centroids, cluster.bank.centroids)
    ]
    assert any(moved)
    assert len(result.iterations) == 2
    assert set(result.iterations[0]) == set(LOSS_TERMS) | {"total", "skipped"}
    assert set(result.mean_losses()) == set(result.iterations[0])


def test_training_stays_finite_and_changes_params():
    from scwm_reid.core.pipeline.stages import clustering_stage, training_stage

    config, dataset, params = _setup(iterations=3)
    cluster = clustering_stage(dataset.inputs, params, config)
    result = training_stage(
        dataset.inputs, cluster, params, config, rng=np.random.default_rng(7)
    )
    assert all(np.isfinite(record["total"]) for record in result.iterations)
    assert not np.array_equal(result.params.extractor.weight, params.extractor.weight)


def test_loss_switches_turn_terms_off():
    from scwm_reid.core.config.config import LossSwitchesModel
    from scwm_reid.core.pipeline.model import forward_sample, reset_heads
    from scwm_reid.core.pipeline.stages import batch_objective, build_targets, clustering_stage

    config, dataset, params = _setup()
    cluster = clustering_stage(dataset.inputs, params, config)
    params = reset_heads(params, cluster.bank, 5.0)
    indices = np.array([0, 4, 8])
    forwards = [forward_sample(params, dataset.inputs[i]) for i in indices]
    targets = build_targets(forwards, indices, cluster, beta=0.35)

    only_parsing = LossSwitchesModel(wnce=False, sep=False, diversity=False, id=False)
    objective = batch_objective(params, forwards, targets, cluster.bank, only_parsing)
    assert objective.components["parsing"] > 0.0
    assert all(objective.components[name] == 0.0 for name in ("wnce", "sep", "diversity", "id"))
    assert objective.value == pytest.approx(objective.components["parsing"])
    assert "global_head.weight" not in objective.grads
    assert np.any(objective.grads["classifier.kernel"] != 0.0)


def test_build_targets_rejects_outliers():
    from scwm_reid.core.exceptions import InvalidParameterError
    from scwm_reid.core.pipeline.model import forward_sample, reset_heads
    from scwm_reid.core.pipeline.stages import build_targets, clustering_stage

    config, dataset, params = _setup()
    cluster = clustering_stage(dataset.inputs, params, config)
    cluster.labels[0] = -1
    params = reset_heads(params, cluster.bank, 5.0)
    with pytest.raises(InvalidParameterError):
        build_targets([forward_sample(params, dataset.inputs[0])], np.array([0]), cluster, 0.35)


def test_one_training_step_follows_the_objective_gradient():
    from scwm_reid.core.numerics import softmax
    from scwm_reid.core.pipeline.model import ModelParams, forward_sample, init_model, reset_heads
    from scwm_reid.core.pipeline.stages import (
        ClusteringResult,
        build_targets,
        objective_value,
        training_stage,
    )
    from scwm_reid.core.weighted_memory import MemoryBank
    learning_rate = 0.05
    config = _config(iterations=1, identities_per_batch=2, samples_per_cluster=1)
    rng = np.random.default_rng(0)
    centroids = [rng.normal(size=(2, 6)) for _ in range(4)]
    bank = MemoryBank(
        centroids=[c / np.linalg.norm(c, axis=1, keepdims=True) for c in centroids],
        temperature=0.5,
    )
    params = reset_heads(init_model(config, rng), bank, config.classification.head_init_scale)
    arrays = params.arrays()
    arrays["classifier.kernel"] = 0.3 * rng.normal(size=arrays["classifier.kernel"].shape)
    params = ModelParams.from_arrays(arrays)

    images = rng.normal(size=(2, 4, 10, 6))
    cluster = ClusteringResult(
        labels=np.array([0, 1]),
        pseudo_masks=np.zeros((2, 3, 10, 6)),
        smoothed_masks=softmax(rng.normal(size=(2, 3, 10, 6)), axis=1),
        bank=bank,
        alpha_g=np.array([0.3, 0.7]),
        alpha_p=np.array([[0.2, 0.5, 0.9], [0.6, 0.4, 0.1]]),
        features=None,
    )
    forwards = [forward_sample(params, image) for image in images]
    targets = build_targets(forwards, np.array([0, 1]), cluster, config.classification.beta)

    result = training_stage(images, cluster, params, config, learning_rate=learning_rate)
    for name, array in arrays.items():

        def perturbed(value, name=name):
            changed = dict(arrays)
            changed[name] = value
            return objective_value(ModelParams.from_arrays(changed), images, targets, bank)

        expected = array - learning_rate * numerical_gradient(perturbed, array)
        np.testing.assert_allclose(result.params.arrays()[name], expected, atol=1e-8)
