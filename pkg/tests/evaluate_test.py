import numpy as np
import pytest


def test_outliers_become_singletons():
    from scwm_reid.core.pipeline.evaluate import outliers_as_singletons

    labels = np.array([0, -1, 1, -1])
    np.testing.assert_array_equal(outliers_as_singletons(labels), [0, 2, 1, 3])
    np.testing.assert_array_equal(outliers_as_singletons(np.array([-1, -1])), [0, 1])
    np.testing.assert_array_equal(labels, [0, -1, 1, -1])


@pytest.mark.parametrize(
    "predicted",
    [
        pytest.param([0, 0, 1, 1, 2, 2], id="same_ids"),
        pytest.param([5, 5, 3, 3, 0, 0], id="renamed_ids"),
    ],
)
def test_perfect_clustering(predicted):
    from scwm_reid.core.pipeline.evaluate import clustering_metrics

    metrics = clustering_metrics(np.array(predicted), np.array([0, 0, 1, 1, 2, 2]))
    assert metrics["nmi"] == pytest.approx(1.0)
    assert metrics["pairwise_f"] == pytest.approx(1.0)
    assert metrics["num_clusters"] == 3 and metrics["outliers"] == 0


def test_random_clustering_scores_low():
    from scwm_reid.core.pipeline.evaluate import clustering_metrics

    rng = np.random.default_rng(0)
    truth = np.repeat(np.arange(10), 20)
    metrics = clustering_metrics(rng.integers(0, 10, size=200), truth)
    assert metrics["nmi"] < 0.2
    assert metrics["pairwise_f"] < 0.2


def test_outliers_count_against_clustering():
    from scwm_reid.core.pipeline.evaluate import clustering_metrics

    metrics = clustering_metrics(np.array([0, 0, -1, -1]), np.array([0, 0, 1, 1]))
    assert metrics["outliers"] == 2 and metrics["num_clusters"] == 1
    # the two outliers are singletons, so the (2, 3) pair is missed
    assert metrics["pairwise_f"] == pytest.approx(2.0 / 3.0)


def test_pairwise_f_score_without_positive_pairs():
    from scwm_reid.core.pipeline.evaluate import pairwise_f_score

    assert pairwise_f_score(np.array([0, 1, 2]), np.array([3, 4, 5])) == 1.0
    assert pairwise_f_score(np.array([0, 1, 2]), np.array([0, 0, 0])) == 0.0


@pytest.mark.parametrize(
    "matches, expected",
    [
        pytest.param([True, False, True], (1.0 + 2.0 / 3.0) / 2.0, id="first_and_third"),
        pytest.param([False, True], 0.5, id="second"),
        pytest.param([True, True, False], 1.0, id="top_two"),
    ],
)
def test_average_precision(matches, expected):
    from scwm_reid.core.pipeline.evaluate import average_precision

    assert average_precision(np.array(matches)) == pytest.approx(expected)


def test_average_precision_needs_a_match():
    from scwm_reid.core.exceptions import DegenerateSplitError
    from scwm_reid.core.pipeline.evaluate import average_precision

    with pytest.raises(DegenerateSplitError):
        average_precision(np.array([False, False]))


def test_query_gallery_split():
    from scwm_reid.core.exceptions import DegenerateSplitError
    from scwm_reid.core.pipeline.evaluate import query_gallery_split

    identities = np.array([0, 1, 0, 1, 0, 1])
    query, gallery = query_gallery_split(identities, 1)
    np.testing.assert_array_equal(query, [0, 1])
    np.testing.assert_array_equal(gallery, [2, 3, 4, 5])
    with pytest.raises(DegenerateSplitError):
        query_gallery_split(identities, 3)


def test_retrieval_metrics_hand_built_case():
    from scwm_reid.core.pipeline.evaluate import retrieval_metrics

    # query 0 (identity 0) ranks gallery 3 (identity 1) above gallery 2 (identity 0)
    descriptors = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, 0.6]])
    identities = np.array([0, 1, 0, 1])
    metrics = retrieval_metrics(descriptors, identities, np.zeros(4), queries_per_identity=1)
    # query 1 ranks gallery 2 first, also a miss
    assert metrics["rank1"] == 0.0
    assert metrics["map"] == pytest.approx(0.5)


def test_cross_camera_only_drops_same_view_matches():
    from scwm_reid.core.exceptions import DegenerateSplitError
    from scwm_reid.core.pipeline.evaluate import retrieval_metrics

    descriptors = np.eye(4)
    identities = np.array([0, 1, 0, 1])
    cameras = np.array([0, 0, 0, 0])
    retrieval_metrics(descriptors, identities, cameras, queries_per_identity=1)
    with pytest.raises(DegenerateSplitError):
        retrieval_metrics(
            descriptors, identities, cameras, queries_per_identity=1, cross_camera_only=True
        )


def test_mask_iou_finds_the_channel_permutation():
    from scwm_reid.core.pipeline.evaluate import mask_iou

    truth = np.zeros((2, 3, 3, 2))
    truth[:, 0, 0], truth[:, 1, 1], truth[:, 2, 2] = 1.0, 1.0, 1.0
    predicted = truth[:, [2, 0, 1]]
    score, matching = mask_iou(predicted, truth)
    assert score == pytest.approx(1.0)
    assert sorted(matching) == [(0, 2), (1, 0), (2, 1)]


def test_mask_iou_with_fewer_predicted_channels():
    from scwm_reid.core.pipeline.evaluate import mask_iou

    truth = np.zeros((1, 3, 3, 1))
    truth[0, 0, 0], truth[0, 1, 1], truth[0, 2, 2] = 1.0, 1.0, 1.0
    predicted = np.zeros((1, 2, 3, 1))
    predicted[0, 0, :2], predicted[0, 1, 2] = 1.0, 1.0
    score, matching = mask_iou(predicted, truth)
    # best matching pairs channel 1 with row 2 (IoU 1) and channel 0 with one row (IoU 1/2)
    assert score == pytest.approx(1.5 / 3.0)
    assert (1, 2) in matching


def test_mask_agreement():
    from scwm_reid.core.exceptions import ShapeMismatchError
    from scwm_reid.core.pipeline.evaluate import mask_agreement

    target = np.zeros((1, 2, 1, 4))
    target[0, 0, 0, :2], target[0, 1, 0, 2:] = 1.0, 1.0
    predicted = target.copy()
    predicted[0, :, 0, 3] = [0.9, 0.1]
    assert mask_agreement(predicted, target) == pytest.approx(0.75)
    with pytest.raises(ShapeMismatchError):
        mask_agreement(predicted, target[:, :1])


def test_stripe_features_and_descriptors_are_normalised():
    from scwm_reid.core.pipeline.evaluate import part_descriptors, stripe_features
    from scwm_reid.core.pipeline.synthetic import stripe_masks

    rng = np.random.default_rng(1)
    features = stripe_features(rng.normal(size=(3, 4, 6, 2)), stripe_masks(3, 6, 2))
    assert features.shape == (3, 3, 4)
    np.testing.assert_allclose(np.linalg.norm(features, axis=2), 1.0)
    descriptors = part_descriptors(rng.normal(size=(3, 4)), features)
    assert descriptors.shape == (3, 16)
    np.testing.assert_allclose(np.linalg.norm(descriptors, axis=1), 1.0)


def test_evaluate_report_layout():
    from scwm_reid.core.config.config import build_config
    from scwm_reid.core.pipeline.evaluate import evaluate
    from scwm_reid.core.pipeline.model import init_model
    from scwm_reid.core.pipeline.synthetic import synth_generate

    config = build_config(
        {
            "synthetic": {"num_identities": 3, "samples_per_identity": 4, "in_channels": 4},
            "training": {"feature_dim": 6},
            "parsing": {"num_parts": 3},
            "evaluation": {"queries_per_identity": 1},
        }
    )
    dataset = synth_generate(config.synthetic, seed=0)
    params = init_model(config, np.random.default_rng(0))
    report = evaluate(dataset, params, config, labels=dataset.identities)

    assert report.clustering["nmi"] == pytest.approx(1.0)
    assert 0.0 <= report.parsing["mask_iou"] <= 1.0
    assert 0.0 <= report.parsing["stripe_mask_iou"] <= 1.0
    assert set(report.retrieval) == {
        "map",
        "rank1",
        "stripe_map",
        "stripe_rank1",
        "global_map",
        "global_rank1",
    }
    assert list(report.as_dict()) == ["clustering", "parsing", "retrieval"]
