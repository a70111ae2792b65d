import numpy as np
import pytest


def _small_config(**overrides):
    from scwm_reid.core.config.config import SyntheticModel

    settings = dict(num_identities=3, samples_per_identity=3, in_channels=4)
    settings.update(overrides)
    return SyntheticModel(**settings)


def test_body_layout_defaults():
    from scwm_reid.core.config.config import SyntheticModel
    from scwm_reid.core.pipeline.synthetic import body_layout

    top, bottom, heights, left, right = body_layout(SyntheticModel())
    assert (top, bottom, left, right) == (4, 20, 3, 9)
    assert heights == [4, 6, 6]
    assert sum(heights) == bottom - top


@pytest.mark.parametrize("offset", [-3, 0, 2])
def test_gt_mask_shifts_with_offset(offset):
    from scwm_reid.core.config.config import SyntheticModel
    from scwm_reid.core.pipeline.synthetic import gt_mask_for_offset

    config = SyntheticModel()
    mask = gt_mask_for_offset(config, offset)
    assert mask.shape == (4, 24, 12)
    np.testing.assert_array_equal(mask.sum(axis=0), 1.0)
    np.testing.assert_array_equal(mask, np.roll(gt_mask_for_offset(config, 0), offset, axis=1))


def test_generation_is_deterministic():
    from scwm_reid.core.pipeline.synthetic import synth_generate

    first = synth_generate(_small_config(), seed=5)
    second = synth_generate(_small_config(), seed=5)
    other = synth_generate(_small_config(), seed=6)
    assert first.inputs.tobytes() == second.inputs.tobytes()
    assert first.sample_ids == second.sample_ids == [f"{i:04d}" for i in range(9)]
    assert first.inputs.tobytes() != other.inputs.tobytes()


def test_dataset_layout():
    from scwm_reid.core.pipeline.synthetic import synth_generate

    dataset = synth_generate(_small_config(num_cameras=2), seed=0)
    assert len(dataset) == 9
    assert dataset.inputs.shape == (9, 4, 24, 12)
    assert dataset.gt_masks.shape == (9, 4, 24, 12)
    np.testing.assert_array_equal(dataset.identities, np.repeat(np.arange(3), 3))
    assert set(dataset.cameras.tolist()) <= {0, 1}
    assert dataset.settings["seed"] == 0
    assert all(abs(sample.vertical_offset) <= 3 for sample in dataset.samples)


def test_noiseless_samples_are_piecewise_constant():
    from scwm_reid.core.pipeline.synthetic import synth_generate

    config = _small_config(pixel_noise=0.0, camera_noise=0.0, background_level=0.0)
    dataset = synth_generate(config, seed=1)
    for sample in dataset.samples:
        image, mask = sample.input, sample.gt_part_mask
        np.testing.assert_array_equal(image[:, mask[-1] == 1.0], 0.0)
        for band in range(config.gt_parts):
            pixels = image[:, mask[band] == 1.0]
            np.testing.assert_array_equal(pixels, pixels[:, :1].repeat(pixels.shape[1], axis=1))

    # two samples of one identity show the same band signatures wherever they are shifted
    first, second = dataset.samples[0], dataset.samples[1]
    for band in range(config.gt_parts):
        np.testing.assert_array_equal(
            first.input[:, first.gt_part_mask[band] == 1.0][:, 0],
            second.input[:, second.gt_part_mask[band] == 1.0][:, 0],
        )


def test_salient_band_has_the_largest_norm():
    from scwm_reid.core.pipeline.synthetic import salient_part, synth_generate

    config = _small_config(pixel_noise=0.0, camera_noise=0.0, salient_gain=50.0)
    dataset = synth_generate(config, seed=2)
    assert salient_part(config) == 1
    image, mask = dataset.samples[0].input, dataset.samples[0].gt_part_mask
    norms = [np.linalg.norm(image[:, mask[band] == 1.0][:, 0]) for band in range(3)]
    assert int(np.argmax(norms)) == 1


def test_generator_rejects_tiny_datasets():
    from scwm_reid.core.exceptions import ConfigError
    from scwm_reid.core.pipeline.synthetic import synth_generate

    config = _small_config().copy(update={"samples_per_identity": 1})
    with pytest.raises(ConfigError):
        synth_generate(config)


def test_config_rejects_body_that_does_not_fit():
    from pydantic import ValidationError

    with pytest.raises(ValidationError):
        _small_config(height=8, max_offset=3)


def test_save_then_load(tmp_path):
    from scwm_reid.core.clients.yaml_helpers import open_yaml
    from scwm_reid.core.pipeline.synthetic import DATASET_MANIFEST, SyntheticDataset, synth_generate

    dataset = synth_generate(_small_config(), seed=3)
    dataset.save(tmp_path)
    restored = SyntheticDataset.load(tmp_path)

    assert restored.sample_ids == dataset.sample_ids
    assert restored.inputs.tobytes() == dataset.inputs.tobytes()
    assert restored.gt_masks.tobytes() == dataset.gt_masks.tobytes()
    np.testing.assert_array_equal(restored.cameras, dataset.cameras)
    assert restored.settings == dataset.settings
    record = open_yaml(tmp_path / DATASET_MANIFEST)["samples"][0]
    assert record["input"] == "inputs/0000.scwm"
    assert record["gt_mask"] == "gt_masks/0000.scwm"


@pytest.mark.parametrize(
    "num_parts, expected_rows",
    [
        pytest.param(2, [3, 3], id="halves"),
        pytest.param(3, [2, 2, 2], id="thirds"),
        pytest.param(4, [2, 1, 1, 2], id="uneven"),
    ],
)
def test_stripe_masks(num_parts, expected_rows):
    from scwm_reid.core.pipeline.synthetic import stripe_masks

    masks = stripe_masks(num_parts, 6, 2)
    np.testing.assert_array_equal(masks.sum(axis=0), 1.0)
    assert masks[:, :, 0].sum(axis=1).tolist() == expected_rows


def test_stripe_masks_rejects_more_stripes_than_rows():
    from scwm_reid.core.exceptions import ShapeMismatchError
    from scwm_reid.core.pipeline.synthetic import stripe_masks

    with pytest.raises(ShapeMismatchError):
        stripe_masks(7, 6, 2)
