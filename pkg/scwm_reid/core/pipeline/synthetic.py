"""Synthetic pedestrians with known identities, cameras and body-part masks.

Each identity owns one signature vector per body band (head, torso and legs for 3 bands). A
sample paints those signatures into vertically stacked bands inside a body rectangle, shifts
the body up or down by a random offset (the pose stand-in), then adds a per-camera bias and
pixel noise. Background pixels only carry low-magnitude noise.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from scwm_reid.core.clients.tensor_io import TENSOR_SUFFIX, tensor_read, tensor_write
from scwm_reid.core.clients.yaml_helpers import open_yaml, save_yaml
from scwm_reid.core.config.config import SyntheticModel
from scwm_reid.core.exceptions import ConfigError, ShapeMismatchError
from scwm_reid.core.logger import GLOBAL_LOGGER as logger

DATASET_MANIFEST = "dataset.yml"
INPUTS_FOLDER = "inputs"
GT_MASKS_FOLDER = "gt_masks"


@dataclass(frozen=True)
class SyntheticSample:
    """One generated image with its ground truth.

    `gt_part_mask` is one-hot over `gt_parts + 1` channels, the last one being background.
    """

    sample_id: str
    input: np.ndarray
    gt_identity: int
    gt_part_mask: np.ndarray
    camera_id: int
    vertical_offset: int


@dataclass
class SyntheticDataset:
    samples: List[SyntheticSample]
    settings: Dict[str, Any]

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def inputs(self) -> np.ndarray:
        return np.stack([sample.input for sample in self.samples])

    @property
    def identities(self) -> np.ndarray:
        return np.array([sample.gt_identity for sample in self.samples], dtype=int)

    @property
    def cameras(self) -> np.ndarray:
        return np.array([sample.camera_id for sample in self.samples], dtype=int)

    @property
    def gt_masks(self) -> np.ndarray:
        return np.stack([sample.gt_part_mask for sample in self.samples])

    @property
    def sample_ids(self) -> List[str]:
        return [sample.sample_id for sample in self.samples]

    def save(self, path: Union[str, Path]) -> Path:
        """Writes `inputs/<id>.scwm`, `gt_masks/<id>.scwm` and the `dataset.yml` manifest."""
        path = Path(path)
        records = []
        for sample in self.samples:
            input_path = Path(INPUTS_FOLDER, f"{sample.sample_id}{TENSOR_SUFFIX}")
            mask_path = Path(GT_MASKS_FOLDER, f"{sample.sample_id}{TENSOR_SUFFIX}")
            tensor_write(path / input_path, sample.input)
            tensor_write(path / mask_path, sample.gt_part_mask)
            records.append(
                {
                    "sample_id": sample.sample_id,
                    "identity": int(sample.gt_identity),
                    "camera": int(sample.camera_id),
                    "vertical_offset": int(sample.vertical_offset),
                    "input": input_path.as_posix(),
                    "gt_mask": mask_path.as_posix(),
                }
            )
        manifest_path = path / DATASET_MANIFEST
        save_yaml(manifest_path, {"settings": self.settings, "samples": records})
        logger.debug(f"Saved {len(records)} samples to {path}")
        return manifest_path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SyntheticDataset":
        path = Path(path)
        manifest = open_yaml(path / DATASET_MANIFEST)
        samples = [
            SyntheticSample(
                sample_id=str(record["sample_id"]),
                input=tensor_read(path / record["input"]),
                gt_identity=int(record["identity"]),
                gt_part_mask=tensor_read(path / record["gt_mask"]),
                camera_id=int(record["camera"]),
                vertical_offset=int(record["vertical_offset"]),
            )
            for record in manifest["samples"]
        ]
        return cls(samples=samples, settings=dict(manifest.get("settings", dict())))


def body_layout(config: SyntheticModel) -> Tuple[int, int, List[int], int, int]:
    """Body rectangle of an unshifted sample.

    Returns:
        Tuple: (top row, bottom row, band heights top to bottom, left column, right column).
    """
    margin = config.max_offset + 1
    top, bottom = margin, config.height - margin
    body_height = bottom - top
    # a shorter head band, the remaining rows split evenly
    if config.gt_parts == 1:
        heights = [body_height]
    else:
        head = max(2, body_height // (config.gt_parts + 1))
        rest = body_height - head
        share, extra = divmod(rest, config.gt_parts - 1)
        heights = [head] + [share + (1 if i < extra else 0) for i in range(config.gt_parts - 1)]
    left = config.width // 4
    right = config.width - left
    return top, bottom, heights, left, right


def gt_mask_for_offset(config: SyntheticModel, offset: int) -> np.ndarray:
    """One-hot ground-truth part mask of a body shifted down by `offset` rows."""
    top, _, heights, left, right = body_layout(config)
    mask = np.zeros((config.gt_parts + 1, config.height, config.width))
    mask[-1] = 1.0
    row = top + offset
    for part, band_height in enumerate(heights):
        mask[-1, row : row + band_height, left:right] = 0.0
        mask[part, row : row + band_height, left:right] = 1.0
        row += band_height
    return mask


def salient_part(config: SyntheticModel) -> int:
    """Band whose signature carries the extra gain: the torso when there is one."""
    return min(1, config.gt_parts - 1)


def synth_generate(config: Optional[SyntheticModel] = None, seed: int = 0) -> SyntheticDataset:
    """Generates the synthetic dataset. Identical config and seed give identical arrays.

    Args:
        config (Optional[SyntheticModel]): generator settings. Defaults to the default model.
        seed (int, optional): seed of the numpy generator. Defaults to 0.
    """
    config = config or SyntheticModel()
    if config.num_identities < 2 or config.samples_per_identity < 2:
        raise ConfigError("The generator needs at least 2 identities with 2 samples each.")
    rng = np.random.default_rng(seed)
    channels = config.in_channels

    prototypes = rng.normal(size=(config.gt_parts, channels))
    identity_parts = rng.normal(size=(config.num_identities, config.gt_parts, channels))
    signatures = prototypes[None] + config.identity_scale * identity_parts
    signatures[:, salient_part(config)] *= config.salient_gain
    camera_bias = config.camera_noise * rng.normal(size=(config.num_cameras, channels))

    samples: List[SyntheticSample] = []
    for identity in range(config.num_identities):
        for _ in range(config.samples_per_identity):
            offset = int(rng.integers(-config.max_offset, config.max_offset + 1))
            camera = int(rng.integers(config.num_cameras))
            gt_mask = gt_mask_for_offset(config, offset)

            image = np.einsum("phw,pc->chw", gt_mask[:-1], signatures[identity])
            foreground = 1.0 - gt_mask[-1]
            image += config.pixel_noise * rng.normal(size=image.shape) * foreground
            image += config.background_level * rng.normal(size=image.shape) * gt_mask[-1]
            image += camera_bias[camera][:, None, None]
            samples.append(
                SyntheticSample(
                    sample_id=f"{len(samples):04d}",
                    input=image,
                    gt_identity=identity,
                    gt_part_mask=gt_mask,
                    camera_id=camera,
                    vertical_offset=offset,
                )
            )

    settings = dict(config.dict())
    settings["seed"] = int(seed)
    logger.debug(f"Generated {len(samples)} synthetic samples with seed {seed}")
    return SyntheticDataset(samples=samples, settings=settings)


def stripe_masks(num_parts: int, height: int, width: int) -> np.ndarray:
    """Fixed horizontal stripes: `num_parts` bands of (nearly) equal height, no background."""
    if num_parts < 1 or num_parts > height:
        raise ShapeMismatchError(f"Cannot cut {height} rows into {num_parts} stripes.")
    masks = np.zeros((num_parts, height, width))
    bounds = np.linspace(0, height, num_parts + 1).round().astype(int)
    for part in range(num_parts):
        masks[part, bounds[part] : bounds[part + 1]] = 1.0
    return masks
