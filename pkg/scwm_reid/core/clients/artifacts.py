"""Reads and writes pipeline artifacts: tensors in the SCWM format next to YAML manifests."""
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from scwm_reid.core.clients.tensor_io import TENSOR_SUFFIX, tensor_read, tensor_write
from scwm_reid.core.clients.yaml_helpers import open_yaml, save_yaml
from scwm_reid.core.exceptions import ShapeMismatchError
from scwm_reid.core.weighted_memory import MemoryBank

CHECKPOINT_MANIFEST = "checkpoint.yml"
BANK_MANIFEST = "bank.yml"
LABELS_FILE = "labels.yml"
MASKS_MANIFEST = "masks.yml"
DIFFICULTY_FILE = f"difficulty{TENSOR_SUFFIX}"

PathLike = Union[str, Path]


def save_checkpoint(path: PathLike, arrays: Dict[str, np.ndarray], epoch: int, seed: int) -> Path:
    """One tensor file per parameter array plus a manifest listing names, files and shapes."""
    path = Path(path)
    records = []
    for name, array in arrays.items():
        filename = f"{name}{TENSOR_SUFFIX}"
        tensor_write(path / filename, array)
        records.append({"name": name, "path": filename, "shape": [int(d) for d in array.shape]})
    manifest = path / CHECKPOINT_MANIFEST
    save_yaml(manifest, {"epoch": int(epoch), "seed": int(seed), "arrays": records})
    return manifest


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, int]]:
    """Parameter arrays by name and the (epoch, seed) header of a checkpoint folder."""
    path = Path(path)
    manifest = open_yaml(path / CHECKPOINT_MANIFEST)
    arrays = {}
    for record in manifest["arrays"]:
        array = tensor_read(path / record["path"])
        if list(array.shape) != list(record["shape"]):
            raise ShapeMismatchError(
                f"{record['name']} has shape {array.shape}, the manifest says {record['shape']}."
            )
        arrays[record["name"]] = array
    return arrays, {"epoch": int(manifest["epoch"]), "seed": int(manifest["seed"])}


def save_bank(path: PathLike, bank: MemoryBank) -> Path:
    """`space_<s>.scwm` per feature space (0 is global) and a `bank.yml` header."""
    path = Path(path)
    for space, centroids in enumerate(bank.centroids):
        tensor_write(path / f"space_{space}{TENSOR_SUFFIX}", centroids)
    manifest = path / BANK_MANIFEST
    save_yaml(manifest, bank.header())
    return manifest


def load_bank(path: PathLike) -> MemoryBank:
    path = Path(path)
    header = open_yaml(path / BANK_MANIFEST)
    centroids = [
        tensor_read(path / f"space_{space}{TENSOR_SUFFIX}")
        for space in range(1 + int(header["num_parts"]))
    ]
    return MemoryBank(
        centroids=centroids,
        momentum=float(header["momentum"]),
        temperature=float(header["temperature"]),
        strategy=header["strategy"],
    )


def save_labels(path: PathLike, sample_ids: Sequence[str], labels: np.ndarray) -> Path:
    path = Path(path)
    if len(sample_ids) != len(labels):
        raise ShapeMismatchError("Every sample needs exactly one label.")
    records = [
        {"sample_id": sample_id, "label": int(label)}
        for sample_id, label in zip(sample_ids, labels)
    ]
    save_yaml(path, {"labels": records})
    return path


def load_labels(path: PathLike) -> Tuple[List[str], np.ndarray]:
    records = open_yaml(Path(path))["labels"]
    return (
        [str(record["sample_id"]) for record in records],
        np.array([int(record["label"]) for record in records], dtype=int),
    )


def save_masks(
    path: PathLike, sample_ids: Sequence[str], masks: np.ndarray, eta: float, num_parts: int
) -> Path:
    """`masks/<id>.scwm` per sample and a `masks.yml` manifest in `path`."""
    path = Path(path)
    records = []
    for sample_id, mask in zip(sample_ids, masks):
        filename = Path("masks", f"{sample_id}{TENSOR_SUFFIX}")
        tensor_write(path / filename, mask)
        records.append({"sample_id": sample_id, "mask": filename.as_posix()})
    manifest = path / MASKS_MANIFEST
    save_yaml(manifest, {"eta": float(eta), "num_parts": int(num_parts), "masks": records})
    return manifest


def load_masks(path: PathLike) -> Tuple[List[str], np.ndarray]:
    path = Path(path)
    manifest = open_yaml(path / MASKS_MANIFEST)
    records = manifest["masks"]
    return (
        [str(record["sample_id"]) for record in records],
        np.stack([tensor_read(path / record["mask"]) for record in records]),
    )


def save_difficulty(path: PathLike, alpha_g: np.ndarray, alpha_p: np.ndarray) -> Path:
    """N x (1 + l) tensor: alpha_g in the first column, then alpha_p."""
    path = Path(path)
    tensor_write(path, np.concatenate([np.asarray(alpha_g)[:, None], alpha_p], axis=1))
    return path


def load_difficulty(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    scores = tensor_read(Path(path))
    return scores[:, 0].copy(), scores[:, 1:].copy()
