"""
Dataset Files
Line-delimited JSON datasets with a leading metadata record.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from lodl_bench.domains.base import SPLITS, Dataset, DomainConfig, InstanceRecord
from lodl_bench.errors import FormatVersionError, MissingArtifactError, StoreError, TruncatedFileError

logger = logging.getLogger(__name__)

DATASET_FORMAT_VERSION = 1


def write_dataset(path: Path, dataset: Dataset) -> Path:
    """Write metadata then one record per instance; the file is renamed into place when complete."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = {split: len(records) for split, records in dataset.splits.items()}
    meta = {
        "record": "meta",
        "format_version": DATASET_FORMAT_VERSION,
        "domain_config": dataset.config.to_dict(),
        "seed": dataset.config.seed,
        "counts": counts,
        "extras": {name: {"shape": list(value.shape), "values": value.reshape(-1).tolist()}
                   for name, value in dataset.extras.items()},
    }
    temp_path = path.with_suffix(path.suffix + ".tmp")
    with open(temp_path, "w") as handle:
        handle.write(json.dumps(meta) + "\n")
        for split in SPLITS:
            for record in dataset.splits.get(split, []):
                handle.write(json.dumps({
                    "record": "instance",
                    "split": record.split,
                    "instance_id": record.instance_id,
                    "feature_shape": list(record.features.shape),
                    "features": record.features.reshape(-1).tolist(),
                    "y": record.y_true.tolist(),
                }) + "\n")
    os.replace(temp_path, path)
    logger.info(f"Wrote dataset with {sum(counts.values())} instances to {path}")
    return path


def read_dataset(path: Path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"missing dataset file {path}")
    with open(path) as handle:
        lines = [line for line in handle.read().split("\n") if line]
    if not lines:
        raise TruncatedFileError(f"dataset file {path} is empty")
    try:
        meta = json.loads(lines[0])
        rows = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as e:
        raise TruncatedFileError(f"dataset file {path} is damaged: {e}")
    if meta.get("record") != "meta":
        raise StoreError(f"dataset file {path} does not start with a metadata record")
    if meta.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatVersionError(
            f"dataset file {path} has format version {meta.get('format_version')}, expected {DATASET_FORMAT_VERSION}")

    splits: Dict[str, List[InstanceRecord]] = {split: [] for split in SPLITS}
    for row in rows:
        splits[row["split"]].append(InstanceRecord(
            instance_id=row["instance_id"],
            split=row["split"],
            features=np.array(row["features"], dtype=np.float64).reshape(row["feature_shape"]),
            y_true=np.array(row["y"], dtype=np.float64),
        ))
    for split, expected in meta["counts"].items():
        if len(splits.get(split, [])) != expected:
            raise TruncatedFileError(
                f"dataset file {path} declares {expected} {split} instances, found {len(splits.get(split, []))}")

    extras = {name: np.array(block["values"], dtype=np.float64).reshape(block["shape"])
              for name, block in meta.get("extras", {}).items()}
    return Dataset(config=DomainConfig(**meta["domain_config"]), splits=splits, extras=extras)


def config_fingerprint(payload: Dict[str, Any]) -> str:
    """sha256 of a canonical JSON rendering."""
    hasher = hashlib.sha256()
    hasher.update(json.dumps(payload, sort_keys=True).encode())
    return hasher.hexdigest()
