"""MNIST ingestion and the binary preprocessing pipeline.

IDX files are read from a local directory only; fetch the four standard files
(optionally gzipped) beforehand, see the README.
"""
import gzip
import logging
import os
import struct
import zlib
from collections import OrderedDict
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import yaml
from pydantic import BaseModel, conint, validator

from .core.config import config
from .models import (
    CorruptDataError,
    DataNotFoundError,
    InvalidArgumentError,
    UnsupportedLabelError,
)
from .qml import LabeledCircuitInput
from .statevec import StateVector, basis_state

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_GZIP_PREFIX = b"\x1f\x8b"


class RawImage(BaseModel):
    pixels: np.ndarray
    label: conint(ge=0, le=9)

    class Config:
        arbitrary_types_allowed = True

    @validator("pixels")
    def is_mnist_sized(cls, v: np.ndarray):
        side = config.MNIST_IMAGE_SIDE
        if v.shape != (side, side):
            raise ValueError(f"expected a {side}x{side} image, got shape {v.shape}")
        return v


class LabeledImage(BaseModel):
    """A raw image relabelled to ±1 by `filter_binary`."""

    pixels: np.ndarray
    label: int

    class Config:
        arbitrary_types_allowed = True

    @validator("label")
    def is_binary_label(cls, v: int):
        if v not in (1, -1):
            raise UnsupportedLabelError(wrong_value=v)
        return v


class BinarizedImage(BaseModel):
    bits: np.ndarray
    label: int
    multiplicity: conint(ge=1) = 1

    class Config:
        arbitrary_types_allowed = True

    @validator("bits")
    def square_binary_grid(cls, v: np.ndarray):
        v = np.asarray(v, dtype=np.uint8)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"bits must be a square grid, got shape {v.shape}")
        if (v > 1).any():
            raise ValueError("bits may only contain 0 and 1")
        return v

    @validator("label")
    def is_binary_label(cls, v: int):
        if v not in (1, -1):
            raise UnsupportedLabelError(wrong_value=v)
        return v

    @property
    def dim(self) -> int:
        return self.bits.shape[0]


class Provenance(BaseModel):
    raw: int = 0
    filtered: int = 0
    groups: int = 0
    conflicting_groups: int = 0
    tied_groups_dropped: int = 0
    minority_dropped: int = 0
    deduped: int = 0


class SplitProvenance(BaseModel):
    train: Provenance
    test: Provenance


class DatasetSplit(BaseModel):
    dim: int
    labels: Tuple[int, int]
    threshold: float
    train: List[BinarizedImage]
    test: List[BinarizedImage]
    provenance: SplitProvenance


def _read_bytes(path: str) -> bytes:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == _GZIP_PREFIX:
        try:
            return gzip.decompress(data)
        except (OSError, EOFError, zlib.error) as e:
            raise CorruptDataError(f"cannot decompress: {e}", path, 0) from e
    return data


def _find_idx_file(directory: str, name: str) -> str:
    for candidate in (name, f"{name}.gz"):
        path = os.path.join(directory, candidate)
        if os.path.isfile(path):
            return path
    logging.error(f"Could not find {name}[.gz] in {directory}. Use --data to point at the MNIST files.")
    raise DataNotFoundError(f"missing MNIST file {name} in {directory}")


def _parse_header(data: bytes, path: str, magic: int, n_fields: int) -> Tuple[int, ...]:
    size = 4 * (n_fields + 1)
    if len(data) < size:
        raise CorruptDataError("truncated header", path, len(data))
    found, *fields = struct.unpack(f">{n_fields + 1}I", data[:size])
    if found != magic:
        raise CorruptDataError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", path, 0)
    return tuple(fields)


def read_idx_images(path: str) -> np.ndarray:
    data = _read_bytes(path)
    count, rows, cols = _parse_header(data, path, IMAGES_MAGIC, 3)
    if (rows, cols) != (config.MNIST_IMAGE_SIDE, config.MNIST_IMAGE_SIDE):
        raise CorruptDataError(f"unexpected image size {rows}x{cols}", path, 8)
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise CorruptDataError(f"truncated pixel data, expected {expected} bytes", path, len(data))
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(
        count, rows, cols
    )


def read_idx_labels(path: str) -> np.ndarray:
    data = _read_bytes(path)
    (count,) = _parse_header(data, path, LABELS_MAGIC, 1)
    expected = 8 + count
    if len(data) < expected:
        raise CorruptDataError(f"truncated labels, expected {expected} bytes", path, len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise CorruptDataError(f"label {labels[bad[0]]} is not a digit", path, 8 + int(bad[0]))
    return labels


def _load_pair(directory: str, images_name: str, labels_name: str) -> List[RawImage]:
    images_path = _find_idx_file(directory, images_name)
    labels_path = _find_idx_file(directory, labels_name)
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(pixels) != len(labels):
        raise CorruptDataError(
            f"{len(pixels)} images but {len(labels)} labels", labels_path, 4
        )
    return [RawImage(pixels=p, label=int(l)) for p, l in zip(pixels, labels)]


def load_mnist(path: str) -> Tuple[List[RawImage], List[RawImage]]:
    if not os.path.isdir(path):
        logging.error(f"MNIST directory {path} does not exist.")
        raise DataNotFoundError(f"missing MNIST directory {path}")
    train = _load_pair(path, config.TRAIN_IMAGES_FILENAME, config.TRAIN_LABELS_FILENAME)
    test = _load_pair(path, config.TEST_IMAGES_FILENAME, config.TEST_LABELS_FILENAME)
    logging.info(f"Loaded {len(train)} train and {len(test)} test images from {path}")
    return train, test


def filter_binary(images: Iterable[RawImage], label_a: int, label_b: int) -> List[LabeledImage]:
    if label_a == label_b:
        raise InvalidArgumentError(f"cannot separate digit {label_a} from itself")
    kept = [
        LabeledImage(pixels=image.pixels, label=1 if image.label == label_a else -1)
        for image in images
        if image.label in (label_a, label_b)
    ]
    if not kept:
        raise InvalidArgumentError(f"no images labelled {label_a} or {label_b}")
    return kept


def _check_dim(dim: int, allow_large: bool) -> None:
    if dim not in config.SUPPORTED_DIMS and not (allow_large and dim == config.LARGE_DIM):
        raise InvalidArgumentError(f"{dim} is not a supported input dimension")


@lru_cache(maxsize=None)
def _overlap_matrix(dim: int, side: int) -> np.ndarray:
    # entry (i, p): length of pixel p's span [p, p+1) inside output cell i
    edges = np.arange(dim + 1) * side / dim
    overlap = np.zeros((dim, side))
    for i in range(dim):
        for p in range(side):
            overlap[i, p] = max(0.0, min(edges[i + 1], p + 1) - max(edges[i], p))
    return overlap


def downsample_binarize(
    image: Union[RawImage, LabeledImage],
    dim: int,
    threshold: float = config.DEFAULT_THRESHOLD,
    allow_large: bool = False,
) -> np.ndarray:
    """Area-average pool to dim x dim on the [0, 1] scale; a bit is 1 iff its cell mean > threshold."""
    _check_dim(dim, allow_large)
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must lie in (0, 1), got {threshold}")
    side = image.pixels.shape[0]
    overlap = _overlap_matrix(dim, side)
    cell_area = (side / dim) ** 2
    pooled = overlap @ image.pixels.astype(np.float64) @ overlap.T / (cell_area * 255.0)
    return (pooled > threshold).astype(np.uint8)


def _dedup_with_counts(samples: Sequence[BinarizedImage]) -> Tuple[List[BinarizedImage], Provenance]:
    groups: "OrderedDict[bytes, List[BinarizedImage]]" = OrderedDict()
    for sample in samples:
        groups.setdefault(sample.bits.tobytes() + bytes(sample.bits.shape), []).append(sample)
    kept = []
    counts = Provenance(groups=len(groups))
    for members in groups.values():
        votes = {1: 0, -1: 0}
        for member in members:
            votes[member.label] += member.multiplicity
        if votes[1] and votes[-1]:
            counts.conflicting_groups += 1
        if votes[1] == votes[-1]:
            counts.tied_groups_dropped += 1
            continue
        winner = 1 if votes[1] > votes[-1] else -1
        counts.minority_dropped += votes[-winner]
        kept.append(BinarizedImage(bits=members[0].bits, label=winner, multiplicity=votes[winner]))
    counts.deduped = sum(sample.multiplicity for sample in kept)
    return kept, counts


def dedup_conflicts(samples: Sequence[BinarizedImage]) -> List[BinarizedImage]:
    """One representative per distinct grid, labelled by majority vote; ties are dropped.

    The representative's multiplicity counts the samples carrying the winning label.
    """
    kept, _ = _dedup_with_counts(samples)
    return kept


def expand_multiplicity(samples: Sequence[BinarizedImage]) -> List[BinarizedImage]:
    return [sample for sample in samples for _ in range(sample.multiplicity)]


def encode_to_input_state(bits: np.ndarray, n_qubits: int) -> StateVector:
    """Basis state with data qubit i (row-major) = bits[i] and the readout qubit set to 1."""
    bits = np.asarray(bits)
    if bits.ndim != 2 or bits.shape[0] != bits.shape[1] or bits.size + 1 != n_qubits:
        raise InvalidArgumentError(
            f"bits of shape {bits.shape} do not fit a {n_qubits}-qubit register"
        )
    return basis_state(n_qubits, np.append(bits.reshape(-1), 1))


def encode_samples(images: Sequence[BinarizedImage]) -> List[LabeledCircuitInput]:
    return [
        LabeledCircuitInput(
            input_state=encode_to_input_state(image.bits, image.bits.size + 1), label=image.label
        )
        for image in images
    ]


def _binarize_all(
    images: Sequence[LabeledImage], dim: int, threshold: float, allow_large: bool
) -> List[BinarizedImage]:
    return [
        BinarizedImage(bits=downsample_binarize(image, dim, threshold, allow_large), label=image.label)
        for image in images
    ]


def preprocess(
    train_raw: Sequence[RawImage],
    test_raw: Sequence[RawImage],
    labels: Tuple[int, int] = config.DEFAULT_LABELS,
    dim: int = 4,
    threshold: float = config.DEFAULT_THRESHOLD,
    dedup: bool = True,
    allow_large: bool = False,
) -> DatasetSplit:
    train_filtered = filter_binary(train_raw, *labels)
    test_filtered = filter_binary(test_raw, *labels)
    train = _binarize_all(train_filtered, dim, threshold, allow_large)
    test = _binarize_all(test_filtered, dim, threshold, allow_large)
    train_counts = Provenance(deduped=len(train))
    if dedup:
        train, train_counts = _dedup_with_counts(train)
    train_counts.raw, train_counts.filtered = len(train_raw), len(train_filtered)
    # test conflicts are kept so evaluation sees every hard case
    test_counts = Provenance(raw=len(test_raw), filtered=len(test_filtered), deduped=len(test))
    logging.info(
        "Prepared %dx%d split for %s: train %d -> %d -> %d, test %d -> %d",
        dim, dim, labels, train_counts.raw, train_counts.filtered, train_counts.deduped,
        test_counts.raw, test_counts.filtered,
    )
    return DatasetSplit(
        dim=dim,
        labels=labels,
        threshold=threshold,
        train=train,
        test=test,
        provenance=SplitProvenance(train=train_counts, test=test_counts),
    )


def prepare_split(
    data_path: str,
    labels: Tuple[int, int] = config.DEFAULT_LABELS,
    dim: int = 4,
    threshold: float = config.DEFAULT_THRESHOLD,
    dedup: bool = True,
    allow_large: bool = False,
) -> DatasetSplit:
    train_raw, test_raw = load_mnist(data_path)
    return preprocess(train_raw, test_raw, labels, dim, threshold, dedup, allow_large)


def _stack(images: Sequence[BinarizedImage], dim: int) -> Dict[str, np.ndarray]:
    return {
        "bits": np.array([image.bits for image in images], dtype=np.uint8).reshape(-1, dim, dim),
        "labels": np.array([image.label for image in images], dtype=np.int8),
        "multiplicity": np.array([image.multiplicity for image in images], dtype=np.int64),
    }


def save_split(split: DatasetSplit, path: str) -> str:
    """Write the split to `<path>.npz` and a readable provenance summary beside it."""
    arrays = {}
    for name in ("train", "test"):
        for key, value in _stack(getattr(split, name), split.dim).items():
            arrays[f"{name}_{key}"] = value
    cache_path = path + config.SPLIT_CACHE_SUFFIX
    np.savez_compressed(
        cache_path,
        dim=np.array(split.dim),
        labels=np.array(split.labels),
        threshold=np.array(split.threshold),
        **arrays,
    )
    with open(path + config.PROVENANCE_SUFFIX, "w") as f:
        yaml.safe_dump(
            {
                "dim": split.dim,
                "labels": list(split.labels),
                "threshold": split.threshold,
                "provenance": split.provenance.dict(),
            },
            f,
            sort_keys=False,
        )
    logging.debug(f"Cached split at {cache_path}")
    return cache_path


def load_split(path: str) -> DatasetSplit:
    cache_path = path if path.endswith(config.SPLIT_CACHE_SUFFIX) else path + config.SPLIT_CACHE_SUFFIX
    base = cache_path[: -len(config.SPLIT_CACHE_SUFFIX)]
    try:
        arrays = np.load(cache_path)
        with open(base + config.PROVENANCE_SUFFIX, "r") as f:
            summary = yaml.safe_load(f)
    except FileNotFoundError as e:
        raise DataNotFoundError(f"no cached split at {cache_path}") from e

    def images(name: str) -> List[BinarizedImage]:
        return [
            BinarizedImage(bits=bits, label=int(label), multiplicity=int(multiplicity))
            for bits, label, multiplicity in zip(
                arrays[f"{name}_bits"], arrays[f"{name}_labels"], arrays[f"{name}_multiplicity"]
            )
        ]

    return DatasetSplit(
        dim=int(arrays["dim"]),
        labels=tuple(int(l) for l in arrays["labels"]),
        threshold=float(arrays["threshold"]),
        train=images("train"),
        test=images("test"),
        provenance=SplitProvenance(**summary["provenance"]),
    )

