"""Dataset manifests, on-disk datasets and batching.

Manifest format (``manifest.txt``)::

    # comments and blank lines are ignored
    C=3 H=64 W=64 CIN=1
    images/sample_00000.tsr labels/sample_00000.tsr
    ...
"""

import logging
import math
import re
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from adverseg.core.rng import Rng
from adverseg.data.models import AugmentPolicy, Batch, DatasetManifest, Sample
from adverseg.data.phantom import augment, one_hot
from adverseg.data.tsr import read_tensor, write_tensor
from adverseg.errors import ConfigError, DataError

logger = logging.getLogger("adverseg.manifest")

MANIFEST_NAME = "manifest.txt"
_HEADER = re.compile(r"^C=(\d+)\s+H=(\d+)\s+W=(\d+)\s+CIN=(\d+)$")

Source = Union[DatasetManifest, Sequence[Sample]]


def format_manifest(manifest: DatasetManifest) -> str:
    lines = [
        f"C={manifest.num_classes} H={manifest.height} W={manifest.width} "
        f"CIN={manifest.in_channels}"
    ]
    lines.extend(f"{image} {labels}" for image, labels in manifest.entries)
    return "\n".join(lines) + "\n"


def write_manifest(manifest: DatasetManifest, path: Optional[Path] = None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    path.write_text(format_manifest(manifest))
    return path


def read_manifest(path: Path | str, check_files: bool = True) -> DatasetManifest:
    """Parse a manifest; the dataset root is the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    header = None
    entries = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if header is None:
            match = _HEADER.match(line)
            if not match:
                raise DataError(f"{path}:{lineno}: expected header 'C=.. H=.. W=.. CIN=..'")
            header = tuple(int(g) for g in match.groups())
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected '<image> <labels>', got {line!r}")
        entries.append((parts[0], parts[1]))
    if header is None:
        raise DataError(f"{path}: manifest has no header line")
    c, h, w, cin = header
    manifest = DatasetManifest(
        root=path.parent, num_classes=c, height=h, width=w, in_channels=cin, entries=entries
    )
    if check_files:
        for i in range(len(manifest)):
            for file in manifest.paths(i):
                if not file.is_file():
                    raise DataError(f"{path}: listed file does not exist: {file}")
    return manifest


def load_sample(manifest: DatasetManifest, index: int) -> Sample:
    """Read one pair and check it against the declared shapes."""
    image_path, label_path = manifest.paths(index)
    image = read_tensor(image_path)
    labels = read_tensor(label_path)
    expected = (manifest.in_channels, manifest.height, manifest.width)
    if image.shape != expected or image.dtype != np.float32:
        raise DataError(f"{image_path}: expected float32 {expected}, got {image.dtype} {image.shape}")
    if labels.shape != expected[1:] or labels.dtype != np.uint8:
        raise DataError(f"{label_path}: expected uint8 {expected[1:]}, got {labels.dtype} {labels.shape}")
    if labels.max() >= manifest.num_classes:
        raise DataError(f"{label_path}: label {labels.max()} >= {manifest.num_classes} classes")
    return Sample(image=image, labels=labels)


def load_samples(manifest: DatasetManifest) -> list[Sample]:
    return [load_sample(manifest, i) for i in range(len(manifest))]


def write_dataset(samples: Sequence[Sample], out_dir: Path | str, num_classes: int) -> DatasetManifest:
    """Write samples as TSR1 pairs plus ``manifest.txt`` under ``out_dir``."""
    if not samples:
        raise DataError("no samples to write")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    first = samples[0]
    manifest = DatasetManifest(
        root=root,
        num_classes=num_classes,
        height=first.height,
        width=first.width,
        in_channels=first.in_channels,
    )
    for i, sample in enumerate(samples):
        image_rel = f"images/sample_{i:05d}.tsr"
        label_rel = f"labels/sample_{i:05d}.tsr"
        write_tensor(root / image_rel, sample.image.astype(np.float32))
        write_tensor(root / label_rel, sample.labels.astype(np.uint8))
        manifest.entries.append((image_rel, label_rel))
    write_manifest(manifest)
    logger.info("wrote %d samples to %s", len(samples), root)
    return manifest


def split_indices(count: int, holdout_fraction: float = 0.2) -> tuple[list[int], list[int]]:
    """First ``1 - holdout_fraction`` of the indices train, the rest are held out."""
    if not 0.0 <= holdout_fraction < 1.0:
        raise ConfigError(f"holdout_fraction must be in [0, 1), got {holdout_fraction}")
    held = int(math.floor(count * holdout_fraction + 0.5))
    held = min(held, count - 1) if count > 0 else 0
    cut = count - held
    return list(range(cut)), list(range(cut, count))


def _as_samples(source: Source) -> Sequence[Sample]:
    if isinstance(source, DatasetManifest):
        return load_samples(source)
    return source


def make_batch(
    samples: Sequence[Sample],
    indices: Sequence[int],
    num_classes: int,
    augment_rng: Optional[Rng] = None,
    policy: Optional[AugmentPolicy] = None,
) -> Batch:
    """Stack ``samples[indices]``; sample ``i`` is augmented with ``augment_rng.substream(i)``."""
    picked = []
    for i in indices:
        sample = samples[i]
        if augment_rng is not None and policy is not None and not policy.is_identity:
            sample = augment(sample, augment_rng.substream(i), policy)
        picked.append(sample)
    labels = np.stack([s.labels for s in picked])
    return Batch(
        images=np.stack([s.image for s in picked]).astype(np.float32),
        labels=labels,
        one_hot=one_hot(labels, num_classes),
        indices=list(indices),
    )


def batch_iter(
    source: Source,
    batch_size: int,
    num_classes: Optional[int] = None,
    shuffle_rng: Optional[Rng] = None,
    augment_rng: Optional[Rng] = None,
    policy: Optional[AugmentPolicy] = None,
) -> Iterator[Batch]:
    """One epoch of batches; the final short batch is emitted."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if num_classes is None:
        if not isinstance(source, DatasetManifest):
            raise ConfigError("num_classes is required when batching in-memory samples")
        num_classes = source.num_classes
    samples = _as_samples(source)
    if not samples:
        raise DataError("cannot batch an empty dataset")
    order = shuffle_rng.permutation(len(samples)) if shuffle_rng is not None else range(len(samples))
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield make_batch(
            samples, order[start : start + batch_size], num_classes, augment_rng, policy
        )
