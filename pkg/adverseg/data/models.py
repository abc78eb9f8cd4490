"""Data models for adverseg."""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from adverseg.errors import ConfigError, DataError


@dataclass
class Sample:
    """An image ``[Cin, H, W]`` in [0, 1] and its integer label map ``[H, W]``."""

    image: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.image.ndim != 3:
            raise DataError(f"image must be [Cin, H, W], got shape {self.image.shape}")
        if self.labels.ndim != 2:
            raise DataError(f"labels must be [H, W], got shape {self.labels.shape}")
        if self.image.shape[1:] != self.labels.shape:
            raise DataError(
                f"image spatial size {self.image.shape[1:]} != label size {self.labels.shape}"
            )

    @property
    def in_channels(self) -> int:
        return self.image.shape[0]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def class_counts(self, num_classes: int) -> np.ndarray:
        """Pixel count per class."""
        return np.bincount(self.labels.ravel(), minlength=num_classes)


@dataclass
class PhantomSpec:
    """Geometry and contrast of synthetic tumor-like phantoms.

    Class 1 is a lobed elliptical core; every class ``c >= 2`` is a shell of
    ``shell_width`` pixels around classes ``1..c-1``. ``radius_range`` and
    ``shell_width`` default to values scaled from the image size.
    """

    height: int = 64
    width: int = 64
    num_classes: int = 3
    in_channels: int = 1
    blob_count_range: tuple[int, int] = (0, 2)
    radius_range: Optional[tuple[float, float]] = None
    shell_width: Optional[int] = None
    contrast: Optional[tuple[float, ...]] = None
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        side = min(self.height, self.width)
        if self.radius_range is None:
            self.radius_range = (side / 8, side / 4)
        if self.shell_width is None:
            self.shell_width = max(1, side // 20)
        if self.contrast is None:
            self.contrast = default_contrast(self.num_classes)
        self.validate()

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ConfigError("phantom size must be positive")
        if self.num_classes < 2:
            raise ConfigError("phantoms need at least two classes")
        if self.in_channels not in (1, 3):
            raise ConfigError("phantoms support 1 or 3 input channels")
        lo, hi = self.blob_count_range
        if not 0 <= lo <= hi:
            raise ConfigError(f"invalid blob_count_range {self.blob_count_range}")
        r_lo, r_hi = self.radius_range
        if not 1.0 <= r_lo <= r_hi:
            raise ConfigError(f"invalid radius_range {self.radius_range}")
        if self.shell_width < 1:
            raise ConfigError("shell_width must be >= 1")
        if len(self.contrast) != self.num_classes:
            raise ConfigError(
                f"contrast has {len(self.contrast)} entries for {self.num_classes} classes"
            )
        if any(not 0.0 <= c <= 1.0 for c in self.contrast):
            raise ConfigError("contrast values must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if 2 * (self.extent + 1) > min(self.height, self.width) - 1:
            raise ConfigError(
                f"phantom of extent {self.extent:.1f} does not fit in "
                f"{self.height}x{self.width}; reduce radius_range or shell_width"
            )

    @property
    def extent(self) -> float:
        """Largest distance from the core center any labeled pixel can reach."""
        return self.radius_range[1] + (self.num_classes - 2) * self.shell_width

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "blob_count_range": list(self.blob_count_range),
            "radius_range": list(self.radius_range),
            "shell_width": self.shell_width,
            "contrast": list(self.contrast),
            "noise_sigma": self.noise_sigma,
            "seed": self.seed,
        }


def default_contrast(num_classes: int) -> tuple[float, ...]:
    """Background 0.1; foreground from 0.9 down to 0.6."""
    if num_classes == 2:
        return (0.1, 0.9)
    step = 0.3 / (num_classes - 2)
    return (0.1,) + tuple(round(0.9 - step * (c - 1), 6) for c in range(1, num_classes))


@dataclass
class AugmentPolicy:
    """Probabilities and ranges of the random augmentations."""

    p_flip: float = 0.5
    p_rotate: float = 0.5
    p_intensity: float = 0.5
    gain_range: tuple[float, float] = (0.9, 1.1)
    offset_range: tuple[float, float] = (-0.05, 0.05)

    def __post_init__(self) -> None:
        for name in ("p_flip", "p_rotate", "p_intensity"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.gain_range[0] > self.gain_range[1]:
            raise ConfigError(f"gain_range out of order: {self.gain_range}")
        if self.offset_range[0] > self.offset_range[1]:
            raise ConfigError(f"offset_range out of order: {self.offset_range}")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(p_flip=0.0, p_rotate=0.0, p_intensity=0.0)

    @property
    def is_identity(self) -> bool:
        return self.p_flip == 0 and self.p_rotate == 0 and self.p_intensity == 0


@dataclass
class DatasetManifest:
    """Ordered ``(image, label)`` file pairs under ``root`` plus declared shapes."""

    root: Path
    num_classes: int
    height: int
    width: int
    in_channels: int = 1
    entries: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self, index: int) -> tuple[Path, Path]:
        image, labels = self.entries[index]
        return self.root / image, self.root / labels


@dataclass
class Batch:
    """Stacked samples ready for the networks."""

    images: np.ndarray
    labels: np.ndarray
    one_hot: np.ndarray
    indices: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.images.shape[0]
