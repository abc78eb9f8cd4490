"""Synthetic tumor-like phantoms, one-hot encoding and augmentation.

A phantom is a lobed elliptical core (class 1) wrapped in nested shells
(classes 2..C-1) on a background (class 0). Each class has a mean intensity;
Gaussian noise is added and the image is clipped to [0, 1]. With three input
channels the foreground contrasts are rotated per channel, loosely emulating
differently weighted MRI sequences.
"""

import logging
import math

import numpy as np
from scipy import ndimage

from adverseg.core.rng import Rng
from adverseg.core.tensor import flip_spatial, rotate90
from adverseg.data.models import AugmentPolicy, PhantomSpec, Sample
from adverseg.errors import DataError

logger = logging.getLogger("adverseg.phantom")


def _core_mask(spec: PhantomSpec, rng: Rng) -> np.ndarray:
    h, w = spec.height, spec.width
    r_lo, r_hi = spec.radius_range
    a = rng.uniform(r_lo, r_hi)
    b = rng.uniform(r_lo, r_hi)
    theta = rng.uniform(0.0, math.pi)
    margin = spec.extent + 1
    cy = rng.uniform(margin, h - 1 - margin)
    cx = rng.uniform(margin, w - 1 - margin)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    u = (xx - cx) * cos_t + (yy - cy) * sin_t
    v = -(xx - cx) * sin_t + (yy - cy) * cos_t
    core = (u / a) ** 2 + (v / b) ** 2 <= 1.0

    # Lobe centers sit inside the ellipse, so each lobe touches the core.
    lo, hi = spec.blob_count_range
    for _ in range(rng.integers(lo, hi + 1)):
        rho = rng.uniform(0.0, 0.5)
        phi = rng.uniform(0.0, 2 * math.pi)
        lu, lv = a * rho * math.cos(phi), b * rho * math.sin(phi)
        ly = cy + lu * sin_t + lv * cos_t
        lx = cx + lu * cos_t - lv * sin_t
        radius = rng.uniform(0.25, 0.5) * min(a, b)
        core |= (yy - ly) ** 2 + (xx - lx) ** 2 <= radius**2

    # Keep the component holding the center pixel.
    components, _ = ndimage.label(core)
    center = components[int(round(cy)), int(round(cx))]
    return components == center


def _label_map(spec: PhantomSpec, rng: Rng) -> np.ndarray:
    labels = np.zeros((spec.height, spec.width), dtype=np.uint8)
    labels[_core_mask(spec, rng)] = 1
    for c in range(2, spec.num_classes):
        distance = ndimage.distance_transform_edt(labels == 0)
        labels[(distance > 0) & (distance <= spec.shell_width)] = c
    return labels


def channel_contrasts(spec: PhantomSpec) -> np.ndarray:
    """``[Cin, C]`` mean intensity of every class in every channel."""
    base = np.asarray(spec.contrast, dtype=np.float64)
    rows = []
    for k in range(spec.in_channels):
        row = base.copy()
        row[1:] = np.roll(base[1:], k)
        rows.append(row)
    return np.stack(rows)


def generate_phantom(spec: PhantomSpec, rng: Rng) -> Sample:
    labels = _label_map(spec, rng)
    image = channel_contrasts(spec)[:, labels]
    if spec.noise_sigma > 0:
        image = image + rng.normal(0.0, spec.noise_sigma, image.shape)
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return Sample(image=image, labels=labels)


def generate_sample(spec: PhantomSpec, index: int) -> Sample:
    """Phantom number ``index`` of the dataset seeded by ``spec.seed``."""
    return generate_phantom(spec, Rng(spec.seed).substream(index))


def generate_dataset(spec: PhantomSpec, count: int) -> list[Sample]:
    if count < 1:
        raise DataError(f"sample count must be >= 1, got {count}")
    samples = [generate_sample(spec, i) for i in range(count)]
    logger.info("generated %d phantoms of %dx%d, %d classes", count, spec.height, spec.width,
                spec.num_classes)
    return samples


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """``[..., H, W]`` labels to ``[..., C, H, W]`` float32 indicators."""
    bad = np.argwhere((labels < 0) | (labels >= num_classes))
    if bad.size:
        where = tuple(int(i) for i in bad[0])
        raise DataError(
            f"label {int(labels[where])} at pixel {where} is out of range for {num_classes} classes"
        )
    encoded = np.eye(num_classes, dtype=np.float32)[labels]
    return np.ascontiguousarray(np.moveaxis(encoded, -1, -3))


def augment(sample: Sample, rng: Rng, policy: AugmentPolicy) -> Sample:
    """Random flip, quarter-turn rotation and intensity jitter.

    Spatial transforms hit image and labels alike; jitter touches the image
    only. Rotation is skipped for non-square samples so batch shapes hold.
    """
    image, labels = sample.image, sample.labels
    if rng.bernoulli(policy.p_flip):
        axis = "horizontal" if rng.bernoulli(0.5) else "vertical"
        image, labels = flip_spatial(image, axis), flip_spatial(labels, axis)
    if rng.bernoulli(policy.p_rotate) and sample.height == sample.width:
        turns = rng.integers(1, 4)
        image, labels = rotate90(image, turns), rotate90(labels, turns)
    if rng.bernoulli(policy.p_intensity):
        gain = rng.uniform(*policy.gain_range)
        offset = rng.uniform(*policy.offset_range)
        image = np.clip(image * gain + offset, 0.0, 1.0).astype(image.dtype)
    return Sample(image=image.copy(), labels=labels.copy())
