"""Phantom datasets, tensor files and batching."""

from adverseg.data.models import AugmentPolicy, Batch, DatasetManifest, PhantomSpec, Sample

__all__ = ["AugmentPolicy", "Batch", "DatasetManifest", "PhantomSpec", "Sample"]
