"""Versioned checkpoint files.

Layout, integers little-endian::

    offset 0    b"ASCK"
    offset 4    u8   format version (currently 1)
    offset 5    u32  header length L
    offset 9    L bytes of UTF-8 JSON header (sorted keys)
    offset 9+L  concatenated TSR1 tensors

The header holds both network configs, the training config snapshot, the
step counter, the RNG state, Adam step counters and hyperparameters, and a
``tensors`` index of ``[name, offset, length]`` entries with offsets relative
to the first tensor. Tensor names are ``gen/<param>``, ``disc/<param>`` and
``adam_g/m/<param>`` style keys; batch-norm running statistics are stored next
to the parameters.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from adverseg.core.models import (
    DiscriminatorNet,
    GeneratorNet,
    NetConfig,
    build_discriminator,
    build_generator,
)
from adverseg.core.optim import AdamState
from adverseg.core.rng import Rng
from adverseg.data.tsr import decode_tensor, encode_tensor
from adverseg.errors import CheckpointVersionError, FormatError

logger = logging.getLogger("adverseg.checkpoint")

MAGIC = b"ASCK"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sBI")


@dataclass
class Checkpoint:
    """Everything needed to rebuild both networks and resume training."""

    net_config: NetConfig
    step: int
    rng_state: tuple[int, ...]
    generator: dict[str, np.ndarray]
    discriminator: dict[str, np.ndarray]
    adam_g: AdamState
    adam_d: AdamState
    train_config: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in self.generator.items():
            yield f"gen/{name}", arr
        for name, arr in self.discriminator.items():
            yield f"disc/{name}", arr
        for label, adam in (("adam_g", self.adam_g), ("adam_d", self.adam_d)):
            for name, arr in adam.m.items():
                yield f"{label}/m/{name}", arr
            for name, arr in adam.v.items():
                yield f"{label}/v/{name}", arr

    def restore_generator(self) -> GeneratorNet:
        gen = build_generator(self.net_config, Rng(0))
        gen.load_state_arrays(self.generator)
        return gen

    def restore_discriminator(self) -> DiscriminatorNet:
        disc = build_discriminator(self.net_config, Rng(0))
        disc.load_state_arrays(self.discriminator)
        return disc


def _adam_header(state: AdamState) -> dict:
    return {**state.hyperparameters(), "t": state.t}


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    blobs = []
    index = []
    offset = 0
    for name, arr in ckpt.tensors():
        blob = encode_tensor(np.asarray(arr, dtype=np.float32))
        index.append([name, offset, len(blob)])
        blobs.append(blob)
        offset += len(blob)
    header = {
        "net_config": ckpt.net_config.to_dict(),
        "train_config": ckpt.train_config,
        "step": ckpt.step,
        "rng_state": list(ckpt.rng_state),
        "adam_g": _adam_header(ckpt.adam_g),
        "adam_d": _adam_header(ckpt.adam_d),
        "extras": ckpt.extras,
        "tensors": index,
    }
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, ckpt.version, len(raw)) + raw + b"".join(blobs)


def save_checkpoint(path: Path | str, ckpt: Checkpoint) -> int:
    """Write ``ckpt`` to ``path``; returns the size in bytes."""
    data = encode_checkpoint(ckpt)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    logger.info("saved checkpoint at step %d to %s (%d bytes)", ckpt.step, path, len(data))
    return len(data)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"not a checkpoint (magic {bytes(buf[:4])!r})", 0)
    if len(buf) < _PREFIX.size:
        raise FormatError("truncated checkpoint prefix", 4)
    _, version, header_len = _PREFIX.unpack_from(buf, 0)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION, offset=4)
    start = _PREFIX.size
    end = start + header_len
    if end > len(buf):
        raise FormatError(f"header length {header_len} exceeds file size", 5)
    try:
        header = json.loads(buf[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}", start) from None

    try:
        tensors: dict[str, np.ndarray] = {}
        for name, offset, length in header["tensors"]:
            at = end + offset
            arr, stop = decode_tensor(buf, at)
            if stop != at + length:
                raise FormatError(f"tensor '{name}' length mismatch", at)
            tensors[name] = arr

        def group(prefix: str) -> dict[str, np.ndarray]:
            return {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}

        def adam(label: str) -> AdamState:
            meta = header[label]
            return AdamState(
                lr=meta["lr"],
                beta1=meta["beta1"],
                beta2=meta["beta2"],
                eps=meta["eps"],
                t=meta["t"],
                m=group(f"{label}/m/"),
                v=group(f"{label}/v/"),
            )

        return Checkpoint(
            net_config=NetConfig.from_dict(header["net_config"]),
            step=header["step"],
            rng_state=tuple(header["rng_state"]),
            generator=group("gen/"),
            discriminator=group("disc/"),
            adam_g=adam("adam_g"),
            adam_d=adam("adam_d"),
            train_config=header.get("train_config", {}),
            extras=header.get("extras", {}),
            version=version,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid checkpoint header: {exc!r}", start) from None


def load_checkpoint(path: Path | str) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def find_latest(directory: Path | str) -> Optional[Path]:
    """``final.ckpt`` if present, else the newest ``*.ckpt`` in ``directory``."""
    directory = Path(directory)
    final = directory / "final.ckpt"
    if final.is_file():
        return final
    candidates = sorted(directory.glob("*.ckpt"), key=lambda p: p.stat().st_mtime)
    return candidates[-1] if candidates else None
