# -------------------------------------------------------------------------------
# Copyright (c) 2024 mtqsar contributors
# All Rights Reserved.
#
# Licensed under the MIT license.
# SPDX-License-Identifier: MIT
# -------------------------------------------------------------------------------

"""Checkpoint stores and the binary parameter file format.

A parameter file is little-endian::

    magic      8 bytes  b"MTQSPRM1"
    version    u16
    kind       u16 length + utf-8 ("mtnn", "logreg", "forest")
    input      u32 input width
    hidden     u32 count + count x u32 layer sizes
    tasks      u32 count + per task u16 length + utf-8 name
    arrays     u32 count + per array:
                 u16 length + utf-8 name, u8 dtype code, u8 ndim,
                 ndim x u32 shape, raw little-endian data

A checkpoint directory holds one parameter file per snapshot plus
``manifest.json`` listing ``step -> file`` with the training loss and the
content hash of every file.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Tuple
import json
import logging
import os
import struct

import numpy as np

from .hashing import git_blob_hash
from .qsarerror import TrainingError

logger = logging.getLogger(__name__)

MAGIC = b"MTQSPRM1"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "mtqsar-checkpoints"

DTYPE_CODES = {1: "<f4", 2: "<f8", 3: "<i4", 4: "<i8", 5: "<u8"}
DTYPE_NUMBERS = {np.dtype(name).str: code for code, name in DTYPE_CODES.items()}


@dataclass
class ParamFile:
    """Decoded content of one parameter file."""

    kind: str
    hidden: Tuple[int, ...]
    input_width: int
    tasks: Tuple[str, ...]
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)


def _pack_text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_params(content: ParamFile) -> bytes:
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), _pack_text(content.kind),
             struct.pack("<I", content.input_width), struct.pack("<I", len(content.hidden))]
    parts += [struct.pack("<I", size) for size in content.hidden]
    parts.append(struct.pack("<I", len(content.tasks)))
    parts += [_pack_text(name) for name in content.tasks]
    parts.append(struct.pack("<I", len(content.arrays)))
    for name, value in content.arrays.items():
        array = np.ascontiguousarray(value)
        array = array.astype(array.dtype.newbyteorder("<"), copy=False)
        code = DTYPE_NUMBERS.get(array.dtype.str)
        if code is None:
            raise TrainingError(message="cannot store array %s of dtype %s" % (name, array.dtype),
                                code="UnsupportedDtype")
        parts.append(_pack_text(name))
        parts.append(struct.pack("<BB", code, array.ndim))
        parts += [struct.pack("<I", size) for size in array.shape]
        parts.append(array.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, raw: bytes, origin: str) -> None:
        self.raw = raw
        self.origin = origin
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise TrainingError(message="truncated parameter file " + self.origin, code="CorruptCheckpoint")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (length,) = self.unpack("<H")
        return self.take(length).decode("utf-8")


def decode_params(raw: bytes, origin: str = "<bytes>") -> ParamFile:
    reader = _Reader(raw, origin)
    if reader.take(len(MAGIC)) != MAGIC:
        raise TrainingError(message=origin + " is not a parameter file", code="CorruptCheckpoint")
    (version,) = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise TrainingError(message="unsupported parameter file version %d" % version, code="CorruptCheckpoint")
    kind = reader.text()
    (input_width,) = reader.unpack("<I")
    (n_hidden,) = reader.unpack("<I")
    hidden = tuple(reader.unpack("<I")[0] for _ in range(n_hidden))
    (n_tasks,) = reader.unpack("<I")
    tasks = tuple(reader.text() for _ in range(n_tasks))
    (n_arrays,) = reader.unpack("<I")
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        name = reader.text()
        code, ndim = reader.unpack("<BB")
        if code not in DTYPE_CODES:
            raise TrainingError(message="unknown dtype code %d in %s" % (code, origin), code="CorruptCheckpoint")
        shape = tuple(reader.unpack("<I")[0] for _ in range(ndim))
        dtype = np.dtype(DTYPE_CODES[code])
        count = int(np.prod(shape, dtype=np.int64))
        array = np.frombuffer(reader.take(count * dtype.itemsize), dtype=dtype).reshape(shape)
        array.setflags(write=False)
        arrays[name] = array
    if reader.pos != len(raw):
        raise TrainingError(message="trailing bytes in " + origin, code="CorruptCheckpoint")
    return ParamFile(kind, hidden, input_width, tasks, arrays)


def _model_types() -> Dict[str, Any]:
    from .baselines import ForestModel, LogRegModel
    from .mtnn import ModelParams
    return {"mtnn": ModelParams, "logreg": LogRegModel, "forest": ForestModel}


def to_param_file(model: Any) -> ParamFile:
    from .mtnn import ModelParams
    if isinstance(model, ModelParams):
        return ParamFile("mtnn", model.architecture.hidden, model.input_width, model.tasks, dict(model.arrays))
    return model.to_param_file()


def from_param_file(content: ParamFile) -> Any:
    types = _model_types()
    if content.kind not in types:
        raise TrainingError(message="unknown model kind " + repr(content.kind), code="CorruptCheckpoint")
    if content.kind == "mtnn":
        from .mtnn import Architecture
        return types["mtnn"](Architecture(content.hidden), content.input_width, content.tasks, dict(content.arrays))
    return types[content.kind].from_param_file(content)


def write_model(model: Any, path: str) -> str:
    """Write one model as a parameter file and return its content hash."""
    raw = encode_params(to_param_file(model))
    with open(path, "wb") as fout:
        fout.write(raw)
    return git_blob_hash(raw)


def read_model(path: str) -> Any:
    with open(path, "rb") as fin:
        return from_param_file(decode_params(fin.read(), path))


@dataclass(frozen=True)
class Checkpoint:
    step: int
    model: Any
    loss: Optional[float] = None


class CheckpointStore:
    """Ordered ``(step, snapshot)`` pairs of one training run.

    :param metadata: run metadata written into the manifest
    """

    def __init__(self, metadata: Optional[Dict[str, Any]] = None) -> None:
        self.metadata: Dict[str, Any] = dict(metadata or {})
        self.directory: Optional[str] = None
        self._checkpoints: List[Checkpoint] = []

    def __len__(self) -> int:
        return len(self._checkpoints)

    def __iter__(self) -> Iterator[Checkpoint]:
        return iter(self._checkpoints)

    def add(self, step: int, model: Any, loss: Optional[float] = None) -> None:
        if self._checkpoints and step <= self._checkpoints[-1].step:
            raise TrainingError(message="checkpoint step %d does not follow %d"
                                % (step, self._checkpoints[-1].step), code="NonIncreasingStep")
        self._checkpoints.append(Checkpoint(step, model, None if loss is None else float(loss)))

    @property
    def steps(self) -> List[int]:
        return [checkpoint.step for checkpoint in self._checkpoints]

    @property
    def losses(self) -> List[Optional[float]]:
        return [checkpoint.loss for checkpoint in self._checkpoints]

    @property
    def latest(self) -> Checkpoint:
        if not self._checkpoints:
            raise TrainingError(message="checkpoint store is empty", code="EmptyStore")
        return self._checkpoints[-1]

    def get(self, step: int) -> Any:
        for checkpoint in self._checkpoints:
            if checkpoint.step == step:
                return checkpoint.model
        raise TrainingError(message="no checkpoint at step %d" % step, code="StepNotFound")

    def closest(self, step: int) -> Checkpoint:
        """Checkpoint nearest to ``step``; the earlier one on ties."""
        if not self._checkpoints:
            raise TrainingError(message="checkpoint store is empty", code="EmptyStore")
        return min(self._checkpoints, key=lambda checkpoint: (abs(checkpoint.step - step), checkpoint.step))

    def save(self, directory: str) -> str:
        """Write every snapshot and the manifest; returns the manifest path."""
        os.makedirs(directory, exist_ok=True)
        entries = []
        for checkpoint in self._checkpoints:
            filename = "step-%09d.params" % checkpoint.step
            digest = write_model(checkpoint.model, os.path.join(directory, filename))
            entries.append({"step": checkpoint.step, "file": filename, "loss": checkpoint.loss, "sha1": digest})
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": FORMAT_VERSION,
            "metadata": self.metadata,
            "checkpoints": entries,
        }
        path = os.path.join(directory, MANIFEST)
        with open(path, "w", encoding="utf-8", newline="\n") as fout:
            fout.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.directory = directory
        logger.debug(f"wrote {len(entries)} checkpoints to {directory}")
        return path

    @classmethod
    def load(cls, directory: str) -> "CheckpointStore":
        path = os.path.join(directory, MANIFEST)
        if not os.path.isfile(path):
            raise TrainingError(message="no checkpoint manifest in " + directory, code="MissingArtifact")
        with open(path, encoding="utf-8") as fin:
            manifest = json.load(fin)
        if manifest.get("format") != MANIFEST_FORMAT:
            raise TrainingError(message=path + " is not a checkpoint manifest", code="CorruptCheckpoint")
        store = cls(manifest.get("metadata", {}))
        for entry in manifest["checkpoints"]:
            store.add(int(entry["step"]), read_model(os.path.join(directory, entry["file"])), entry.get("loss"))
        store.directory = directory
        return store
