"""Weight sampling during training and the TWA1 on-disk format.

A TWA1 file is a 16-byte header (magic ``TWA1``, u32 version = 1, u64 D,
all little-endian) followed by D little-endian float32 values. A directory
of checkpoints is indexed by ``manifest.json``::

    {"D": 17, "entries": [{"step": 10, "epoch": 0, "val_metric": 0.9,
                           "path": "ckpt_00000010.twa1"}, ...]}

Relative paths in a manifest are resolved against the manifest's directory.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    CheckpointValidationError,
    CorruptCheckpointError,
    DimensionMismatchError,
    InputError,
    MissingCheckpointError,
    NumericError,
    StorageError,
    TruncatedCheckpointError,
)
from .param_space import as_vector

MAGIC = b"TWA1"
VERSION = 1
HEADER = struct.Struct("<4sIQ")
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SamplingPolicy:
    """When to snapshot weights during training.

    ``phase="head"`` keeps the first ``limit`` samples and then stops
    sampling; ``phase="tail"`` keeps sampling and retains only the most
    recent ``limit`` checkpoints.
    """

    mode: str = "every_n_epochs"
    n: int = 1
    phase: str = "head"
    limit: int | None = None

    def __post_init__(self):
        if self.mode not in ("every_n_epochs", "every_n_steps"):
            raise InputError(f"unknown sampling mode {self.mode!r}")
        if self.phase not in ("head", "tail"):
            raise InputError(f"unknown sampling phase {self.phase!r}")
        if self.n < 1:
            raise InputError("sampling interval must be >= 1")
        if self.limit is not None and self.limit < 1:
            raise InputError("sampling limit must be >= 1")


def should_sample(policy: SamplingPolicy, epoch: int, step: int, steps_per_epoch: int,
                  taken: int = 0) -> bool:
    """Decide whether to snapshot after an optimizer step.

    ``step`` counts completed optimizer steps (1 after the first update),
    ``epoch`` is the 0-based epoch that step belongs to and ``taken`` is
    how many checkpoints were already saved.
    """
    if policy.phase == "head" and policy.limit is not None and taken >= policy.limit:
        return False
    if step <= 0:
        return False
    if policy.mode == "every_n_steps":
        return step % policy.n == 0
    end_of_epoch = steps_per_epoch > 0 and step % steps_per_epoch == 0
    return end_of_epoch and (epoch + 1) % policy.n == 0


def encode_twa1(w) -> bytes:
    w = as_vector(w, "w")
    with np.errstate(over="ignore"):
        payload = w.astype("<f4")
    if not np.all(np.isfinite(payload)):
        raise NumericError("vector does not fit in 32-bit floats")
    return HEADER.pack(MAGIC, VERSION, w.size) + payload.tobytes()


def decode_twa1(buf: bytes, path=None) -> np.ndarray:
    D = _parse_header(buf[:HEADER.size], path)
    payload = buf[HEADER.size:]
    if len(payload) < 4 * D:
        raise TruncatedCheckpointError(
            f"{path}: payload has {len(payload)} bytes, expected {4 * D}", path)
    if len(payload) > 4 * D:
        raise CorruptCheckpointError(f"{path}: {len(payload) - 4 * D} trailing bytes", path)
    return np.frombuffer(payload, dtype="<f4").astype(np.float64)


def _parse_header(head: bytes, path) -> int:
    if len(head) >= 4 and head[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {head[:4]!r}", path)
    if len(head) < HEADER.size:
        raise TruncatedCheckpointError(f"{path}: header truncated at {len(head)} bytes", path)
    _, version, D = HEADER.unpack(head)
    if version != VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported format version {version}", path)
    return D


def _atomic_write(path: Path, data: bytes):
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc}") from exc


def write_twa1(path, w) -> Path:
    path = Path(path)
    _atomic_write(path, encode_twa1(w))
    return path


def read_twa1(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingCheckpointError(f"{path}: no such checkpoint", path)
    return decode_twa1(path.read_bytes(), path)


def _check_file(path: Path, D: int):
    if not path.is_file():
        raise MissingCheckpointError(f"{path}: no such checkpoint", path)
    with path.open("rb") as fh:
        head = fh.read(HEADER.size)
    file_D = _parse_header(head, path)
    if file_D != D:
        raise DimensionMismatchError(f"{path}: D={file_D} but manifest says D={D}", path)
    size = path.stat().st_size
    if size < HEADER.size + 4 * D:
        raise TruncatedCheckpointError(
            f"{path}: {size} bytes, expected {HEADER.size + 4 * D}", path)
    if size > HEADER.size + 4 * D:
        raise CorruptCheckpointError(f"{path}: trailing bytes after payload", path)


@dataclass(frozen=True)
class CheckpointEntry:
    step: int
    epoch: int
    val_metric: float | None
    path: str

    def to_json(self) -> dict:
        return {"step": self.step, "epoch": self.epoch, "val_metric": self.val_metric,
                "path": self.path}


@dataclass(frozen=True)
class CheckpointSet:
    entries: tuple[CheckpointEntry, ...]
    D: int
    manifest_path: Path

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return len(self.entries)

    def resolve(self, i: int) -> Path:
        p = Path(self.entries[i].path)
        return p if p.is_absolute() else self.manifest_path.parent / p

    def load(self, i: int) -> np.ndarray:
        return read_twa1(self.resolve(i))

    def matrix(self) -> np.ndarray:
        """All checkpoints stacked as an ``(n, D)`` float64 array, in step order."""
        out = np.empty((self.n, self.D))
        for i in range(self.n):
            out[i] = self.load(i)
        return out

    @property
    def val_metrics(self) -> list[float | None]:
        return [e.val_metric for e in self.entries]


def _read_manifest(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingCheckpointError(f"{path}: manifest not found", path) from None
    except (OSError, ValueError) as exc:
        raise CheckpointValidationError(f"{path}: unreadable manifest: {exc}", path) from None
    if not isinstance(doc, dict) or not isinstance(doc.get("D"), int) or not isinstance(
            doc.get("entries"), list):
        raise CheckpointValidationError(f"{path}: manifest needs integer 'D' and list 'entries'", path)
    return doc


def _parse_entries(doc: dict, path: Path) -> list[CheckpointEntry]:
    try:
        return [CheckpointEntry(int(e["step"]), int(e["epoch"]),
                                None if e.get("val_metric") is None else float(e["val_metric"]),
                                str(e["path"]))
                for e in doc["entries"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointValidationError(f"{path}: malformed manifest entry: {exc}", path) from None


def save_checkpoint(directory, w, *, step: int, epoch: int, val_metric: float | None = None,
                    keep_last: int | None = None) -> Path:
    """Write ``w`` as a TWA1 file and append it to ``directory/manifest.json``.

    With ``keep_last`` the oldest entries beyond that count are dropped from
    the manifest and their files deleted.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {directory}: {exc}") from exc
    w = as_vector(w, "w")
    manifest = directory / MANIFEST_NAME
    if manifest.exists():
        doc = _read_manifest(manifest)
        if doc["D"] != w.size:
            raise DimensionMismatchError(
                f"{manifest}: existing checkpoints have D={doc['D']}, got {w.size}", manifest)
        entries = _parse_entries(doc, manifest)
    else:
        entries = []

    name = f"ckpt_{step:08d}.twa1"
    write_twa1(directory / name, w)
    entries = [e for e in entries if e.path != name]
    entries.append(CheckpointEntry(int(step), int(epoch),
                                   None if val_metric is None else float(val_metric), name))
    entries.sort(key=lambda e: e.step)
    if keep_last is not None and len(entries) > keep_last:
        dropped, entries = entries[:-keep_last], entries[-keep_last:]
    else:
        dropped = []
    body = {"D": int(w.size), "entries": [e.to_json() for e in entries]}
    _atomic_write(manifest, json.dumps(body, indent=1).encode())
    for e in dropped:
        (directory / e.path).unlink(missing_ok=True)
    return directory / name


def load_set(manifest_path) -> CheckpointSet:
    manifest_path = Path(manifest_path)
    doc = _read_manifest(manifest_path)
    entries = sorted(_parse_entries(doc, manifest_path), key=lambda e: e.step)
    if not entries:
        raise CheckpointValidationError(f"{manifest_path}: manifest lists no checkpoints",
                                        manifest_path)
    cs = CheckpointSet(tuple(entries), doc["D"], manifest_path)
    for i in range(cs.n):
        _check_file(cs.resolve(i), cs.D)
    return cs
