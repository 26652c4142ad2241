"""
Versioned binary checkpoint container.

Layout:
    8 bytes   magic b"FAMADAPT"
    4 bytes   format version (uint32, little-endian)
    8 bytes   header length (uint64, little-endian)
    header    UTF-8 JSON, keys sorted: tensor directory, metadata, rng states, fingerprint
    32 bytes  sha256 over header + payload
    payload   concatenated little-endian float64 tensors in directory order
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from tenacity import before_sleep_log, retry, retry_if_exception_type, stop_after_attempt, wait_exponential

logger = logging.getLogger(__name__)

MAGIC = b"FAMADAPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")
_DIGEST_BYTES = 32


class CheckpointIntegrityError(ValueError):
    """Raised when a checkpoint file is truncated, corrupted or of an unknown version."""

    def __init__(self, path: Union[str, Path], reason: str):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"checkpoint {self.path} failed integrity check: {reason}")


class FingerprintMismatchError(ValueError):
    """Raised when loading a checkpoint into an incompatible configuration."""

    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"checkpoint fingerprint {found} does not match configuration {expected}")


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    rng_states: Dict[str, Any] = field(default_factory=dict)
    fingerprint: str = ""

    def tensors_with_prefix(self, prefix: str) -> Dict[str, np.ndarray]:
        return {name[len(prefix):]: value for name, value in self.tensors.items() if name.startswith(prefix)}


def parameter_hash(tensors: Dict[str, np.ndarray]) -> str:
    digest = hashlib.sha256()
    for name in sorted(tensors):
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    return digest.hexdigest()


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    directory = []
    chunks = []
    offset = 0
    for name in sorted(ckpt.tensors):
        array = np.ascontiguousarray(ckpt.tensors[name], dtype="<f8")
        directory.append({"name": name, "shape": list(array.shape), "offset": offset, "count": int(array.size)})
        chunks.append(array.tobytes())
        offset += array.size
    header = json.dumps(
        {
            "tensors": directory,
            "metadata": ckpt.metadata,
            "rng_states": ckpt.rng_states,
            "fingerprint": ckpt.fingerprint,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(chunks)
    digest = hashlib.sha256(header + payload).digest()
    return MAGIC + _PREFIX.pack(FORMAT_VERSION, len(header)) + header + digest + payload


def decode_checkpoint(blob: bytes, path: Union[str, Path] = "<bytes>") -> Checkpoint:
    start = len(MAGIC) + _PREFIX.size
    if len(blob) < start or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointIntegrityError(path, "bad magic bytes")
    version, header_len = _PREFIX.unpack(blob[len(MAGIC):start])
    if version != FORMAT_VERSION:
        raise CheckpointIntegrityError(path, f"unsupported format version {version}")
    header_end = start + header_len
    if len(blob) < header_end + _DIGEST_BYTES:
        raise CheckpointIntegrityError(path, "truncated header")
    header = blob[start:header_end]
    digest = blob[header_end:header_end + _DIGEST_BYTES]
    payload = blob[header_end + _DIGEST_BYTES:]
    if hashlib.sha256(header + payload).digest() != digest:
        raise CheckpointIntegrityError(path, "checksum mismatch")

    try:
        meta = json.loads(header.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointIntegrityError(path, f"unreadable header ({e})") from None
    values = np.frombuffer(payload, dtype="<f8")
    tensors = {}
    for entry in meta["tensors"]:
        lo, hi = entry["offset"], entry["offset"] + entry["count"]
        if hi > values.size:
            raise CheckpointIntegrityError(path, f"tensor {entry['name']} runs past the payload")
        tensors[entry["name"]] = values[lo:hi].astype(np.float64).reshape(entry["shape"])
    return Checkpoint(tensors, meta["metadata"], meta["rng_states"], meta["fingerprint"])


@retry(
    retry=retry_if_exception_type(OSError),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
    before_sleep=before_sleep_log(logger, logging.WARNING),
    reraise=True,
)
def _write_atomic(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def checkpoint_save(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(path, encode_checkpoint(ckpt))
    logger.debug(f"Saved checkpoint {path} ({len(ckpt.tensors)} tensors)")
    return path


def checkpoint_load(path: Union[str, Path], expected_fingerprint: Optional[str] = None) -> Checkpoint:
    """Read and verify a checkpoint.

    Raises:
        CheckpointIntegrityError: Bad magic, version, checksum or truncation.
        FingerprintMismatchError: `expected_fingerprint` given and different.
    """
    path = Path(path)
    ckpt = decode_checkpoint(path.read_bytes(), path)
    if expected_fingerprint is not None and ckpt.fingerprint != expected_fingerprint:
        raise FingerprintMismatchError(expected_fingerprint, ckpt.fingerprint)
    return ckpt
