"""Binary checkpoint archive.

Layout: an 8-byte magic, a little-endian uint64 manifest length, a JSON
manifest, then the raw parameter payload. The manifest carries the format
version, the producing config hash, the training phase, a payload sha256,
and one index entry per tensor (name, dtype, shape, byte offset, byte
count). All multi-byte data is little-endian regardless of host order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DataError, DependencyError

MAGIC = b"MWTCKPT1"
FORMAT_VERSION = 1

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
    "uint8": "|u1",
}


@dataclass
class Archive:
    """A loaded checkpoint: manifest metadata plus named arrays."""

    params: dict[str, np.ndarray]
    config_hash: str
    phase: str
    extra: dict[str, Any]
    format_version: int = FORMAT_VERSION


def _canonical_name(dtype: np.dtype) -> str:
    name = np.dtype(dtype).name
    if name not in _DTYPES:
        supported = ", ".join(sorted(_DTYPES))
        raise DataError(f"unsupported tensor dtype {name}; supported: {supported}")
    return name


def save_archive(
    path: str | Path,
    params: Mapping[str, np.ndarray],
    *,
    config_hash: str,
    phase: str,
    extra: dict[str, Any] | None = None,
) -> None:
    """Write named arrays to a checkpoint archive at ``path``."""
    index = []
    chunks = []
    offset = 0
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        dtype_name = _canonical_name(arr.dtype)
        raw = arr.astype(_DTYPES[dtype_name], copy=False).tobytes()
        index.append(
            {
                "name": name,
                "dtype": dtype_name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "phase": phase,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "tensors": index,
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_archive(path: str | Path) -> Archive:
    """Read a checkpoint archive, verifying magic, version, and payload hash."""
    p = Path(path)
    if not p.exists():
        raise DependencyError(f"checkpoint not found: {p}")
    data = p.read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise DataError(f"{p} is not a checkpoint archive (bad magic)")
    (mlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    header_end = len(MAGIC) + 8 + mlen
    if header_end > len(data):
        raise DataError(f"{p} is truncated (manifest extends past end of file)")
    try:
        manifest = json.loads(data[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DataError(f"{p} has a corrupt manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"{p} uses format version {version}, this build reads {FORMAT_VERSION}"
        )
    payload = data[header_end:]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != manifest["payload_sha256"]:
        raise DataError(f"{p} payload hash mismatch; file is corrupt")
    params: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise DataError(f"{p}: tensor {entry['name']} extends past payload end")
        arr = np.frombuffer(
            payload, dtype=_DTYPES[entry["dtype"]], count=n // np.dtype(_DTYPES[entry["dtype"]]).itemsize, offset=start
        ).reshape(entry["shape"])
        params[entry["name"]] = arr.copy()
    return Archive(
        params=params,
        config_hash=manifest["config_hash"],
        phase=manifest["phase"],
        extra=manifest.get("extra", {}),
        format_version=version,
    )


def state_arrays(module) -> dict[str, np.ndarray]:
    """Snapshot a torch module's state dict as named numpy arrays."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[name] = tensor.detach().cpu().numpy().copy()
    return out


def load_state_arrays(module, params: Mapping[str, np.ndarray]) -> None:
    """Load named numpy arrays back into a torch module, strictly."""
    import torch

    state = {name: torch.from_numpy(np.ascontiguousarray(arr)) for name, arr in params.items()}
    module.load_state_dict(state, strict=True)


def parameter_fingerprint(params: Mapping[str, np.ndarray]) -> str:
    """sha256 over (name, dtype, shape, little-endian bytes), sorted by name.

    Two modules share a fingerprint exactly when their state is bit-identical,
    which is what the freeze contracts between training phases check.
    """
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name])
        dtype_name = _canonical_name(arr.dtype)
        h.update(name.encode("utf-8"))
        h.update(dtype_name.encode("utf-8"))
        h.update(str(list(arr.shape)).encode("utf-8"))
        h.update(arr.astype(_DTYPES[dtype_name], copy=False).tobytes())
    return h.hexdigest()


def module_fingerprint(module) -> str:
    """Fingerprint a torch module's current state."""
    return parameter_fingerprint(state_arrays(module))
