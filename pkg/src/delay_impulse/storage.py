"""Store files and run manifests.

A store file is ``MAGIC``, a little-endian u32 format version, a u64 header
length, a UTF-8 JSON header and then a blob of little-endian float64 arrays.
The header lists every block (``fk``, ``v0`` and one per executable
configuration) with byte offset, shape and SHA-256. Never-executed
configurations alias a suffix of ``fk`` and are stored by start index only.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np

from .lattice import PendingConfig, SpaceGrid, TimeGrid
from .model import ProblemSpec, validate_problem
from .solver import ConfigField, StoreIncomplete, ValueStore

MAGIC = b"DIMPSTOR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class StoreError(Exception):
    pass


class VersionMismatch(StoreError):
    pass


class ChecksumFailure(StoreError):
    pass


class GridMismatch(StoreError):
    pass


def _sha(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _le_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def grid_header(tgrid: TimeGrid, sgrid: SpaceGrid) -> dict[str, Any]:
    return {"time": tgrid.to_dict(), "space": sgrid.to_dict()}


def persist_store(store: ValueStore, path: str | Path) -> None:
    """Write ``store`` atomically to ``path``."""
    if not store.complete:
        raise StoreIncomplete("only complete stores can be persisted")
    blocks: list[bytes] = []
    offset = 0

    def add(a: np.ndarray) -> dict[str, Any]:
        nonlocal offset
        raw = _le_bytes(a)
        entry = {"offset": offset, "shape": list(a.shape), "sha256": _sha(raw)}
        blocks.append(raw)
        offset += len(raw)
        return entry

    header: dict[str, Any] = {
        "format": FORMAT_VERSION,
        "problem": store.problem.spec.to_dict(),
        "grids": grid_header(store.tgrid, store.sgrid),
        "clamp_count": store.clamp_count,
        "fk": add(store.fk),
        "v0": add(store.v0),
        "configs": [],
    }
    for p in sorted(store.fields):
        fld = store.fields[p]
        entry: dict[str, Any] = {"key": p.key(), "start": fld.start, "stage": fld.stage, "interior": fld.interior}
        if fld.interior:
            entry.update(add(fld.data))
        header["configs"].append(entry)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(blocks)
    atomic_write_bytes(Path(path), payload)


def load_store(path: str | Path) -> ValueStore:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ChecksumFailure("file shorter than its fixed prefix")
    magic, version, head_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise VersionMismatch("not a store file")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"store format {version}, this build reads {FORMAT_VERSION}")
    body_start = _PREFIX.size + head_len
    if len(raw) < body_start:
        raise ChecksumFailure("header truncated")
    try:
        header = json.loads(raw[_PREFIX.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumFailure(f"header unreadable: {exc}") from None
    body = memoryview(raw)[body_start:]

    def block(entry: dict[str, Any], what: str) -> np.ndarray:
        shape = tuple(entry["shape"])
        n = 8 * int(np.prod(shape, dtype=np.int64))
        lo = entry["offset"]
        chunk = bytes(body[lo:lo + n])
        if len(chunk) != n or _sha(chunk) != entry["sha256"]:
            raise ChecksumFailure(f"block {what} is truncated or corrupt")
        out = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        out.flags.writeable = False
        return out

    problem = validate_problem(ProblemSpec.from_dict(header["problem"]))
    tg, sg = header["grids"]["time"], header["grids"]["space"]
    tgrid = TimeGrid.from_dict(tg)
    sgrid = SpaceGrid.from_dict(sg)
    fk = block(header["fk"], "fk")
    v0 = block(header["v0"], "v0")
    store = ValueStore(problem, tgrid, sgrid, fk, v0, 0, clamp_count=header["clamp_count"])
    for entry in header["configs"]:
        p = PendingConfig.from_key(entry["key"])
        data = block(entry, entry["key"]) if entry["interior"] else fk[entry["start"]:]
        store.fields[p] = ConfigField(entry["start"], data, entry["interior"], entry["stage"])
    store.stage = tgrid.n_stages
    return store


def check_grid(store: ValueStore, tgrid: TimeGrid, sgrid: SpaceGrid) -> None:
    """Raise GridMismatch unless ``store`` was computed on exactly these grids."""
    if grid_header(store.tgrid, store.sgrid) != grid_header(tgrid, sgrid):
        raise GridMismatch("store grids differ from the problem's grids")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def build_manifest(store: ValueStore, problem_bytes: bytes, tool_version: str) -> dict[str, Any]:
    return {
        "tool_version": tool_version,
        "problem_sha256": _sha(problem_bytes),
        "grids": grid_header(store.tgrid, store.sgrid),
        "stages": store.tgrid.n_stages,
        "configs_by_k": {str(k): n for k, n in store.counts_by_k().items()},
        "warnings": {"clamped_impulse_images": store.clamp_count},
        "timing_seconds": {str(k): v for k, v in sorted(store.stage_seconds.items())},
    }


def write_manifest(manifest: dict[str, Any], path: str | Path) -> None:
    atomic_write_text(Path(path), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
