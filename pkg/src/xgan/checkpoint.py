"""Binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"XGAN"
    version u32      1
    n_rec   u32
    records: for each array record
        name_len u32, name UTF-8 bytes   ("<slot>#value" | "<slot>#adam_m" | "<slot>#adam_v")
        dtype    u8                      (0 = f32, 1 = f64)
        rank     u32
        extents  rank x u64
        payload  raw little-endian floats, row-major
    n_alias u32
    aliases: for each (alias -> slot) pair
        alias_len u32, alias bytes, slot_len u32, slot bytes
    step    u64

Records cover every slot's value and Adam moments, including non-trainable
buffers (batchnorm running stats), so a restored run continues bit-exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import ParameterStore

MAGIC = b"XGAN"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(RuntimeError):
    """Missing, truncated, or malformed checkpoint file."""


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", _TAG_OF[arr.dtype]))
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def save_checkpoint(path: str | Path, store: ParameterStore, step: int) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    slot_ids = sorted(store.slots)
    aliases = sorted((a, s) for a, s in store.aliases.items() if a != s)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", 3 * len(slot_ids)))
        for sid in slot_ids:
            slot = store.slots[sid]
            _write_record(fh, f"{sid}#value", slot.value)
            _write_record(fh, f"{sid}#adam_m", slot.adam_m)
            _write_record(fh, f"{sid}#adam_v", slot.adam_v)
        fh.write(struct.pack("<I", len(aliases)))
        for alias, sid in aliases:
            for text in (alias, sid):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
        fh.write(struct.pack("<Q", step))
    return path


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_record(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "record name length"))
    name = _read_exact(fh, name_len, "record name").decode("utf-8")
    (tag,) = struct.unpack("<B", _read_exact(fh, 1, "dtype tag"))
    if tag not in _DTYPE_TAGS:
        raise CheckpointError(f"record {name!r}: unknown dtype tag {tag}")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
    shape = tuple(
        struct.unpack("<Q", _read_exact(fh, 8, "extent"))[0] for _ in range(rank)
    )
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = _read_exact(fh, count * dtype.itemsize, f"payload of {name!r}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return name, arr


def load_checkpoint(path: str | Path):
    """Returns (records, aliases, step); records maps slot id -> dict of arrays."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointError(f"{path}: bad magic (not a checkpoint)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (n_rec,) = struct.unpack("<I", _read_exact(fh, 4, "record count"))
        records: dict[str, dict[str, np.ndarray]] = {}
        for _ in range(n_rec):
            name, arr = _read_record(fh)
            if "#" not in name:
                raise CheckpointError(f"{path}: record {name!r} lacks a kind suffix")
            sid, kind = name.rsplit("#", 1)
            records.setdefault(sid, {})[kind] = arr
        (n_alias,) = struct.unpack("<I", _read_exact(fh, 4, "alias count"))
        aliases: dict[str, str] = {}
        for _ in range(n_alias):
            (alen,) = struct.unpack("<I", _read_exact(fh, 4, "alias length"))
            alias = _read_exact(fh, alen, "alias").decode("utf-8")
            (slen,) = struct.unpack("<I", _read_exact(fh, 4, "slot length"))
            sid = _read_exact(fh, slen, "slot id").decode("utf-8")
            aliases[alias] = sid
        (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step"))
    return records, aliases, step


def restore_into(store: ParameterStore, path: str | Path) -> int:
    """Load a checkpoint into an already-built store; returns the saved step."""
    records, aliases, step = load_checkpoint(path)
    missing = set(store.slots) - set(records)
    extra = set(records) - set(store.slots)
    if missing or extra:
        raise CheckpointError(
            f"{path}: slot mismatch (missing {sorted(missing)[:3]}..., extra {sorted(extra)[:3]}...)"
            if len(missing) + len(extra) > 6
            else f"{path}: slot mismatch (missing {sorted(missing)}, extra {sorted(extra)})"
        )
    for sid, arrays in records.items():
        slot = store.slots[sid]
        for kind in ("value", "adam_m", "adam_v"):
            if kind not in arrays:
                raise CheckpointError(f"{path}: slot {sid!r} missing {kind} record")
            if arrays[kind].shape != slot.value.shape:
                raise CheckpointError(
                    f"{path}: slot {sid!r} {kind} shape {list(arrays[kind].shape)} "
                    f"!= expected {list(slot.value.shape)}"
                )
        slot.value = arrays["value"].astype(np.float32)
        slot.adam_m = arrays["adam_m"].astype(np.float32)
        slot.adam_v = arrays["adam_v"].astype(np.float32)
    for alias, sid in aliases.items():
        if store.aliases.get(alias) != sid:
            raise CheckpointError(f"{path}: alias {alias!r} -> {sid!r} does not match store")
    return step
