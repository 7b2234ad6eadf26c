"""File formats: episode datasets, checkpoints, run manifests.

Episodes go to newline-delimited JSON with base64 float32 payloads, one
record per line, so files stay greppable while arrays stay exact. Model
parameters go to a binary container (magic "PLCD") because training state
must round-trip bit for bit; a trailing CRC32 catches corruption.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .oracle import Episode

SCHEMA_VERSION = 1
CKPT_MAGIC = b"PLCD"
CKPT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4")}


class StorageError(RuntimeError):
    pass


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise StorageError(f"no such file: {p}")
    return p


# ---- episode datasets ----------------------------------------------------------


def _pack_f32(arr: np.ndarray) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {"shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack_f32(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    arr = np.frombuffer(raw, dtype="<f4").reshape(d["shape"])
    return arr.astype(np.float32)


def episode_to_record(ep: Episode) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "meta": ep.meta,
        "observations": _pack_f32(ep.observations),
        "actions": _pack_f32(ep.actions),
        "events": [[name, int(tick)] for name, tick in ep.events],
    }


def episode_from_record(rec: dict) -> Episode:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise StorageError(
            f"schema_version {rec.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    return Episode(
        observations=_unpack_f32(rec["observations"]),
        actions=_unpack_f32(rec["actions"]),
        events=[(name, int(tick)) for name, tick in rec["events"]],
        meta=rec["meta"],
    )


def save_episodes(path, episodes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii") as f:
        for ep in episodes:
            f.write(json.dumps(episode_to_record(ep), separators=(",", ":")))
            f.write("\n")


def load_episodes(path) -> list:
    episodes = []
    offset = 0
    with open(_require_file(path), "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if line:
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise StorageError(
                        f"{path}: corrupt record at line {lineno} "
                        f"(byte offset {offset}): {e.msg}") from None
                try:
                    episodes.append(episode_from_record(rec))
                except (KeyError, ValueError, StorageError) as e:
                    raise StorageError(
                        f"{path}: bad record at line {lineno}: {e}") from None
            offset += len(raw)
    return episodes


# ---- annotation shards -----------------------------------------------------------


def save_pairs(path, rows) -> None:
    """Annotated windows, one JSON record per line, same schema discipline
    as episodes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="ascii") as f:
        for r in rows:
            f.write(json.dumps({
                "schema_version": SCHEMA_VERSION, "ep": int(r.ep),
                "start": int(r.start), "width": int(r.width),
                "label": r.label, "instruction": r.instruction},
                separators=(",", ":")))
            f.write("\n")


def load_pairs(path) -> list:
    from .data import LangExample

    rows = []
    with open(_require_file(path), "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if rec.get("schema_version") != SCHEMA_VERSION:
                    raise ValueError(
                        f"schema_version {rec.get('schema_version')!r}")
                rows.append(LangExample(int(rec["ep"]), int(rec["start"]),
                                        int(rec["width"]), rec["label"],
                                        rec["instruction"]))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise StorageError(
                    f"{path}: bad pair record at line {lineno}: {e}") from None
    return rows


# ---- checkpoint container --------------------------------------------------------


def save_checkpoint(path, config: dict, arrays: dict) -> None:
    """Binary bundle: magic, version, config JSON, named float32 arrays,
    CRC32 of everything before it."""
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        # asarray keeps rank-0 shapes; ascontiguousarray would promote them
        arr = np.asarray(arrays[name], dtype="<f4")
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<II", 0, arr.ndim))  # dtype tag 0 = float32
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    payload = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise StorageError(f"{self.path}: truncated at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    data = _require_file(path).read_bytes()
    if len(data) < 12:
        raise StorageError(f"{path}: too short to be a checkpoint")
    body, crc_bytes = data[:-4], data[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(body):
        raise StorageError(f"{path}: CRC mismatch, file is corrupt")
    r = _Reader(body, path)
    if r.take(4) != CKPT_MAGIC:
        raise StorageError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != CKPT_VERSION:
        raise StorageError(f"{path}: container version {version}, "
                           f"reader supports {CKPT_VERSION}")
    config = json.loads(r.take(r.u32()).decode())
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        tag = r.u32()
        dtype = _DTYPE_TAGS.get(tag)
        if dtype is None:
            raise StorageError(f"{path}: unknown dtype tag {tag} for {name!r}")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        flat = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype)
        arrays[name] = flat.reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise StorageError(f"{path}: {len(body) - r.pos} trailing bytes")
    return config, arrays


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(path, command: str, config: dict, inputs: dict = None,
                   outputs: dict = None, seeds=None) -> dict:
    """Reproducibility record: what ran, with which config, over which files.
    Hashes only, no timestamps, so identical runs write identical manifests."""
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": sha256_text(
            json.dumps(config, sort_keys=True, separators=(",", ":"))),
        "seeds": list(seeds) if seeds is not None else [],
        "inputs": {k: sha256_file(v) for k, v in (inputs or {}).items()},
        "outputs": {k: sha256_file(v) for k, v in (outputs or {}).items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
