"""Round trips, corruption detection, manifests."""

import json

import numpy as np
import pytest

from playlang.oracle import collect_demos, collect_play
from playlang.seeding import rng_for
from playlang.storage import (
    CKPT_MAGIC, SCHEMA_VERSION, StorageError, load_checkpoint, load_episodes,
    save_checkpoint, save_episodes, sha256_file, write_manifest,
)


@pytest.fixture(scope="module")
def episodes():
    return collect_play(1500, seed=21, chunk_len=300)


def test_episode_roundtrip(tmp_path, episodes):
    p = tmp_path / "play.jsonl"
    save_episodes(p, episodes)
    back = load_episodes(p)
    assert len(back) == len(episodes)
    for a, b in zip(episodes, back):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.actions, b.actions)
        assert a.events == b.events
        assert a.meta == b.meta


def test_episode_roundtrip_demos(tmp_path):
    demos = collect_demos("press_red", 2, seed=3)
    p = tmp_path / "demos.jsonl"
    save_episodes(p, demos)
    back = load_episodes(p)
    assert back[0].meta["task"] == "press_red"
    assert back[0].meta["initial_state"] == demos[0].meta["initial_state"]


def test_corrupt_line_reports_position(tmp_path, episodes):
    p = tmp_path / "bad.jsonl"
    save_episodes(p, episodes[:3])
    lines = p.read_bytes().split(b"\n")
    lines[1] = lines[1][:40]  # chop a record mid-JSON
    p.write_bytes(b"\n".join(lines))
    with pytest.raises(StorageError, match=r"line 2"):
        load_episodes(p)


def test_truncated_file_reports_offset(tmp_path, episodes):
    p = tmp_path / "trunc.jsonl"
    save_episodes(p, episodes[:2])
    data = p.read_bytes()
    first_len = data.index(b"\n") + 1
    p.write_bytes(data[:first_len + 50])  # second record cut short
    with pytest.raises(StorageError, match=rf"byte offset {first_len}"):
        load_episodes(p)


def test_schema_version_rejected(tmp_path, episodes):
    p = tmp_path / "old.jsonl"
    save_episodes(p, episodes[:1])
    rec = json.loads(p.read_text())
    rec["schema_version"] = SCHEMA_VERSION + 1
    p.write_text(json.dumps(rec) + "\n")
    with pytest.raises(StorageError, match="schema_version"):
        load_episodes(p)


def test_checkpoint_roundtrip(tmp_path):
    rng = rng_for("ckpt", 0)
    arrays = {
        "layer.w": rng.normal(size=(17, 5)).astype(np.float32),
        "layer.b": rng.normal(size=5).astype(np.float32),
        "scalarish": np.float32(rng.normal(size=())),
    }
    config = {"model": {"hidden": 128}, "note": "round trip"}
    p = tmp_path / "model.plcd"
    save_checkpoint(p, config, arrays)
    assert p.read_bytes()[:4] == CKPT_MAGIC
    cfg2, arr2 = load_checkpoint(p)
    assert cfg2 == config
    assert set(arr2) == set(arrays)
    for k in arrays:
        assert np.array_equal(np.asarray(arrays[k]), arr2[k]), k
        assert arr2[k].dtype == np.float32


def test_checkpoint_crc_catches_flips(tmp_path):
    arrays = {"w": rng_for("crc", 1).normal(size=(6, 6)).astype(np.float32)}
    p = tmp_path / "m.plcd"
    save_checkpoint(p, {"v": 1}, arrays)
    data = bytearray(p.read_bytes())
    rng = rng_for("crc-flips", 2)
    caught = 0
    for _ in range(100):
        i = int(rng.integers(len(data)))
        bit = 1 << int(rng.integers(8))
        mutated = bytearray(data)
        mutated[i] ^= bit
        p.write_bytes(bytes(mutated))
        try:
            load_checkpoint(p)
        except StorageError:
            caught += 1
    assert caught == 100


def test_checkpoint_version_mismatch(tmp_path):
    import struct
    import zlib
    p = tmp_path / "v9.plcd"
    save_checkpoint(p, {}, {"w": np.zeros(2, np.float32)})
    data = bytearray(p.read_bytes())
    data[4:8] = struct.pack("<I", 9)
    body = bytes(data[:-4])
    p.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    with pytest.raises(StorageError, match="version 9"):
        load_checkpoint(p)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    p = tmp_path / "not.plcd"
    p.write_bytes(b"nope")
    with pytest.raises(StorageError):
        load_checkpoint(p)


def test_manifest_deterministic_no_timestamps(tmp_path, episodes):
    data = tmp_path / "d.jsonl"
    save_episodes(data, episodes[:1])
    m1 = write_manifest(tmp_path / "m1.json", "collect-play",
                        {"ticks": 1500, "seed": 21}, inputs={},
                        outputs={"dataset": data}, seeds=[21])
    m2 = write_manifest(tmp_path / "m2.json", "collect-play",
                        {"ticks": 1500, "seed": 21}, inputs={},
                        outputs={"dataset": data}, seeds=[21])
    assert (tmp_path / "m1.json").read_text() == (tmp_path / "m2.json").read_text()
    assert m1["outputs"]["dataset"] == sha256_file(data)
    assert m1 == m2
