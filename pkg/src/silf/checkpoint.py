"""Versioned binary checkpoint container.

Layout: the 8-byte magic ``SILFCKPT``, a little-endian u32 format version,
then a sequence of named, length-prefixed sections (config, params, masks,
tasks).  All numeric payloads are little-endian: float64 for weights and
biases, int16 for mask labels.  A JSON manifest sidecar
(``<path>.manifest.json``) lists the section offsets and the config hash.

Serialization is fully deterministic: dictionaries are written in sorted
key order and no timestamps enter the byte stream, so two runs with the
same config and seed produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import Checkpoint, TaskRecord, config_hash_of
from .maskstore import MaskRegistry, ReuseRecord
from .neuralcore import LayerSpec, NetworkParams

MAGIC = b"SILFCKPT"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint of this format version."""


class NotACheckpointError(CheckpointFormatError):
    """The magic bytes are wrong; this is not a SILF checkpoint."""


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def u8(self, v: int) -> None:
        self.buf += struct.pack("<B", v)

    def u32(self, v: int) -> None:
        self.buf += struct.pack("<I", v)

    def i64(self, v: int) -> None:
        self.buf += struct.pack("<q", v)

    def f64(self, v: float) -> None:
        self.buf += struct.pack("<d", v)

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw

    def f64_array(self, a: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(a, dtype="<f8").tobytes()

    def i16_array(self, a: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(a, dtype="<i2").tobytes()

    def bool_array(self, a: np.ndarray) -> None:
        self.buf += np.ascontiguousarray(a, dtype=np.uint8).tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, count: int) -> bytes:
        if self.pos + count > len(self.buf):
            raise CheckpointFormatError("checkpoint section is truncated")
        out = self.buf[self.pos : self.pos + count]
        self.pos += count
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def f64_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self._take(count * 8), dtype="<f8").astype(np.float64).reshape(shape)

    def i16_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self._take(count * 2), dtype="<i2").astype(np.int16).reshape(shape)

    def bool_array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self._take(count), dtype=np.uint8).astype(bool).reshape(shape)

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _write_config(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.text(ckpt.config_json)
    return bytes(w.buf)


def _write_params(params: NetworkParams) -> bytes:
    w = _Writer()
    w.u32(len(params.specs))
    for spec, weights, biases in zip(params.specs, params.weights, params.biases):
        w.u32(spec.out_dim)
        w.u32(spec.in_dim)
        w.text(spec.activation)
        w.f64_array(weights)
        w.f64_array(biases)
    return bytes(w.buf)


def _write_masks(registry: MaskRegistry) -> bytes:
    w = _Writer()
    w.u32(registry.n)
    w.u32(registry.k)
    for labels in registry.current:
        w.i16_array(labels)
    for archive in (registry.archived_first, registry.archived_second):
        w.u32(len(archive))
        for task in sorted(archive):
            w.u32(task)
            for labels in archive[task]:
                w.i16_array(labels)
    w.u32(len(registry.cannibalized))
    for task in sorted(registry.cannibalized):
        w.u32(task)
    return bytes(w.buf)


def _write_reuse(w: _Writer, reuse: ReuseRecord | None) -> None:
    if reuse is None:
        w.u8(0)
        return
    w.u8(1)
    w.u32(reuse.task)
    w.u32(len(reuse.ratios))
    for prev in sorted(reuse.ratios):
        w.u32(prev)
        w.f64(reuse.ratios[prev])
        for bitmap in reuse.muted[prev]:
            w.bool_array(bitmap)


def _write_tasks(ckpt: Checkpoint) -> bytes:
    w = _Writer()
    w.u32(len(ckpt.records))
    for task in sorted(ckpt.records):
        record = ckpt.records[task]
        w.u32(record.task)
        w.u8(0 if record.stage == "preset" else 1)
        w.text(record.dataset_id)
        for bias in record.bias_snapshot:
            w.f64_array(bias)
        rows, cols = record.probe_inputs.shape
        w.u32(rows)
        w.u32(cols)
        w.f64_array(record.probe_inputs)
        w.f64_array(record.probe_max)
        w.f64_array(record.probe_min)
        w.i64(-1 if record.reclaimed_count is None else record.reclaimed_count)
        _write_reuse(w, record.reuse)
    return bytes(w.buf)


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.json")


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write the checkpoint and its manifest sidecar; returns the file path."""
    path = Path(path)
    sections = [
        ("config", _write_config(ckpt)),
        ("params", _write_params(ckpt.params)),
        ("masks", _write_masks(ckpt.registry)),
        ("tasks", _write_tasks(ckpt)),
    ]
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    offsets = []
    for name, payload in sections:
        raw = name.encode("ascii")
        blob += struct.pack("<I", len(raw))
        blob += raw
        blob += struct.pack("<Q", len(payload))
        offsets.append({"name": name, "offset": len(blob), "length": len(payload)})
        blob += payload
    path.write_bytes(bytes(blob))
    manifest = {
        "format": MAGIC.decode("ascii"),
        "version": FORMAT_VERSION,
        "config_hash": ckpt.config_hash,
        "sections": offsets,
    }
    manifest_path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def _read_sections(blob: bytes) -> dict[str, bytes]:
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise NotACheckpointError("not a SILF checkpoint")
    version = struct.unpack_from("<I", blob, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    sections: dict[str, bytes] = {}
    pos = len(MAGIC) + 4
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise CheckpointFormatError("truncated section header")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("ascii")
        pos += name_len
        if pos + 8 > len(blob):
            raise CheckpointFormatError("truncated section length")
        (length,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if pos + length > len(blob):
            raise CheckpointFormatError(f"section {name!r} is truncated")
        sections[name] = blob[pos : pos + length]
        pos += length
    return sections


def load_checkpoint(path) -> Checkpoint:
    """Reload a checkpoint; inference through it is bit-identical to the
    state that was saved."""
    blob = Path(path).read_bytes()
    sections = _read_sections(blob)
    for required in ("config", "params", "masks", "tasks"):
        if required not in sections:
            raise CheckpointFormatError(f"missing section {required!r}")

    r = _Reader(sections["config"])
    config_json = r.text()

    r = _Reader(sections["params"])
    layer_count = r.u32()
    specs = []
    weights = []
    biases = []
    for _ in range(layer_count):
        out_dim = r.u32()
        in_dim = r.u32()
        activation = r.text()
        specs.append(LayerSpec(in_dim, out_dim, activation))
        weights.append(r.f64_array((out_dim, in_dim)))
        biases.append(r.f64_array((out_dim,)))
    params = NetworkParams(tuple(specs), weights, biases)
    shapes = [w.shape for w in weights]

    r = _Reader(sections["masks"])
    n = r.u32()
    k = r.u32()
    registry = MaskRegistry(shapes, n, k)
    registry.current = [r.i16_array(s) for s in shapes]
    for archive in (registry.archived_first, registry.archived_second):
        for _ in range(r.u32()):
            task = r.u32()
            archive[task] = [r.i16_array(s) for s in shapes]
    registry.cannibalized = {r.u32() for _ in range(r.u32())}

    r = _Reader(sections["tasks"])
    records: dict[int, TaskRecord] = {}
    for _ in range(r.u32()):
        task = r.u32()
        stage = "preset" if r.u8() == 0 else "additional"
        dataset_id = r.text()
        bias_snapshot = [r.f64_array((s.out_dim,)) for s in specs]
        rows = r.u32()
        cols = r.u32()
        probe_inputs = r.f64_array((rows, cols))
        probe_max = r.f64_array((rows,))
        probe_min = r.f64_array((rows,))
        reclaimed = r.i64()
        reuse = None
        if r.u8():
            reuse_task = r.u32()
            ratios: dict[int, float] = {}
            muted: dict[int, list[np.ndarray]] = {}
            for _ in range(r.u32()):
                prev = r.u32()
                ratios[prev] = r.f64()
                muted[prev] = [r.bool_array(s) for s in shapes]
            reuse = ReuseRecord(task=reuse_task, ratios=ratios, muted=muted)
        records[task] = TaskRecord(
            task=task,
            stage=stage,
            dataset_id=dataset_id,
            reuse=reuse,
            bias_snapshot=bias_snapshot,
            probe_inputs=probe_inputs,
            probe_max=probe_max,
            probe_min=probe_min,
            reclaimed_count=None if reclaimed < 0 else reclaimed,
        )

    return Checkpoint(params, registry, records, config_json, config_hash_of(config_json))
