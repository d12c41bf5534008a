"""Model checkpoint file format.

Layout (all integers little-endian):

    magic   5 bytes  b"TVGAN"
    version 3 bytes  b"001"
    section repeated:
        u16   name length (0 terminates the section list)
        bytes name (utf-8)
        u8    payload type (0 = JSON, 1 = ndarray)
        u64   payload length
        bytes payload
    u32     CRC32 of every preceding byte

An ndarray payload is: u8 dtype code, u8 rank, rank x u64 dims, raw
array bytes. Bad magic, unsupported version, early EOF, and checksum
mismatch raise distinct errors; nothing partial is ever returned.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .nets import NetConfig

MAGIC = b"TVGAN"
VERSION = b"001"

_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8, 4: np.uint64}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


class CheckpointError(Exception):
    """Base class for checkpoint read failures."""


class CheckpointFormatError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Recognized file, unsupported format version."""


class CheckpointTruncationError(CheckpointError):
    """File ends before the declared content does."""


class CheckpointCorruptError(CheckpointError):
    """Structurally complete but fails the checksum or decodes nonsense."""


@dataclass
class ModelCheckpoint:
    """Everything needed to resume: config, tensors, optimizer, counters."""

    config: NetConfig
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = 1

    @property
    def seed(self) -> int:
        return int(self.meta.get("seed", 0))

    @property
    def iteration(self) -> int:
        return int(self.meta.get("iteration", 0))


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise ValueError(f"unsupported array dtype {arr.dtype}")
    head = struct.pack("<BB", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return head + dims + arr.tobytes()


def _decode_array(payload: bytes) -> np.ndarray:
    if len(payload) < 2:
        raise CheckpointCorruptError("array payload shorter than its header")
    code, rank = struct.unpack_from("<BB", payload)
    if code not in _DTYPES:
        raise CheckpointCorruptError(f"unknown array dtype code {code}")
    off = 2 + 8 * rank
    if len(payload) < off:
        raise CheckpointCorruptError("array payload shorter than its shape")
    dims = struct.unpack_from(f"<{rank}Q", payload, 2) if rank else ()
    dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
    count = 1
    for d in dims:
        count *= int(d)
    expect = off + count * dtype.itemsize
    if len(payload) != expect:
        raise CheckpointCorruptError(
            f"array payload is {len(payload)} bytes, header implies {expect}")
    flat = np.frombuffer(payload, dtype=dtype, count=count, offset=off)
    return flat.astype(_DTYPES[code]).reshape(dims)


def _write_section(buf: io.BytesIO, name: str, ptype: int, payload: bytes):
    enc = name.encode("utf-8")
    buf.write(struct.pack("<H", len(enc)))
    buf.write(enc)
    buf.write(struct.pack("<BQ", ptype, len(payload)))
    buf.write(payload)


def save_checkpoint(path, ckpt: ModelCheckpoint) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC + VERSION)
    cfg_json = json.dumps(ckpt.config.to_dict(), sort_keys=True).encode()
    _write_section(buf, "config", 0, cfg_json)
    meta = dict(ckpt.meta)
    meta["format_version"] = ckpt.version
    _write_section(buf, "meta", 0, json.dumps(meta, sort_keys=True).encode())
    for name in sorted(ckpt.arrays):
        _write_section(buf, name, 1, _encode_array(ckpt.arrays[name]))
    buf.write(struct.pack("<H", 0))
    blob = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointTruncationError(
                f"needed {n} bytes at offset {self.pos}, file has "
                f"{len(self.data) - self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(5) != MAGIC:
        raise CheckpointFormatError("not a model checkpoint (bad magic)")
    version = r.take(3)
    if version != VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version!r}")
    sections = {}
    kinds = {}
    while True:
        name_len = r.u16()
        if name_len == 0:
            break
        name = r.take(name_len).decode("utf-8", errors="replace")
        ptype = r.u8()
        payload = r.take(r.u64())
        sections[name] = payload
        kinds[name] = ptype
    stored_crc = struct.unpack("<I", r.take(4))[0]
    if r.pos != len(data):
        raise CheckpointCorruptError("trailing bytes after checksum")
    if zlib.crc32(data[:r.pos - 4]) != stored_crc:
        raise CheckpointCorruptError("checksum mismatch")
    if "config" not in sections or "meta" not in sections:
        raise CheckpointCorruptError("missing config or meta section")
    try:
        config = NetConfig.from_dict(json.loads(sections.pop("config")))
        meta = json.loads(sections.pop("meta"))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"undecodable config/meta: {exc}") from exc
    kinds.pop("config", None)
    kinds.pop("meta", None)
    arrays = {}
    for name, payload in sections.items():
        if kinds[name] != 1:
            raise CheckpointCorruptError(f"section {name!r} has unknown type")
        arrays[name] = _decode_array(payload)
    fmt_version = int(meta.pop("format_version", 1))
    return ModelCheckpoint(config=config, arrays=arrays, meta=meta,
                           version=fmt_version)


def checkpoint_from_networks(config: NetConfig, networks: dict,
                             optimizers: dict = None, seed: int = 0,
                             iteration: int = 0) -> ModelCheckpoint:
    """Snapshot named networks (and optionally their Adam states)."""
    arrays = {}
    meta = {"seed": int(seed), "iteration": int(iteration), "adam": {}}
    for net_name, net in networks.items():
        for pname, arr in net.state_arrays().items():
            arrays[f"{net_name}/{pname}"] = arr
    for opt_name, opt in (optimizers or {}).items():
        st = opt.state
        meta["adam"][opt_name] = {
            "lr": st.lr, "beta1": st.beta1, "beta2": st.beta2,
            "epsilon": st.epsilon, "step_count": st.step_count,
            "count": len(st.m)}
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            arrays[f"adam/{opt_name}/m{i}"] = m
            arrays[f"adam/{opt_name}/v{i}"] = v
    return ModelCheckpoint(config=config, arrays=arrays, meta=meta)


def restore_networks(ckpt: ModelCheckpoint, networks: dict,
                     optimizers: dict = None) -> None:
    """Load a snapshot back into matching network/optimizer objects."""
    for net_name, net in networks.items():
        prefix = net_name + "/"
        state = {k[len(prefix):]: v for k, v in ckpt.arrays.items()
                 if k.startswith(prefix) and not k.startswith("adam/")}
        net.load_state(state)
    for opt_name, opt in (optimizers or {}).items():
        saved = ckpt.meta.get("adam", {}).get(opt_name)
        if saved is None:
            continue
        st = opt.state
        st.lr = float(saved["lr"])
        st.beta1 = float(saved["beta1"])
        st.beta2 = float(saved["beta2"])
        st.epsilon = float(saved["epsilon"])
        st.step_count = int(saved["step_count"])
        n = int(saved["count"])
        st.m = [np.asarray(ckpt.arrays[f"adam/{opt_name}/m{i}"], np.float32)
                for i in range(n)]
        st.v = [np.asarray(ckpt.arrays[f"adam/{opt_name}/v{i}"], np.float32)
                for i in range(n)]
