"""Checkpoint container: parameters, optimizer moments, and the run seed.

Little-endian layout with magic "DLCK", u16 major/minor, the epoch count,
a CRC-32 of the resolved config (so resuming with a different config is a
hard error), the global seed, named f64 parameter blobs, AdamW moments,
and a trailing CRC-32 of the payload. Values are stored at 64-bit
regardless of the training precision; float32 parameters round-trip
exactly through the widening.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .optim import AdamWState
from .tensor import Tensor

MAGIC = b"DLCK"
VERSION = (1, 0)


class CheckpointFormatError(ValueError):
    """Raised for malformed checkpoint files."""


class CheckpointConfigMismatch(ValueError):
    """Raised when resuming against a checkpoint written by a different
    configuration."""


def _pack_array(name: str, arr: np.ndarray) -> bytes:
    data = np.asarray(arr, dtype="<f8")
    encoded = name.encode("utf-8")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    return head + data.tobytes()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise CheckpointFormatError("truncated checkpoint file")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self):
        (name_len,) = self.unpack("<H")
        name = self.take(name_len).decode("utf-8")
        (ndim,) = self.unpack("<B")
        shape = self.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(count * 8), dtype="<f8").reshape(shape)
        return name, data.copy()


def save_checkpoint(
    path,
    epoch: int,
    config_hash: int,
    named_params,
    opt_state: AdamWState,
    seed: int,
) -> None:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<HH", *VERSION)
    out += struct.pack("<IIq", epoch, config_hash & 0xFFFFFFFF, seed)
    out += struct.pack("<I", len(named_params))
    for name, p in named_params:
        out += _pack_array(name, p.data)
    out += struct.pack("<I", opt_state.step)
    for (name, _), m, v in zip(named_params, opt_state.m, opt_state.v):
        out += _pack_array(name + ".m", m)
        out += _pack_array(name + ".v", v)
    crc = zlib.crc32(bytes(out)) & 0xFFFFFFFF
    out += struct.pack("<I", crc)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {epoch, config_hash, seed, params, opt}."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    payload, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointFormatError("checkpoint checksum mismatch")
    r = _Reader(payload)
    r.take(4)
    major, minor = r.unpack("<HH")
    if major != VERSION[0]:
        raise CheckpointFormatError(
            f"unsupported checkpoint major version {major} (expected {VERSION[0]})"
        )
    epoch, config_hash, seed = r.unpack("<IIq")
    (n_params,) = r.unpack("<I")
    params = {}
    order = []
    for _ in range(n_params):
        name, data = r.array()
        params[name] = data
        order.append(name)
    (step,) = r.unpack("<I")
    moments = {}
    for _ in range(2 * n_params):
        name, data = r.array()
        moments[name] = data
    if r.off != len(payload):
        raise CheckpointFormatError("checkpoint has trailing bytes before checksum")
    return {
        "epoch": epoch,
        "config_hash": config_hash,
        "seed": seed,
        "params": params,
        "param_order": order,
        "opt_step": step,
        "moments": moments,
    }


def restore_model(ck: dict, named_params, opt_state: AdamWState, config_hash: int):
    """Copy checkpoint values into live parameters and optimizer state.

    The config hash must match the one the checkpoint was written with.
    """
    if ck["config_hash"] != (config_hash & 0xFFFFFFFF):
        raise CheckpointConfigMismatch(
            "checkpoint was written by a different configuration "
            f"(hash {ck['config_hash']:#x} vs {config_hash & 0xFFFFFFFF:#x})"
        )
    names = [n for n, _ in named_params]
    if names != ck["param_order"]:
        raise CheckpointFormatError("checkpoint parameter set does not match model")
    for i, (name, p) in enumerate(named_params):
        stored = ck["params"][name]
        if stored.shape != p.data.shape:
            raise CheckpointFormatError(
                f"shape mismatch for {name}: {stored.shape} vs {p.data.shape}"
            )
        p.data[...] = stored.astype(p.data.dtype)
        opt_state.m[i] = ck["moments"][name + ".m"].astype(p.data.dtype)
        opt_state.v[i] = ck["moments"][name + ".v"].astype(p.data.dtype)
    opt_state.step = ck["opt_step"]
