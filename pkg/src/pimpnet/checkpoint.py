"""Binary checkpoints: config snapshot, parameters and optimizer moments.

Layout (little-endian): magic ``PIMP``, u32 version, u32 metadata length and
UTF-8 metadata, u32 tensor count, then per tensor a u32 name length, the UTF-8
name, u8 rank, u64 extents and f32 data.
"""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import Config, config_text, parse_config_text
from .model import PimpnetModel
from .training import OptimizerStates

MAGIC = b"PIMP"
VERSION = 1
STAGE_PRETRAINED = 1
STAGE_TRAINED = 2


class CheckpointFormatError(ValueError):
    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class Checkpoint:
    config: Config
    model: PimpnetModel
    states: OptimizerStates
    stage: int


def _metadata(cfg: Config, states: OptimizerStates, stage: int) -> str:
    text = config_text(cfg)
    text += f"# stage = {stage}\n"
    for name, st in states.items():
        text += f"# adam.{name}.step = {st.step}\n"
    return text


def _tensors(model: PimpnetModel, states: OptimizerStates):
    out = [(name, t.data) for name, t in model.named_tensors()]
    for name, st in states.items():
        for i, (m, v) in enumerate(zip(st.m, st.v)):
            out.append((f"adam.{name}.m.{i}", m))
            out.append((f"adam.{name}.v.{i}", v))
    return out


def checkpoint_bytes(cfg: Config, model: PimpnetModel, states: OptimizerStates, stage: int) -> bytes:
    meta = _metadata(cfg, states, stage).encode("utf-8")
    tensors = _tensors(model, states)
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise CheckpointFormatError("truncated payload", f"needed {n} bytes at offset {self.off}, file has {len(self.buf)}")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def parse_checkpoint(buf: bytes) -> Checkpoint:
    if buf[:4] != MAGIC:
        raise CheckpointFormatError("bad magic", "not a PIMP checkpoint")
    r = _Reader(buf)
    r.take(4)
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointFormatError("version mismatch", f"expected version {VERSION}, found {version}")
    meta = r.take(meta_len).decode("utf-8")
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    if r.off != len(buf):
        raise CheckpointFormatError("trailing data", f"{len(buf) - r.off} unread bytes")

    extra = {}
    for line in meta.splitlines():
        if line.startswith("# ") and "=" in line:
            k, _, v = line[2:].partition("=")
            extra[k.strip()] = int(v)
    cfg = parse_config_text(meta)
    model = PimpnetModel.init(cfg.model, cfg.seed)
    for name, t in model.named_tensors():
        if name not in tensors:
            raise CheckpointFormatError("missing tensor", name)
        if tensors[name].shape != t.shape:
            raise CheckpointFormatError("shape mismatch", f"{name}: {tensors[name].shape} vs {t.shape}")
        t.data = tensors[name].copy()
    states = OptimizerStates()
    for name, st in states.items():
        st.step = extra.get(f"adam.{name}.step", 0)
        i = 0
        while f"adam.{name}.m.{i}" in tensors:
            st.m.append(tensors[f"adam.{name}.m.{i}"].copy())
            st.v.append(tensors[f"adam.{name}.v.{i}"].copy())
            i += 1
    return Checkpoint(cfg, model, states, extra.get("stage", 0))


def save_checkpoint(path, cfg: Config, model: PimpnetModel, states: OptimizerStates, stage: int):
    Path(path).write_bytes(checkpoint_bytes(cfg, model, states, stage))


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())
