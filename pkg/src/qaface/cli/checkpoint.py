"""Training checkpoints.

Layout: an ASCII header of ``key = value`` lines ending in ``end``, a
little-endian binary payload holding the arrays in header order, then the
sha256 digest (32 raw bytes) of everything before it. Scalars in the
header are written with ``repr`` so floats round-trip exactly.
"""
from __future__ import annotations

import hashlib
import os

import numpy as np

from ..injection import FeatureMemory, MomentumEncoder
from ..quality import QualityStats
from ..simulator.backbone import IdentityBackbone, ToyBackbone
from ..simulator.train import TrainState

MAGIC = "qaface-checkpoint"
VERSION = 1
_DIGEST = 32


class CheckpointError(Exception):
    pass


class IoError(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ConfigMismatch(CheckpointError):
    pass


_ARRAYS = ("backbone", "encoder", "centers", "velocity_params", "velocity_centers",
           "memory_entries", "memory_last_write")


def _arrays(state: TrainState) -> dict[str, np.ndarray]:
    return {
        "backbone": state.backbone.params,
        "encoder": state.encoder.parameters,
        "centers": state.centers,
        "velocity_params": state.velocity_params,
        "velocity_centers": state.velocity_centers,
        "memory_entries": state.memory.entries,
        "memory_last_write": state.memory.last_write,
    }


def encode_checkpoint(state: TrainState, config_hash: str) -> bytes:
    bb = state.backbone
    st = state.stats
    header = {
        "format": MAGIC,
        "version": VERSION,
        "config_hash": config_hash,
        "iteration": state.iteration,
        "epoch": state.epoch,
        "step_in_epoch": state.step_in_epoch,
        "backbone.kind": "identity" if isinstance(bb, IdentityBackbone) else "mlp",
        "backbone.input_dim": bb.input_dim,
        "backbone.hidden_dim": getattr(bb, "hidden_dim", 0),
        "backbone.output_dim": bb.output_dim,
        "backbone.activation": bb.activation,
        "encoder.gamma": state.encoder.gamma,
        "memory.delta_t_max": state.memory.delta_t_max,
        "stats.mu": st.mu,
        "stats.sigma": st.sigma,
        "stats.alpha": st.alpha,
        "stats.initialized": st.initialized,
        "stats.orientation": st.orientation,
    }
    payload = []
    for name, arr in _arrays(state).items():
        dtype = "<i8" if arr.dtype.kind in "iu" else "<f8"
        data = np.ascontiguousarray(arr, dtype=dtype)
        header[f"array.{name}"] = f"{dtype} {'x'.join(map(str, arr.shape)) or 'scalar'}"
        payload.append(data.tobytes())
    text = "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in header.items()) + "end\n"
    body = text.encode("ascii") + b"".join(payload)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(state: TrainState, path: str, config_hash: str) -> None:
    """Write atomically (temp file + rename)."""
    blob = encode_checkpoint(state, config_hash)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def _parse_header(blob: bytes) -> tuple[dict[str, str], int]:
    end = blob.find(b"\nend\n")
    if end < 0:
        raise CorruptFile("header terminator missing")
    try:
        lines = blob[:end].decode("ascii").split("\n")
    except UnicodeDecodeError:
        raise CorruptFile("header is not ASCII") from None
    header = {}
    for line in lines:
        k, sep, v = line.partition(" = ")
        if not sep:
            raise CorruptFile(f"bad header line {line!r}")
        header[k] = v
    return header, end + len(b"\nend\n")


def decode_checkpoint(blob: bytes, expected_hash: str | None = None) -> TrainState:
    if len(blob) < _DIGEST:
        raise CorruptFile("file too short")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile("checksum mismatch (truncated or modified file)")
    header, offset = _parse_header(body)
    if header.get("format") != MAGIC:
        raise CorruptFile("not a checkpoint file")
    if header.get("version") != str(VERSION):
        raise VersionMismatch(f"checkpoint version {header.get('version')}, expected {VERSION}")
    if expected_hash is not None and header["config_hash"] != expected_hash:
        raise ConfigMismatch(
            f"checkpoint config hash {header['config_hash']} != current {expected_hash}")

    arrays = {}
    for name in _ARRAYS:
        try:
            dtype, shape_s = header[f"array.{name}"].split(" ")
            shape = () if shape_s == "scalar" else tuple(int(x) for x in shape_s.split("x"))
        except (KeyError, ValueError):
            raise CorruptFile(f"bad or missing array entry for {name}") from None
        if dtype not in ("<f8", "<i8"):
            raise CorruptFile(f"unsupported dtype {dtype}")
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(body):
            raise CorruptFile(f"payload too short for {name}")
        native = np.float64 if dtype == "<f8" else np.int64
        arrays[name] = np.frombuffer(body, dtype=dtype, count=count,
                                     offset=offset).reshape(shape).astype(native)
        offset += 8 * count
    if offset != len(body):
        raise CorruptFile("trailing bytes after payload")

    try:
        if header["backbone.kind"] == "identity":
            backbone = IdentityBackbone(int(header["backbone.input_dim"]))
        else:
            backbone = ToyBackbone(int(header["backbone.input_dim"]),
                                   int(header["backbone.hidden_dim"]),
                                   int(header["backbone.output_dim"]),
                                   header["backbone.activation"], arrays["backbone"])
        stats = QualityStats(mu=float(header["stats.mu"]), sigma=float(header["stats.sigma"]),
                             alpha=float(header["stats.alpha"]),
                             initialized=header["stats.initialized"] == "True",
                             orientation=header["stats.orientation"])
        memory = FeatureMemory(arrays["memory_entries"], arrays["memory_last_write"],
                               int(header["memory.delta_t_max"]))
        return TrainState(
            backbone=backbone,
            encoder=MomentumEncoder(arrays["encoder"], float(header["encoder.gamma"])),
            centers=arrays["centers"],
            velocity_params=arrays["velocity_params"],
            velocity_centers=arrays["velocity_centers"],
            stats=stats,
            memory=memory,
            iteration=int(header["iteration"]),
            epoch=int(header["epoch"]),
            step_in_epoch=int(header["step_in_epoch"]),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"inconsistent header: {exc}") from exc


def load_checkpoint(path: str, expected_hash: str | None = None) -> TrainState:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, expected_hash)
