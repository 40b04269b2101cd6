"""Single-file checkpoint container.

Layout: an 8-byte magic, a little-endian uint64 header length, a UTF-8 JSON
header, then the concatenated raw little-endian float32 parameter blocks. The
header carries the run config, step counter, RNG state, optimizer metadata,
per-block CRC32 checksums, and any non-float tensor state (stored inline as
plain integers). Loading verifies every checksum before anything is applied,
so a truncated or corrupted file never yields partial state.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig, train_config_from_dict, config_to_dict

MAGIC = b"NPVPCKPT"
FORMAT_VERSION = 1

SCOPE_AUTOENCODER = "autoencoder"
SCOPE_FULL = "full"


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or incompatible checkpoint."""


@dataclass
class Checkpoint:
    config: TrainConfig
    step: int
    scope: str = SCOPE_FULL
    arrays: dict[str, np.ndarray] = field(default_factory=dict)  # float32 blocks
    ints: dict[str, list] = field(default_factory=dict)  # integer tensor state, kept exact
    optimizer_meta: dict | None = None
    rng: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Atomic write: the file appears complete or not at all."""
    path = Path(path)
    names = sorted(ckpt.arrays)
    blocks = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
        data = arr.tobytes()
        blocks.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
                "crc32": zlib.crc32(data),
            }
        )
        offset += len(data)

    header = {
        "format_version": FORMAT_VERSION,
        "scope": ckpt.scope,
        "step": ckpt.step,
        "config": config_to_dict(ckpt.config),
        "rng": ckpt.rng,
        "ints": ckpt.ints,
        "optimizer": ckpt.optimizer_meta,
        "blocks": blocks,
    }
    header_bytes = json.dumps(header).encode("utf-8")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for name in names:
            fh.write(np.ascontiguousarray(ckpt.arrays[name], dtype="<f4").tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header_end = len(MAGIC) + 8 + header_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc

    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {header.get('format_version')!r}, "
            f"expected {FORMAT_VERSION}"
        )

    payload = raw[header_end:]
    arrays: dict[str, np.ndarray] = {}
    for block in header["blocks"]:
        start, nbytes = block["offset"], block["nbytes"]
        data = payload[start : start + nbytes]
        if len(data) != nbytes:
            raise CheckpointError(f"{path} is truncated inside block {block['name']!r}")
        if zlib.crc32(data) != block["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch in block {block['name']!r}")
        arrays[block["name"]] = np.frombuffer(data, dtype="<f4").reshape(block["shape"]).copy()

    return Checkpoint(
        config=train_config_from_dict(header["config"]),
        step=int(header["step"]),
        scope=header["scope"],
        arrays=arrays,
        ints=header.get("ints", {}),
        optimizer_meta=header.get("optimizer"),
        rng=header.get("rng", {}),
    )


def collect_module_state(
    module: torch.nn.Module, prefix: str = "model/"
) -> tuple[dict[str, np.ndarray], dict[str, list]]:
    """Split a state dict into float32 blocks and exact integer entries."""
    arrays: dict[str, np.ndarray] = {}
    ints: dict[str, list] = {}
    for name, tensor in module.state_dict().items():
        key = prefix + name
        if tensor.is_floating_point():
            arrays[key] = tensor.detach().cpu().to(torch.float32).numpy().copy()
        else:
            ints[key] = [int(v) for v in tensor.reshape(-1).tolist()]
    return arrays, ints


def restore_module_state(module: torch.nn.Module, ckpt: Checkpoint, prefix: str = "model/") -> None:
    """Load blocks with the given prefix into the module, strictly."""
    state = module.state_dict()
    new_state = {}
    for name, tensor in state.items():
        key = prefix + name
        if tensor.is_floating_point():
            if key not in ckpt.arrays:
                raise CheckpointError(f"checkpoint is missing parameter block {key!r}")
            arr = ckpt.arrays[key]
            if list(arr.shape) != list(tensor.shape):
                raise CheckpointError(
                    f"block {key!r} has shape {list(arr.shape)}, expected {list(tensor.shape)}"
                )
            new_state[name] = torch.from_numpy(arr).to(tensor.dtype)
        else:
            if key not in ckpt.ints:
                raise CheckpointError(f"checkpoint is missing integer state {key!r}")
            values = torch.tensor(ckpt.ints[key], dtype=tensor.dtype).reshape(tensor.shape)
            new_state[name] = values
    extra = {
        k[len(prefix) :]
        for k in list(ckpt.arrays) + list(ckpt.ints)
        if k.startswith(prefix) and k[len(prefix) :] not in state
    }
    if extra:
        raise CheckpointError(f"checkpoint has unexpected blocks under {prefix!r}: {sorted(extra)}")
    module.load_state_dict(new_state, strict=True)


def collect_optimizer_state(
    optimizer: torch.optim.Optimizer,
) -> tuple[dict[str, np.ndarray], dict[str, list], dict]:
    """Serialize an optimizer state dict into blocks plus JSON metadata."""
    sd = optimizer.state_dict()
    arrays: dict[str, np.ndarray] = {}
    ints: dict[str, list] = {}
    scalars: dict[str, dict] = {}
    for idx, state in sd["state"].items():
        for key, value in state.items():
            name = f"optim/{idx}/{key}"
            if torch.is_tensor(value):
                if value.is_floating_point():
                    arrays[name] = value.detach().cpu().to(torch.float32).numpy().copy()
                else:
                    ints[name] = [int(v) for v in value.reshape(-1).tolist()]
            else:
                scalars.setdefault(str(idx), {})[key] = value
    meta = {"param_groups": sd["param_groups"], "state_keys": {
        str(idx): sorted(state.keys()) for idx, state in sd["state"].items()
    }, "scalars": scalars}
    return arrays, ints, meta


def restore_optimizer_state(optimizer: torch.optim.Optimizer, ckpt: Checkpoint) -> None:
    if ckpt.optimizer_meta is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    meta = ckpt.optimizer_meta
    state: dict[int, dict] = {}
    for idx_str, keys in meta["state_keys"].items():
        idx = int(idx_str)
        entry: dict = {}
        for key in keys:
            name = f"optim/{idx}/{key}"
            if name in ckpt.arrays:
                entry[key] = torch.from_numpy(ckpt.arrays[name].copy())
            elif name in ckpt.ints:
                values = ckpt.ints[name]
                entry[key] = torch.tensor(values[0] if len(values) == 1 else values)
            elif key in meta.get("scalars", {}).get(idx_str, {}):
                entry[key] = meta["scalars"][idx_str][key]
            else:
                raise CheckpointError(f"checkpoint is missing optimizer state {name!r}")
        state[idx] = entry
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def torch_generator_state(generator: torch.Generator) -> str:
    return generator.get_state().numpy().tobytes().hex()


def restore_torch_generator(generator: torch.Generator, hex_state: str) -> None:
    data = bytes.fromhex(hex_state)
    generator.set_state(torch.from_numpy(np.frombuffer(data, dtype=np.uint8).copy()))


def state_hash(module: torch.nn.Module) -> str:
    """Order-stable digest of all parameters and buffers; used for freeze checks."""
    import hashlib

    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
