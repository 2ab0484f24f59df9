"""Versioned binary checkpoint container.

Layout: magic ``APCK``, u32 version, u64 header length, a UTF-8 JSON header,
then the raw blobs. Every float blob is little-endian float32; the header
lists each blob's name, dtype, shape and byte offset into the blob area, and
also carries the train config, net config, degradation tree, iteration
counter and running loss averages.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .. import degradation as deg
from .networks import NetConfig
from .training import TrainConfig, TrainState, init_state

MAGIC = b"APCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


def _state_blobs(state: TrainState) -> dict[str, np.ndarray]:
    blobs = {}
    for prefix, net, opt in (("generator", state.generator, state.opt_g),
                             ("discriminator", state.discriminator, state.opt_d)):
        for name, p in net.named_parameters():
            blobs[f"{prefix}/{name}"] = p.detach().cpu().numpy().astype("<f4")
            st = opt.state.get(p)
            if st:
                blobs[f"{prefix}/{name}@exp_avg"] = st["exp_avg"].cpu().numpy().astype("<f4")
                blobs[f"{prefix}/{name}@exp_avg_sq"] = st["exp_avg_sq"].cpu().numpy().astype("<f4")
    blobs["rng/noise"] = state.noise_gen.get_state().numpy().astype(np.uint8)
    return blobs


def _opt_steps(state: TrainState) -> dict[str, float]:
    steps = {}
    for prefix, opt in (("generator", state.opt_g), ("discriminator", state.opt_d)):
        vals = {float(st["step"]) for st in opt.state.values() if "step" in st}
        if len(vals) > 1:
            raise CheckpointError(f"inconsistent optimizer step counts in {prefix}")
        steps[prefix] = vals.pop() if vals else 0.0
    return steps


def save_checkpoint(state: TrainState, path) -> None:
    """Write atomically (temp file then rename)."""
    path = Path(path)
    blobs = _state_blobs(state)
    entries, offset = [], 0
    for name, arr in blobs.items():
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = {
        "train_config": state.cfg.to_dict(),
        "net_config": state.net_cfg.to_dict(),
        "degradation": deg.to_tree(state.cfg.target_degradation),
        "iteration": state.iteration,
        "running": state.running,
        "optimizer_steps": _opt_steps(state),
        "blobs": entries,
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for arr in blobs.values():
            fh.write(np.ascontiguousarray(arr).tobytes())
    os.replace(tmp, path)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen])
    base = _PREFIX.size + hlen
    blobs = {}
    for e in header["blobs"]:
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        blobs[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header, blobs


def load_checkpoint(path, cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a :class:`TrainState`; ``cfg`` overrides the stored train config."""
    header, blobs = read_container(path)
    stored_cfg = TrainConfig.from_dict(header["train_config"])
    net_cfg = NetConfig.from_dict(header["net_config"])
    state = init_state(cfg or stored_cfg, net_cfg)
    state.iteration = int(header["iteration"])
    state.running = {k: float(v) for k, v in header["running"].items()}
    steps = header["optimizer_steps"]
    with torch.no_grad():
        for prefix, net, opt in (("generator", state.generator, state.opt_g),
                                 ("discriminator", state.discriminator, state.opt_d)):
            for name, p in net.named_parameters():
                key = f"{prefix}/{name}"
                if key not in blobs:
                    raise CheckpointError(f"{path}: missing parameter {key}")
                p.copy_(torch.from_numpy(blobs[key].astype(np.float32)))
                if f"{key}@exp_avg" in blobs:
                    opt.state[p] = {
                        "step": torch.tensor(float(steps[prefix])),
                        "exp_avg": torch.from_numpy(blobs[f"{key}@exp_avg"].astype(np.float32)),
                        "exp_avg_sq": torch.from_numpy(blobs[f"{key}@exp_avg_sq"].astype(np.float32)),
                    }
    state.noise_gen.set_state(torch.from_numpy(blobs["rng/noise"]))
    return state
