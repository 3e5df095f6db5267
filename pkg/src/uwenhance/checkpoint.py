"""Self-describing, byte-stable checkpoint container.

Layout::

    b"UWCKPT\\x00\\x01"                 8-byte magic
    header length                        uint64, little-endian
    header                               UTF-8 JSON, sorted keys
    payload                              raw little-endian tensor bytes

The header holds ``format_version``, the config echo, run metadata and one
record per tensor (name, group, shape, dtype tag, offset, nbytes, trainable).
Groups are ``param`` for network entries and ``adam.<slot>`` for optimizer
moments. Nothing time- or host-dependent is written, so saving the same
state twice gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import FormatError, VersionError
from .network import NetworkConfig, ParameterEntry, ParameterStore, UIRNet, init_network

MAGIC = b"UWCKPT\x00\x01"
FORMAT_VERSION = 1
_DTYPES = {"<f4": np.float32, "<f8": np.float64, "<i8": np.int64}


@dataclass
class Checkpoint:
    model: UIRNet
    optimizer_state: Optional[dict] = None
    step: int = 0
    config: dict = field(default_factory=dict)
    kind: str = "pretrain"
    log: list = field(default_factory=list)

    @property
    def network_config(self) -> NetworkConfig:
        return self.model.config


def _dtype_tag(arr: np.ndarray) -> str:
    tag = arr.dtype.newbyteorder("<").str
    if tag not in _DTYPES:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    return tag


def optimizer_arrays(model: UIRNet, state: Optional[dict]) -> dict:
    """Flatten a torch AdamW ``state_dict`` into ``{(slot, param_name): array}``."""
    if not state:
        return {}
    names = [n for n, _ in model.named_parameters()]
    ids = state["param_groups"][0]["params"]
    out = {}
    for idx, pstate in state["state"].items():
        name = names[ids.index(idx)]
        for slot, value in pstate.items():
            out[(slot, name)] = torch.as_tensor(value).detach().cpu().numpy().copy()
    return out


def rebuild_optimizer_state(model: UIRNet, arrays: dict, groups: list) -> Optional[dict]:
    if not groups:
        return None
    names = [n for n, _ in model.named_parameters()]
    state = {}
    for (slot, name), arr in arrays.items():
        state.setdefault(names.index(name), {})[slot] = torch.from_numpy(arr.copy())
    group = dict(groups[0])
    group["params"] = list(range(len(names)))
    if "betas" in group:
        group["betas"] = tuple(group["betas"])
    return {"state": state, "param_groups": [group]}


def _json_safe(group: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in group.items() if k != "params"}


def to_bytes(ckpt: Checkpoint) -> bytes:
    store = ParameterStore.from_module(ckpt.model)
    records, chunks, offset = [], [], 0

    def add(name, group, arr, trainable):
        nonlocal offset
        arr = np.asarray(arr).copy(order="C")  # ascontiguousarray would promote 0-d to 1-d
        tag = _dtype_tag(arr)
        raw = arr.astype(np.dtype(tag), copy=False).tobytes()
        records.append(
            {
                "name": name,
                "group": group,
                "shape": list(arr.shape),
                "dtype": tag,
                "offset": offset,
                "nbytes": len(raw),
                "trainable": bool(trainable),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    for name in store:
        entry = store.entries[name]
        add(name, "param", entry.values, entry.trainable)
    opt_arrays = optimizer_arrays(ckpt.model, ckpt.optimizer_state)
    for slot, name in sorted(opt_arrays):
        add(name, f"adam.{slot}", opt_arrays[(slot, name)], False)

    groups = [_json_safe(g) for g in ckpt.optimizer_state["param_groups"]] if ckpt.optimizer_state else []
    header = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "step": int(ckpt.step),
        "config": ckpt.config,
        "network": ckpt.model.config.to_dict(),
        "optimizer_groups": groups,
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def from_bytes(data: bytes) -> Checkpoint:
    if len(data) < 16 or data[:6] != MAGIC[:6]:
        raise FormatError("not a checkpoint file")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if 16 + hlen > len(data):
        raise FormatError("truncated checkpoint header")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint header: {exc}") from exc
    version = header.get("format_version")
    if version != FORMAT_VERSION or data[:8] != MAGIC:
        raise VersionError(f"checkpoint format {version} unsupported (expected {FORMAT_VERSION})")
    payload = memoryview(data)[16 + hlen :]
    try:
        records = header["tensors"]
        model = init_network(NetworkConfig(**header["network"]), seed=0)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed checkpoint header: {exc}") from exc

    entries, opt_arrays = {}, {}
    for rec in records:
        end = rec["offset"] + rec["nbytes"]
        if end > len(payload) or rec["dtype"] not in _DTYPES:
            raise FormatError(f"truncated or corrupt tensor {rec['name']!r}")
        arr = np.frombuffer(payload[rec["offset"] : end], dtype=np.dtype(rec["dtype"]))
        arr = arr.reshape(rec["shape"]).astype(_DTYPES[rec["dtype"]])
        if rec["group"] == "param":
            entries[rec["name"]] = ParameterEntry(arr, rec["trainable"])
        else:
            opt_arrays[(rec["group"].split(".", 1)[1], rec["name"])] = arr
    if sum(r["nbytes"] for r in records) != len(payload):
        raise FormatError("payload length does not match the tensor table")
    ParameterStore(entries).apply_to(model)
    opt_state = rebuild_optimizer_state(model, opt_arrays, header.get("optimizer_groups", []))
    return Checkpoint(model, opt_state, header["step"], header["config"], header["kind"])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"no checkpoint at {path}")
    return from_bytes(path.read_bytes())
