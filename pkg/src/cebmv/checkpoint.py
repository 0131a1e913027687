"""Single-file checkpoints: one JSON header line, then raw float64 bytes.

The header carries the format tag, caller-supplied metadata (stack
config, loss config, resolved-config hash), and a tensor directory of
(name, shape, byte offset) entries.  The payload is the concatenation
of every array as little-endian float64 in directory order, so a
round trip is bit-exact and the file is diffable with standard tools.
"""

from __future__ import annotations

import json
import pathlib

import numpy as np

from .encoders import EncoderStack, StackConfig

FORMAT_TAG = "cebmv-checkpoint-v1"


def save_checkpoint(path, stack: EncoderStack, meta: dict | None = None) -> None:
    path = pathlib.Path(path)
    arrays = stack.state_arrays()
    directory = []
    offset = 0
    chunks = []
    for name in arrays:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunk = arr.tobytes()
        chunks.append(chunk)
        offset += len(chunk)
    header = {
        "format": FORMAT_TAG,
        "meta": dict(meta or {}),
        "stack_config": {
            "input_dim": stack.cfg.input_dim,
            "trunk_hidden": list(stack.cfg.trunk_hidden),
            "repr_dim": stack.cfg.repr_dim,
            "proj_hidden": stack.cfg.proj_hidden,
            "proj_dim": stack.cfg.proj_dim,
            "variant": stack.cfg.variant,
        },
        "tensors": directory,
    }
    payload = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        line = fh.readline()
    header = json.loads(line.decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"{path}: not a {FORMAT_TAG} file")
    return header


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = pathlib.Path(path)
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != FORMAT_TAG:
            raise ValueError(f"{path}: not a {FORMAT_TAG} file")
        payload = fh.read()
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        stop = start + 8 * count
        if stop > len(payload):
            raise ValueError(f"{path}: tensor {entry['name']} overruns payload")
        arr = np.frombuffer(payload[start:stop], dtype="<f8").reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)
    return header, arrays


def load_stack(path) -> tuple[EncoderStack, dict]:
    """Rebuild an EncoderStack from a checkpoint; returns (stack, meta)."""
    header, arrays = load_arrays(path)
    sc = header["stack_config"]
    cfg = StackConfig(
        input_dim=int(sc["input_dim"]),
        trunk_hidden=tuple(int(d) for d in sc["trunk_hidden"]),
        repr_dim=int(sc["repr_dim"]),
        proj_hidden=int(sc["proj_hidden"]),
        proj_dim=int(sc["proj_dim"]),
        variant=sc["variant"],
    )
    stack = EncoderStack(cfg, seed=0)
    stack.load_state_arrays(arrays)
    return stack, header.get("meta", {})
