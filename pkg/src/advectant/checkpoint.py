"""Checkpoint files: flat little-endian float32 records plus a JSON manifest.

A checkpoint directory holds:

* ``params.bin`` / ``manifest.json`` - every learnable tensor and batch-norm
  buffer, keyed by parameter path (``steps.0.conv1.k`` ...), stored as
  concatenated little-endian float32 with per-record shape and offset.
* ``config.json`` - the model configuration.
* ``optim.bin`` / ``optim.json`` (optional) - AdamW moments for resuming.
* ``state.json`` (optional) - trainer metadata (epoch, step count, metrics).
"""

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import ModelParams, config_from_dict, config_to_dict
from .train import init_adamw_state


def write_records(bin_path, manifest_path, records):
    manifest = {}
    offset = 0
    with open(bin_path, "wb") as fh:
        for name, arr in records.items():
            flat = np.ascontiguousarray(arr, dtype="<f4")
            fh.write(flat.tobytes())
            manifest[name] = {"shape": list(arr.shape), "offset": offset,
                              "size": int(flat.size)}
            offset += int(flat.size)
    with open(manifest_path, "w") as fh:
        json.dump({"dtype": "<f4", "total": offset, "records": manifest}, fh,
                  indent=1, sort_keys=True)


def read_records(bin_path, manifest_path):
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("dtype") != "<f4":
        raise FormatError(f"unsupported record dtype {manifest.get('dtype')!r}")
    raw = np.fromfile(bin_path, dtype="<f4")
    if raw.size != manifest["total"]:
        raise FormatError(
            f"record file holds {raw.size} floats, manifest says {manifest['total']}"
        )
    out = {}
    for name, info in manifest["records"].items():
        lo = info["offset"]
        hi = lo + info["size"]
        out[name] = raw[lo:hi].reshape(info["shape"]).copy()
    return out


def save_checkpoint(directory, params, optim_state=None, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = {n: p.data for n, p in params.named_parameters().items()}
    records.update(params.named_buffers())
    write_records(directory / "params.bin", directory / "manifest.json", records)
    with open(directory / "config.json", "w") as fh:
        json.dump(config_to_dict(params.config), fh, indent=1, sort_keys=True)
    if optim_state is not None:
        opt_records = {}
        for name, st in optim_state.items():
            opt_records[f"{name}.m"] = st["m"]
            opt_records[f"{name}.v"] = st["v"]
        write_records(directory / "optim.bin", directory / "optim.json", opt_records)
    if meta is not None:
        with open(directory / "state.json", "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)


def load_checkpoint(directory):
    """Rebuild (params, meta, optim_state) from a checkpoint directory."""
    directory = Path(directory)
    if not (directory / "config.json").exists():
        raise FormatError(f"{directory} is not a checkpoint (no config.json)")
    with open(directory / "config.json") as fh:
        config = config_from_dict(json.load(fh))
    params = ModelParams.create(config, seed=0)
    records = read_records(directory / "params.bin", directory / "manifest.json")
    named = params.named_parameters()
    buffers = params.named_buffers()
    for name, arr in records.items():
        if name in named:
            target = named[name]
            if tuple(target.shape) != arr.shape:
                raise FormatError(f"record {name}: shape {arr.shape} vs "
                                  f"{tuple(target.shape)}")
            target.data = arr.astype(target.data.dtype)
        elif name in buffers:
            buffers[name][...] = arr.astype(buffers[name].dtype)
        else:
            raise FormatError(f"unknown record {name!r}")
    meta = None
    if (directory / "state.json").exists():
        with open(directory / "state.json") as fh:
            meta = json.load(fh)
    optim_state = None
    if (directory / "optim.json").exists():
        opt_records = read_records(directory / "optim.bin", directory / "optim.json")
        optim_state = init_adamw_state(named)
        for name, st in optim_state.items():
            st["m"][...] = opt_records[f"{name}.m"]
            st["v"][...] = opt_records[f"{name}.v"]
    return params, meta, optim_state
