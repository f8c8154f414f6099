"""Self-describing binary checkpoints.

Layout: an 8-byte little-endian unsigned header length, a JSON header, then
the raw parameter payload. The header carries the format version, the model
kind, a config echo sufficient to rebuild the model (spec fields plus
per-field vocabulary sizes), and a manifest of (name, shape, dtype) in
payload order. The payload is the concatenation of each parameter's
contiguous little-endian bytes in manifest order, so save -> load -> save
reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .interactions import DagfmModel, DagfmPlusModel, DagfmPlusSpec, DagfmSpec
from .numcore import ConfigurationError
from .teachers import (
    CinModel,
    CinSpec,
    CrossNetModel,
    CrossNetSpec,
    FmfmModel,
    FmfmSpec,
    FwfmModel,
    FwfmSpec,
    TinyMlpModel,
    TinyMlpSpec,
)

FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated, or of the wrong version."""


_REGISTRY = {
    "dagfm": DagfmModel,
    "dagfm+": DagfmPlusModel,
    "cin": CinModel,
    "crossnet": CrossNetModel,
    "fwfm": FwfmModel,
    "fmfm": FmfmModel,
    "tinymlp": TinyMlpModel,
}


def spec_to_dict(spec) -> dict:
    if isinstance(spec, DagfmPlusSpec):
        return {
            "model": "dagfm+",
            "dagfm": spec_to_dict(spec.dagfm),
            "mlp_hidden": list(spec.mlp_hidden),
            "activation": spec.activation,
            "mlp_feed": spec.mlp_feed,
        }
    if isinstance(spec, DagfmSpec):
        return {
            "model": "dagfm",
            "fn": spec.kind,
            "num_fields": spec.num_fields,
            "embed_dim": spec.embed_dim,
            "num_layers": spec.num_layers,
            "edges": None if spec.edges is None else [list(e) for e in spec.edges],
        }
    if isinstance(spec, CinSpec):
        return {
            "model": "cin",
            "num_fields": spec.num_fields,
            "embed_dim": spec.embed_dim,
            "layer_sizes": list(spec.layer_sizes),
        }
    if isinstance(spec, CrossNetSpec):
        return {
            "model": "crossnet",
            "num_fields": spec.num_fields,
            "embed_dim": spec.embed_dim,
            "num_layers": spec.num_layers,
        }
    if isinstance(spec, FwfmSpec):
        return {"model": "fwfm", "num_fields": spec.num_fields, "embed_dim": spec.embed_dim}
    if isinstance(spec, FmfmSpec):
        return {"model": "fmfm", "num_fields": spec.num_fields, "embed_dim": spec.embed_dim}
    if isinstance(spec, TinyMlpSpec):
        return {
            "model": "tinymlp",
            "num_fields": spec.num_fields,
            "embed_dim": spec.embed_dim,
            "hidden": list(spec.hidden),
            "activation": spec.activation,
        }
    raise ConfigurationError(f"cannot serialize spec type {type(spec).__name__}")


def spec_from_dict(d: dict):
    kind = d.get("model")
    if kind == "dagfm+":
        return DagfmPlusSpec(
            dagfm=spec_from_dict(d["dagfm"]),
            mlp_hidden=tuple(d["mlp_hidden"]),
            activation=d["activation"],
            mlp_feed=d["mlp_feed"],
        )
    if kind == "dagfm":
        edges = d.get("edges")
        return DagfmSpec(
            kind=d["fn"],
            num_fields=d["num_fields"],
            embed_dim=d["embed_dim"],
            num_layers=d["num_layers"],
            edges=None if edges is None else tuple(tuple(e) for e in edges),
        )
    if kind == "cin":
        return CinSpec(d["num_fields"], d["embed_dim"], tuple(d["layer_sizes"]))
    if kind == "crossnet":
        return CrossNetSpec(d["num_fields"], d["embed_dim"], d["num_layers"])
    if kind == "fwfm":
        return FwfmSpec(d["num_fields"], d["embed_dim"])
    if kind == "fmfm":
        return FmfmSpec(d["num_fields"], d["embed_dim"])
    if kind == "tinymlp":
        return TinyMlpSpec(
            d["num_fields"], d["embed_dim"], tuple(d["hidden"]), d["activation"]
        )
    raise CheckpointError(f"unknown model kind {kind!r}")


def build_model(spec, vocab_sizes, seed: int = 0):
    """Instantiate the model class matching a spec."""
    kind = spec_to_dict(spec)["model"]
    return _REGISTRY[kind](spec, vocab_sizes, seed=seed)


def save_checkpoint(model, path) -> None:
    spec = model.plus_spec if isinstance(model, DagfmPlusModel) else model.spec
    names = model.store.names()
    manifest = [
        {
            "name": n,
            "shape": list(model.store[n].shape),
            "dtype": np.dtype(model.store.dtype).newbyteorder("<").str,
        }
        for n in names
    ]
    header = {
        "version": FORMAT_VERSION,
        "kind": model.kind,
        "config": spec_to_dict(spec),
        "vocab_sizes": list(model.vocab_sizes),
        "manifest": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_LEN.pack(len(blob)))
        fh.write(blob)
        for n in names:
            arr = model.store[n]
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        prefix = fh.read(_LEN.size)
        if len(prefix) != _LEN.size:
            raise CheckpointError("file shorter than the header-length prefix")
        (header_len,) = _LEN.unpack(prefix)
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise CheckpointError("truncated header")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"corrupt header: {e}") from e
        version = header.get("version")
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version!r}; this build reads {FORMAT_VERSION}"
            )
        for key in ("kind", "config", "vocab_sizes", "manifest"):
            if key not in header:
                raise CheckpointError(f"corrupt header: missing {key!r}")
        spec = spec_from_dict(header["config"])
        model = build_model(spec, header["vocab_sizes"], seed=0)
        stored = set(model.store.names())
        seen = set()
        for entry in header["manifest"]:
            try:
                name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
            except (KeyError, TypeError) as e:
                raise CheckpointError(f"corrupt manifest entry {entry!r}") from e
            if name not in stored:
                raise CheckpointError(f"manifest names unknown parameter {name!r}")
            seen.add(name)
            nbytes = int(np.prod(shape, dtype=np.int64)) * np.dtype(dtype).itemsize
            raw = fh.read(nbytes)
            if len(raw) != nbytes:
                raise CheckpointError(f"truncated payload at parameter {name!r}")
            arr = np.frombuffer(raw, dtype=np.dtype(dtype)).reshape(shape)
            model.store.set(name, arr.astype(model.store.dtype))
        if seen != stored:
            missing = sorted(stored - seen)
            raise CheckpointError(f"manifest missing parameters {missing}")
        if fh.read(1):
            raise CheckpointError("trailing bytes after payload")
    return model
