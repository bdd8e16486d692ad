"""On-disk formats: model checkpoints, activation dumps and mask JSON.

All binary integers are little-endian uint32 unless noted; tensors are
little-endian float32, row-major.

Checkpoint (``MIPPCKP1``)::

    magic        8 bytes  b"MIPPCKP1"
    ndim         u32      input rank, then ndim x u32 input dims
    n_layers     u32
    per layer    u8 kind (0 dense, 1 conv2d, 2 maxpool2d, 3 flatten)
                 u8 activation (0 identity, 1 relu)
                 u32 size (units, filters or pool size; 0 for flatten)
                 u32 kernel (conv only, else 0)
    n_masks      u32
    per mask     u32 hidden layer index, u32 width, width x u8 keep
    payload      every parameter as f32, layer order, weights then bias

Activation dump (``MIPPACT1``)::

    magic        8 bytes  b"MIPPACT1"
    n_layers     u32
    per layer    u32 index (0 = inputs, 1..L hidden, L+1 = output)
                 u32 samples
                 u32 ndim, ndim x u32 dims (excluding samples)
                 samples x prod(dims) f32 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import Conv2d, Dense, Flatten, MaxPool2d, Network
from .models import ActivationCapture, PruneMask, ToyModel, apply_masks

CKPT_MAGIC = b"MIPPCKP1"
ACT_MAGIC = b"MIPPACT1"
_KINDS = {"dense": 0, "conv2d": 1, "maxpool2d": 2, "flatten": 3}
_ACTS = {"identity": 0, "relu": 1}


class FormatError(ValueError):
    pass


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError("truncated file")
        out = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return out

    def u32(self) -> int:
        return self.take("<I")[0]

    def array(self, count: int, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        size = count * dtype.itemsize
        if self.pos + size > len(self.raw):
            raise FormatError("truncated payload")
        out = np.frombuffer(self.raw, dtype=dtype, count=count, offset=self.pos)
        self.pos += size
        return out


def save_checkpoint(model: ToyModel, path) -> None:
    net = model.net
    out = [CKPT_MAGIC, struct.pack("<I", len(net.input_shape))]
    out.append(struct.pack(f"<{len(net.input_shape)}I", *net.input_shape))
    out.append(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        size = {"dense": "units", "conv2d": "filters", "maxpool2d": "size"}.get(layer.kind)
        out.append(
            struct.pack(
                "<BBII",
                _KINDS[layer.kind],
                _ACTS[layer.activation],
                getattr(layer, size) if size else 0,
                getattr(layer, "kernel", 0),
            )
        )
    out.append(struct.pack("<I", len(model.masks)))
    for k in sorted(model.masks):
        keep = model.masks[k].astype(np.uint8)
        out.append(struct.pack("<II", k, keep.size) + keep.tobytes())
    out.append(net.params.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(out))


def load_checkpoint(path, name: str | None = None) -> ToyModel:
    r = _Reader(Path(path).read_bytes())
    if r.take("8s")[0] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a MIPPCKP1 checkpoint")
    ndim = r.u32()
    input_shape = r.take(f"<{ndim}I")
    layers = []
    for _ in range(r.u32()):
        kind, act, size, kernel = r.take("<BBII")
        act_name = {v: k for k, v in _ACTS.items()}[act]
        if kind == 0:
            layers.append(Dense(size, act_name))
        elif kind == 1:
            layers.append(Conv2d(size, kernel, act_name))
        elif kind == 2:
            layers.append(MaxPool2d(size))
        elif kind == 3:
            layers.append(Flatten())
        else:
            raise FormatError(f"unknown layer kind {kind}")
    masks = []
    for _ in range(r.u32()):
        k, width = r.take("<II")
        masks.append(PruneMask(k, r.array(width, np.uint8).copy()))
    net = Network(layers, input_shape)
    net.params[...] = r.array(net.n_params, "<f4")
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    model = ToyModel(net, name or Path(path).stem)
    return apply_masks(model, masks) if masks else model


def save_activations(capture: ActivationCapture, path) -> None:
    out = [ACT_MAGIC, struct.pack("<I", len(capture.layers))]
    for index, act in enumerate(capture.layers):
        act = np.ascontiguousarray(act, dtype="<f4")
        dims = act.shape[1:]
        out.append(struct.pack(f"<III{len(dims)}I", index, act.shape[0], len(dims), *dims))
        out.append(act.tobytes())
    Path(path).write_bytes(b"".join(out))


def load_activations(path) -> ActivationCapture:
    r = _Reader(Path(path).read_bytes())
    if r.take("8s")[0] != ACT_MAGIC:
        raise FormatError(f"{path}: not a MIPPACT1 activation dump")
    layers = {}
    for _ in range(r.u32()):
        index, samples, ndim = r.take("<III")
        dims = r.take(f"<{ndim}I") if ndim else ()
        layers[index] = r.array(samples * int(np.prod(dims)), "<f4").reshape((samples,) + tuple(dims)).astype(np.float32)
    if len(layers) < 2 or sorted(layers) != list(range(len(layers))):
        raise FormatError(f"{path}: layer indices must run 0..n-1 with at least inputs and output")
    rows = {a.shape[0] for a in layers.values()}
    if len(rows) != 1:
        raise FormatError(f"{path}: layers have different sample counts {sorted(rows)}")
    ordered = [layers[i] for i in range(len(layers))]
    return ActivationCapture(ordered[0].reshape(ordered[0].shape[0], -1), ordered[1:-1], ordered[-1])


def masks_to_json(report, model_id: str, config: dict) -> dict:
    return {
        "model_id": model_id,
        "config": config,
        "masks": [{"layer_index": m.layer_index, "keep": m.keep.astype(int).tolist()} for m in report.masks],
        "per_layer_pr": [float(p) for p in report.per_layer_pr],
        "global_pr": float(report.global_pr),
        "collapse_report": {
            "collapsed": bool(report.collapse_report.collapsed),
            "layers": list(report.collapse_report.layers),
        },
    }


def write_masks(path, report, model_id: str, config: dict) -> None:
    Path(path).write_text(json.dumps(masks_to_json(report, model_id, config), indent=2) + "\n")


def read_masks(path) -> list[PruneMask]:
    doc = json.loads(Path(path).read_text())
    try:
        return [PruneMask(int(m["layer_index"]), np.asarray(m["keep"], dtype=np.uint8)) for m in doc["masks"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed mask file ({exc})") from None
