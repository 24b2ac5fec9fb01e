"""On-disk formats: VPST tensor files, scene bundles, model directories and
canonical JSON.

A VPST file is::

    b"VPST" | version u16 | rank u16 | dims u32 * rank | payload

all little-endian, payload row-major. Real tensors are stored as f32 and
label grids as i32; the header carries no dtype, so readers pick it from the
file name (``panoptic_*`` files hold labels, everything else is real).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import tempfile
from pathlib import Path
from typing import Dict, Iterable, Union

import numpy as np

from .core import PanopticMap, SegmentRegistry
from .errors import ConsistencyError
from .synth import SceneConfig, VideoSample

MAGIC = b"VPST"
VERSION = 1
LABEL_PREFIXES = ("panoptic_",)

PathLike = Union[str, os.PathLike]


def encode_tensor(array: np.ndarray, labels: bool = False) -> bytes:
    array = np.asarray(array)
    dtype = "<i4" if labels else "<f4"
    if labels and not np.issubdtype(array.dtype, np.integer):
        raise ValueError(f"label tensors must be integer, got {array.dtype}")
    head = MAGIC + struct.pack("<HH", VERSION, array.ndim)
    head += struct.pack(f"<{array.ndim}I", *array.shape)
    return head + np.ascontiguousarray(array, dtype=dtype).tobytes()


def decode_tensor(data: bytes, labels: bool = False) -> np.ndarray:
    if data[:4] != MAGIC:
        raise ConsistencyError("not a VPST tensor (bad magic)")
    version, rank = struct.unpack_from("<HH", data, 4)
    if version != VERSION:
        raise ConsistencyError(f"unsupported VPST version {version}")
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    offset = 8 + 4 * rank
    dtype = np.dtype("<i4" if labels else "<f4")
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - offset != count * dtype.itemsize:
        raise ConsistencyError(
            f"VPST payload holds {len(data) - offset} bytes, shape {shape} needs {count * dtype.itemsize}")
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


def atomic_write(path: PathLike, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def is_label_file(path: PathLike) -> bool:
    return Path(path).name.startswith(LABEL_PREFIXES)


def write_tensor(path: PathLike, array: np.ndarray) -> None:
    atomic_write(path, encode_tensor(array, labels=is_label_file(path)))


def read_tensor(path: PathLike) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), labels=is_label_file(path))


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, (np.floating, np.integer)):
        return _clean(obj.item())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats, NaN as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: PathLike, obj) -> None:
    atomic_write(path, dumps(obj).encode("utf-8"))


def read_json(path: PathLike):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path: PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def checksums(paths: Iterable[PathLike], root: PathLike) -> Dict[str, str]:
    root = Path(root)
    return {Path(p).relative_to(root).as_posix(): sha256_file(p) for p in sorted(map(Path, paths))}


# ---------------------------------------------------------------------------
# scene bundles


def write_bundle(sample: VideoSample, directory: PathLike) -> Dict[str, str]:
    """Write ``sample`` as a bundle directory; returns file checksums."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "vpst-bundle",
        "version": VERSION,
        "config": sample.config.to_json(),
        "registry": sample.registry.to_json(),
        "velocities": {str(k): list(v) for k, v in sorted(sample.velocities.items())},
        "visible": sample.visible,
        "num_frames": len(sample),
    }
    written = [d / "scene.json"]
    write_json(written[0], meta)
    for t, frame in enumerate(sample.frames):
        pan = sample.panoptic[t]
        pairs = [(d / f"frame_{t:04d}.vpst", frame),
                 (d / f"panoptic_{t:04d}.vpst", np.stack([pan.semantic, pan.instance]))]
        if t < len(sample.flows):
            pairs.append((d / f"flow_{t:04d}.vpst", sample.flows[t]))
        for path, arr in pairs:
            write_tensor(path, arr)
            written.append(path)
    return checksums(written, d)


def read_bundle(directory: PathLike) -> VideoSample:
    d = Path(directory)
    if not (d / "scene.json").is_file():
        raise ConsistencyError(f"{d} holds no scene.json")
    meta = read_json(d / "scene.json")
    n = int(meta["num_frames"])
    frames, panoptic, flows = [], [], []
    for t in range(n):
        frames.append(read_tensor(d / f"frame_{t:04d}.vpst"))
        lab = read_tensor(d / f"panoptic_{t:04d}.vpst")
        panoptic.append(PanopticMap(lab[0], lab[1]))
        if t < n - 1:
            flows.append(read_tensor(d / f"flow_{t:04d}.vpst"))
    return VideoSample(
        config=SceneConfig(**meta["config"]),
        frames=frames, panoptic=panoptic, flows=flows,
        registry=SegmentRegistry.from_json(meta["registry"]),
        velocities={int(k): (int(v[0]), int(v[1])) for k, v in meta["velocities"].items()},
        visible=[[int(x) for x in v] for v in meta["visible"]])


# ---------------------------------------------------------------------------
# models


def save_model(model, directory: PathLike, config=None) -> Dict[str, str]:
    """Store each parameter as ``<name>.vpst`` next to a ``model.json``."""
    from .trainer import PARAM_NAMES

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"registry": model.registry.to_json(), "params": list(PARAM_NAMES)}
    if config is not None:
        meta["config"] = config.to_json()
    written = [d / "model.json"]
    write_json(written[0], meta)
    for name, p in model.params().items():
        write_tensor(d / f"{name}.vpst", p)
        written.append(d / f"{name}.vpst")
    return checksums(written, d)


def load_model(directory: PathLike):
    from .trainer import ToyModel

    d = Path(directory)
    meta = read_json(d / "model.json")
    params = {name: read_tensor(d / f"{name}.vpst").astype(np.float64) for name in meta["params"]}
    return ToyModel(registry=SegmentRegistry.from_json(meta["registry"]), **params)
