"""Deterministic checkpoint container: named tensors plus a JSON header.

The on-disk format is an uncompressed zip of ``.npy`` members (readable by
``numpy.load``) written with fixed entry timestamps, so identical contents
produce bit-identical files.  Double-precision arrays round-trip exactly.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(RuntimeError):
    pass


def save_tensors(path, arrays: dict, meta: dict) -> None:
    """Write named arrays and a metadata dict to ``path``."""
    path = Path(path)
    header = dict(meta)
    header["format_version"] = FORMAT_VERSION
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        items = [(META_KEY, np.array(json.dumps(header, sort_keys=True)))]
        items.extend(sorted(arrays.items()))
        for name, arr in items:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arr))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_tensors(path) -> tuple[dict, dict]:
    """Read (arrays, meta) written by :func:`save_tensors`."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    arrays = {}
    meta = None
    with np.load(path, allow_pickle=False) as data:
        for key in data.files:
            if key == META_KEY:
                meta = json.loads(str(data[key]))
            else:
                arrays[key] = data[key]
    if meta is None:
        raise CheckpointError(f"missing metadata header in {path}")
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {meta.get('format_version')!r} in {path}"
        )
    return arrays, meta
