"""MMX1 rigged-model container.

Layout: 4-byte magic ``MMX1`` | uint32-le header length | UTF-8 JSON header |
payload. The header lists n/f/k/j, the vertex-group name -> index-list map,
and for every payload array its dtype, shape, and byte offset relative to the
payload start. Float arrays are little-endian IEEE-754 32-bit; face indices
are little-endian uint32.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .body import ModelValidationError, TemplateModel

MAGIC = b"MMX1"
_VERSION = 1

_FLOAT_FIELDS = ("template_vertices", "uv_coords", "shape_basis", "joint_regressor", "skin_weights")


class ModelFormatError(ValueError):
    """Raised for malformed, truncated, or invariant-violating model files."""


def save_model(model: TemplateModel, path: str | Path) -> None:
    model.validate()
    arrays: dict[str, np.ndarray] = {
        name: np.ascontiguousarray(getattr(model, name), dtype="<f4") for name in _FLOAT_FIELDS
    }
    arrays["faces"] = np.ascontiguousarray(model.faces, dtype="<u4")
    arrays["parent"] = np.ascontiguousarray(model.parent + 1, dtype="<u4")  # shift sentinel -1 -> 0

    entries = {}
    offset = 0
    for name, arr in arrays.items():
        entries[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": arr.nbytes,
        }
        offset += arr.nbytes
    header = {
        "magic": "MMX1",
        "version": _VERSION,
        "n": model.num_vertices,
        "f": model.num_faces,
        "k": model.num_shapes,
        "j": model.num_joints,
        "arrays": entries,
        "vertex_groups": {
            name: np.asarray(idx).tolist() for name, idx in model.vertex_groups.items()
        },
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for arr in arrays.values():
            fh.write(arr.tobytes())


def read_header(path: str | Path) -> dict:
    """Parse and sanity-check only the JSON header (cheap; no payload read)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise ModelFormatError("truncated file: missing header length")
        (hlen,) = np.frombuffer(raw_len, dtype="<u4")
        blob = fh.read(int(hlen))
        if len(blob) != hlen:
            raise ModelFormatError("truncated file: header shorter than declared")
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"malformed header JSON: {exc}") from exc
    for key in ("n", "f", "k", "j", "arrays", "vertex_groups"):
        if key not in header:
            raise ModelFormatError(f"header missing required key {key!r}")
    return header


def load_model(path: str | Path) -> TemplateModel:
    """Load and fully validate an MMX1 model; never returns partial state."""
    header = read_header(path)
    with open(path, "rb") as fh:
        fh.seek(4)
        (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        payload_start = 8 + int(hlen)
        fh.seek(0, 2)
        file_size = fh.tell()
        fh.seek(payload_start)
        payload = fh.read()

    arrays = {}
    for name, entry in header["arrays"].items():
        off, nbytes = int(entry["offset"]), int(entry["nbytes"])
        if off + nbytes > len(payload):
            raise ModelFormatError(
                f"truncated file: array {name!r} needs bytes [{off}, {off + nbytes}) "
                f"but payload has {len(payload)} (file size {file_size})"
            )
        arr = np.frombuffer(payload[off : off + nbytes], dtype=entry["dtype"])
        try:
            arrays[name] = arr.reshape(entry["shape"]).copy()
        except ValueError as exc:
            raise ModelFormatError(f"array {name!r}: {exc}") from exc

    missing = [k for k in (*_FLOAT_FIELDS, "faces", "parent") if k not in arrays]
    if missing:
        raise ModelFormatError(f"header missing arrays: {missing}")

    groups = {
        name: np.asarray(idx, dtype=np.int64)
        for name, idx in header["vertex_groups"].items()
    }
    model = TemplateModel(
        template_vertices=arrays["template_vertices"],
        faces=arrays["faces"].astype(np.int64),
        uv_coords=arrays["uv_coords"],
        shape_basis=arrays["shape_basis"],
        parent=arrays["parent"].astype(np.int64) - 1,
        joint_regressor=arrays["joint_regressor"],
        skin_weights=arrays["skin_weights"],
        vertex_groups=groups,
    )
    try:
        model.validate()
    except ModelValidationError as exc:
        raise ModelFormatError(str(exc)) from exc
    return model
