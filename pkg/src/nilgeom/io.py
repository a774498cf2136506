"""Persistence for metric fields and patches (.nmf files).

A field file is a single JSON header line followed by a raw little-endian
float64 payload: the 6 SPD components (g11, g12, g13, g22, g23, g33) per
vertex in row-major vertex order.  A pure-JSON variant (payload inline)
exists for small meshes.  Patches use the same component layout with box
metadata in the header.
"""

import json

import numpy as np

from .develop import MetricPatch

__all__ = [
    "FormatError",
    "save_field",
    "load_field",
    "save_patch",
    "load_patch",
    "pack_components",
    "unpack_components",
]

_COMPONENTS = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
MAGIC = "nmf"


class FormatError(ValueError):
    pass


def pack_components(values: np.ndarray) -> np.ndarray:
    """(..., 3, 3) symmetric -> (..., 6) in the order g11 g12 g13 g22 g23 g33."""
    return np.stack([values[..., i, j] for i, j in _COMPONENTS], axis=-1)


def unpack_components(packed: np.ndarray) -> np.ndarray:
    out = np.empty(packed.shape[:-1] + (3, 3))
    for a, (i, j) in enumerate(_COMPONENTS):
        out[..., i, j] = packed[..., a]
        out[..., j, i] = packed[..., a]
    return out


def _write(path, header: dict, payload: np.ndarray, as_json: bool):
    flat = np.ascontiguousarray(payload, dtype="<f8")
    if as_json:
        header = dict(header, variant="json", data=flat.reshape(-1).tolist())
        with open(path, "w") as fh:
            json.dump(header, fh, sort_keys=True)
            fh.write("\n")
        return
    header = dict(header, variant="binary")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(flat.tobytes())


def _read(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        rest = fh.read()
    try:
        header = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not an nmf file ({exc})") from None
    if header.get("format") != MAGIC:
        raise FormatError(f"{path}: missing nmf format marker")
    if header.get("variant") == "json":
        payload = np.asarray(header.pop("data"), dtype=float)
    elif header.get("variant") == "binary":
        payload = np.frombuffer(rest, dtype="<f8").astype(float)
    else:
        raise FormatError(f"{path}: unknown variant {header.get('variant')!r}")
    return header, payload


def _reshape(header, payload, path):
    dims = tuple(int(header[k]) for k in ("n1", "n2", "n3"))
    expected = dims[0] * dims[1] * dims[2] * 6
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload has {payload.size} floats, expected {expected}"
        )
    return unpack_components(payload.reshape(dims + (6,)))


def save_field(path, values: np.ndarray, lattice_label: str, k: int, as_json=False):
    n1, n2, n3 = values.shape[:3]
    header = {
        "format": MAGIC,
        "kind": "field",
        "lattice": lattice_label,
        "k": int(k),
        "n1": int(n1),
        "n2": int(n2),
        "n3": int(n3),
        "frame": "coordinate",
    }
    _write(path, header, pack_components(values), as_json)


def load_field(path):
    """Returns (values (n1,n2,n3,3,3), header dict)."""
    header, payload = _read(path)
    if header.get("kind") != "field":
        raise FormatError(f"{path}: expected a field file, got {header.get('kind')!r}")
    return _reshape(header, payload, path), header


def save_patch(path, patch: MetricPatch, as_json=False):
    n1, n2, n3 = patch.dims
    header = {
        "format": MAGIC,
        "kind": "patch",
        "n1": int(n1),
        "n2": int(n2),
        "n3": int(n3),
        "frame": "coordinate",
        "spacings": [float(h) for h in patch.spacings],
        "origin": [float(x) for x in patch.origin],
        "marked": [int(m) for m in patch.marked],
        "orientation": int(patch.orientation),
    }
    _write(path, header, pack_components(patch.values), as_json)


def load_patch(path) -> MetricPatch:
    header, payload = _read(path)
    if header.get("kind") != "patch":
        raise FormatError(f"{path}: expected a patch file, got {header.get('kind')!r}")
    values = _reshape(header, payload, path)
    return MetricPatch(
        values=values,
        spacings=tuple(header["spacings"]),
        marked=tuple(header["marked"]),
        origin=tuple(header.get("origin", (0.0, 0.0, 0.0))),
        orientation=int(header.get("orientation", 1)),
    )
