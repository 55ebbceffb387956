"""Serialization: the ``fbin`` binary container and a CSV fallback for planes.

An ``fbin`` file is::

    8 bytes   magic b"SISIFBIN"
    4 bytes   little-endian uint32, length of the JSON header in bytes
    N bytes   UTF-8 JSON header
    payload   raw array data, row-major, little-endian

The header always carries ``kind``, ``shape``, ``dtype`` and
``byte_order``; planes add ``role``, ``units`` and ``has_unsampled``,
datacubes add ``bin_width`` and ``t0_bin``.  Plane payloads are float32
(lossy relative to the float64 in-memory representation, by design);
datacube payloads are uint16 when the counts fit and float32 otherwise.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .core import PLANE_ROLES, Datacube, Plane

MAGIC = b"SISIFBIN"
_MAX_HEADER = 1 << 20

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "uint16": np.dtype("<u2"),
}


def write_raw(path, header: dict, payload: bytes) -> None:
    """Write one fbin container.  ``header`` must be JSON-serializable."""
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_raw(path) -> tuple[dict, bytes]:
    """Read one fbin container, returning (header, payload)."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an fbin file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    if hlen > _MAX_HEADER or 12 + hlen > len(data):
        raise ValueError(f"{path}: corrupt header length {hlen}")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: malformed JSON header: {exc}") from exc
    if not isinstance(header, dict):
        raise ValueError(f"{path}: header is not a JSON object")
    return header, data[12 + hlen :]


def _decode_array(path, header: dict, payload: bytes) -> np.ndarray:
    for key in ("shape", "dtype", "byte_order"):
        if key not in header:
            raise ValueError(f"{path}: header missing {key!r}")
    if header["byte_order"] != "little":
        raise ValueError(f"{path}: unsupported byte order {header['byte_order']!r}")
    dtype = _DTYPES.get(header["dtype"])
    if dtype is None:
        raise ValueError(f"{path}: unsupported dtype {header['dtype']!r}")
    shape = tuple(int(s) for s in header["shape"])
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def write_plane(plane: Plane, path, fmt: str = "fbin") -> None:
    """Serialize a plane as fbin (float32 payload) or bare CSV."""
    if fmt == "fbin":
        header = {
            "kind": "plane",
            "shape": list(plane.shape),
            "dtype": "float32",
            "byte_order": "little",
            "role": plane.role,
            "units": plane.units,
            "has_unsampled": plane.has_unsampled,
        }
        payload = np.ascontiguousarray(plane.values, dtype="<f4").tobytes()
        write_raw(path, header, payload)
    elif fmt == "csv":
        np.savetxt(path, plane.values, delimiter=",", fmt="%.17g")
    else:
        raise ValueError(f"unknown plane format {fmt!r}")


def read_plane(path, fmt: str = "fbin", role: str = "intensity", units: str = "") -> Plane:
    """Load a plane.

    For fbin the role and units come from the file header; the ``role`` and
    ``units`` arguments only apply to CSV input, which has no metadata.
    """
    if fmt == "fbin":
        header, payload = read_raw(path)
        if header.get("kind") != "plane":
            raise ValueError(f"{path}: fbin kind {header.get('kind')!r} is not a plane")
        file_role = header.get("role")
        if file_role not in PLANE_ROLES:
            raise ValueError(f"{path}: unknown plane role {file_role!r}")
        arr = _decode_array(path, header, payload)
        if arr.ndim != 2:
            raise ValueError(f"{path}: plane payload must be 2-D, got shape {arr.shape}")
        has_nan = bool(np.isnan(arr).any())
        if has_nan and not header.get("has_unsampled", False):
            raise ValueError(f"{path}: NaN payload without the has_unsampled flag")
        if header.get("has_unsampled", False) and file_role != "lifetime":
            raise ValueError(f"{path}: unsampled markers are only legal in lifetime planes")
        return Plane(values=arr.astype(np.float64), role=file_role, units=header.get("units", ""))
    if fmt == "csv":
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        return Plane(values=arr, role=role, units=units)
    raise ValueError(f"unknown plane format {fmt!r}")


def write_datacube(cube: Datacube, path, dtype: str = "auto") -> None:
    """Serialize a datacube; uint16 when counts allow it, else float32."""
    counts = cube.counts
    if dtype == "auto":
        integral = np.all(counts == np.round(counts))
        dtype = "uint16" if (integral and counts.max(initial=0) < 65536) else "float32"
    if dtype not in ("uint16", "float32"):
        raise ValueError(f"unsupported datacube dtype {dtype!r}")
    header = {
        "kind": "datacube",
        "shape": list(cube.shape),
        "dtype": dtype,
        "byte_order": "little",
        "bin_width": float(cube.bin_width),
        "t0_bin": None if cube.t0_bin is None else int(cube.t0_bin),
    }
    payload = np.ascontiguousarray(counts, dtype=_DTYPES[dtype]).tobytes()
    write_raw(path, header, payload)


def read_datacube(path) -> Datacube:
    header, payload = read_raw(path)
    if header.get("kind") != "datacube":
        raise ValueError(f"{path}: fbin kind {header.get('kind')!r} is not a datacube")
    if "bin_width" not in header:
        raise ValueError(f"{path}: datacube header missing bin_width")
    arr = _decode_array(path, header, payload)
    if arr.ndim != 3:
        raise ValueError(f"{path}: datacube payload must be 3-D, got shape {arr.shape}")
    return Datacube(
        counts=arr.astype(np.float64),
        bin_width=float(header["bin_width"]),
        t0_bin=header.get("t0_bin"),
    )
