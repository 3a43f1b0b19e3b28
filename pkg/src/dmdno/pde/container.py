"""DMDNODS1 binary dataset container (little-endian).

Layout::

    magic "DMDNODS1" | version u32 | equation u8 | params: u32 length + UTF-8 JSON
    | array count u32 | per array: name u16 length + UTF-8, dtype u8 (0 = f64),
      ndim u8, dims ndim x u64, row-major f64 payload
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..fileio import atomic_write_bytes
from .datasets import EQUATIONS, Dataset
from .solvers import GridSpec

MAGIC = b"DMDNODS1"
VERSION = 1
DTYPE_F64 = 0
ARRAY_NAMES = ("conditions", "trajectories", "targets", "dmd_modes_re", "dmd_modes_im",
               "dmd_eigs_re", "dmd_eigs_im", "dmd_amps_re", "dmd_amps_im", "dmd_sigmas")


def _arrays(d: Dataset):
    return {
        "conditions": d.conditions,
        "trajectories": d.trajectories,
        "targets": d.targets,
        "dmd_modes_re": d.dmd_modes.real,
        "dmd_modes_im": d.dmd_modes.imag,
        "dmd_eigs_re": d.dmd_eigs.real,
        "dmd_eigs_im": d.dmd_eigs.imag,
        "dmd_amps_re": d.dmd_amps.real,
        "dmd_amps_im": d.dmd_amps.imag,
        "dmd_sigmas": d.dmd_sigmas,
    }


def dataset_bytes(d: Dataset) -> bytes:
    parts = [MAGIC, struct.pack("<IB", VERSION, EQUATIONS.index(d.equation))]
    params = json.dumps(d.params, sort_keys=True).encode("utf-8")
    parts += [struct.pack("<I", len(params)), params]
    arrays = _arrays(d)
    parts.append(struct.pack("<I", len(arrays)))
    for name in ARRAY_NAMES:
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<BB", DTYPE_F64, a.ndim),
                  struct.pack(f"<{a.ndim}Q", *a.shape), a.tobytes()]
    return b"".join(parts)


def save_dataset(d: Dataset, path) -> None:
    atomic_write_bytes(path, dataset_bytes(d))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n, field):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated payload (need {n} bytes at offset {self.pos}, "
                              f"file has {len(self.data)})", field=field)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def _expected_shapes(equation, params):
    n = params["n_samples"]
    nx, ny = params["grid"]["nx"], params["grid"]["ny"]
    steps = params["iters"] if equation == "laplace" else params["steps"]
    field = (2, nx, ny) if equation == "burgers" else (nx, ny)
    cond = {"laplace": 2 * (nx + ny) - 8, "heat": 2 * (nx + ny) - 4, "burgers": 2 * nx * ny + 1}[equation]
    return {"conditions": (n, cond), "trajectories": (n, steps + 1) + field, "targets": (n,) + field}


def dataset_from_bytes(data: bytes) -> Dataset:
    r = _Reader(data)
    if r.take(8, "magic") != MAGIC:
        raise FormatError("bad magic, not a DMDNODS1 file", field="magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} (expected {VERSION})", field="version")
    (tag,) = r.unpack("<B", "equation")
    if tag >= len(EQUATIONS):
        raise FormatError(f"unknown equation tag {tag}", field="equation")
    equation = EQUATIONS[tag]
    (plen,) = r.unpack("<I", "params_length")
    try:
        params = json.loads(r.take(plen, "params").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"params record is not valid JSON: {exc}", field="params") from exc
    (count,) = r.unpack("<I", "array_count")
    if count != len(ARRAY_NAMES):
        raise FormatError(f"expected {len(ARRAY_NAMES)} arrays, found {count}", field="array_count")
    try:
        expected = _expected_shapes(equation, params)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"params record missing field {exc}", field="params") from exc
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "array_name")
        name = r.take(nlen, "array_name").decode("utf-8", errors="replace")
        if name not in ARRAY_NAMES or name in arrays:
            raise FormatError(f"unexpected array {name!r}", field="array_name")
        dtype, ndim = r.unpack("<BB", f"{name}.header")
        if dtype != DTYPE_F64:
            raise FormatError(f"unsupported dtype code {dtype}", field=f"{name}.dtype")
        dims = r.unpack(f"<{ndim}Q", f"{name}.dims")
        if name in expected and tuple(dims) != expected[name]:
            raise FormatError(f"dims {dims} disagree with params (expected {expected[name]})",
                              field=f"{name}.dims")
        if dims and dims[0] != params["n_samples"]:
            raise FormatError(f"leading dim {dims[0]} != n_samples {params['n_samples']}",
                              field=f"{name}.dims")
        count_items = int(np.prod(dims, dtype=np.uint64)) if dims else 1
        if count_items * 8 > len(data) - r.pos:
            raise FormatError(f"truncated payload: dims {dims} need {count_items * 8} bytes, "
                              f"{len(data) - r.pos} remain", field=f"{name}.payload")
        payload = r.take(count_items * 8, f"{name}.payload")
        arrays[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last array", field="payload")
    modes_shape = arrays["dmd_modes_re"].shape
    for a, b in (("dmd_modes_re", "dmd_modes_im"), ("dmd_eigs_re", "dmd_eigs_im"),
                 ("dmd_amps_re", "dmd_amps_im"), ("dmd_eigs_re", "dmd_amps_re")):
        if arrays[a].shape != arrays[b].shape:
            raise FormatError(f"{a} shape {arrays[a].shape} != {b} shape {arrays[b].shape}", field=f"{b}.dims")
    if modes_shape[2:] != arrays["dmd_eigs_re"].shape[1:]:
        raise FormatError("mode count disagrees with eigenvalue count", field="dmd_modes_re.dims")
    g = params["grid"]
    return Dataset(
        equation=equation,
        grid=GridSpec(g["nx"], g["ny"], g["dx"], g["dy"]),
        params=params,
        conditions=arrays["conditions"],
        trajectories=arrays["trajectories"],
        targets=arrays["targets"],
        dmd_modes=_complex(arrays["dmd_modes_re"], arrays["dmd_modes_im"]),
        dmd_eigs=_complex(arrays["dmd_eigs_re"], arrays["dmd_eigs_im"]),
        dmd_amps=_complex(arrays["dmd_amps_re"], arrays["dmd_amps_im"]),
        dmd_sigmas=arrays["dmd_sigmas"],
    )


def _complex(re, im):
    out = np.empty(re.shape, dtype=np.complex128)
    out.real = re
    out.imag = im
    return out


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
