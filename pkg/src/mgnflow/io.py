"""File formats: dataset archives, checkpoints, mesh text, legacy VTK and CSV.

Binary container (archives use magic ``MGNL``, checkpoints ``MGNW``)::

    magic    4 bytes
    version  uint32 little-endian
    hlen     uint64 little-endian
    header   hlen bytes of UTF-8 JSON (sorted keys)
    blobs    raw little-endian arrays ('<f8' or '<i8'), offsets relative
             to the end of the header, described in header["arrays"]

Every array entry of the header is ``{"dtype", "shape", "offset", "nbytes"}``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .dataset import Realization
from .errors import IncompatibleArtifacts, InvalidConfig
from .geomodel import GeoModel
from .graph import NormStats
from .mesh import Mesh, TransmissibilityMap
from .model import ModelConfig, ModelParams
from .simulator import SimState, SimulationResult

ARCHIVE_MAGIC = b"MGNL"
CHECKPOINT_MAGIC = b"MGNW"
VERSION = 1
_DTYPES = {"f8": "<f8", "i8": "<i8"}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_container(path, magic: bytes, header: dict, arrays: "OrderedDict[str, np.ndarray]") -> None:
    entries, blobs, offset = {}, [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = "i8" if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries[name] = {"dtype": code, "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(data)}
        blobs.append(data)
        offset += len(data)
    header = dict(header, arrays=entries)
    head = canonical_json(header).encode()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def _read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise InvalidConfig(f"{path}: not a {magic.decode()} file")
    version, hlen = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise InvalidConfig(f"{path}: unsupported version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    base = 16 + hlen
    arrays = {}
    for name, e in header["arrays"].items():
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + e["nbytes"]], dtype=_DTYPES[e["dtype"]])
        arrays[name] = arr.reshape(e["shape"]).copy()
    return header, arrays


# ------------------------------------------------------------------ dataset archives

def _mesh_arrays(prefix: str, mesh: Mesh) -> dict[str, np.ndarray]:
    return {
        f"{prefix}poly_counts": np.array([len(p) for p in mesh.polygons]),
        f"{prefix}poly_vertices": np.vstack(mesh.polygons),
        f"{prefix}centroids": mesh.centroids,
        f"{prefix}volumes": mesh.volumes,
        f"{prefix}face_cells": mesh.face_cells,
        f"{prefix}face_areas": mesh.face_areas,
        f"{prefix}face_centers": mesh.face_centers,
        f"{prefix}face_normals": mesh.face_normals,
        f"{prefix}face_endpoints": mesh.face_endpoints,
        f"{prefix}face_fault": mesh.face_fault.astype(np.int64),
        f"{prefix}fault_segments": mesh.fault_segments.reshape(-1, 2, 2),
        f"{prefix}domain": np.array(mesh.domain, dtype=float),
    }


def _mesh_from(prefix: str, a: dict) -> Mesh:
    counts = a[f"{prefix}poly_counts"]
    verts = a[f"{prefix}poly_vertices"]
    cuts = np.cumsum(counts)[:-1]
    polys = tuple(p.copy() for p in np.split(verts, cuts))
    dom = a[f"{prefix}domain"]
    return Mesh(polys, a[f"{prefix}centroids"], a[f"{prefix}volumes"], a[f"{prefix}face_cells"],
                a[f"{prefix}face_areas"], a[f"{prefix}face_centers"], a[f"{prefix}face_normals"],
                a[f"{prefix}face_endpoints"], a[f"{prefix}face_fault"].astype(bool),
                a[f"{prefix}fault_segments"], (float(dom[0]), float(dom[1])))


def write_archive(path, realizations, meta: dict) -> str:
    """Write a split archive; returns the SHA-256 of the written file."""
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    samples = []
    for k, r in enumerate(realizations):
        pre = f"s{k}."
        arrays.update(_mesh_arrays(pre, r.mesh))
        g = r.geomodel
        arrays[pre + "perm_md"] = g.perm_md
        arrays[pre + "porosity"] = g.porosity
        arrays[pre + "cell_type"] = g.cell_type
        arrays[pre + "trans"] = r.trans.values
        sim = r.simulation
        arrays[pre + "p"] = sim.pressure
        arrays[pre + "s_g"] = sim.saturation
        arrays[pre + "t"] = np.array([s.t for s in sim.snapshots])
        arrays[pre + "injected"] = np.array(sim.injected, dtype=float)
        arrays[pre + "outflux"] = np.array(sim.outflux, dtype=float)
        samples.append({"seed": int(r.seed), "well_cell": int(g.well_cell),
                        "well_point": None if g.well_point is None else list(g.well_point),
                        "n_cells": int(r.mesh.n_cells), "n_T": len(sim) - 1})
    _write_container(path, ARCHIVE_MAGIC, {"meta": meta, "samples": samples}, arrays)
    return file_hash(path)


def read_archive(path) -> tuple[list[Realization], dict]:
    header, a = _read_container(path, ARCHIVE_MAGIC)
    out = []
    for k, info in enumerate(header["samples"]):
        pre = f"s{k}."
        mesh = _mesh_from(pre, a)
        wp = info["well_point"]
        geo = GeoModel(a[pre + "perm_md"], a[pre + "porosity"], int(info["well_cell"]),
                       a[pre + "cell_type"], None if wp is None else tuple(wp))
        trans = TransmissibilityMap(a[pre + "trans"], mesh.face_cells)
        snaps = [SimState(p, s, float(t)) for p, s, t in zip(a[pre + "p"], a[pre + "s_g"], a[pre + "t"])]
        sim = SimulationResult(snaps, list(a[pre + "injected"]), list(a[pre + "outflux"]))
        out.append(Realization(int(info["seed"]), mesh, geo, trans, sim))
    return out, header["meta"]


# ------------------------------------------------------------------ checkpoints

def save_checkpoint(path, params: ModelParams, stats: NormStats, meta: dict) -> None:
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, t in params.items():
        arrays["param." + name] = t.value
    for name, arr in stats.arrays().items():
        arrays["stats." + name] = arr
    header = {"model": params.config.to_dict(), "meta": meta,
              "param_order": list(params.tensors.keys())}
    _write_container(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path) -> tuple[ModelParams, NormStats, dict]:
    header, a = _read_container(path, CHECKPOINT_MAGIC)
    cfg = ModelConfig(**header["model"])
    tensors = OrderedDict((n, Tensor(a["param." + n], requires_grad=True, name=n))
                          for n in header["param_order"])
    stats = NormStats.from_arrays({k[len("stats."):]: v for k, v in a.items()
                                   if k.startswith("stats.")})
    return ModelParams(cfg, tensors), stats, header["meta"]


def check_compatible(ckpt_meta: dict, data_meta: dict) -> None:
    """Refuse checkpoint/dataset pairs generated or trained under different settings."""
    for key in ("config_hash", "features"):
        if ckpt_meta.get(key) != data_meta.get(key):
            raise IncompatibleArtifacts(
                f"checkpoint {key} {ckpt_meta.get(key)!r} does not match dataset "
                f"{key} {data_meta.get(key)!r}; regenerate data or retrain with the same config")


# ------------------------------------------------------------------ mesh text format

MESH_TEXT_DOC = """\
Plain-text mesh layout (all coordinates in m, one record per line):
  mgnflow-mesh 1
  domain <Lx> <Ly>
  vertices <V>          then V lines "x y" (polygon vertices, cell by cell)
  cells <N>             then N lines "id cx cy volume first count" (vertex range)
  faces <F>             then F lines "id left right area cx cy nx ny fault ax ay bx by"
  faults <K>            then K lines "x0 y0 x1 y1"
right = -1 marks a boundary face; fault is 0 or 1.
"""


def _g(x) -> str:
    return repr(float(x))


def write_mesh_text(path, mesh: Mesh) -> None:
    lines = ["mgnflow-mesh 1", f"domain {_g(mesh.domain[0])} {_g(mesh.domain[1])}"]
    verts = np.vstack(mesh.polygons)
    lines.append(f"vertices {len(verts)}")
    lines += [f"{_g(x)} {_g(y)}" for x, y in verts]
    lines.append(f"cells {mesh.n_cells}")
    first = 0
    for c, poly in enumerate(mesh.polygons):
        cx, cy = mesh.centroids[c]
        lines.append(f"{c} {_g(cx)} {_g(cy)} {_g(mesh.volumes[c])} {first} {len(poly)}")
        first += len(poly)
    lines.append(f"faces {mesh.n_faces}")
    for f in range(mesh.n_faces):
        l, r = mesh.face_cells[f]
        (ax, ay), (bx, by) = mesh.face_endpoints[f]
        vals = [mesh.face_areas[f], *mesh.face_centers[f], *mesh.face_normals[f]]
        lines.append(f"{f} {l} {r} " + " ".join(_g(v) for v in vals)
                     + f" {int(mesh.face_fault[f])} " + " ".join(_g(v) for v in (ax, ay, bx, by)))
    segs = mesh.fault_segments.reshape(-1, 4)
    lines.append(f"faults {len(segs)}")
    lines += [" ".join(_g(v) for v in s) for s in segs]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_text(path) -> Mesh:
    it = iter(Path(path).read_text().splitlines())

    def block(name):
        key, count = next(it).split()
        if key != name:
            raise InvalidConfig(f"mesh text: expected {name!r}, found {key!r}")
        return [next(it).split() for _ in range(int(count))]

    if next(it).split() != ["mgnflow-mesh", "1"]:
        raise InvalidConfig("mesh text: bad header")
    _, lx, ly = next(it).split()
    verts = np.array([[float(v) for v in row] for row in block("vertices")]).reshape(-1, 2)
    cells = block("cells")
    polys = tuple(verts[int(r[4]):int(r[4]) + int(r[5])].copy() for r in cells)
    cent = np.array([[float(r[1]), float(r[2])] for r in cells]).reshape(-1, 2)
    vol = np.array([float(r[3]) for r in cells])
    faces = block("faces")
    fc = np.array([[int(r[1]), int(r[2])] for r in faces], dtype=np.int64).reshape(-1, 2)
    fnum = np.array([[float(v) for v in r[3:8]] for r in faces]).reshape(-1, 5)
    fault = np.array([r[8] == "1" for r in faces], dtype=bool)
    ends = np.array([[float(v) for v in r[9:13]] for r in faces]).reshape(-1, 2, 2)
    segs = np.array([[float(v) for v in r] for r in block("faults")]).reshape(-1, 2, 2)
    return Mesh(polys, cent, vol, fc, fnum[:, 0].copy(), fnum[:, 1:3].copy(), fnum[:, 3:5].copy(),
                ends, fault, segs, (float(lx), float(ly)))


# ------------------------------------------------------------------ VTK and CSV

def write_vtk(path, mesh: Mesh, cell_data: dict[str, np.ndarray] | None = None,
              title: str = "mgnflow") -> None:
    """Legacy ASCII VTK polygon data with optional per-cell scalars."""
    verts = np.vstack(mesh.polygons)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET POLYDATA",
             f"POINTS {len(verts)} double"]
    lines += [f"{_g(x)} {_g(y)} 0.0" for x, y in verts]
    size = sum(len(p) + 1 for p in mesh.polygons)
    lines.append(f"POLYGONS {mesh.n_cells} {size}")
    first = 0
    for p in mesh.polygons:
        lines.append(" ".join([str(len(p))] + [str(first + k) for k in range(len(p))]))
        first += len(p)
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_cells}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_cells,):
                raise InvalidConfig(f"cell data {name!r} has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [_g(v) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshots_csv(path, simulation: SimulationResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "cell", "p", "s_g"])
        for n, s in enumerate(simulation.snapshots):
            for c in range(len(s.p)):
                w.writerow([n, c, _g(s.p[c]), _g(s.s_g[c])])


def write_rollout_csv(path, result) -> None:
    err = result.error
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "cell", "truth", "prediction", "abs_error"])
        for n in range(result.n_T):
            for c in range(result.truth.shape[1]):
                w.writerow([n + 1, c, _g(result.truth[n, c]), _g(result.predicted[n, c]),
                            _g(err[n, c])])
