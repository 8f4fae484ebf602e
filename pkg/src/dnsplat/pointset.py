"""Oriented point-set extraction from a trained scene (the meshing hand-off)
and PLY/OBJ interchange.

Point clouds are written as binary little-endian PLY with properties
x y z nx ny nz [red green blue]; both ASCII and binary little-endian are
accepted on read. Mesh ingestion covers triangle/quad PLY and a v/f OBJ
subset with fan triangulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyCloud, NoFaces, ParseError
from .geometry import OrientedPointCloud, backproject
from .raster import RenderSettings, render

EXTRACT_ALPHA_GATE = 0.5

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass
class TriangleMesh:
    """Triangle soup with optional vertex normals; quads and polygons are
    fan-triangulated on load and degenerate faces dropped (counted)."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray | None = None
    degenerate_dropped: int = 0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if np.any(~np.isfinite(self.vertices)):
            raise ParseError("mesh has non-finite vertices")
        if len(self.faces) and (self.faces.min() < 0 or
                                self.faces.max() >= len(self.vertices)):
            raise ParseError("face index out of range")


def extract_oriented_points(scene, cameras, total: int, seed: int = 0,
                            settings: RenderSettings = RenderSettings()
                            ) -> OrientedPointCloud:
    """Back-project rendered depth and normal maps from the given views into
    one oriented point set.

    Pixels must pass the alpha gate (accumulated alpha > 0.5); composited
    normals are renormalized here because meshing needs unit orientation.
    The pooled points are uniformly subsampled to `total` with the given
    seed (no upsampling).
    """
    if total < 1:
        raise ValueError("total must be >= 1")
    pos_all, nrm_all, col_all = [], [], []
    for cam in cameras:
        buf = render(scene, cam, settings)
        gate = (buf.alpha > EXTRACT_ALPHA_GATE) & (buf.depth > 0)
        if not gate.any():
            continue
        depth = np.where(gate, buf.depth, 0.0)
        try:
            cloud, (vs, us) = backproject(depth, cam, stride=1,
                                          normal_map=buf.normal_normalized(),
                                          return_pixels=True)
        except EmptyCloud:
            continue
        pos_all.append(cloud.positions)
        nrm_all.append(cloud.normals)
        col_all.append(np.clip(buf.color[vs, us], 0.0, 1.0))
    if not pos_all:
        raise EmptyCloud("no pixel passed the alpha gate")
    positions = np.concatenate(pos_all)
    normals = np.concatenate(nrm_all)
    colors = np.concatenate(col_all)
    n = len(positions)
    if total < n:
        idx = np.sort(np.random.default_rng(seed).choice(n, size=total,
                                                         replace=False))
        positions, normals, colors = positions[idx], normals[idx], colors[idx]
    return OrientedPointCloud(positions, normals, colors)


def write_ply(cloud: OrientedPointCloud, path) -> None:
    """Binary little-endian point PLY; float32 positions/normals round-trip
    bit-exactly."""
    cloud.validate()
    has_color = cloud.colors is not None
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}"]
    header += [f"property float {p}" for p in ("x", "y", "z", "nx", "ny", "nz")]
    if has_color:
        header += [f"property uchar {p}" for p in ("red", "green", "blue")]
    header += ["end_header", ""]

    fields = [(p, "<f4") for p in ("x", "y", "z", "nx", "ny", "nz")]
    if has_color:
        fields += [(p, "u1") for p in ("red", "green", "blue")]
    rows = np.empty(n, dtype=np.dtype(fields))
    for i, p in enumerate(("x", "y", "z")):
        rows[p] = cloud.positions[:, i]
    for i, p in enumerate(("nx", "ny", "nz")):
        rows[p] = cloud.normals[:, i]
    if has_color:
        quant = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)
        for i, p in enumerate(("red", "green", "blue")):
            rows[p] = quant[:, i]
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(rows.tobytes())


class _PlyHeader:
    def __init__(self, fmt, elements, body_offset):
        self.format = fmt              # "ascii" or "binary_little_endian"
        self.elements = elements       # [(name, count, [prop...])]
        self.body_offset = body_offset


def _parse_ply_header(data: bytes, path) -> _PlyHeader:
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file", offset=0)
    nl = data.find(b"\n", end)
    if nl < 0:
        raise ParseError(f"{path}: unterminated header", offset=end)
    body_offset = nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []
    for line in lines[1:]:
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1] == "ascii":
                fmt = "ascii"
            elif tok[1] == "binary_little_endian":
                fmt = "binary_little_endian"
            else:
                raise ParseError(f"{path}: unsupported format {tok[1]}", offset=0)
        elif tok[0] == "element":
            elements.append((tok[1], int(tok[2]), []))
        elif tok[0] == "property":
            if not elements:
                raise ParseError(f"{path}: property before element", offset=0)
            if tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise ParseError(f"{path}: unknown list types in {line!r}",
                                     offset=0)
                elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise ParseError(f"{path}: unknown type {tok[1]}", offset=0)
                elements[-1][2].append(("scalar", tok[1], tok[1], tok[2]))
    if fmt is None:
        raise ParseError(f"{path}: missing format line", offset=0)
    return _PlyHeader(fmt, elements, body_offset)


def _read_ply_elements(data: bytes, header: _PlyHeader, path):
    """Decode every element into {name: {prop: array-or-list}}."""
    out = {}
    offset = header.body_offset
    if header.format == "binary_little_endian":
        for name, count, props in header.elements:
            if all(p[0] == "scalar" for p in props):
                dtype = np.dtype([(p[3], "<" + _PLY_TYPES[p[1]]) for p in props])
                nbytes = dtype.itemsize * count
                if offset + nbytes > len(data):
                    raise ParseError(f"{path}: truncated element '{name}'",
                                     offset=len(data))
                rows = np.frombuffer(data, dtype=dtype, count=count,
                                     offset=offset)
                offset += nbytes
                out[name] = {p[3]: rows[p[3]] for p in props}
            else:
                cols = {p[3]: [] for p in props}
                for _ in range(count):
                    for kind, t1, t2, pname in props:
                        if kind == "scalar":
                            dt = np.dtype("<" + _PLY_TYPES[t1])
                            if offset + dt.itemsize > len(data):
                                raise ParseError(
                                    f"{path}: truncated element '{name}'",
                                    offset=offset)
                            cols[pname].append(
                                np.frombuffer(data, dt, 1, offset)[0])
                            offset += dt.itemsize
                        else:
                            cdt = np.dtype("<" + _PLY_TYPES[t1])
                            if offset + cdt.itemsize > len(data):
                                raise ParseError(
                                    f"{path}: truncated list count",
                                    offset=offset)
                            k = int(np.frombuffer(data, cdt, 1, offset)[0])
                            offset += cdt.itemsize
                            idt = np.dtype("<" + _PLY_TYPES[t2])
                            if offset + k * idt.itemsize > len(data):
                                raise ParseError(
                                    f"{path}: truncated list items",
                                    offset=offset)
                            cols[pname].append(
                                np.frombuffer(data, idt, k, offset).tolist())
                            offset += k * idt.itemsize
                out[name] = cols
    else:  # ascii
        text = data[header.body_offset:].decode("ascii", errors="replace")
        tokens = text.split()
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(tokens):
                raise ParseError(f"{path}: truncated ASCII body",
                                 offset=len(data))
            vals = tokens[pos:pos + n]
            pos += n
            return vals

        for name, count, props in header.elements:
            cols = {p[3]: [] for p in props}
            for _ in range(count):
                for kind, t1, t2, pname in props:
                    if kind == "scalar":
                        cols[pname].append(float(take(1)[0]))
                    else:
                        k = int(float(take(1)[0]))
                        cols[pname].append([float(v) for v in take(k)])
            kinds = {p[3]: p[0] for p in props}
            out[name] = {k: (np.asarray(v) if kinds[k] == "scalar" else v)
                         for k, v in cols.items()}
    return out


def read_ply(path) -> OrientedPointCloud:
    """Read an oriented point cloud from an ASCII or binary little-endian
    PLY with x y z nx ny nz properties (colors optional)."""
    data = Path(path).read_bytes()
    header = _parse_ply_header(data, path)
    elements = _read_ply_elements(data, header, path)
    if "vertex" not in elements:
        raise ParseError(f"{path}: no vertex element", offset=0)
    vert = elements["vertex"]
    for p in ("x", "y", "z", "nx", "ny", "nz"):
        if p not in vert:
            raise ParseError(f"{path}: missing vertex property '{p}'", offset=0)
    pos = np.stack([np.asarray(vert[p], dtype=np.float64)
                    for p in ("x", "y", "z")], axis=1)
    nrm = np.stack([np.asarray(vert[p], dtype=np.float64)
                    for p in ("nx", "ny", "nz")], axis=1)
    colors = None
    if all(p in vert for p in ("red", "green", "blue")):
        colors = np.stack([np.asarray(vert[p], dtype=np.float64) / 255.0
                           for p in ("red", "green", "blue")], axis=1)
    cloud = OrientedPointCloud(pos, nrm, colors)
    cloud.validate()
    return cloud


def _fan_triangulate(polygons):
    faces = []
    for poly in polygons:
        for k in range(1, len(poly) - 1):
            faces.append((poly[0], poly[k], poly[k + 1]))
    return faces


def _drop_degenerate(vertices, faces):
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    distinct = (a != b) & (b != c) & (a != c)
    v = np.asarray(vertices, dtype=np.float64)
    cross = np.cross(v[b] - v[a], v[c] - v[a])
    area2 = np.linalg.norm(cross, axis=1)
    keep = distinct & (area2 > 0)
    return faces[keep], int((~keep).sum())


def _read_mesh_ply(path) -> TriangleMesh:
    data = Path(path).read_bytes()
    header = _parse_ply_header(data, path)
    elements = _read_ply_elements(data, header, path)
    if "vertex" not in elements:
        raise ParseError(f"{path}: no vertex element", offset=0)
    vert = elements["vertex"]
    for p in ("x", "y", "z"):
        if p not in vert:
            raise ParseError(f"{path}: missing vertex property '{p}'", offset=0)
    verts = np.stack([np.asarray(vert[p], dtype=np.float64)
                      for p in ("x", "y", "z")], axis=1)
    face_el = elements.get("face")
    if face_el is None:
        raise NoFaces(f"{path}: PLY has no face element")
    polys = None
    for key in ("vertex_indices", "vertex_index"):
        if key in face_el:
            polys = [[int(i) for i in poly] for poly in face_el[key]]
            break
    if polys is None or not polys:
        raise NoFaces(f"{path}: face element carries no indices")
    faces, dropped = _drop_degenerate(verts, _fan_triangulate(polys))
    if len(faces) == 0:
        raise NoFaces(f"{path}: all faces degenerate")
    normals = None
    if all(p in vert for p in ("nx", "ny", "nz")):
        normals = np.stack([np.asarray(vert[p], dtype=np.float64)
                            for p in ("nx", "ny", "nz")], axis=1)
    return TriangleMesh(verts, faces, normals, dropped)


def _read_mesh_obj(path) -> TriangleMesh:
    verts = []
    polys = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise ParseError(f"{path}:{lineno}: malformed vertex")
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif tok[0] == "f":
                idx = []
                for part in tok[1:]:
                    head = part.split("/")[0]
                    i = int(head)
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ParseError(f"{path}:{lineno}: face with <3 vertices")
                polys.append(idx)
    if not polys:
        raise NoFaces(f"{path}: OBJ has no faces")
    verts = np.asarray(verts, dtype=np.float64)
    faces, dropped = _drop_degenerate(verts, _fan_triangulate(polys))
    if len(faces) == 0:
        raise NoFaces(f"{path}: all faces degenerate")
    return TriangleMesh(verts, faces, None, dropped)


def read_mesh(path) -> TriangleMesh:
    """Load a triangle mesh from PLY or OBJ (quads fan-triangulated,
    degenerate faces dropped with a count)."""
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return _read_mesh_obj(path)
    return _read_mesh_ply(path)


def write_mesh_ply(mesh: TriangleMesh, path) -> None:
    """Binary little-endian triangle-mesh PLY (used for fixture export)."""
    n, f = len(mesh.vertices), len(mesh.faces)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {n}",
              "property float x", "property float y", "property float z",
              f"element face {f}",
              "property list uchar int vertex_indices",
              "end_header", ""]
    with open(path, "wb") as fh:
        fh.write("\n".join(header).encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        rows = bytearray()
        for tri in mesh.faces:
            rows += bytes([3]) + np.asarray(tri, dtype="<i4").tobytes()
        fh.write(bytes(rows))
