"""OBJ and PLY mesh I/O.

OBJ is ASCII with "v x y z" and 1-based "f i j k" lines; floats are written
with repr-level precision so identical meshes produce identical bytes.
PLY is binary little-endian with float32 vertices and int32 indices.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh


class MeshParseError(ValueError):
    pass


def export_obj(mesh, path):
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def import_obj(path):
    """Parse v/f OBJ lines; triangles only, positive indices only."""
    verts, tris = [], []
    with open(path) as fh:
        for lineno, raw_line in enumerate(fh, start=1):
            line = raw_line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                if len(tokens) < 4:
                    raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in tokens[1:4]])
                except ValueError as exc:
                    raise MeshParseError(f"{path}:{lineno}: bad vertex: {exc}") from None
            elif tag == "f":
                if len(tokens) != 4:
                    raise MeshParseError(
                        f"{path}:{lineno}: only triangular faces are supported"
                    )
                idx = []
                for tok in tokens[1:]:
                    head = tok.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshParseError(
                            f"{path}:{lineno}: bad face index {tok!r}"
                        ) from None
                    if i <= 0:
                        raise MeshParseError(
                            f"{path}:{lineno}: negative or zero indices are unsupported"
                        )
                    idx.append(i - 1)
                tris.append(idx)
            elif tag in ("vn", "vt", "s", "o", "g", "mtllib", "usemtl", "l"):
                continue
            else:
                raise MeshParseError(f"{path}:{lineno}: unknown directive {tag!r}")
    verts = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if len(tris) and tris.max() >= len(verts):
        raise MeshParseError(f"{path}: face index out of range")
    return TriangleMesh(verts, tris)


def export_ply(mesh, path):
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {mesh.n_vertices}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        f"element face {mesh.n_triangles}\n"
        "property list uchar int vertex_indices\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        t = mesh.triangles.astype("<i4")
        body = bytearray()
        for row in t:
            body += struct.pack("<B3i", 3, *row)
        fh.write(bytes(body))


def import_ply(path):
    """Read back the binary PLY subset written by export_ply; validates the
    header element counts against the body."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if end < 0:
        raise MeshParseError(f"{path}: missing PLY header terminator")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    if not header or header[0] != "ply":
        raise MeshParseError(f"{path}: not a PLY file")
    n_verts = n_faces = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_verts = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_faces = int(parts[2])
        elif parts[:2] == ["format", "ascii"]:
            raise MeshParseError(f"{path}: only binary little-endian PLY is supported")
    if n_verts is None or n_faces is None:
        raise MeshParseError(f"{path}: header lacks element counts")
    body = data[end + len(b"end_header\n"):]
    need_verts = 12 * n_verts
    if len(body) < need_verts:
        raise MeshParseError(f"{path}: body shorter than the declared vertex count")
    verts = np.frombuffer(body[:need_verts], dtype="<f4").reshape(-1, 3).astype(np.float64)
    off = need_verts
    tris = np.empty((n_faces, 3), dtype=np.int64)
    for i in range(n_faces):
        if off + 13 > len(body):
            raise MeshParseError(f"{path}: body shorter than the declared face count")
        count = body[off]
        if count != 3:
            raise MeshParseError(f"{path}: face {i} is not a triangle")
        tris[i] = struct.unpack_from("<3i", body, off + 1)
        off += 13
    if off != len(body):
        raise MeshParseError(f"{path}: trailing bytes after the declared elements")
    return TriangleMesh(verts, tris)
