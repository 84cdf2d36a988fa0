"""Indexed triangle meshes: parsing, validation, edge tables and writers."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, MeshError, ParseError, TopologyError, UnsupportedTopologyError

log = logging.getLogger(__name__)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with ``(V, 3)`` float vertices and ``(F, 3)`` int faces.

    Arrays are copied and made read-only on construction. Construction
    validates indices; manifoldness is checked by :func:`build_edge_table`.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces)
        if v.size == 0:
            v = v.reshape(0, 3)
        if f.size == 0:
            f = f.reshape(0, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must have shape (V, 3), got {v.shape}")
        if f.ndim != 2:
            raise MeshError(f"faces must have shape (F, 3), got {f.shape}")
        if f.shape[1] != 3:
            raise UnsupportedTopologyError(f"only triangle faces are supported, got {f.shape[1]}-gons")
        if f.size and not np.issubdtype(f.dtype, np.integer):
            if not np.all(np.equal(np.mod(f, 1), 0)):
                raise MeshError("face indices must be integers")
        f = f.astype(np.int64)
        if f.size:
            bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
            if bad.size:
                raise MeshError(f"face {bad[0]} references a vertex outside [0, {len(v)})")
            rep = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2]))
            if rep.size:
                raise MeshError(f"face {rep[0]} repeats a vertex: {tuple(f[rep[0]])}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        object.__setattr__(self, "vertices", _frozen(v, np.float64))
        object.__setattr__(self, "faces", _frozen(f, np.int64))

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_faces(self):
        return self.faces.shape[0]

    def with_vertices(self, vertices):
        return Mesh(vertices, self.faces, self.name)

    def __repr__(self):
        return f"Mesh(name={self.name!r}, V={self.num_vertices}, F={self.num_faces})"


@dataclass(frozen=True, eq=False)
class EdgeTable:
    """Undirected edges of a mesh and their incidence with faces.

    ``edges[e]`` is the sorted vertex pair of edge ``e``; ``edge_faces[e]``
    holds the one or two incident faces (``-1`` pads a boundary edge);
    ``face_edges[f, k]`` is the edge in slot ``k`` of face ``f``, where slot
    ``k`` joins ``faces[f, k]`` and ``faces[f, (k + 1) % 3]``.
    """

    edges: np.ndarray
    edge_faces: np.ndarray
    face_edges: np.ndarray

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def boundary(self):
        return self.edge_faces[:, 1] < 0

    def incident_faces(self, e):
        return tuple(int(f) for f in self.edge_faces[e] if f >= 0)


# ---------------------------------------------------------------------------
# parsing


def _read_text(source):
    if isinstance(source, Path):
        return source.read_text()
    if hasattr(source, "read"):
        return source.read()
    return source


def _obj_index(token, count, lineno):
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ParseError(f"bad face index {token!r}", lineno) from None
    if idx > 0:
        return idx - 1
    if idx < 0:
        return count + idx
    raise ParseError("face index 0 is invalid in OBJ", lineno)


def parse_obj(source, name=""):
    """Parse ASCII OBJ ``v``/``f`` records; all other records are ignored."""
    vertices = []
    faces = []
    for lineno, raw in enumerate(_read_text(source).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise ParseError("vertex record needs 3 coordinates", lineno)
            try:
                vertices.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise ParseError(f"bad vertex coordinate in {raw.strip()!r}", lineno) from None
        elif tag == "f":
            if len(parts) < 4:
                raise ParseError("face record needs at least 3 indices", lineno)
            if len(parts) > 4:
                raise UnsupportedTopologyError(
                    f"line {lineno}: {len(parts) - 1}-vertex polygon; only triangles are supported"
                )
            faces.append([_obj_index(p, len(vertices), lineno) for p in parts[1:]])
    return Mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3), name)


def parse_off(source, name=""):
    """Parse ASCII OFF (header, counts, vertices, faces)."""
    lines = []
    for lineno, raw in enumerate(_read_text(source).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append((lineno, line))
    if not lines:
        raise ParseError("empty OFF stream", 1)
    lineno, header = lines[0]
    if not header.startswith("OFF"):
        raise ParseError(f"missing OFF header, got {header!r}", lineno)
    rest = header[3:].split()
    pos = 1
    if rest:
        counts, count_line = rest, lineno
    else:
        if len(lines) < 2:
            raise ParseError("missing counts line", lineno)
        count_line, counts_text = lines[1]
        counts = counts_text.split()
        pos = 2
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError):
        raise ParseError("counts line must hold vertex and face counts", count_line) from None

    body = lines[pos:]
    if len(body) < nv + nf:
        have_v = min(len(body), nv)
        raise ParseError(
            f"counts claim {nv} vertices and {nf} faces but only {have_v} vertex and "
            f"{max(0, len(body) - nv)} face records present",
            body[-1][0] if body else count_line,
        )
    vertices = np.empty((nv, 3))
    for i in range(nv):
        ln, text = body[i]
        parts = text.split()
        if len(parts) < 3:
            raise ParseError("vertex record needs 3 coordinates", ln)
        try:
            vertices[i] = [float(p) for p in parts[:3]]
        except ValueError:
            raise ParseError(f"bad vertex coordinate in {text!r}", ln) from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        ln, text = body[nv + i]
        try:
            parts = [int(p) for p in text.split()]
        except ValueError:
            raise ParseError(f"bad face record {text!r}", ln) from None
        if not parts or len(parts) - 1 < parts[0]:
            raise ParseError(f"face record {text!r} is shorter than its vertex count", ln)
        if parts[0] != 3:
            raise UnsupportedTopologyError(f"line {ln}: {parts[0]}-vertex polygon; only triangles are supported")
        faces[i] = parts[1:4]
    if len(body) > nv + nf:
        raise ParseError(f"{len(body) - nv - nf} records beyond the declared counts", body[nv + nf][0])
    return Mesh(vertices, faces, name)


def load_mesh(path):
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return parse_obj(path.read_text(), name=path.stem)
    if suffix == ".off":
        return parse_off(path.read_text(), name=path.stem)
    raise MeshError(f"unsupported mesh format: {path}")


# ---------------------------------------------------------------------------
# writers


def write_obj(mesh):
    out = [f"# {mesh.name}" if mesh.name else "# mesh"]
    out.extend("v %r %r %r" % tuple(float(c) for c in v) for v in mesh.vertices)
    out.extend("f %d %d %d" % tuple(int(i) + 1 for i in f) for f in mesh.faces)
    return "\n".join(out) + "\n"


def write_off(mesh):
    out = ["OFF", f"{mesh.num_vertices} {mesh.num_faces} 0"]
    out.extend("%r %r %r" % tuple(float(c) for c in v) for v in mesh.vertices)
    out.extend("3 %d %d %d" % tuple(int(i) for i in f) for f in mesh.faces)
    return "\n".join(out) + "\n"


def save_mesh(mesh, path):
    path = Path(path)
    text = write_off(mesh) if path.suffix.lower() == ".off" else write_obj(mesh)
    path.write_text(text)


def write_ply(mesh, face_colors):
    """ASCII PLY with per-face ``red green blue`` uchar properties."""
    colors = np.asarray(face_colors, dtype=np.int64)
    if colors.shape != (mesh.num_faces, 3):
        raise ValueError(f"face_colors must have shape ({mesh.num_faces}, 3), got {colors.shape}")
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment {mesh.name}" if mesh.name else "comment mdcgcn",
        f"element vertex {mesh.num_vertices}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {mesh.num_faces}",
        "property list uchar int vertex_indices",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    lines.extend("%r %r %r" % tuple(float(c) for c in v) for v in mesh.vertices)
    for f, c in zip(mesh.faces, colors):
        lines.append("3 %d %d %d %d %d %d" % (f[0], f[1], f[2], c[0], c[1], c[2]))
    return "\n".join(lines) + "\n"


def read_ply_face_colors(text):
    """Read back the face color table written by :func:`write_ply`."""
    lines = _read_text(text).splitlines()
    nv = nf = 0
    for i, line in enumerate(lines):
        if line.startswith("element vertex"):
            nv = int(line.split()[2])
        elif line.startswith("element face"):
            nf = int(line.split()[2])
        elif line.strip() == "end_header":
            start = i + 1
            break
    rows = lines[start + nv : start + nv + nf]
    return np.array([[int(p) for p in r.split()[4:7]] for r in rows], dtype=np.int64).reshape(-1, 3)


# ---------------------------------------------------------------------------
# topology


def build_edge_table(mesh):
    """Enumerate undirected edges, rejecting edges shared by three or more faces."""
    f = mesh.faces
    nf = f.shape[0]
    if nf == 0:
        empty = np.zeros((0, 2), dtype=np.int64)
        return EdgeTable(_frozen(empty, np.int64), _frozen(empty, np.int64), _frozen(np.zeros((0, 3)), np.int64))
    half = np.stack([f, np.roll(f, -1, axis=1)], axis=2).reshape(-1, 2)
    key = np.sort(half, axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if counts.max() > 2:
        e = int(np.argmax(counts > 2))
        faces_on = sorted({int(h // 3) for h in np.flatnonzero(inverse == e)})
        raise TopologyError(
            f"non-manifold edge ({edges[e, 0]}, {edges[e, 1]}) is shared by {counts[e]} faces {faces_on}"
        )
    face_of_half = np.repeat(np.arange(nf), 3)
    order = np.argsort(inverse, kind="stable")
    edge_faces = np.full((edges.shape[0], 2), -1, dtype=np.int64)
    first = np.searchsorted(inverse[order], np.arange(edges.shape[0]))
    edge_faces[:, 0] = face_of_half[order[first]]
    two = counts == 2
    edge_faces[two, 1] = face_of_half[order[first[two] + 1]]
    if not two.all():
        log.warning("mesh %r has %d boundary edges", mesh.name, int((~two).sum()))
    return EdgeTable(_frozen(edges, np.int64), _frozen(edge_faces, np.int64), _frozen(inverse.reshape(nf, 3), np.int64))


def euler_characteristic(mesh, edges):
    return mesh.num_vertices - edges.num_edges + mesh.num_faces


def normalize_mesh(mesh):
    """Translate the vertex centroid to the origin and scale the farthest vertex to radius 1."""
    v = mesh.vertices
    if v.shape[0] == 0:
        raise DegenerateGeometryError("cannot normalize a mesh without vertices")
    centered = v - v.mean(axis=0)
    # second pass removes the rounding residue left by a large offset
    centered -= centered.mean(axis=0)
    radius = np.sqrt((centered * centered).sum(axis=1)).max()
    if not radius > 1e-300:
        raise DegenerateGeometryError(f"all vertices of mesh {mesh.name!r} coincide")
    return mesh.with_vertices(centered / radius)
