"""Per-vertex and per-face differential geometry and the 57-wide face features.

Each face row is laid out as::

    [ P (18) | Nv (18) | GC (6) | Nf (12) | Theta (3) ]

where the six vertices are ``[v0, v1, v2, w0, w1, w2]`` (the face corners
followed by the vertex opposite each edge slot in the neighboring face) and
the four faces are ``[self, n0, n1, n2]``. Edge slot ``k`` joins corners
``k`` and ``k + 1``.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DegenerateGeometryError, MeshError
from .mesh import build_edge_table, normalize_mesh

log = logging.getLogger(__name__)

AREA_TOL = 1e-12

COMPONENTS = ("P", "Nv", "GC", "Nf", "Theta")
COMPONENT_WIDTHS = {"P": 18, "Nv": 18, "GC": 6, "Nf": 12, "Theta": 3}
FULL_WIDTH = sum(COMPONENT_WIDTHS.values())

_ALIASES = {
    "p": "P", "nv": "Nv", "gc": "GC", "nf": "Nf", "theta": "Theta", "θ": "Theta",
}


class FeatureMask(tuple):
    """Ordered subset of feature components; always stored in canonical order."""

    def __new__(cls, components=COMPONENTS):
        if isinstance(components, str):
            components = [c for c in components.replace(" ", "").split(",") if c]
        names = set()
        for c in components:
            key = _ALIASES.get(str(c).lower())
            if key is None:
                raise ConfigError(f"unknown feature component {c!r}; expected one of {', '.join(COMPONENTS)}")
            names.add(key)
        if not names:
            raise ConfigError("feature mask selects no components")
        return super().__new__(cls, tuple(c for c in COMPONENTS if c in names))

    @property
    def width(self):
        return sum(COMPONENT_WIDTHS[c] for c in self)

    def columns(self):
        """Column indices of the full 57-wide row kept by this mask."""
        cols = []
        start = 0
        for c in COMPONENTS:
            w = COMPONENT_WIDTHS[c]
            if c in self:
                cols.extend(range(start, start + w))
            start += w
        return np.asarray(cols, dtype=np.int64)

    def __str__(self):
        return ",".join(self)


FULL_MASK = FeatureMask(COMPONENTS)

# feature-subset rows of the input ablation table, in table order, with the
# published feature dimension of each row
ABLATION_MASKS = (
    (FeatureMask("Theta"), 3),
    (FeatureMask("GC"), 6),
    (FeatureMask("Nf"), 12),
    (FeatureMask("P"), 18),
    (FeatureMask("Nv"), 18),
    (FeatureMask("Nv,GC,Nf,Theta"), 39),
    (FeatureMask("P,GC,Nf,Theta"), 39),
    (FeatureMask("P,Nv,GC,Theta"), 45),
    (FeatureMask("P,Nv,Nf,Theta"), 51),
    (FeatureMask("P,Nv,GC,Nf"), 54),
    (FeatureMask("P,Nv,GC,Nf,Theta"), 57),
)


@dataclass(frozen=True, eq=False)
class VertexGeometry:
    normals: np.ndarray
    curvature: np.ndarray
    angle_deficit: np.ndarray
    area_sum: np.ndarray


@dataclass(frozen=True, eq=False)
class FaceGeometry:
    """Face normals/areas plus the 1-ring record of every face.

    ``neighbors[f, k]`` is the face across edge slot ``k`` (``f`` itself on a
    boundary slot, flagged in ``boundary``), ``opposite[f, k]`` the vertex of
    that neighbor not on the edge and ``angles[f, k]`` the normal angle.
    """

    normals: np.ndarray
    areas: np.ndarray
    neighbors: np.ndarray = None
    opposite: np.ndarray = None
    boundary: np.ndarray = None
    angles: np.ndarray = None


def _corners(mesh):
    v = mesh.vertices
    f = mesh.faces
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


def face_normals_areas(mesh, area_tol=AREA_TOL):
    p0, p1, p2 = _corners(mesh)
    cross = np.cross(p1 - p0, p2 - p0)
    norm = np.sqrt((cross * cross).sum(axis=1))
    areas = 0.5 * norm
    bad = np.flatnonzero(areas < area_tol)
    if bad.size:
        shown = ", ".join(str(i) for i in bad[:10])
        raise DegenerateGeometryError(
            f"mesh {mesh.name!r}: {bad.size} face(s) with area below {area_tol:g}: {shown}"
        )
    return FaceGeometry(normals=cross / norm[:, None], areas=areas)


def vertex_normals(mesh, fg):
    """Area-weighted sum of incident face normals, rescaled to unit length."""
    weighted = fg.normals * fg.areas[:, None]
    index = mesh.faces.reshape(-1)
    acc = kernels.scatter_add_rows(index, np.repeat(weighted, 3, axis=0), mesh.num_vertices)
    norm = np.sqrt((acc * acc).sum(axis=1))
    used = np.zeros(mesh.num_vertices, dtype=bool)
    used[index] = True
    bad = np.flatnonzero(used & (norm < 1e-15))
    if bad.size:
        raise DegenerateGeometryError(f"mesh {mesh.name!r}: vertex normal vanishes at vertices {bad[:10].tolist()}")
    if not used.all():
        log.warning("mesh %r: %d isolated vertices get zero normals", mesh.name, int((~used).sum()))
    out = np.zeros_like(acc)
    out[used] = acc[used] / norm[used, None]
    return out


def corner_angles(mesh):
    """Interior angle at each face corner, shape ``(F, 3)``."""
    p = _corners(mesh)
    angles = np.empty((mesh.num_faces, 3))
    for k in range(3):
        a = p[(k + 1) % 3] - p[k]
        b = p[(k + 2) % 3] - p[k]
        c = np.cross(a, b)
        angles[:, k] = np.arctan2(np.sqrt((c * c).sum(axis=1)), (a * b).sum(axis=1))
    return angles


def gaussian_curvature(mesh, fg=None, third_area=False):
    """Angular deficit over the incident-triangle area sum at every vertex.

    With ``third_area`` the denominator is a third of the area sum (the
    barycentric-cell variant). Returns ``(curvature, deficit, area_sum)``.
    """
    if fg is None:
        fg = face_normals_areas(mesh)
    index = mesh.faces.reshape(-1)
    n = mesh.num_vertices
    angle_sum = kernels.scatter_add_rows(index, corner_angles(mesh).reshape(-1, 1), n)[:, 0]
    area_sum = kernels.scatter_add_rows(index, np.repeat(fg.areas, 3).reshape(-1, 1), n)[:, 0]
    used = area_sum > 0
    deficit = np.where(used, 2.0 * np.pi - angle_sum, 0.0)
    if not used.all():
        log.warning("mesh %r: %d isolated vertices get zero curvature", mesh.name, int((~used).sum()))
    denom = area_sum / 3.0 if third_area else area_sum
    curvature = np.zeros(n)
    curvature[used] = deficit[used] / denom[used]
    return curvature, deficit, area_sum


def vertex_geometry(mesh, fg=None, third_area=False):
    if fg is None:
        fg = face_normals_areas(mesh)
    curvature, deficit, area_sum = gaussian_curvature(mesh, fg, third_area)
    return VertexGeometry(vertex_normals(mesh, fg), curvature, deficit, area_sum)


def one_ring(mesh, edges):
    """Neighbor face and opposite vertex per edge slot. Returns ``(neighbors, opposite, boundary)``."""
    nf = mesh.num_faces
    faces = mesh.faces
    own = np.arange(nf)[:, None]
    ef = edges.edge_faces[edges.face_edges]  # (F, 3, 2)
    other = np.where(ef[..., 0] == own, ef[..., 1], ef[..., 0])
    boundary = other < 0
    neighbors = np.where(boundary, own, other)

    # own opposite vertex for slot k is corner k + 2
    opposite = np.roll(faces, -2, axis=1).copy()
    interior = ~boundary
    if interior.any():
        fi, ki = np.nonzero(interior)
        a = faces[fi, ki]
        b = faces[fi, (ki + 1) % 3]
        nb = faces[neighbors[fi, ki]]
        off = (nb != a[:, None]) & (nb != b[:, None])
        if not np.all(off.sum(axis=1) == 1):
            raise MeshError(f"mesh {mesh.name!r}: inconsistent face adjacency")
        opposite[fi, ki] = nb[off]
    return neighbors, opposite, boundary


def dihedral_angles(fg, neighbors, boundary):
    """Angle between each face normal and the normal across each edge slot; 0 on boundary slots."""
    n = fg.normals
    nb = n[neighbors]  # (F, 3, 3)
    dots = (n[:, None, :] * nb).sum(axis=2)
    norms = np.sqrt((n * n).sum(axis=1))[:, None] * np.sqrt((nb * nb).sum(axis=2))
    angles = np.arccos(np.clip(dots / norms, -1.0, 1.0))
    angles[boundary] = 0.0
    return angles


def face_geometry(mesh, edges):
    fg = face_normals_areas(mesh)
    neighbors, opposite, boundary = one_ring(mesh, edges)
    angles = dihedral_angles(fg, neighbors, boundary)
    return FaceGeometry(fg.normals, fg.areas, neighbors, opposite, boundary, angles)


def assemble_features(mesh, vg, fg, mask=FULL_MASK):
    mask = mask if isinstance(mask, FeatureMask) else FeatureMask(mask)
    six = np.concatenate([mesh.faces, fg.opposite], axis=1)  # (F, 6)
    nf = mesh.num_faces
    blocks = []
    for c in mask:
        if c == "P":
            blocks.append(mesh.vertices[six].reshape(nf, 18))
        elif c == "Nv":
            blocks.append(vg.normals[six].reshape(nf, 18))
        elif c == "GC":
            blocks.append(vg.curvature[six])
        elif c == "Nf":
            four = np.concatenate([np.arange(nf)[:, None], fg.neighbors], axis=1)
            blocks.append(fg.normals[four].reshape(nf, 12))
        elif c == "Theta":
            blocks.append(fg.angles)
    out = np.concatenate(blocks, axis=1) if blocks else np.zeros((nf, 0))
    if not np.all(np.isfinite(out)):
        raise DegenerateGeometryError(f"mesh {mesh.name!r}: non-finite feature values")
    return out


@dataclass(frozen=True, eq=False)
class MeshFeatures:
    mesh: object
    edges: object
    vertex: VertexGeometry
    face: FaceGeometry
    features: np.ndarray
    mask: FeatureMask


def extract(mesh, mask=FULL_MASK, normalize=True, third_area=False):
    """Full pipeline from a raw mesh to its node feature matrix."""
    if normalize:
        mesh = normalize_mesh(mesh)
    edges = build_edge_table(mesh)
    fg = face_geometry(mesh, edges)
    vg = vertex_geometry(mesh, fg, third_area)
    mask = mask if isinstance(mask, FeatureMask) else FeatureMask(mask)
    return MeshFeatures(mesh, edges, vg, fg, assemble_features(mesh, vg, fg, mask), mask)


# ---------------------------------------------------------------------------
# feature dump files


def save_features(path, features, mask, edges=None):
    """Write a feature dump; with ``edges`` also write an ``.adj`` sidecar."""
    path = Path(path)
    mask = FeatureMask(mask) if not isinstance(mask, FeatureMask) else mask
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != mask.width:
        raise ConfigError(f"feature matrix {features.shape} does not match mask width {mask.width}")
    header = f"mdcgcn-features 1\nfaces {features.shape[0]}\nwidth {features.shape[1]}\nmask {mask}"
    np.savetxt(path, features, fmt="%.17g", header=header, comments="# ")
    if edges is not None:
        np.savetxt(path.with_suffix(".adj"), np.asarray(edges, dtype=np.int64).reshape(-1, 2), fmt="%d",
                   header=f"mdcgcn-adjacency 1\nnodes {features.shape[0]}", comments="# ")


def load_features(path):
    """Read a feature dump; returns ``(features, mask, edges_or_None)``."""
    path = Path(path)
    meta = {}
    with path.open() as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            parts = line[1:].split(None, 1)
            if len(parts) == 2:
                meta[parts[0]] = parts[1].strip()
    if "width" not in meta or "faces" not in meta:
        raise MeshError(f"{path}: not a feature dump (missing header)")
    faces, width = int(meta["faces"]), int(meta["width"])
    data = np.loadtxt(path, comments="#", ndmin=2)
    if faces == 0:
        data = data.reshape(0, width)
    if data.shape != (faces, width):
        raise MeshError(f"{path}: header says {faces}x{width}, found {data.shape[0]}x{data.shape[1]}")
    mask = FeatureMask(meta.get("mask", ",".join(COMPONENTS)))
    adj = path.with_suffix(".adj")
    edges = np.loadtxt(adj, comments="#", dtype=np.int64, ndmin=2).reshape(-1, 2) if adj.exists() else None
    return data, mask, edges
