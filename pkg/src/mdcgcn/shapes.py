"""Procedural triangle meshes with outward winding.

Used as test fixtures and to build the synthetic desk-scale datasets.
"""

import numpy as np

from .mesh import Mesh


def tetrahedron(edge=1.0):
    """Regular tetrahedron with the given edge length, centered at the origin."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    v *= edge / (2.0 * np.sqrt(2.0))
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return Mesh(v, f, "tetrahedron")


def cube(size=1.0):
    """Axis-aligned cube ``[0, size]^3`` split into 12 triangles."""
    v = np.array(
        [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z = 0
            [4, 5, 6], [4, 6, 7],  # z = 1
            [0, 1, 5], [0, 5, 4],  # y = 0
            [3, 7, 6], [3, 6, 2],  # y = 1
            [0, 4, 7], [0, 7, 3],  # x = 0
            [1, 2, 6], [1, 6, 5],  # x = 1
        ]
    )
    return Mesh(v * size, f, "cube")


def icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return Mesh(v, f, "icosahedron")


def icosphere(subdivisions=2, radius=1.0):
    """Unit icosahedron refined by midpoint subdivision; ``20 * 4**k`` faces."""
    mesh = icosahedron()
    v = [tuple(p) for p in mesh.vertices]
    faces = mesh.faces.tolist()
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = (np.asarray(v[a]) + np.asarray(v[b])) / 2.0
                v.append(tuple(p / np.linalg.norm(p)))
                cache[key] = len(v) - 1
            return cache[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = refined
    return Mesh(np.asarray(v) * radius, np.asarray(faces), f"icosphere{subdivisions}")


def geodesic_sphere(frequency=5, radius=1.0):
    """Icosahedron with each face split into ``frequency**2`` triangles, projected to the sphere."""
    base = icosahedron()
    n = int(frequency)
    index = {}
    verts = []

    def vid(p):
        key = tuple(np.round(p, 12))
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    faces = []
    for a, b, c in base.vertices[base.faces]:
        grid = {}
        for i in range(n + 1):
            for j in range(n + 1 - i):
                p = a + (b - a) * (i / n) + (c - a) * (j / n)
                grid[i, j] = vid(p / np.linalg.norm(p))
        for i in range(n):
            for j in range(n - i):
                faces.append([grid[i, j], grid[i + 1, j], grid[i, j + 1]])
                if i + j + 1 < n:
                    faces.append([grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]])
    return Mesh(np.asarray(verts) * radius, np.asarray(faces), f"geodesic{n}")


def box(extents=(1.0, 1.0, 1.0), divisions=6):
    """Closed box centered at the origin with each side gridded ``divisions x divisions``.

    Produces ``12 * divisions**2`` faces.
    """
    n = int(divisions)
    ex = np.asarray(extents, dtype=np.float64) / 2.0
    index = {}
    verts = []

    def vid(ijk):
        if ijk not in index:
            index[ijk] = len(verts)
            verts.append(ijk)
        return index[ijk]

    faces = []
    # each side: fixed axis, its sign, and the (u, v) axes ordered so u x v points outward
    for axis in range(3):
        u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n):
            if side == 0:
                u_ax, v_ax = v_ax, u_ax
            for i in range(n):
                for j in range(n):
                    corners = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        ijk = [0, 0, 0]
                        ijk[axis] = side
                        ijk[u_ax] = i + di
                        ijk[v_ax] = j + dj
                        corners.append(vid(tuple(ijk)))
                    a, b, c, d = corners
                    faces += [[a, b, c], [a, c, d]]
            if side == 0:
                u_ax, v_ax = v_ax, u_ax
    grid = np.asarray(verts, dtype=np.float64) / n
    return Mesh((grid * 2.0 - 1.0) * ex, np.asarray(faces), "box")


def torus(major=1.0, minor=0.35, major_segments=24, minor_segments=12):
    u = np.arange(major_segments) * (2 * np.pi / major_segments)
    w = np.arange(minor_segments) * (2 * np.pi / minor_segments)
    uu, ww = np.meshgrid(u, w, indexing="ij")
    ring = major + minor * np.cos(ww)
    v = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(ww)], axis=-1).reshape(-1, 3)
    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            c = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            d = i * minor_segments + (j + 1) % minor_segments
            faces += [[a, b, c], [a, c, d]]
    return Mesh(v, np.asarray(faces), "torus")


def cylinder(radius=0.5, height=2.0, segments=20, rings=14):
    """Closed cylinder along z, capped by triangle fans.

    Produces ``2 * segments * rings + 2 * segments`` faces.
    """
    theta = np.arange(segments) * (2 * np.pi / segments)
    z = np.linspace(-height / 2.0, height / 2.0, rings + 1)
    side = np.stack(
        [np.tile(radius * np.cos(theta), rings + 1), np.tile(radius * np.sin(theta), rings + 1), np.repeat(z, segments)],
        axis=1,
    )
    bottom = len(side)
    top = bottom + 1
    v = np.vstack([side, [[0.0, 0.0, -height / 2.0]], [[0.0, 0.0, height / 2.0]]])
    faces = []
    for r in range(rings):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c = (r + 1) * segments + (s + 1) % segments
            d = (r + 1) * segments + s
            faces += [[a, b, c], [a, c, d]]
    for s in range(segments):
        faces.append([bottom, (s + 1) % segments, s])
        faces.append([top, rings * segments + s, rings * segments + (s + 1) % segments])
    return Mesh(v, np.asarray(faces), "cylinder")


def grid_patch(n=4, size=1.0):
    """Planar ``n x n`` grid in z = 0 with normals along +z (open, has boundary)."""
    xs = np.linspace(0.0, size, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    v = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b = (i + 1) * (n + 1) + j
            c = (i + 1) * (n + 1) + j + 1
            d = i * (n + 1) + j + 1
            faces += [[a, b, c], [a, c, d]]
    return Mesh(v, np.asarray(faces), "grid")


def jitter(mesh, scale, rng):
    """Displace every vertex by isotropic Gaussian noise of the given scale."""
    return mesh.with_vertices(mesh.vertices + rng.normal(scale=scale, size=mesh.vertices.shape))


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
