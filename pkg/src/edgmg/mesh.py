"""Triangulations of polygonal domains, uniform red refinement, and nested hierarchies.

Meshes are immutable after construction. Faces carry a canonical orientation
(lower vertex index first); per-cell traversal signs are stored separately so
outward normals can be recovered for either adjacent cell.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Point2",
    "TriMesh",
    "MeshHierarchy",
    "build_figure1_coarse",
    "refine",
    "build_hierarchy",
    "face_geometry",
    "mesh_from_arrays",
    "read_mesh",
    "write_mesh",
]


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"non-finite coordinate ({self.x}, {self.y})")


@dataclass(frozen=True)
class TriMesh:
    """A conforming triangulation.

    vertices : (nv, 2) float array
    cells : (nc, 3) int array, counterclockwise vertex triples
    faces : (nf, 2) int array, canonical orientation (lower index first),
        sorted lexicographically
    face_cells : (nf, 2) int array, adjacent cells (-1 in slot 1 on boundary)
    face_boundary : (nf,) bool array
    cell_faces : (nc, 3) int array, local face f of cell (a, b, c) spans
        (a,b), (b,c), (c,a)
    cell_face_sign : (nc, 3) int array, +1 where the cell traverses the face
        in canonical direction
    level : refinement level index
    """

    vertices: np.ndarray
    cells: np.ndarray
    faces: np.ndarray
    face_cells: np.ndarray
    face_boundary: np.ndarray
    cell_faces: np.ndarray
    cell_face_sign: np.ndarray
    level: int = 0

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def cell_vertices(self, c):
        return self.vertices[self.cells[c]]

    def signed_areas(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self):
        d = self.vertices[self.faces[:, 1]] - self.vertices[self.faces[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def max_diameter(self):
        """Longest edge; coincides with the maximal cell diameter for triangles."""
        return float(self.edge_lengths().max())

    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.faces[self.face_boundary].ravel()] = True
        return mask

    def validate(self, expected_area=None, rtol=1e-12):
        areas = self.signed_areas()
        if np.any(areas <= 0):
            bad = int(np.argmin(areas))
            raise ValueError(f"cell {bad} is degenerate or not counterclockwise")
        counts = (self.face_cells >= 0).sum(axis=1)
        if not np.all((counts == 1) | (counts == 2)):
            raise ValueError("face with invalid adjacency count")
        if np.any((counts == 1) != self.face_boundary):
            raise ValueError("boundary flags inconsistent with adjacency")
        if expected_area is not None:
            total = float(areas.sum())
            if abs(total - expected_area) > rtol * abs(expected_area):
                raise ValueError(
                    f"cells tile area {total}, expected {expected_area}"
                )
        return self


def _build_topology(vertices, cells, level):
    """Derive faces, adjacency and orientation signs from raw vertex/cell arrays."""
    vertices = np.ascontiguousarray(vertices, dtype=np.float64)
    cells = np.ascontiguousarray(cells, dtype=np.int32)
    nv = vertices.shape[0]
    nc = cells.shape[0]
    # local face f of cell (a, b, c) is the edge (v_f, v_{f+1 mod 3})
    tails = cells
    heads = cells[:, [1, 2, 0]]
    lo = np.minimum(tails, heads)
    hi = np.maximum(tails, heads)
    key = lo.astype(np.int64) * nv + hi.astype(np.int64)
    flat = key.ravel()
    ukey, inverse = np.unique(flat, return_inverse=True)
    faces = np.stack([ukey // nv, ukey % nv], axis=1).astype(np.int32)
    cell_faces = inverse.reshape(nc, 3).astype(np.int32)
    cell_face_sign = np.where(tails < heads, 1, -1).astype(np.int8)

    nf = faces.shape[0]
    face_cells = np.full((nf, 2), -1, dtype=np.int32)
    order = np.argsort(cell_faces.ravel(), kind="stable")
    owners = np.repeat(np.arange(nc, dtype=np.int32), 3)[order]
    fidx = cell_faces.ravel()[order]
    starts = np.searchsorted(fidx, np.arange(nf))
    ends = np.searchsorted(fidx, np.arange(nf) + 1)
    spans = ends - starts
    if np.any(spans > 2) or np.any(spans == 0):
        raise ValueError("mesh is not a valid 2-manifold triangulation")
    face_cells[:, 0] = owners[starts]
    second = spans == 2
    face_cells[second, 1] = owners[starts[second] + 1]
    face_boundary = ~second

    mesh = TriMesh(
        vertices=vertices,
        cells=cells,
        faces=faces,
        face_cells=face_cells,
        face_boundary=face_boundary,
        cell_faces=cell_faces,
        cell_face_sign=cell_face_sign,
        level=level,
    )
    for arr in (mesh.vertices, mesh.cells, mesh.faces, mesh.face_cells,
                mesh.face_boundary, mesh.cell_faces, mesh.cell_face_sign):
        arr.setflags(write=False)
    return mesh


def mesh_from_arrays(vertices, cells, level=0, expected_area=None):
    """Build a TriMesh from vertex coordinates and CCW cell triples."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if not np.all(np.isfinite(vertices)):
        raise ValueError("non-finite vertex coordinate")
    mesh = _build_topology(vertices, np.asarray(cells), level)
    return mesh.validate(expected_area=expected_area)


def build_figure1_coarse() -> TriMesh:
    """The level-0 grid: a 2x2 block of squares on (0,1)^2, each square split
    into two triangles by its top-left-to-bottom-right diagonal."""
    xy = np.linspace(0.0, 1.0, 3)
    vertices = np.array([[x, y] for y in xy for x in xy])
    cells = []
    for j in range(2):
        for i in range(2):
            sw = 3 * j + i
            se = sw + 1
            nw = sw + 3
            ne = nw + 1
            cells.append((sw, se, nw))
            cells.append((se, ne, nw))
    return mesh_from_arrays(vertices, cells, level=0, expected_area=1.0)


def refine(mesh: TriMesh) -> TriMesh:
    """Red refinement: each triangle splits into 4 congruent children.

    Midpoint vertices are identified through the parent face index (exact
    topology, no coordinate hashing); children of cell c occupy slots
    4c..4c+3 in the refined mesh.
    """
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[mesh.faces[:, 0]] + mesh.vertices[mesh.faces[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])

    a, b, c = mesh.cells[:, 0], mesh.cells[:, 1], mesh.cells[:, 2]
    m01 = nv + mesh.cell_faces[:, 0]
    m12 = nv + mesh.cell_faces[:, 1]
    m20 = nv + mesh.cell_faces[:, 2]
    children = np.empty((mesh.n_cells, 4, 3), dtype=np.int64)
    children[:, 0] = np.stack([a, m01, m20], axis=1)
    children[:, 1] = np.stack([m01, b, m12], axis=1)
    children[:, 2] = np.stack([m20, m12, c], axis=1)
    children[:, 3] = np.stack([m01, m12, m20], axis=1)
    return _build_topology(vertices, children.reshape(-1, 3), mesh.level + 1)


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested triangulations; levels[0] is coarse, child_map[l-1][c] lists the
    4 children on level l of coarse cell c on level l-1."""

    levels: list
    child_map: list
    h: np.ndarray

    @property
    def n_levels(self):
        return len(self.levels)

    def parent_cells(self, level):
        """Parent cell index on level-1 for every cell of `level`."""
        if level < 1:
            raise ValueError("level 0 has no parents")
        return np.arange(self.levels[level].n_cells) // 4


def build_hierarchy(coarse: TriMesh, num_refinements: int) -> MeshHierarchy:
    levels = [coarse]
    child_map = []
    for _ in range(num_refinements):
        fine = refine(levels[-1])
        nc = levels[-1].n_cells
        child_map.append(np.arange(4 * nc, dtype=np.int64).reshape(nc, 4))
        levels.append(fine)
    total = float(coarse.signed_areas().sum())
    for m in levels:
        m.validate(expected_area=total)
    h = np.array([m.max_diameter() for m in levels])
    return MeshHierarchy(levels=levels, child_map=child_map, h=h)


def face_geometry(mesh: TriMesh, face):
    """Length of a face and its outward unit normal per adjacent cell.

    Returns (length, [(cell, normal), ...]); the two normals of an interior
    face are exact negatives.
    """
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face index {face} out of range [0, {mesh.n_faces})")
    v0, v1 = mesh.faces[face]
    d = mesh.vertices[v1] - mesh.vertices[v0]
    length = float(np.hypot(d[0], d[1]))
    normal_canon = np.array([d[1], -d[0]]) / length
    out = []
    for cell in mesh.face_cells[face]:
        if cell < 0:
            continue
        local = int(np.flatnonzero(mesh.cell_faces[cell] == face)[0])
        sign = mesh.cell_face_sign[cell, local]
        out.append((int(cell), sign * normal_canon))
    return length, out


def read_mesh(path) -> TriMesh:
    """Parse the line-oriented coarse-mesh format.

    Header `vertices N` followed by N `x y` lines, then `cells M` followed by
    M `i j k` lines (0-based, counterclockwise).
    """
    with open(path, "r", encoding="ascii") as fh:
        tokens = []
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if body:
                tokens.append((lineno, body))
    pos = 0

    def expect(keyword):
        nonlocal pos
        if pos >= len(tokens):
            raise ValueError(f"{path}: unexpected end of file, expected '{keyword}'")
        lineno, body = tokens[pos]
        parts = body.split()
        if parts[0] != keyword or len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '{keyword} N', got '{body}'")
        pos += 1
        return int(parts[1])

    def rows(count, width, kind):
        nonlocal pos
        out = []
        for _ in range(count):
            if pos >= len(tokens):
                raise ValueError(f"{path}: unexpected end of file in {kind} block")
            lineno, body = tokens[pos]
            parts = body.split()
            if len(parts) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got '{body}'")
            try:
                out.append([float(p) if kind == "vertex" else int(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            pos += 1
        return out

    nv = expect("vertices")
    verts = rows(nv, 2, "vertex")
    nc = expect("cells")
    cells = rows(nc, 3, "cell")
    for p in verts:
        Point2(*p)
    return mesh_from_arrays(np.array(verts), np.array(cells), level=0)


def write_mesh(mesh: TriMesh, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"cells {mesh.n_cells}\n")
        for a, b, c in mesh.cells:
            fh.write(f"{a} {b} {c}\n")
