"""Structured 2D meshes with explicit face topology.

Meshes are built over axis-aligned rectangles, either as ``nx * ny``
quadrilaterals or as ``2 * nx * ny`` right-angled isosceles triangles obtained
by splitting each quad along its lower-left to upper-right diagonal.  Every
cell is an affine image of a fixed reference element (quad: ``[-1, 1]^2``,
triangle: unit simplex), so each cell carries a constant Jacobian.

Faces are enumerated once.  Each interior face stores its two adjacent cells,
the unit normal pointing from the minus cell into the plus cell, the edge
length ``|e|`` and the harmonic face width

    h_e = 2 |K+| |K-| / (|e| (|K-| + |K+|)).

Boundary faces carry the one-sided analogue ``h_e = |K-| / |e|``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAD = "quad"
TRI = "tri"

#: Reference element measures: quad [-1,1]^2 and the unit simplex.
REFERENCE_MEASURE = {QUAD: 4.0, TRI: 0.5}

#: Reference centroids.
REFERENCE_CENTROID = {
    QUAD: np.zeros(2),
    TRI: np.array([1.0 / 3.0, 1.0 / 3.0]),
}

BOUNDARY = -1


@dataclass(frozen=True)
class Face:
    """A mesh edge shared by one or two cells."""

    minus_cell: int
    plus_cell: int  # BOUNDARY for boundary faces
    vertex_ids: tuple
    length: float
    unit_normal: np.ndarray
    h_e: float
    is_boundary: bool


@dataclass(frozen=True)
class MeshTopology:
    """Immutable structured mesh with face connectivity.

    ``cell_vertices`` has one row per cell (4 entries for quads, 3 for
    triangles).  The affine map of cell ``K`` is ``x = origin[K] + J[K] @ xr``
    with ``xr`` in the reference element.
    """

    cell_type: str
    vertices: np.ndarray          # (n_vertices, 2)
    cell_vertices: np.ndarray     # (n_cells, 3 or 4) int
    cell_measures: np.ndarray     # (n_cells,)
    cell_origins: np.ndarray      # (n_cells, 2)
    cell_jacobians: np.ndarray    # (n_cells, 2, 2)
    faces: tuple                  # tuple of Face
    cell_face_counts: np.ndarray  # (n_cells,) interior faces per cell, m_K
    domain: tuple                 # (x0, x1, y0, y1)

    # Vectorized interior-face arrays, derived in __post_init__.
    interior_minus: np.ndarray = field(default=None, repr=False)
    interior_plus: np.ndarray = field(default=None, repr=False)
    interior_normals: np.ndarray = field(default=None, repr=False)
    interior_lengths: np.ndarray = field(default=None, repr=False)
    interior_h: np.ndarray = field(default=None, repr=False)
    interior_vertex_ids: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        interior = [f for f in self.faces if not f.is_boundary]
        object.__setattr__(
            self, "interior_minus",
            np.array([f.minus_cell for f in interior], dtype=np.intp))
        object.__setattr__(
            self, "interior_plus",
            np.array([f.plus_cell for f in interior], dtype=np.intp))
        object.__setattr__(
            self, "interior_normals",
            np.array([f.unit_normal for f in interior]).reshape(-1, 2))
        object.__setattr__(
            self, "interior_lengths",
            np.array([f.length for f in interior]))
        object.__setattr__(
            self, "interior_h",
            np.array([f.h_e for f in interior]))
        object.__setattr__(
            self, "interior_vertex_ids",
            np.array([f.vertex_ids for f in interior],
                     dtype=np.intp).reshape(-1, 2))

    @property
    def num_cells(self) -> int:
        return self.cell_vertices.shape[0]

    @property
    def num_interior_faces(self) -> int:
        return self.interior_minus.shape[0]

    @property
    def total_measure(self) -> float:
        return float(self.cell_measures.sum())

    def centroids(self) -> np.ndarray:
        """Physical centroids of all cells, shape (n_cells, 2)."""
        xr = REFERENCE_CENTROID[self.cell_type]
        return self.cell_origins + self.cell_jacobians @ xr

    def inverse_jacobians(self) -> np.ndarray:
        """Per-cell inverse affine Jacobians, shape (n_cells, 2, 2)."""
        return np.linalg.inv(self.cell_jacobians)


def _check_args(nx: int, ny: int, domain):
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be >= 1, got nx={nx}, ny={ny}")
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain}")
    return float(x0), float(x1), float(y0), float(y1)


def _grid_vertices(nx, ny, x0, x1, y0, y1):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([X.ravel(), Y.ravel()])


def _vertex_id(i, j, nx):
    # Row-major grid numbering: j * (nx + 1) + i.
    return j * (nx + 1) + i


def _build_faces(cell_vertices, cell_measures, vertices, centroids):
    """Derive faces from cell connectivity.

    Interior faces are oriented from the lower-index cell (minus) into the
    higher-index cell (plus); the normal is chosen so it points from the
    minus centroid toward the plus centroid.
    """
    edge_cells: dict = {}
    edge_order: list = []
    for k, verts in enumerate(cell_vertices):
        n = len(verts)
        for a in range(n):
            key = tuple(sorted((int(verts[a]), int(verts[(a + 1) % n]))))
            if key not in edge_cells:
                edge_cells[key] = []
                edge_order.append(key)
            edge_cells[key].append(k)

    faces = []
    n_cells = len(cell_vertices)
    counts = np.zeros(n_cells, dtype=np.intp)
    for key in edge_order:
        cells = edge_cells[key]
        va, vb = vertices[key[0]], vertices[key[1]]
        tangent = vb - va
        length = float(np.hypot(*tangent))
        normal = np.array([tangent[1], -tangent[0]]) / length
        if len(cells) == 1:
            km = cells[0]
            # Boundary: orient outward.
            if np.dot(normal, 0.5 * (va + vb) - centroids[km]) < 0:
                normal = -normal
            h_e = float(cell_measures[km]) / length
            faces.append(Face(km, BOUNDARY, key, length, normal, h_e, True))
        else:
            km, kp = sorted(cells)
            if np.dot(normal, centroids[kp] - centroids[km]) < 0:
                normal = -normal
            am, ap = float(cell_measures[km]), float(cell_measures[kp])
            h_e = 2.0 * am * ap / (length * (am + ap))
            faces.append(Face(km, kp, key, length, normal, h_e, False))
            counts[km] += 1
            counts[kp] += 1
    return tuple(faces), counts


def build_quad_mesh(nx: int, ny: int,
                    domain=(0.0, 1.0, 0.0, 1.0)) -> MeshTopology:
    """Axis-aligned quadrilateral mesh with nx*ny cells."""
    x0, x1, y0, y1 = _check_args(nx, ny, domain)
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    verts = _grid_vertices(nx, ny, x0, x1, y0, y1)

    cells = np.empty((nx * ny, 4), dtype=np.intp)
    for j in range(ny):
        for i in range(nx):
            k = j * nx + i
            cells[k] = (_vertex_id(i, j, nx), _vertex_id(i + 1, j, nx),
                        _vertex_id(i + 1, j + 1, nx), _vertex_id(i, j + 1, nx))

    measures = np.full(nx * ny, hx * hy)
    centers = 0.25 * (verts[cells[:, 0]] + verts[cells[:, 1]]
                      + verts[cells[:, 2]] + verts[cells[:, 3]])
    jac = np.zeros((nx * ny, 2, 2))
    jac[:, 0, 0] = hx / 2.0
    jac[:, 1, 1] = hy / 2.0

    faces, counts = _build_faces(cells, measures, verts, centers)
    return MeshTopology(QUAD, verts, cells, measures, centers, jac,
                        faces, counts, (x0, x1, y0, y1))


def build_tri_mesh(nx: int, ny: int,
                   domain=(0.0, 1.0, 0.0, 1.0)) -> MeshTopology:
    """Triangle mesh: each quad split along its lower-left/upper-right diagonal."""
    x0, x1, y0, y1 = _check_args(nx, ny, domain)
    verts = _grid_vertices(nx, ny, x0, x1, y0, y1)

    cells = np.empty((2 * nx * ny, 3), dtype=np.intp)
    for j in range(ny):
        for i in range(nx):
            v00 = _vertex_id(i, j, nx)
            v10 = _vertex_id(i + 1, j, nx)
            v11 = _vertex_id(i + 1, j + 1, nx)
            v01 = _vertex_id(i, j + 1, nx)
            k = 2 * (j * nx + i)
            cells[k] = (v00, v10, v11)      # lower triangle
            cells[k + 1] = (v00, v11, v01)  # upper triangle

    v0 = verts[cells[:, 0]]
    e1 = verts[cells[:, 1]] - v0
    e2 = verts[cells[:, 2]] - v0
    jac = np.stack([e1, e2], axis=-1)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    measures = 0.5 * np.abs(det)
    centroids = v0 + (e1 + e2) / 3.0

    faces, counts = _build_faces(cells, measures, verts, centroids)
    return MeshTopology(TRI, verts, cells, measures, v0, jac,
                        faces, counts, (x0, x1, y0, y1))


def global_mesh_width(mesh: MeshTopology) -> float:
    """Maximum harmonic face width over all faces."""
    if not mesh.faces:
        raise ValueError("mesh has no faces")
    return max(f.h_e for f in mesh.faces)
