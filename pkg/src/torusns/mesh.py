"""Structured simplicial meshes of the periodic box [0, 2*pi)^3.

The box is divided into n^3 cubes and each cube into the 6 tetrahedra
that share its main diagonal (Kuhn pattern).  Opposite faces of the box
are identified at the vertex-index level, so the mesh is a genuine
triangulation of the 3-torus: there is no boundary and every face is
interior.  All elements are congruent up to coordinate permutation,
which makes the family exactly quasi-uniform under refinement.

Because vertices wrap around, element geometry cannot be recovered from
the stored vertex coordinates alone.  Each tetrahedron therefore records
its cube corner and its Kuhn type, from which unwrapped physical
coordinates are reconstructed on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .trig import TWO_PI

#: Unit-cube vertex offsets of the 6 Kuhn tetrahedra.  Path k visits
#: (0,0,0) -> ... -> (1,1,1) adding one unit step per axis in the order
#: of a permutation; odd permutations get their last two vertices
#: swapped so every element is positively oriented.
KUHN_OFFSETS = np.zeros((6, 4, 3))
KUHN_PERMUTATIONS = list(permutations(range(3)))
for _t, _perm in enumerate(KUHN_PERMUTATIONS):
    _v = np.zeros((4, 3))
    for _step, _axis in enumerate(_perm):
        _v[_step + 1] = _v[_step]
        _v[_step + 1, _axis] += 1.0
    _parity = sum(1 for i in range(3) for j in range(i + 1, 3)
                  if _perm[i] > _perm[j]) % 2
    if _parity == 1:
        _v[[2, 3]] = _v[[3, 2]]
    KUHN_OFFSETS[_t] = _v

DUMP_HEADER = "TORUS3D"


class MeshError(ValueError):
    pass


@dataclass
class PeriodicMesh:
    n_cells: int
    vertices: np.ndarray      # (n^3, 3) in [0, 2*pi)
    tetrahedra: np.ndarray    # (6 n^3, 4) vertex indices, wrapped
    tet_corner: np.ndarray    # (6 n^3, 3) integer cube corner
    tet_type: np.ndarray      # (6 n^3,) Kuhn type 0..5
    h: float = field(init=False)
    shape_ratio: float = field(init=False)

    def __post_init__(self):
        self.h = float(np.sqrt(3.0) * self.cell_size)
        self.shape_ratio = float(np.max(self._shape_ratios()))

    @property
    def cell_size(self) -> float:
        return TWO_PI / self.n_cells

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tetrahedra.shape[0]

    def tet_coords(self) -> np.ndarray:
        """Unwrapped physical coordinates, shape (n_tets, 4, 3).

        Coordinates may exceed 2*pi for elements that wrap; periodic
        fields do not care and element geometry is exact.
        """
        a = self.cell_size
        return a * (self.tet_corner[:, None, :]
                    + KUHN_OFFSETS[self.tet_type])

    def volumes(self) -> np.ndarray:
        x = self.tet_coords()
        e = x[:, 1:] - x[:, :1]
        return np.linalg.det(e) / 6.0

    def _shape_ratios(self) -> np.ndarray:
        x = self.tet_coords()
        # diameter: max pairwise edge length
        diffs = x[:, :, None, :] - x[:, None, :, :]
        diam = np.sqrt((diffs ** 2).sum(-1)).max(axis=(1, 2))
        # inradius: 3 V / surface area
        vol = self.volumes()
        area = np.zeros(self.n_tets)
        for f in ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)):
            p, q, r = (x[:, i] for i in f)
            area += 0.5 * np.linalg.norm(np.cross(q - p, r - p), axis=1)
        return diam * area / (3.0 * vol)

    # -- text dump ------------------------------------------------------
    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"{DUMP_HEADER} {self.n_cells}\n")
            for v in self.vertices:
                fh.write("%.17g %.17g %.17g\n" % tuple(v))
            for t in self.tetrahedra:
                fh.write("%d %d %d %d\n" % tuple(t))


def load_mesh(path) -> PeriodicMesh:
    """Rebuild a mesh from its dump, verifying the stored tables."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 2 or header[0] != DUMP_HEADER:
        raise MeshError(f"not a {DUMP_HEADER} file: {path}")
    mesh = build_torus_mesh(int(header[1]))
    nv, nt = mesh.n_vertices, mesh.n_tets
    if len(lines) != 1 + nv + nt:
        raise MeshError("vertex/tet counts do not match header")
    try:
        verts = np.array([[float(v) for v in ln.split()]
                          for ln in lines[1:1 + nv]])
        tets = np.array([[int(v) for v in ln.split()]
                         for ln in lines[1 + nv:]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"malformed mesh dump: {exc}") from exc
    if verts.shape != (nv, 3) or not np.allclose(verts, mesh.vertices,
                                                 atol=1e-14):
        raise MeshError("stored vertices disagree with the grid")
    if tets.shape != (nt, 4) or not np.array_equal(tets, mesh.tetrahedra):
        raise MeshError("stored connectivity disagrees with the grid")
    return mesh


def build_torus_mesh(n_cells: int) -> PeriodicMesh:
    """Kuhn-subdivided periodic mesh with n_cells cubes per axis."""
    n = int(n_cells)
    if n < 2:
        raise MeshError("n_cells must be >= 2; smaller grids degenerate "
                        "under periodic identification")
    a = TWO_PI / n
    idx = np.arange(n)
    ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
    vertices = a * np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)

    def vid(i, j, k):
        return ((i % n) * n + (j % n)) * n + (k % n)

    corners = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    tets = np.empty((6 * n ** 3, 4), dtype=np.int64)
    tet_corner = np.empty((6 * n ** 3, 3), dtype=np.int64)
    tet_type = np.empty(6 * n ** 3, dtype=np.int64)
    e = 0
    for c in corners:
        for t in range(6):
            off = KUHN_OFFSETS[t].astype(np.int64)
            for v in range(4):
                tets[e, v] = vid(*(c + off[v]))
            tet_corner[e] = c
            tet_type[e] = t
            e += 1
    return PeriodicMesh(n_cells=n, vertices=vertices, tetrahedra=tets,
                        tet_corner=tet_corner, tet_type=tet_type)


def mesh_size(mesh: PeriodicMesh) -> float:
    """Maximum element diameter; sqrt(3) * 2*pi / n for this family."""
    return mesh.h


def conformity_ok(mesh: PeriodicMesh) -> bool:
    """Every face shared by exactly two elements.

    Faces are keyed by their centroid on the torus, held in exact
    integer units of cell_size/3: index triples alone cannot tell
    wrapped faces apart on very coarse grids.
    """
    offsets = KUHN_OFFSETS.astype(np.int64)  # entries are exactly 0 or 1
    counts: dict[tuple, int] = {}
    period = 3 * mesh.n_cells  # torus period in units of cell_size/3
    for f in ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)):
        mids = 3 * mesh.tet_corner + offsets[mesh.tet_type][:, f, :].sum(axis=1)
        mids = np.mod(mids, period)
        for row in mids:
            key = tuple(int(v) for v in row)
            counts[key] = counts.get(key, 0) + 1
    return all(c == 2 for c in counts.values())
