"""Structured simplicial meshes (triangles / tetrahedra) with facet topology.

Meshes are built for three benchmark domains: the unit square, the unit
cube, and an L-shaped cylinder (unit cube minus one quadrant column).
Every mesh carries the oriented facet data needed by DG-style assembly:
per-facet measure, normal, and the plus/minus element adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FacetRecord:
    """One edge (2D) or triangular face (3D) of the mesh.

    ``normal`` points from ``plus_element`` to ``minus_element`` on
    interior facets, and outward on boundary facets (``minus_element``
    is None there).
    """

    vertices: tuple
    measure: float
    h: float
    normal: np.ndarray
    plus_element: int
    minus_element: int | None
    boundary: bool


class SimplicialMesh:
    """Immutable simplicial mesh with precomputed geometry and topology.

    Attributes
    ----------
    dim : 2 or 3
    vertices : (n_vertices, dim) float array
    elements : (n_elements, dim+1) int array, positively oriented
    element_volume : (n_elements,) strictly positive measures
    element_centroid : (n_elements, dim)
    facets : list of FacetRecord, ordered by sorted vertex tuple
    element_facets : (n_elements, dim+1) int array; entry [k, j] is the
        facet of element k opposite its local vertex j
    """

    def __init__(self, dim, vertices, elements):
        vertices = np.asarray(vertices, dtype=float)
        elements = np.asarray(elements, dtype=np.int64)
        if vertices.shape[1] != dim:
            raise ValueError("vertex coordinate dimension mismatch")
        if elements.shape[1] != dim + 1:
            raise ValueError("element vertex count mismatch")

        elements = _orient_positive(dim, vertices, elements)
        self.dim = dim
        self.vertices = vertices
        self.elements = elements
        self.element_volume = _signed_volumes(dim, vertices, elements)
        if np.any(self.element_volume <= 0.0):
            raise ValueError("degenerate or inverted element")
        self.element_centroid = vertices[elements].mean(axis=1)

        self._build_facets()
        # freeze the arrays; the mesh is shared and must stay immutable
        for arr in (self.vertices, self.elements, self.element_volume,
                    self.element_centroid, self.facet_vertices,
                    self.facet_measure, self.facet_h, self.facet_normal,
                    self.facet_plus, self.facet_minus, self.facet_boundary,
                    self.element_facets):
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_facets(self):
        return self.facet_vertices.shape[0]

    def _build_facets(self):
        d = self.dim
        # collect facets as sorted vertex tuples -> [(element, local opposite)]
        table = {}
        for k, elem in enumerate(self.elements):
            for j in range(d + 1):
                fv = tuple(sorted(np.delete(elem, j)))
                table.setdefault(fv, []).append((k, j))

        keys = sorted(table.keys())
        nf = len(keys)
        self.facet_vertices = np.empty((nf, d), dtype=np.int64)
        self.facet_measure = np.empty(nf)
        self.facet_h = np.empty(nf)
        self.facet_normal = np.empty((nf, d))
        self.facet_plus = np.empty(nf, dtype=np.int64)
        self.facet_minus = np.full(nf, -1, dtype=np.int64)
        self.facet_boundary = np.zeros(nf, dtype=bool)
        self.element_facets = np.empty((self.n_elements, d + 1), dtype=np.int64)

        for fid, fv in enumerate(keys):
            owners = table[fv]
            if len(owners) > 2:
                raise ValueError("non-manifold facet shared by >2 elements")
            owners.sort()
            kp, jp = owners[0]
            self.facet_vertices[fid] = fv
            self.facet_plus[fid] = kp
            for k, j in owners:
                self.element_facets[k, j] = fid

            pts = self.vertices[list(fv)]
            if d == 2:
                t = pts[1] - pts[0]
                measure = np.linalg.norm(t)
                normal = np.array([t[1], -t[0]]) / measure
            else:
                c = np.cross(pts[1] - pts[0], pts[2] - pts[0])
                area2 = np.linalg.norm(c)
                measure = 0.5 * area2
                normal = c / area2
            # orient outward with respect to the plus element
            opp = self.vertices[self.elements[kp, jp]]
            if np.dot(normal, pts.mean(axis=0) - opp) < 0.0:
                normal = -normal
            self.facet_normal[fid] = normal
            self.facet_measure[fid] = measure
            self.facet_h[fid] = measure ** (1.0 / (d - 1))
            if len(owners) == 1:
                self.facet_boundary[fid] = True
            else:
                self.facet_minus[fid] = owners[1][0]

        self.facets = [
            FacetRecord(
                vertices=tuple(int(v) for v in self.facet_vertices[i]),
                measure=float(self.facet_measure[i]),
                h=float(self.facet_h[i]),
                normal=self.facet_normal[i],
                plus_element=int(self.facet_plus[i]),
                minus_element=None if self.facet_boundary[i] else int(self.facet_minus[i]),
                boundary=bool(self.facet_boundary[i]),
            )
            for i in range(nf)
        ]

    def boundary_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        bnd = self.facet_vertices[self.facet_boundary]
        mask[bnd.ravel()] = True
        return mask

    def facet_sign(self, element, fid):
        """+1 if the facet normal is outward for ``element``, else -1."""
        return 1 if self.facet_plus[fid] == element else -1


def _signed_volumes(dim, vertices, elements):
    v = vertices[elements]
    edges = v[:, 1:, :] - v[:, :1, :]
    det = np.linalg.det(edges)
    return det / (2.0 if dim == 2 else 6.0)


def _orient_positive(dim, vertices, elements):
    vol = _signed_volumes(dim, vertices, elements)
    elements = elements.copy()
    flip = vol < 0
    elements[flip, -2:] = elements[flip, -2:][:, ::-1]
    return elements


def build_facet_topology(mesh):
    """Facet records of ``mesh`` (built at construction time)."""
    return mesh.facets


def build_unit_square_mesh(n):
    """Uniform n-by-n triangulation of (0,1)^2.

    Each grid cell is split along its lower-left to upper-right diagonal,
    giving 2*n^2 positively oriented triangles.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return i * (n + 1) + j

    elements = []
    for i in range(n):
        for j in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            elements.append((v00, v10, v11))
            elements.append((v00, v11, v01))
    return SimplicialMesh(2, vertices, np.array(elements))


# Kuhn split of the unit cube: one tetrahedron per permutation of the axes,
# walking from corner 0 to corner 7. Conforming across translated copies.
_KUHN_PERMS = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]


def build_unit_cube_mesh(n):
    """Uniform tetrahedral mesh of (0,1)^3 with 6*n^3 elements."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(xs, xs, xs, indexing="ij")
    vertices = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def vid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    elements = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                corner = np.array([i, j, k])
                for perm in _KUHN_PERMS:
                    path = [corner.copy()]
                    for axis in perm:
                        nxt = path[-1].copy()
                        nxt[axis] += 1
                        path.append(nxt)
                    elements.append(tuple(vid(*p) for p in path))
    return SimplicialMesh(3, vertices, np.array(elements))


def build_lshape_cylinder_mesh(n):
    """Tetrahedral mesh of (0,1)^3 minus the column (0.5,1)x(0.5,1)x(0,1).

    ``n`` must be even so the cut planes x=0.5, y=0.5 align with subcube
    boundaries; elements are removed by a centroid test.
    """
    if n < 1 or n % 2 != 0:
        raise ValueError("n must be a positive even integer")
    cube = build_unit_cube_mesh(n)
    c = cube.element_centroid
    keep = ~((c[:, 0] > 0.5) & (c[:, 1] > 0.5))
    elements = cube.elements[keep]
    used = np.unique(elements)
    remap = np.full(cube.n_vertices, -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return SimplicialMesh(3, cube.vertices[used], remap[elements])


_VTK_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron


def write_vtk(mesh, path, point_data=None, cell_data=None):
    """Write the mesh (and optional fields) as a legacy ASCII VTK file.

    point_data / cell_data: dict name -> array of shape (n,) or (n, dim).
    """
    d = mesh.dim
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\neg-stokes mesh\nASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_vertices} double\n")
        for p in mesh.vertices:
            coords = list(p) + [0.0] * (3 - d)
            f.write(" ".join(f"{c:.16g}" for c in coords) + "\n")
        ne = mesh.n_elements
        f.write(f"CELLS {ne} {ne * (d + 2)}\n")
        for elem in mesh.elements:
            f.write(f"{d + 1} " + " ".join(str(v) for v in elem) + "\n")
        f.write(f"CELL_TYPES {ne}\n")
        for _ in range(ne):
            f.write(f"{_VTK_CELL_TYPE[d]}\n")

        def _write_fields(fields, count):
            for name, arr in fields.items():
                arr = np.asarray(arr, dtype=float)
                if arr.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(f"{v:.16g}\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for row in arr:
                        coords = list(row) + [0.0] * (3 - arr.shape[1])
                        f.write(" ".join(f"{c:.16g}" for c in coords) + "\n")

        if point_data:
            f.write(f"POINT_DATA {mesh.n_vertices}\n")
            _write_fields(point_data, mesh.n_vertices)
        if cell_data:
            f.write(f"CELL_DATA {mesh.n_elements}\n")
            _write_fields(cell_data, mesh.n_elements)
