"""
Conforming triangle meshes refined by newest vertex bisection (NVB).

Every element is stored as a positively oriented vertex triple ``(a, b, c)``
whose local vertex 2 is the *newest vertex*; the reference edge, i.e. the
edge bisected next, is therefore always the edge ``(a, b)``.  Bisecting
``(a, b, c)`` at the midpoint ``m`` of ``(a, b)`` gives the two children
``(c, a, m)`` and ``(b, c, m)``, both again positively oriented and with
``m`` as their newest vertex.

Vertex indices are stable under refinement: new vertices (edge midpoints)
are appended after the parent's vertices.  This makes prolongation of P1
functions a matter of appending edge averages.

Examples
--------

>>> from afem.mesh import make_initial_mesh, refine_nvb
>>> mesh = make_initial_mesh("unit_square")
>>> fine, rel = refine_nvb(mesh, [0, 1])
>>> fine.num_elements
4
"""
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InputError

__all__ = [
    "Mesh",
    "RefinementRelation",
    "make_initial_mesh",
    "refine_nvb",
    "refine_uniform",
    "overlay",
    "check_conforming",
    "min_angle",
    "write_mesh",
    "read_mesh",
    "GEOMETRIES",
]

GEOMETRIES = ("l_shape", "z_shape", "unit_square")

# Local edges ordered so that local edge 0 is the reference edge.
LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])

_generation_counter = itertools.count()


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D conforming triangulation with NVB state.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array
        Vertex triples; local vertex 2 is the newest vertex.
    boundary_edges : (nb, 2) int array
        Dirichlet boundary edges, covering the whole boundary.
    level : (ne,) int array
        Number of bisections separating each element from its initial ancestor.
    root : (ne,) int array
        Index of the initial ancestor element.
    path : (ne,) object array of int
        Binary path from the initial ancestor (first child 0, second child 1).
    generation_id : int
        Unique, monotonically increasing mesh identifier.
    hierarchy_id : int
        Generation id of the initial mesh this mesh descends from.
    """

    vertices: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    level: np.ndarray
    root: np.ndarray
    path: np.ndarray
    generation_id: int
    hierarchy_id: int

    #: local index of the newest vertex (the reference edge lies opposite)
    reference_local = 2

    @classmethod
    def _create(cls, vertices, elements, boundary_edges, level, root, path,
                hierarchy_id=None):
        gen = next(_generation_counter)
        return cls(
            vertices=_readonly(np.asarray(vertices, dtype=float)),
            elements=_readonly(np.asarray(elements, dtype=np.int64)),
            boundary_edges=_readonly(np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)),
            level=_readonly(np.asarray(level, dtype=np.int64)),
            root=_readonly(np.asarray(root, dtype=np.int64)),
            path=_readonly(np.asarray(path, dtype=object)),
            generation_id=gen,
            hierarchy_id=gen if hierarchy_id is None else hierarchy_id,
        )

    @classmethod
    def from_triangles(cls, vertices, triangles, boundary_edges=None, level=None):
        """Build an initial mesh from raw triangles.

        Orientation is fixed to counter-clockwise and the reference edge of each
        element is set to its longest edge (ties broken by the lowest vertex
        indices).  If ``boundary_edges`` is omitted, all edges belonging to a
        single element are taken as the (Dirichlet) boundary.
        """
        vertices = np.asarray(vertices, dtype=float)
        tri = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if tri.size and (tri.min() < 0 or tri.max() >= len(vertices)):
            raise InputError("triangle references a non-existent vertex")
        p = vertices[tri]
        det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
               - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
        if np.any(det == 0):
            raise InputError("degenerate triangle in input")
        neg = det < 0
        tri[neg] = tri[neg][:, [0, 2, 1]]

        out = np.empty_like(tri)
        for i, t in enumerate(tri):
            best = None
            for j in range(3):
                e = (t[j], t[(j + 1) % 3])
                length = np.hypot(*(vertices[e[0]] - vertices[e[1]]))
                key = (-round(length, 12), tuple(sorted(e)))
                if best is None or key < best[0]:
                    best = (key, j)
            j = best[1]
            out[i] = [t[j], t[(j + 1) % 3], t[(j + 2) % 3]]

        if boundary_edges is None:
            boundary_edges = _single_edges(out)
        n = len(out)
        lev = np.zeros(n, dtype=np.int64) if level is None else level
        path = np.array([0] * n, dtype=object)
        mesh = cls._create(vertices, out, boundary_edges, lev, np.arange(n), path)
        check_conforming(mesh)
        return mesh

    # ------------------------------------------------------------------
    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_elements(self):
        return len(self.elements)

    def __len__(self):
        return len(self.elements)

    def __repr__(self):
        return (f"Mesh(generation={self.generation_id}, vertices={self.num_vertices}, "
                f"elements={self.num_elements})")

    @cached_property
    def areas(self):
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @cached_property
    def grad_basis(self):
        """(ne, 3, 2) gradients of the barycentric coordinates per element."""
        p = self.vertices[self.elements]
        area2 = 2.0 * self.areas
        g = np.empty((self.num_elements, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            # grad lambda_i = rot(x_k - x_j) / (2|T|), rot(x, y) = (-y, x)
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        return _readonly(g)

    @cached_property
    def _edge_data(self):
        nv = self.num_vertices
        loc = self.elements[:, LOCAL_EDGES]                  # (ne, 3, 2)
        lo = np.minimum(loc[..., 0], loc[..., 1]).ravel()
        hi = np.maximum(loc[..., 0], loc[..., 1]).ravel()
        codes = lo * nv + hi
        uniq, inv, counts = np.unique(codes, return_inverse=True, return_counts=True)
        edges = np.column_stack([uniq // nv, uniq % nv])
        el2ed = inv.reshape(-1, 3)
        # two owners per edge; -1 where the edge lies on the boundary
        order = np.argsort(inv, kind="stable")
        owner = np.repeat(np.arange(self.num_elements), 3)[order]
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        ed2el = np.full((len(uniq), 2), -1, dtype=np.int64)
        ed2el[:, 0] = owner[start]
        two = counts >= 2
        ed2el[two, 1] = owner[start[two] + 1]
        return uniq, edges, el2ed, ed2el, counts

    @property
    def edges(self):
        """(nedges, 2) sorted vertex pairs of all edges."""
        return self._edge_data[1]

    @property
    def element_edges(self):
        """(ne, 3) edge index of local edges (0,1), (1,2), (2,0)."""
        return self._edge_data[2]

    @property
    def edge_elements(self):
        """(nedges, 2) adjacent elements; second entry is -1 on the boundary."""
        return self._edge_data[3]

    def edge_index(self, pairs):
        """Edge indices of the given vertex pairs (order within pair irrelevant)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        nv = self.num_vertices
        codes = np.minimum(pairs[:, 0], pairs[:, 1]) * nv + np.maximum(pairs[:, 0], pairs[:, 1])
        uniq = self._edge_data[0]
        idx = np.searchsorted(uniq, codes)
        idx = np.minimum(idx, len(uniq) - 1)
        if np.any(uniq[idx] != codes):
            raise InputError("vertex pair is not an edge of the mesh")
        return idx

    @cached_property
    def boundary_vertices(self):
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return _readonly(mask)

    @cached_property
    def free_dofs(self):
        """Indices of interior (non-Dirichlet) vertices."""
        return _readonly(np.flatnonzero(~self.boundary_vertices))

    @property
    def num_free_dofs(self):
        return len(self.free_dofs)

    @cached_property
    def diameters(self):
        p = self.vertices[self.elements]
        lengths = np.linalg.norm(p[:, LOCAL_EDGES[:, 1]] - p[:, LOCAL_EDGES[:, 0]], axis=2)
        return _readonly(lengths.max(axis=1))

    def element_keys(self):
        """Genealogy keys ``(root, level, path)`` identifying elements across meshes."""
        return list(zip(self.root.tolist(), self.level.tolist(), self.path.tolist()))


def _single_edges(elements):
    loc = elements[:, LOCAL_EDGES].reshape(-1, 2)
    s = np.sort(loc, axis=1)
    uniq, inv, counts = np.unique(s, axis=0, return_inverse=True, return_counts=True)
    inv = np.asarray(inv).ravel()
    once = counts[inv] == 1
    return loc[once]


def check_conforming(mesh):
    """Raise :class:`InputError` unless ``mesh`` is a valid conforming mesh.

    Checks positive areas, that every edge has one or two neighbours, and that
    the single-neighbour edges are exactly the tagged boundary edges.
    """
    if mesh.num_elements == 0:
        raise InputError("mesh has no elements")
    if np.any(mesh.areas <= 0):
        raise InputError("mesh has non-positively oriented or degenerate elements")
    counts = mesh._edge_data[4]
    if np.any(counts > 2):
        raise InputError("edge shared by more than two elements")
    single = np.flatnonzero(counts == 1)
    try:
        bidx = mesh.edge_index(mesh.boundary_edges)
    except InputError:
        raise InputError("boundary edge is not an edge of the mesh") from None
    if len(np.unique(bidx)) != len(bidx) or not np.array_equal(np.sort(bidx), single):
        raise InputError("mesh is not conforming (hanging nodes or untagged boundary)")


def min_angle(mesh):
    """Smallest interior angle (radians) over all elements."""
    p = mesh.vertices[mesh.elements]
    best = np.inf
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        w = p[:, (i + 2) % 3] - p[:, i]
        cosang = np.einsum("ij,ij->i", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        best = min(best, np.arccos(np.clip(cosang, -1.0, 1.0)).min())
    return float(best)


# ----------------------------------------------------------------------
# refinement


@dataclass(frozen=True, eq=False)
class RefinementRelation:
    """Parent/child relation between a coarse mesh and its NVB refinement.

    Attributes
    ----------
    coarse_generation, fine_generation : int
    parent_of : (ne_fine,) int array
        Coarse parent of every fine element.
    unchanged : (ne_fine,) bool array
        True for fine elements that are also coarse elements (their own parent).
    refined : (ne_coarse,) bool array
        True for coarse elements that were split.
    new_vertex_edges : (n_new, 2) int array
        Coarse edge (vertex pair) whose midpoint each appended vertex is.
    num_coarse_vertices : int
    """

    coarse_generation: int
    fine_generation: int
    parent_of: np.ndarray
    unchanged: np.ndarray
    refined: np.ndarray
    new_vertex_edges: np.ndarray
    num_coarse_vertices: int

    @property
    def num_coarse(self):
        return len(self.refined)

    @property
    def num_fine(self):
        return len(self.parent_of)

    @cached_property
    def children_counts(self):
        """Number of children of each coarse element (1 if unchanged)."""
        return np.bincount(self.parent_of, minlength=self.num_coarse)

    def children_of(self, parent):
        return np.flatnonzero(self.parent_of == parent)

    @cached_property
    def unchanged_coarse(self):
        """Coarse ids of elements in both meshes (T_H cap T_h)."""
        return np.flatnonzero(~self.refined)

    @cached_property
    def coarse_to_fine_unchanged(self):
        """Map from coarse id to fine id for unchanged elements (-1 otherwise)."""
        out = np.full(self.num_coarse, -1, dtype=np.int64)
        f = np.flatnonzero(self.unchanged)
        out[self.parent_of[f]] = f
        return out

    def splitting_bounds(self, c_son=4):
        """Return ``(lower, #T_h, upper)`` of the splitting property."""
        n_ref = int(self.refined.sum())
        n_keep = self.num_coarse - n_ref
        return n_ref + self.num_coarse, self.num_fine, c_son * n_ref + n_keep


def _closure(mesh, edge_marked):
    """Mark reference edges until every element with a marked edge has its
    reference edge marked."""
    el2ed = mesh.element_edges
    while True:
        need = edge_marked[el2ed].any(axis=1) & ~edge_marked[el2ed[:, 0]]
        if not need.any():
            return edge_marked
        edge_marked[el2ed[need, 0]] = True


def _bisect_marked_edges(mesh, edge_marked):
    el = mesh.elements
    el2ed = mesh.element_edges
    edges = mesh.edges
    nv = mesh.num_vertices

    new_idx = np.full(len(edges), -1, dtype=np.int64)
    me = np.flatnonzero(edge_marked)
    new_idx[me] = nv + np.arange(len(me))
    new_edges = edges[me]
    new_coords = 0.5 * (mesh.vertices[new_edges[:, 0]] + mesh.vertices[new_edges[:, 1]])
    vertices = np.vstack([mesh.vertices, new_coords])

    r = edge_marked[el2ed[:, 0]]
    m1 = edge_marked[el2ed[:, 1]]
    m2 = edge_marked[el2ed[:, 2]]
    a, b, c = el[:, 0], el[:, 1], el[:, 2]
    m = new_idx[el2ed[:, 0]]
    p = new_idx[el2ed[:, 1]]   # midpoint of (b, c)
    q = new_idx[el2ed[:, 2]]   # midpoint of (c, a)
    lvl, path = mesh.level, mesh.path

    blocks = []  # (element ids, triples, level increment, path multiplier, path offset)
    keep = np.flatnonzero(~r)
    blocks.append((keep, el[keep], 0, 1, 0))
    i = np.flatnonzero(r & ~m2)
    blocks.append((i, np.column_stack([c[i], a[i], m[i]]), 1, 2, 0))
    i = np.flatnonzero(r & m2)
    blocks.append((i, np.column_stack([m[i], c[i], q[i]]), 2, 4, 0))
    blocks.append((i, np.column_stack([a[i], m[i], q[i]]), 2, 4, 1))
    i = np.flatnonzero(r & ~m1)
    blocks.append((i, np.column_stack([b[i], c[i], m[i]]), 1, 2, 1))
    i = np.flatnonzero(r & m1)
    blocks.append((i, np.column_stack([m[i], b[i], p[i]]), 2, 4, 2))
    blocks.append((i, np.column_stack([c[i], m[i], p[i]]), 2, 4, 3))

    parent = np.concatenate([blk[0] for blk in blocks])
    elements = np.vstack([blk[1].reshape(-1, 3) for blk in blocks])
    level = np.concatenate([lvl[blk[0]] + blk[2] for blk in blocks])
    paths = np.concatenate([path[blk[0]] * blk[3] + blk[4] for blk in blocks]) \
        if len(parent) else np.array([], dtype=object)
    roots = mesh.root[parent]

    # split marked boundary edges
    bd = mesh.boundary_edges
    bidx = mesh.edge_index(bd)
    split = edge_marked[bidx]
    mid = new_idx[bidx[split]]
    boundary = np.vstack([
        bd[~split],
        np.column_stack([bd[split, 0], mid]),
        np.column_stack([mid, bd[split, 1]]),
    ])

    fine = Mesh._create(vertices, elements, boundary, level, roots,
                        np.asarray(paths, dtype=object), hierarchy_id=mesh.hierarchy_id)
    unchanged = np.zeros(len(parent), dtype=bool)
    unchanged[: len(keep)] = True
    rel = RefinementRelation(
        coarse_generation=mesh.generation_id,
        fine_generation=fine.generation_id,
        parent_of=_readonly(parent),
        unchanged=_readonly(unchanged),
        refined=_readonly(r.copy()),
        new_vertex_edges=_readonly(new_edges),
        num_coarse_vertices=nv,
    )
    return fine, rel


def refine_nvb(mesh, marked):
    """Coarsest conforming NVB refinement in which all ``marked`` elements are split.

    Parameters
    ----------
    mesh : Mesh
    marked : iterable of int
        Element ids of ``mesh``.

    Returns
    -------
    fine : Mesh
    relation : RefinementRelation
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.num_elements):
        raise InputError(f"marked element id out of range [0, {mesh.num_elements})")
    if marked.size == 0:
        ne = mesh.num_elements
        rel = RefinementRelation(
            coarse_generation=mesh.generation_id,
            fine_generation=mesh.generation_id,
            parent_of=_readonly(np.arange(ne)),
            unchanged=_readonly(np.ones(ne, dtype=bool)),
            refined=_readonly(np.zeros(ne, dtype=bool)),
            new_vertex_edges=_readonly(np.zeros((0, 2), dtype=np.int64)),
            num_coarse_vertices=mesh.num_vertices,
        )
        return mesh, rel
    edge_marked = np.zeros(len(mesh.edges), dtype=bool)
    edge_marked[mesh.element_edges[marked, 0]] = True
    _closure(mesh, edge_marked)
    return _bisect_marked_edges(mesh, edge_marked)


def refine_uniform(mesh):
    """Split every element into four children (three bisections per element)."""
    return _bisect_marked_edges(mesh, np.ones(len(mesh.edges), dtype=bool))


def overlay(mesh_a, mesh_b, common_ancestor):
    """Coarsest common refinement of two NVB refinements of ``common_ancestor``.

    The result consists of the leaves of the union of both refinement forests.
    """
    hid = common_ancestor.hierarchy_id
    if mesh_a.hierarchy_id != hid or mesh_b.hierarchy_id != hid:
        raise InputError("meshes belong to different refinement hierarchies")
    keys_a = mesh_a.element_keys()
    keys_b = mesh_b.element_keys()
    anc_keys = set(common_ancestor.element_keys())
    for keys in (keys_a, keys_b):
        for r, lev, p in keys:
            if not any((r, j, p >> (lev - j)) in anc_keys for j in range(lev + 1)):
                raise InputError("mesh is not a refinement of the common ancestor")

    def strict_ancestors(keys):
        out = set()
        for r, lev, p in keys:
            for j in range(lev):
                out.add((r, j, p >> (lev - j)))
        return out

    anc_a = strict_ancestors(keys_a)
    anc_b = strict_ancestors(keys_b)
    set_a = set(keys_a)

    coord_index = {}
    vertices = []

    def vid(xy):
        k = (float(xy[0]), float(xy[1]))
        if k not in coord_index:
            coord_index[k] = len(vertices)
            vertices.append(k)
        return coord_index[k]

    elems, levels, roots, paths = [], [], [], []
    for second, (mesh, keys, drop) in enumerate(((mesh_a, keys_a, anc_b), (mesh_b, keys_b, anc_a))):
        for i, key in enumerate(keys):
            if key in drop or (second and key in set_a):
                continue
            elems.append([vid(mesh.vertices[v]) for v in mesh.elements[i]])
            roots.append(key[0])
            levels.append(key[1])
            paths.append(key[2])
    elems = np.array(elems, dtype=np.int64)
    boundary = _single_edges(elems)
    out = Mesh._create(np.array(vertices), elems, boundary, levels, roots,
                       np.array(paths, dtype=object), hierarchy_id=hid)
    return out


# ----------------------------------------------------------------------
# initial meshes


def make_initial_mesh(geometry):
    """Coarse initial mesh of ``"l_shape"``, ``"z_shape"`` or ``"unit_square"``.

    * ``l_shape``: (-1, 1)^2 minus [0, 1] x [-1, 0], reentrant angle 3pi/2.
    * ``z_shape``: (-1, 1)^2 minus conv{(0,0), (-1,0), (-1,-1)}, reentrant angle 7pi/4.
    * ``unit_square``: (0, 1)^2 split along one diagonal.

    The L and Z meshes are fans of half-squares around the reentrant corner.
    """
    if geometry == "unit_square":
        v = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
        t = [(0, 1, 2), (0, 2, 3)]
        return Mesh.from_triangles(v, t)
    if geometry == "l_shape":
        ring = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1)]
    elif geometry == "z_shape":
        ring = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)]
    else:
        raise InputError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")
    v = [(0.0, 0.0)] + [(float(x), float(y)) for x, y in ring]
    t = [(0, i, i + 1) for i in range(1, len(ring))]
    return Mesh.from_triangles(v, t)


# ----------------------------------------------------------------------
# text format


def write_mesh(mesh, fh):
    """Write ``mesh`` in the ``afem-mesh v1`` text format to a path or file object."""
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh, "w") as f:
            return write_mesh(mesh, f)
    fh.write("afem-mesh v1\n")
    fh.write(f"vertices {mesh.num_vertices}\n")
    for x, y in mesh.vertices.tolist():
        fh.write(f"{x!r} {y!r}\n")
    fh.write(f"elements {mesh.num_elements}\n")
    for (i, j, k), lev in zip(mesh.elements.tolist(), mesh.level.tolist()):
        fh.write(f"{i} {j} {k} {Mesh.reference_local} {lev}\n")
    fh.write(f"boundary {len(mesh.boundary_edges)}\n")
    for i, j in mesh.boundary_edges.tolist():
        fh.write(f"{i} {j}\n")


def read_mesh(fh):
    """Read a mesh written by :func:`write_mesh`.

    The result starts a new hierarchy; element levels are preserved, but the
    genealogy (parents) is not stored in the format.
    """
    if isinstance(fh, (str, bytes)) or hasattr(fh, "__fspath__"):
        with open(fh) as f:
            return read_mesh(f)
    lines = [ln.split() for ln in fh.read().splitlines() if ln.strip()]
    try:
        if lines[0] != ["afem-mesh", "v1"]:
            raise InputError("missing 'afem-mesh v1' header")
        pos = 1

        def section(name):
            nonlocal pos
            if lines[pos][0] != name:
                raise InputError(f"expected section {name!r}")
            n = int(lines[pos][1])
            rows = lines[pos + 1: pos + 1 + n]
            if len(rows) != n:
                raise InputError(f"section {name!r} truncated")
            pos += n + 1
            return rows

        vertices = np.array([[float(x) for x in r] for r in section("vertices")]).reshape(-1, 2)
        rows = section("elements")
        boundary = np.array([[int(x) for x in r] for r in section("boundary")],
                            dtype=np.int64).reshape(-1, 2)
    except (IndexError, ValueError) as exc:
        raise InputError(f"malformed mesh file: {exc}") from None
    elements = np.empty((len(rows), 3), dtype=np.int64)
    level = np.empty(len(rows), dtype=np.int64)
    for n, r in enumerate(rows):
        tri = [int(r[0]), int(r[1]), int(r[2])]
        ref = int(r[3])
        if ref not in (0, 1, 2):
            raise InputError("ref_local_idx must be 0, 1 or 2")
        # rotate so that the newest vertex sits at local index 2
        s = (ref + 1) % 3
        elements[n] = [tri[s], tri[(s + 1) % 3], tri[(s + 2) % 3]]
        level[n] = int(r[4])
    n = len(elements)
    mesh = Mesh._create(vertices, elements, boundary, level, np.arange(n),
                        np.array([0] * n, dtype=object))
    check_conforming(mesh)
    return mesh
