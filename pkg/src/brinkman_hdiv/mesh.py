"""Conforming triangle meshes with oriented edges and newest-vertex bisection.

Conventions
-----------
* Triangles are stored counterclockwise.  Local edge ``i`` is the edge
  opposite local vertex ``i`` and is traversed from vertex ``i+1`` to ``i+2``.
* Local vertex 0 is the newest vertex; local edge 0 is the refinement edge.
* Each edge has a *left* element (the lower element id) and, for interior
  edges, a *right* element.  Edge vertices are stored in the left element's
  counterclockwise order, the unit tangent points from the first to the
  second vertex and the unit normal ``(tau_y, -tau_x)`` points out of the
  left element (outward on the boundary).
"""
import numpy as np

DIRICHLET = "dirichlet"
WALL = "wall"
INFLOW = "inflow"
OUTFLOW = "outflow"
BOUNDARY_TAGS = (WALL, INFLOW, OUTFLOW, DIRICHLET)


class MeshError(ValueError):
    pass


def _edge_keys(a, b, nv):
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    return lo.astype(np.int64) * nv + hi


class Mesh:
    """Immutable 2D triangle mesh.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, counterclockwise.  Vertex 0 of each
        triangle is opposite its refinement edge.
    boundary_tags : dict mapping a sorted vertex pair to a tag string, or
        None to tag every boundary edge ``"dirichlet"``.
    parent : optional (nt,) int array of parent ids in the mesh this one
        was refined from.
    """

    def __init__(self, vertices, triangles, boundary_tags=None, parent=None):
        self.vertices = np.array(vertices, dtype=float)
        self.triangles = np.array(triangles, dtype=np.int64)
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)
        self._build_geometry()
        self._build_edges()
        self._assign_tags(boundary_tags)
        for arr in (self.vertices, self.triangles):
            arr.setflags(write=False)

    # ------------------------------------------------------------------ setup
    def _build_geometry(self):
        P = self.vertices[self.triangles]
        self.jacobians = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        self.detJ = (self.jacobians[:, 0, 0] * self.jacobians[:, 1, 1]
                     - self.jacobians[:, 0, 1] * self.jacobians[:, 1, 0])
        if np.any(self.detJ <= 0):
            bad = np.flatnonzero(self.detJ <= 0)[:5]
            raise MeshError(f"triangles {bad.tolist()} are degenerate or clockwise")
        self.areas = 0.5 * self.detJ
        self.centroids = P.mean(axis=1)
        lengths = np.stack([np.linalg.norm(P[:, (i + 2) % 3] - P[:, (i + 1) % 3], axis=1)
                            for i in range(3)], axis=1)
        self.diameters = lengths.max(axis=1)

    def _build_edges(self):
        nt = len(self.triangles)
        nv = len(self.vertices)
        T = self.triangles
        a = np.concatenate([T[:, 1], T[:, 2], T[:, 0]])
        b = np.concatenate([T[:, 2], T[:, 0], T[:, 1]])
        elem = np.tile(np.arange(nt), 3)
        loc = np.repeat(np.arange(3), nt)
        keys = _edge_keys(a, b, nv)
        uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            raise MeshError("non-manifold mesh: an edge is shared by more than two triangles")
        ne = len(uniq)
        # first occurrence in element order is the left element
        order = np.lexsort((elem, inv))
        inv_s, elem_s, a_s, b_s = inv[order], elem[order], a[order], b[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = inv_s[1:] != inv_s[:-1]
        edges = np.empty((ne, 2), dtype=np.int64)
        edge_elements = -np.ones((ne, 2), dtype=np.int64)
        edges[inv_s[first]] = np.column_stack([a_s[first], b_s[first]])
        edge_elements[inv_s[first], 0] = elem_s[first]
        second = ~first
        edge_elements[inv_s[second], 1] = elem_s[second]
        # a conforming pair traverses the shared edge in opposite directions
        if np.any(second):
            ia = inv_s[second]
            if np.any(edges[ia, 0] != b_s[second]) or np.any(edges[ia, 1] != a_s[second]):
                raise MeshError("inconsistent orientation between neighbouring triangles")
        tri_edges = np.empty((nt, 3), dtype=np.int64)
        tri_edges[elem, loc] = inv
        self.edges = edges
        self.edge_elements = edge_elements
        self.tri_edges = tri_edges
        self.tri_edge_sign = np.where(edge_elements[tri_edges, 0] == np.arange(nt)[:, None], 1, -1)
        self.tri_edge_sign = self.tri_edge_sign.astype(np.int64)
        self.edge_keys = uniq
        Pa = self.vertices[edges[:, 0]]
        Pb = self.vertices[edges[:, 1]]
        d = Pb - Pa
        self.edge_lengths = np.linalg.norm(d, axis=1)
        self.tangents = d / self.edge_lengths[:, None]
        self.normals = np.column_stack([self.tangents[:, 1], -self.tangents[:, 0]])
        self.midpoints = 0.5 * (Pa + Pb)
        self.boundary_edges = np.flatnonzero(edge_elements[:, 1] < 0)
        self.interior_edges = np.flatnonzero(edge_elements[:, 1] >= 0)

    def _assign_tags(self, boundary_tags):
        tags = np.full(len(self.edges), None, dtype=object)
        if boundary_tags is None:
            tags[self.boundary_edges] = DIRICHLET
        else:
            for e in self.boundary_edges:
                key = tuple(sorted(self.edges[e].tolist()))
                tags[e] = boundary_tags.get(key, DIRICHLET)
        self.edge_tags = tags

    # ------------------------------------------------------------- accessors
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def boundary_tag_map(self):
        """Return ``{(v0, v1): tag}`` for all boundary edges (sorted pairs)."""
        return {tuple(sorted(self.edges[e].tolist())): self.edge_tags[e]
                for e in self.boundary_edges}

    def edges_with_tag(self, *tags):
        sel = np.isin(self.edge_tags[self.boundary_edges].astype(str), list(tags))
        return self.boundary_edges[sel]

    def with_tags(self, tagger):
        """Return a copy whose boundary edges are retagged by ``tagger(midpoint)``."""
        tags = {tuple(sorted(self.edges[e].tolist())): tagger(self.midpoints[e])
                for e in self.boundary_edges}
        for tag in set(tags.values()):
            if tag not in BOUNDARY_TAGS:
                raise MeshError(f"unknown boundary tag {tag!r}")
        return Mesh(self.vertices, self.triangles, tags, self.parent)

    def edge_geometry(self, e):
        """Return ``(normal, tangent, midpoint, length)`` of edge ``e``."""
        if not 0 <= e < self.n_edges:
            raise IndexError(f"edge id {e} out of range")
        return self.normals[e], self.tangents[e], self.midpoints[e], self.edge_lengths[e]

    def patch(self, k):
        """Element ``k`` together with its edge neighbours."""
        if not 0 <= k < self.n_triangles:
            raise IndexError(f"triangle id {k} out of range")
        ee = self.edge_elements[self.tri_edges[k]]
        return set(int(i) for i in ee.ravel() if i >= 0)

    def neighbours(self):
        """(nt, 3) array of edge-neighbour ids, -1 across the boundary."""
        ee = self.edge_elements[self.tri_edges]
        own = np.arange(self.n_triangles)[:, None]
        return np.where(ee[..., 0] == own, ee[..., 1], ee[..., 0])

    def min_angle(self):
        P = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            u = P[:, (i + 1) % 3] - P[:, i]
            v = P[:, (i + 2) % 3] - P[:, i]
            c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            angles.append(np.arccos(np.clip(c, -1, 1)))
        return float(np.min(angles))

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def locate(self, points):
        """Return the id of a triangle containing each point (-1 if none)."""
        from scipy.spatial import cKDTree

        points = np.atleast_2d(np.asarray(points, dtype=float))
        tree = cKDTree(self.centroids)
        k = min(16, self.n_triangles)
        _, cand = tree.query(points, k=k)
        cand = cand.reshape(len(points), k)
        out = -np.ones(len(points), dtype=np.int64)
        for j in range(k):
            todo = out < 0
            if not np.any(todo):
                break
            c = cand[todo, j]
            lam = self.reference_coords(c, points[todo])
            inside = (lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12) & (lam.sum(axis=1) <= 1 + 1e-12)
            idx = np.flatnonzero(todo)[inside]
            out[idx] = c[inside]
        missing = np.flatnonzero(out < 0)
        for i in missing:  # rare fallback for points far from centroids
            lam = self.reference_coords(np.arange(self.n_triangles),
                                        np.repeat(points[i:i + 1], self.n_triangles, axis=0))
            inside = np.flatnonzero((lam[:, 0] >= -1e-12) & (lam[:, 1] >= -1e-12)
                                    & (lam.sum(axis=1) <= 1 + 1e-12))
            if len(inside):
                out[i] = inside[0]
        return out

    def reference_coords(self, elems, points):
        """Map physical ``points`` (..., 2) in elements ``elems`` to the reference triangle."""
        v0 = self.vertices[self.triangles[elems, 0]]
        Jinv = np.linalg.inv(self.jacobians[elems])
        return np.einsum("...ij,...j->...i", Jinv, points - v0)

    def check(self):
        """Raise :class:`MeshError` if a structural invariant is violated."""
        if np.any(self.detJ <= 0):
            raise MeshError("non-positive triangle area")
        # hanging nodes show up as a vertex lying in the interior of an edge
        # that has only one neighbour but is not on the outer boundary hull
        counts = np.bincount(np.concatenate([self.edge_elements[:, 0],
                                             self.edge_elements[self.interior_edges, 1]]),
                             minlength=self.n_triangles)
        if np.any(counts != 3):
            raise MeshError("a triangle does not own exactly three edges")
        bverts = np.unique(self.edges[self.boundary_edges])
        for e in self.boundary_edges:
            a, b = self.vertices[self.edges[e]]
            d = b - a
            rel = self.vertices[bverts] - a
            s = rel @ d / (d @ d)
            dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / np.linalg.norm(d)
            if np.any((s > 1e-9) & (s < 1 - 1e-9) & (dist < 1e-12 * np.linalg.norm(d))):
                raise MeshError(f"hanging node on edge {e}")
        return True

    # ------------------------------------------------------------------- I/O
    def export(self, path):
        """Write vertices, triangles and boundary tags as plain text."""
        with open(path, "w") as fh:
            fh.write(f"# vertices {self.n_vertices}\n")
            for i, (x, y) in enumerate(self.vertices):
                fh.write(f"{i} {x:.17g} {y:.17g}\n")
            fh.write(f"# triangles {self.n_triangles}\n")
            for i, (a, b, c) in enumerate(self.triangles):
                fh.write(f"{i} {a} {b} {c}\n")
            fh.write(f"# boundary {len(self.boundary_edges)}\n")
            for e in self.boundary_edges:
                a, b = self.edges[e]
                fh.write(f"{a} {b} {self.edge_tags[e]}\n")

    @classmethod
    def load(cls, path):
        sections = {}
        current = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    current = line.split()[1]
                    sections[current] = []
                else:
                    sections[current].append(line.split())
        verts = np.array([[float(r[1]), float(r[2])] for r in sections["vertices"]])
        tris = np.array([[int(r[1]), int(r[2]), int(r[3])] for r in sections["triangles"]])
        tags = {tuple(sorted((int(r[0]), int(r[1])))): r[2] for r in sections.get("boundary", [])}
        return cls(verts, tris, tags)


def build_rect_mesh(nx, ny, rect=((0.0, 0.0), (1.0, 1.0))):
    """Structured mesh of ``2 nx ny`` right triangles on a rectangle.

    Each cell is split along its (lower-left, upper-right) diagonal; the
    diagonal is the refinement edge of both halves.
    """
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive integers")
    (x0, y0), (x1, y1) = rect
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate rectangle")
    return build_tensor_mesh(np.linspace(x0, x1, int(nx) + 1), np.linspace(y0, y1, int(ny) + 1))


def build_tensor_mesh(x, y):
    """Triangulate the tensor grid with strictly increasing breakpoints ``x``, ``y``.

    Cells are split as in :func:`build_rect_mesh`; graded grids let mesh
    lines follow material interfaces.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or len(x) < 2 or len(y) < 2:
        raise MeshError("need at least two breakpoints per direction")
    if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
        raise MeshError("breakpoints must increase strictly")
    nx, ny = len(x) - 1, len(y) - 1
    X, Y = np.meshgrid(x, y)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    lower = np.column_stack([v10, v11, v00])  # right angle at v10 on uniform grids
    upper = np.column_stack([v01, v00, v11])  # right angle at v01
    tris = np.empty((2 * len(v00), 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper
    return Mesh(verts, tris)


def longest_edge_labelling(vertices, triangles):
    """Rotate each triangle so that its longest edge is the refinement edge."""
    P = np.asarray(vertices)[triangles]
    lengths = np.stack([np.linalg.norm(P[:, (i + 2) % 3] - P[:, (i + 1) % 3], axis=1)
                        for i in range(3)], axis=1)
    k = lengths.argmax(axis=1)
    idx = (k[:, None] + np.arange(3)[None, :]) % 3
    return np.take_along_axis(np.asarray(triangles), idx, axis=1)


def refine(mesh, marked):
    """Newest-vertex bisection of the marked triangles with conforming closure.

    Returns a new :class:`Mesh` whose ``parent`` array maps every child to
    its ancestor in ``mesh``.  Boundary tags are inherited by edge halves.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    nt, nv = mesh.n_triangles, mesh.n_vertices
    if len(marked) and (marked.min() < 0 or marked.max() >= nt):
        raise IndexError("marked triangle id out of range")
    if len(marked) == 0:
        return Mesh(mesh.vertices, mesh.triangles, mesh.boundary_tag_map(), np.arange(nt))

    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[mesh.tri_edges[marked, 0]] = True
    while True:
        te = edge_marked[mesh.tri_edges]
        need = te.any(axis=1) & ~te[:, 0]
        if not np.any(need):
            break
        edge_marked[mesh.tri_edges[need, 0]] = True

    split = np.flatnonzero(edge_marked)
    new_ids = nv + np.arange(len(split))
    verts = np.vstack([mesh.vertices, mesh.midpoints[split]])
    split_keys = mesh.edge_keys[split]  # sorted ascending, like edge_keys

    def midpoint_of(a, b):
        keys = _edge_keys(a, b, nv)
        pos = np.searchsorted(split_keys, keys)
        pos = np.minimum(pos, len(split_keys) - 1)
        hit = (split_keys[pos] == keys) & (a < nv) & (b < nv)
        return np.where(hit, new_ids[pos], -1)

    tris = mesh.triangles.copy()
    parent = np.arange(nt)
    done_t, done_p = [], []
    while len(tris):
        m = midpoint_of(tris[:, 1], tris[:, 2])
        keep = m < 0
        done_t.append(tris[keep])
        done_p.append(parent[keep])
        t, mm, par = tris[~keep], m[~keep], parent[~keep]
        c1 = np.column_stack([mm, t[:, 0], t[:, 1]])
        c2 = np.column_stack([mm, t[:, 2], t[:, 0]])
        tris = np.vstack([c1, c2])
        parent = np.concatenate([par, par])
    triangles = np.vstack(done_t)
    parent = np.concatenate(done_p)
    order = np.argsort(parent, kind="stable")
    triangles, parent = triangles[order], parent[order]

    tags = {}
    for e in mesh.boundary_edges:
        a, b = (int(v) for v in mesh.edges[e])
        tag = mesh.edge_tags[e]
        if edge_marked[e]:
            mid = int(new_ids[np.searchsorted(split, e)])
            tags[tuple(sorted((a, mid)))] = tag
            tags[tuple(sorted((mid, b)))] = tag
        else:
            tags[tuple(sorted((a, b)))] = tag
    return Mesh(verts, triangles, tags, parent)


def uniform_refine(mesh, times=1):
    """Bisect every triangle twice per step (halves ``h`` on structured meshes)."""
    for _ in range(times):
        mesh = refine(mesh, np.arange(mesh.n_triangles))
        mesh = refine(mesh, np.arange(mesh.n_triangles))
    return mesh


def inherit(values, child_mesh):
    """Map per-element ``values`` on the parent mesh to ``child_mesh`` via genealogy."""
    if child_mesh.parent is None:
        raise MeshError("mesh carries no genealogy")
    return np.asarray(values)[child_mesh.parent]
