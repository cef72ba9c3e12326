"""Matching triangular meshes with boundary labels and newest-vertex bisection.

Triangles are stored counter-clockwise with the newest vertex first, so
the refinement edge of every triangle is its local edge 0 (opposite local
vertex 0).  Local edge ``l`` always means the edge opposite local vertex
``l``.  Faces are stored with sorted vertex pairs; side 0 of a face is the
owning triangle with the lower id and the face normal is the outward
normal of that triangle.
"""
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, InputError, MeshSpecificationError, MeshStructureError

INTERIOR, DIRICHLET, NEUMANN, ROBIN = 0, 1, 2, 3
LABEL_CHAR = {DIRICHLET: "D", NEUMANN: "N", ROBIN: "R"}
_LABEL_ALIASES = {
    "D": DIRICHLET, "DIRICHLET": DIRICHLET,
    "N": NEUMANN, "NEUMANN": NEUMANN,
    "R": ROBIN, "ROBIN": ROBIN,
}
GEOM_TOL = 1e-12
_KEY = np.int64(1) << 31


def parse_label(label):
    if isinstance(label, (int, np.integer)) and int(label) in LABEL_CHAR:
        return int(label)
    try:
        return _LABEL_ALIASES[str(label).strip().upper()]
    except KeyError:
        raise MeshSpecificationError(f"unknown boundary label {label!r}") from None


def _edge_key(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    return np.minimum(a, b) * _KEY + np.maximum(a, b)


def _split_key(key):
    return int(key // _KEY), int(key % _KEY)


def _freeze(*arrays):
    for a in arrays:
        if isinstance(a, np.ndarray):
            a.setflags(write=False)


class Mesh:
    """Immutable matching triangulation.

    Attributes are numpy arrays: ``vertices`` (N, 2), ``triangles`` (T, 3),
    ``region`` (T,), ``edges`` (E, 2), ``edge_tris`` (E, 2) with -1 for a
    missing side, ``edge_local`` (E, 2), ``tri_edges`` (T, 3),
    ``face_labels`` (E,), ``face_patch`` (E,), ``normals`` (E, 2), and the
    geometric scalars ``area``, ``h_K``, ``rho_K``, ``h_F``.  ``parent``
    maps each triangle to its ancestor in the mesh it was refined from and
    ``boundary_parent`` does the same for boundary faces (-1 elsewhere).
    """

    def __init__(self, vertices, triangles, region, bdict, parent=None, boundary_parent=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        self.region = np.ascontiguousarray(region, dtype=np.int64)
        self._connectivity()
        self._labels(bdict)
        self._geometry()
        self.parent = None if parent is None else np.asarray(parent, dtype=np.int64)
        self.boundary_parent = self._boundary_origin(bdict) if boundary_parent is None else boundary_parent
        _freeze(self.vertices, self.triangles, self.region, self.parent, self.boundary_parent)

    # -- construction helpers -------------------------------------------------
    def _connectivity(self):
        tris = self.triangles
        nt = len(tris)
        # local edge l is opposite local vertex l
        a = tris[:, [1, 2, 0]]
        b = tris[:, [2, 0, 1]]
        keys = _edge_key(a, b).ravel()
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if np.any(counts > 2):
            bad = _split_key(uniq[np.argmax(counts > 2)])
            raise MeshStructureError(f"edge {bad} is shared by more than two triangles")
        ne = len(uniq)
        tri_edges = inverse.reshape(nt, 3)
        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        edge_local = -np.ones((ne, 2), dtype=np.int64)
        owner = np.repeat(np.arange(nt), 3)
        local = np.tile(np.arange(3), nt)
        order = np.lexsort((owner, inverse))
        inv_s, own_s, loc_s = inverse[order], owner[order], local[order]
        first = np.ones(len(inv_s), dtype=bool)
        first[1:] = inv_s[1:] != inv_s[:-1]
        edge_tris[inv_s[first], 0] = own_s[first]
        edge_local[inv_s[first], 0] = loc_s[first]
        edge_tris[inv_s[~first], 1] = own_s[~first]
        edge_local[inv_s[~first], 1] = loc_s[~first]
        self.edges = np.column_stack([uniq // _KEY, uniq % _KEY]).astype(np.int64)
        self.edge_keys = uniq
        self.edge_tris = edge_tris
        self.edge_local = edge_local
        self.tri_edges = tri_edges
        self.is_boundary = edge_tris[:, 1] < 0
        _freeze(self.edges, self.edge_keys, edge_tris, edge_local, tri_edges, self.is_boundary)
        self._check_matching()

    def _check_matching(self):
        v = self.vertices
        bed = self.edges[self.is_boundary]
        if len(bed) == 0:
            return
        pa, pb = v[bed[:, 0]], v[bed[:, 1]]
        d = pb - pa
        ln2 = np.einsum("ij,ij->i", d, d)
        chunk = max(1, 2_000_000 // max(len(v), 1))
        for s in range(0, len(bed), chunk):
            sl = slice(s, s + chunk)
            rel = v[None, :, :] - pa[sl, None, :]
            t = np.einsum("eij,ej->ei", rel, d[sl]) / ln2[sl, None]
            cross = rel[..., 0] * d[sl, None, 1] - rel[..., 1] * d[sl, None, 0]
            dist = np.abs(cross) / np.sqrt(ln2[sl, None])
            scale = np.sqrt(ln2[sl, None])
            hit = (t > GEOM_TOL) & (t < 1 - GEOM_TOL) & (dist < GEOM_TOL * np.maximum(scale, 1.0))
            if np.any(hit):
                e, k = np.argwhere(hit)[0]
                raise MeshStructureError(
                    f"non-matching mesh: vertex {k} lies inside edge {tuple(bed[s + e])}")

    def _labels(self, bdict):
        ne = len(self.edges)
        labels = np.zeros(ne, dtype=np.int64)
        patch = -np.ones(ne, dtype=np.int64)
        bidx = np.flatnonzero(self.is_boundary)
        keys = self.edge_keys[bidx]
        missing = []
        for e, k in zip(bidx, keys):
            entry = bdict.get(int(k))
            if entry is None:
                missing.append(_split_key(k))
                continue
            labels[e] = entry[0]
            patch[e] = entry[1] if entry[0] == ROBIN else -1
        if missing:
            raise MeshSpecificationError(f"unlabeled boundary edges: {missing[:5]}")
        bset = set(int(k) for k in keys)
        extra = [k for k in bdict if k not in bset]
        if extra:
            raise MeshSpecificationError(
                f"boundary labels given for non-boundary edges: {[_split_key(k) for k in extra[:5]]}")
        self.face_labels = labels
        self.face_patch = patch
        self._bdict = dict(bdict)
        _freeze(labels, patch)

    def _geometry(self):
        v = self.vertices
        t = self.triangles
        p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        e1, e2 = p1 - p0, p2 - p0
        area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        if np.any(area2 <= 2 * GEOM_TOL):
            k = int(np.argmin(area2))
            raise GeometryError(f"triangle {k} has non-positive or zero area")
        self.area = 0.5 * area2
        lens = np.stack([np.linalg.norm(p2 - p1, axis=1),
                         np.linalg.norm(p0 - p2, axis=1),
                         np.linalg.norm(p1 - p0, axis=1)], axis=1)
        self.h_K = lens.max(axis=1)
        self.rho_K = 4.0 * self.area / lens.sum(axis=1)
        self.centroids = (p0 + p1 + p2) / 3.0
        self.jac = np.stack([e1, e2], axis=2)  # columns are e1, e2
        self.det_jac = area2
        self.inv_jac = np.linalg.inv(self.jac)
        ea, eb = v[self.edges[:, 0]], v[self.edges[:, 1]]
        tang = eb - ea
        self.h_F = np.linalg.norm(tang, axis=1)
        nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / self.h_F[:, None]
        mid = 0.5 * (ea + eb)
        out = mid - self.centroids[self.edge_tris[:, 0]]
        flip = np.einsum("ij,ij->i", nrm, out) < 0
        nrm[flip] *= -1.0
        self.normals = nrm
        self.face_midpoints = mid
        _freeze(self.area, self.h_K, self.rho_K, self.centroids, self.jac, self.det_jac,
                self.inv_jac, self.h_F, self.normals, self.face_midpoints)

    def _boundary_origin(self, bdict):
        out = -np.ones(len(self.edges), dtype=np.int64)
        for e in np.flatnonzero(self.is_boundary):
            entry = bdict[int(self.edge_keys[e])]
            out[e] = entry[2] if len(entry) > 2 and entry[2] is not None else e
        return out

    # -- queries ----------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_faces(self):
        return len(self.edges)

    def faces_with_label(self, label):
        return np.flatnonzero(self.face_labels == parse_label(label))

    @property
    def h(self):
        return float(self.h_K.max())

    @property
    def kappa(self):
        return float((self.h_K / self.rho_K).max())

    def boundary_spec(self):
        """Boundary labels as ``{(i, j): (label_char, patch)}``."""
        out = {}
        for e in np.flatnonzero(self.is_boundary):
            i, j = self.edges[e]
            out[(int(i), int(j))] = (LABEL_CHAR[int(self.face_labels[e])], int(max(self.face_patch[e], 0)))
        return out

    def vertex_patches(self):
        """Triangles sharing at least one vertex with each triangle (list of arrays)."""
        nt = self.n_triangles
        rows = np.repeat(np.arange(nt), 3)
        cols = self.triangles.ravel()
        import scipy.sparse as sp
        inc = sp.csr_matrix((np.ones(3 * nt), (rows, cols)), shape=(nt, self.n_vertices))
        adj = (inc @ inc.T).tocsr()
        return [adj.indices[adj.indptr[k]:adj.indptr[k + 1]].copy() for k in range(nt)]

    def __repr__(self):
        return f"Mesh(n_vertices={self.n_vertices}, n_triangles={self.n_triangles}, n_faces={self.n_faces})"


# ---------------------------------------------------------------------------
def _normalize_boundary_entry(value):
    if isinstance(value, tuple) and len(value) >= 2:
        return parse_label(value[0]), int(value[1])
    return parse_label(value), 0


def build_mesh(vertices, triangles, boundary_spec, region_spec=None, newest="longest"):
    """Build a validated :class:`Mesh`.

    ``boundary_spec`` is either a mapping ``{(i, j): label or (label, patch)}``
    or a callable ``f(midpoint, outward_normal)`` returning the same.
    ``region_spec`` is None, a per-triangle sequence, or a callable on
    centroids.  ``newest='longest'`` places the newest vertex opposite the
    longest edge; ``'given'`` keeps local vertex 0 as newest.
    """
    v = np.asarray(vertices, dtype=float)
    t = np.array(triangles, dtype=np.int64)
    if v.ndim != 2 or v.shape[1] != 2:
        raise InputError("vertices must have shape (N, 2)")
    if t.ndim != 2 or t.shape[1] != 3:
        raise InputError("triangles must have shape (T, 3)")
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise InputError("triangle vertex index out of range")
    if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
        raise GeometryError("triangle with repeated vertex")
    if len(v) > 1:
        order = np.lexsort((v[:, 1], v[:, 0]))
        sv = v[order]
        close = np.all(np.abs(np.diff(sv, axis=0)) <= GEOM_TOL, axis=1)
        if np.any(close):
            raise MeshStructureError("coincident vertices")
    p0, p1, p2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area2 = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    if np.any(np.abs(area2) <= 2 * GEOM_TOL):
        raise GeometryError(f"zero-area triangle {int(np.argmin(np.abs(area2)))}")
    cw = area2 < 0
    t[cw] = t[cw][:, [0, 2, 1]]
    if newest == "longest":
        q0, q1, q2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        lens = np.stack([np.linalg.norm(q2 - q1, axis=1), np.linalg.norm(q0 - q2, axis=1),
                         np.linalg.norm(q1 - q0, axis=1)], axis=1)
        # ties resolved towards the lowest local index; stable under re-application
        shift = np.argmax(lens >= lens.max(axis=1, keepdims=True) * (1 - 1e-12), axis=1)
        idx = (np.arange(3)[None, :] + shift[:, None]) % 3
        t = np.take_along_axis(t, idx, axis=1)
    elif newest != "given":
        raise InputError(f"unknown newest-vertex rule {newest!r}")

    if region_spec is None:
        region = np.zeros(len(t), dtype=np.int64)
    elif callable(region_spec):
        cent = (v[t[:, 0]] + v[t[:, 1]] + v[t[:, 2]]) / 3.0
        region = np.array([int(region_spec(c)) for c in cent], dtype=np.int64)
    else:
        region = np.asarray(region_spec, dtype=np.int64)
        if region.shape != (len(t),):
            raise MeshSpecificationError("region_spec must give one region per triangle")

    keys = _edge_key(t[:, [1, 2, 0]], t[:, [2, 0, 1]]).ravel()
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 2):
        raise MeshStructureError("edge shared by more than two triangles")
    bkeys = uniq[counts == 1]
    bdict = {}
    if callable(boundary_spec):
        cent_of = {}
        for k, (a, b) in enumerate(zip(t[:, [1, 2, 0]].ravel(), t[:, [2, 0, 1]].ravel())):
            cent_of.setdefault(int(_edge_key(a, b)), k // 3)
        for key in bkeys:
            i, j = _split_key(key)
            mid = 0.5 * (v[i] + v[j])
            d = v[j] - v[i]
            n = np.array([d[1], -d[0]]) / np.linalg.norm(d)
            tri = t[cent_of[int(key)]]
            if np.dot(n, mid - v[tri].mean(axis=0)) < 0:
                n = -n
            value = boundary_spec(mid, n)
            if value is None:
                raise MeshSpecificationError(f"boundary edge {(i, j)} left unlabeled")
            bdict[int(key)] = _normalize_boundary_entry(value)
    else:
        for (i, j), value in dict(boundary_spec).items():
            bdict[int(_edge_key(i, j))] = _normalize_boundary_entry(value)
    return Mesh(v, t, region, bdict)


# ---------------------------------------------------------------------------
def refine(mesh, marked):
    """Newest-vertex bisection: each marked triangle is bisected twice.

    All three edges of a marked triangle are bisected; closure bisects the
    refinement edge of every triangle with a bisected edge, so the result
    is matching.  Children inherit region ids and boundary labels;
    ``result.parent`` gives the ancestor of every child in ``mesh``.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64).ravel())
    if marked.size == 0:
        raise InputError("refine needs a non-empty set of marked triangles")
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise InputError("marked triangle index out of range")

    edge_mark = np.zeros(mesh.n_faces, dtype=bool)
    edge_mark[mesh.tri_edges[marked].ravel()] = True
    while True:
        need = edge_mark[mesh.tri_edges].any(axis=1) & ~edge_mark[mesh.tri_edges[:, 0]]
        if not need.any():
            break
        edge_mark[mesh.tri_edges[need, 0]] = True
    marks = set(int(k) for k in mesh.edge_keys[edge_mark])

    verts = [row for row in mesh.vertices]
    n_vert = len(verts)
    tris = mesh.triangles.copy()
    region = mesh.region.copy()
    parent = np.arange(mesh.n_triangles)
    bdict = {}
    for e in np.flatnonzero(mesh.is_boundary):
        lab, pat = int(mesh.face_labels[e]), int(max(mesh.face_patch[e], 0))
        bdict[int(mesh.edge_keys[e])] = (lab, pat, e)
    midpoint = {}

    while True:
        rkeys = _edge_key(tris[:, 1], tris[:, 2])
        todo = np.fromiter((int(k) in marks for k in rkeys), dtype=bool, count=len(tris))
        if not todo.any():
            break
        sel = tris[todo]
        mids = np.empty(len(sel), dtype=np.int64)
        for n, (k, (a, b)) in enumerate(zip(rkeys[todo], sel[:, 1:])):
            k = int(k)
            m = midpoint.get(k)
            if m is None:
                m = n_vert
                n_vert += 1
                verts.append(0.5 * (mesh_vertex(verts, a) + mesh_vertex(verts, b)))
                midpoint[k] = m
                entry = bdict.pop(k, None)
                if entry is not None:
                    bdict[int(_edge_key(a, m))] = entry
                    bdict[int(_edge_key(m, b))] = entry
            mids[n] = m
        c1 = np.column_stack([mids, sel[:, 0], sel[:, 1]])
        c2 = np.column_stack([mids, sel[:, 2], sel[:, 0]])
        keep = ~todo
        tris = np.vstack([tris[keep], c1, c2])
        region = np.concatenate([region[keep], region[todo], region[todo]])
        parent = np.concatenate([parent[keep], parent[todo], parent[todo]])

    verts = np.array(verts)
    # deterministic ordering: by ancestor, then by centroid
    cent = verts[tris].mean(axis=1)
    order = np.lexsort((cent[:, 1], cent[:, 0], parent))
    tris, region, parent = tris[order], region[order], parent[order]
    new = Mesh(verts, tris, region, bdict, parent=parent)
    return new


def mesh_vertex(verts, i):
    return verts[int(i)]


def uniform_refine(mesh, levels=1):
    """Refine every triangle ``levels`` times; ``parent`` maps to the input mesh."""
    out = mesh
    anc = None
    for _ in range(levels):
        out = refine(out, np.arange(out.n_triangles))
        anc = out.parent if anc is None else anc[out.parent]
    if levels > 0 and levels != 1:
        out = _with_parent(out, anc)
    return out


def _with_parent(mesh, parent):
    m = object.__new__(Mesh)
    m.__dict__.update(mesh.__dict__)
    m.parent = np.asarray(parent, dtype=np.int64)
    _freeze(m.parent)
    return m


def compose_parents(*parents):
    """Compose successive ``parent`` arrays (finest last) into one ancestor map."""
    anc = np.asarray(parents[0])
    for p in parents[1:]:
        anc = anc[np.asarray(p)]
    return anc


# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class MeshScalars:
    h: float
    kappa: float
    h_K: np.ndarray
    omega_h_over_theta_K: np.ndarray
    omega_h_over_theta_F: np.ndarray
    max_K: float
    max_F: float
    has_robin: bool


def mesh_scalars(mesh, coeffs):
    """Mesh size, shape regularity and the frequency-scaled mesh ratios.

    ``omega_h_over_theta_F`` is indexed like ``mesh.faces_with_label('R')``;
    with no Robin faces ``max_F`` is 0 so ``max(1, .)`` terms reduce to 1.
    """
    c = coeffs.on_mesh(mesh)
    ratio_k = coeffs.omega * mesh.h_K / c.theta_K
    rob = mesh.faces_with_label(ROBIN)
    ratio_f = coeffs.omega * mesh.h_F[rob] / c.theta_F[rob]
    return MeshScalars(
        h=mesh.h,
        kappa=mesh.kappa,
        h_K=mesh.h_K,
        omega_h_over_theta_K=ratio_k,
        omega_h_over_theta_F=ratio_f,
        max_K=float(ratio_k.max()),
        max_F=float(ratio_f.max()) if len(rob) else 0.0,
        has_robin=bool(len(rob)),
    )


# ---------------------------------------------------------------------------
_SIDES = ("left", "right", "bottom", "top")


def _side_labeler(boundary, x0, x1, y0, y1):
    if callable(boundary):
        return boundary
    if isinstance(boundary, dict):
        spec = {k: boundary[k] for k in boundary}
        for k in spec:
            if k not in _SIDES:
                raise MeshSpecificationError(f"unknown side {k!r}")
    else:
        spec = {s: boundary for s in _SIDES}
    tol = 1e-9

    def label(mid, normal):
        x, y = mid
        if abs(x - x0) < tol and "left" in spec:
            return spec["left"]
        if abs(x - x1) < tol and "right" in spec:
            return spec["right"]
        if abs(y - y0) < tol and "bottom" in spec:
            return spec["bottom"]
        if abs(y - y1) < tol and "top" in spec:
            return spec["top"]
        return None

    return label


def rectangle(nx, ny, x0=0.0, x1=1.0, y0=0.0, y1=1.0, boundary="D", regions=None):
    """Structured nx-by-ny grid of squares, each split along its rising diagonal."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    return build_mesh(verts, tris, _side_labeler(boundary, x0, x1, y0, y1), regions)


def unit_square(n, boundary="D", regions=None):
    """Unit square split into n x n x 2 triangles.

    ``boundary`` is a label for all sides, a dict keyed by
    'left'/'right'/'bottom'/'top', or a callable ``f(midpoint, normal)``.
    """
    return rectangle(n, n, boundary=boundary, regions=regions)


def l_shape(n, boundary="D", regions=None):
    """L-shaped domain (-1, 1)^2 minus [0, 1] x [-1, 0]; squares of side 1/n.

    The re-entrant corner sits at the origin.
    """
    xs = np.linspace(-1.0, 1.0, 2 * n + 1)
    index = {}
    verts = []
    tris = []

    def vid(i, j):
        key = (i, j)
        if key not in index:
            index[key] = len(verts)
            verts.append((xs[i], xs[j]))
        return index[key]

    for j in range(2 * n):
        for i in range(2 * n):
            if i >= n and j < n:
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            # diagonals point away from the re-entrant corner
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (xs[j] + xs[j + 1])
            if cx * cy > 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    if callable(boundary):
        lab = boundary
    elif isinstance(boundary, dict):
        raise MeshSpecificationError("l_shape takes a single label or a callable")
    else:
        def lab(mid, normal):
            return boundary
    return build_mesh(np.array(verts), tris, lab, regions)


# ---------------------------------------------------------------------------
MESH_HEADER = "helmdg-mesh v1"


def write_mesh(mesh, path):
    """Write ``mesh`` in the ``helmdg-mesh v1`` text format."""
    lines = [MESH_HEADER, str(mesh.n_vertices)]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(str(mesh.n_triangles))
    lines += [f"{a} {b} {c} {r}" for (a, b, c), r in zip(mesh.triangles, mesh.region)]
    bidx = np.flatnonzero(mesh.is_boundary)
    lines.append(str(len(bidx)))
    for e in bidx:
        i, j = mesh.edges[e]
        lines.append(f"{i} {j} {LABEL_CHAR[int(mesh.face_labels[e])]} {int(max(mesh.face_patch[e], 0))}")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write mesh file {path}: {exc}") from exc


def read_mesh(path):
    """Read a ``helmdg-mesh v1`` file; triangle vertex order is preserved."""
    with open(path, encoding="utf-8") as fh:
        rows = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or rows[0] != MESH_HEADER:
        raise MeshSpecificationError(f"{path}: missing '{MESH_HEADER}' header")
    try:
        pos = 1
        nv = int(rows[pos]); pos += 1
        verts = np.array([[float(s) for s in rows[pos + k].split()] for k in range(nv)])
        pos += nv
        nt = int(rows[pos]); pos += 1
        trow = [rows[pos + k].split() for k in range(nt)]
        pos += nt
        tris = np.array([[int(s) for s in r[:3]] for r in trow], dtype=np.int64)
        region = np.array([int(r[3]) if len(r) > 3 else 0 for r in trow], dtype=np.int64)
        nb = int(rows[pos]); pos += 1
        bspec = {}
        for k in range(nb):
            i, j, lab, *rest = rows[pos + k].split()
            bspec[(int(i), int(j))] = (lab, int(rest[0]) if rest else 0)
    except (ValueError, IndexError) as exc:
        raise MeshSpecificationError(f"{path}: malformed mesh file ({exc})") from exc
    return build_mesh(verts.reshape(-1, 2), tris.reshape(-1, 3), bspec, region, newest="given")
