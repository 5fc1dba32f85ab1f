"""Simplicial meshes of the space-energy box.

Coordinates are ordered ``(x_1, ..., x_d, E)``: spatial axes first, energy
last.  Lengths mix cm and MeV; cell diameters are Euclidean in these raw
coordinates.

Adaptive refinement is red-green with green-closure removal (a green pair is
merged back into its parent before that region is refined again), which keeps
the minimum angle bounded.  Meshes whose cells are tetrahedra refine
uniformly only.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree


class MeshError(ValueError):
    pass


class UnsupportedOperation(MeshError):
    pass


class PointNotFound(MeshError, LookupError):
    pass


class FacetTag(enum.IntEnum):
    INFLOW = 0
    OUTFLOW = 1
    TRANSVERSE = 2


@dataclass(frozen=True)
class Domain:
    """Box ``Omega_x x [E_min, E_max]`` with a fixed beam direction."""

    spatial_extent: tuple
    energy_interval: tuple[float, float]
    omega: tuple

    def __post_init__(self):
        ext = tuple((float(a), float(b)) for a, b in self.spatial_extent)
        omega = tuple(float(w) for w in np.atleast_1d(self.omega))
        object.__setattr__(self, "spatial_extent", ext)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "energy_interval", tuple(float(e) for e in self.energy_interval))
        if len(ext) not in (1, 2):
            raise MeshError(f"spatial_dim must be 1 or 2, got {len(ext)}")
        if len(omega) != len(ext):
            raise MeshError("omega must have one component per spatial axis")
        if abs(np.linalg.norm(omega) - 1.0) > 1e-12:
            raise MeshError(f"omega must be a unit vector, |omega| = {np.linalg.norm(omega)}")
        for a, b in ext:
            if not b > a:
                raise MeshError(f"non-positive spatial extent [{a}, {b}]")
        e0, e1 = self.energy_interval
        if not (e0 > 0 and e1 > e0):
            raise MeshError(f"energy interval must satisfy 0 < E_min < E_max, got [{e0}, {e1}]")

    @property
    def spatial_dim(self) -> int:
        return len(self.spatial_extent)

    @property
    def d_tot(self) -> int:
        return self.spatial_dim + 1

    @property
    def bounds(self) -> np.ndarray:
        """(d_tot, 2) array of axis bounds, energy last."""
        return np.array(list(self.spatial_extent) + [self.energy_interval])

    @property
    def diameter(self) -> float:
        b = self.bounds
        return float(np.linalg.norm(b[:, 1] - b[:, 0]))

    @property
    def volume(self) -> float:
        b = self.bounds
        return float(np.prod(b[:, 1] - b[:, 0]))

    @property
    def e_min(self) -> float:
        return self.energy_interval[0]

    @property
    def e_max(self) -> float:
        return self.energy_interval[1]


def _simplex_volumes(vertices, cells):
    """Signed volumes of simplices (any dimension, embedded in same-dim space)."""
    v0 = vertices[cells[:, 0]]
    J = vertices[cells[:, 1:]] - v0[:, None, :]
    dim = cells.shape[1] - 1
    fact = float(np.prod(np.arange(1, dim + 1)))
    return np.linalg.det(J) / fact


def _orient(vertices, cells):
    vol = _simplex_volumes(vertices, cells)
    bad = vol < 0
    if np.any(bad):
        cells = cells.copy()
        cells[bad, 0], cells[bad, 1] = cells[bad, 1].copy(), cells[bad, 0].copy()
    return cells


class Mesh:
    """Conforming simplicial mesh.

    ``domain`` is optional: purely spatial meshes (dose grids) carry none and
    have no facet tags.  Instances are treated as immutable.
    """

    def __init__(self, vertices, cells, domain: Domain | None = None, *,
                 parent=None, green_parent=None, green_mid=None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.asarray(cells, dtype=np.int64)
        self.dim = self.vertices.shape[1]
        if cells.shape[1] != self.dim + 1:
            raise MeshError("cells must have dim + 1 vertices")
        self.cells = _orient(self.vertices, cells)
        self.domain = domain
        if domain is not None and domain.d_tot != self.dim:
            raise MeshError("domain dimension does not match vertex coordinates")
        m = len(self.cells)
        self.parent = np.full(m, -1, dtype=np.int64) if parent is None else np.asarray(parent, dtype=np.int64)
        self.green_parent = (np.full((m, self.dim + 1), -1, dtype=np.int64)
                             if green_parent is None else np.asarray(green_parent, dtype=np.int64))
        self.green_mid = (np.full(m, -1, dtype=np.int64)
                          if green_mid is None else np.asarray(green_mid, dtype=np.int64))
        self._build_facets()
        self._tree = None
        self._vertex_cells = None

    # ------------------------------------------------------------------ topology
    def _build_facets(self):
        d = self.dim
        local = [tuple(i for i in range(d + 1) if i != k) for k in range(d + 1)]
        m = len(self.cells)
        facets = np.concatenate([self.cells[:, list(f)] for f in local])  # (d+1)*m, d
        owner = np.tile(np.arange(m), d + 1)
        opposite = np.repeat(np.arange(d + 1), m)
        keys = np.sort(facets, axis=1)
        _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        once = counts[inverse] == 1
        bnd = np.flatnonzero(once)
        order = np.lexsort((opposite[bnd], owner[bnd]))
        bnd = bnd[order]
        self.boundary_facets = facets[bnd]
        self.boundary_cells = owner[bnd]
        self.boundary_opposite = opposite[bnd]
        self.boundary_normals = self._outward_normals(self.boundary_facets, self.boundary_cells)
        # interior facets, one row per shared facet: (facet verts, cell a, cell b)
        inter = np.flatnonzero(~once)
        srt = inter[np.argsort(inverse[inter], kind="stable")]
        first, second = srt[0::2], srt[1::2]
        self.interior_facets = facets[first]
        self.interior_cells = np.stack([owner[first], owner[second]], axis=1)
        self.facet_tags = self._tag_facets() if self.domain is not None else None

    def _outward_normals(self, facets, cells):
        d = self.dim
        if len(facets) == 0:
            return np.zeros((0, d))
        pts = self.vertices[facets]
        if d == 1:
            n = np.ones((len(facets), 1))
        elif d == 2:
            t = pts[:, 1] - pts[:, 0]
            n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        else:
            n = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        n /= np.linalg.norm(n, axis=1)[:, None]
        centroid = self.vertices[self.cells[cells]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, pts[:, 0] - centroid) < 0
        n[flip] *= -1
        return n

    def _tag_facets(self):
        dom = self.domain
        tol = 1e-12 * dom.diameter
        n = self.boundary_normals
        wn = n[:, :-1] @ np.asarray(dom.omega)
        ne = n[:, -1]
        tags = np.full(len(n), FacetTag.TRANSVERSE, dtype=np.int8)
        tags[(wn < -tol) | (ne > 1 - tol)] = FacetTag.INFLOW
        tags[(wn > tol) | (ne < -1 + tol)] = FacetTag.OUTFLOW
        return tags

    # ---------------------------------------------------------------- geometry
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def d_tot(self) -> int:
        return self.dim

    def volumes(self) -> np.ndarray:
        return _simplex_volumes(self.vertices, self.cells)

    def diameters(self) -> np.ndarray:
        """Longest edge of each cell (the Euclidean diameter of a simplex)."""
        pts = self.vertices[self.cells]
        h = np.zeros(len(self.cells))
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            h = np.maximum(h, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        return h

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def facet_measures(self, facets) -> np.ndarray:
        pts = self.vertices[np.asarray(facets)]
        if self.dim == 1:
            return np.ones(len(pts))
        if self.dim == 2:
            return np.linalg.norm(pts[:, 1] - pts[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]), axis=1)

    def facet_diameters(self, facets) -> np.ndarray:
        pts = self.vertices[np.asarray(facets)]
        h = np.zeros(len(pts))
        for i, j in itertools.combinations(range(pts.shape[1]), 2):
            h = np.maximum(h, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        return h

    def edges(self) -> np.ndarray:
        pairs = list(itertools.combinations(range(self.dim + 1), 2))
        e = np.concatenate([self.cells[:, list(p)] for p in pairs])
        return np.unique(np.sort(e, axis=1), axis=0)

    # ---------------------------------------------------------- point location
    def barycentric(self, cell_ids, points) -> np.ndarray:
        cell_ids = np.asarray(cell_ids)
        pts = self.vertices[self.cells[cell_ids]]  # (n, d+1, d)
        T = np.swapaxes(pts[:, 1:] - pts[:, :1], 1, 2)  # (n, d, d)
        lam = np.linalg.solve(T, (np.asarray(points) - pts[:, 0])[..., None])[..., 0]
        return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)

    def _vertex_to_cells(self):
        if self._vertex_cells is None:
            flat = self.cells.ravel()
            order = np.argsort(flat, kind="stable")
            cell_of = order // (self.dim + 1)
            starts = np.searchsorted(flat[order], np.arange(self.n_vertices + 1))
            self._vertex_cells = (cell_of, starts)
        return self._vertex_cells

    def locate(self, points, tol: float = 1e-10, lowest_id: bool = True):
        """Vectorised point location.

        Returns ``(cell_ids, barycentrics)``.  With ``lowest_id`` the smallest
        id among all containing cells is returned; otherwise any containing
        cell (deterministically).  Raises :class:`PointNotFound` for points
        outside the mesh.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        if self._tree is None:
            self._tree = cKDTree(self.centroids())
        k = min(12, self.n_cells)
        _, cand = self._tree.query(points, k=k)
        cand = np.asarray(cand).reshape(n, k)
        found = np.full(n, -1, dtype=np.int64)
        for j in range(k):
            todo = np.flatnonzero(found < 0)
            if len(todo) == 0:
                break
            c = cand[todo, j]
            lam = self.barycentric(c, points[todo])
            ok = np.all(lam >= -tol, axis=1)
            found[todo[ok]] = c[ok]
        for i in np.flatnonzero(found < 0):
            lam = self.barycentric(np.arange(self.n_cells), np.repeat(points[i:i + 1], self.n_cells, 0))
            hit = np.flatnonzero(np.all(lam >= -tol, axis=1))
            if len(hit) == 0:
                raise PointNotFound(f"point {points[i]} lies outside the mesh")
            found[i] = hit[0]
        lam = self.barycentric(found, points)
        if not lowest_id:
            return found, lam
        # every other containing cell shares a vertex with the one found
        cell_of, starts = self._vertex_to_cells()
        on_boundary = np.flatnonzero(np.any(lam < tol, axis=1))
        for i in on_boundary:
            verts = self.cells[found[i]]
            cand_i = np.unique(np.concatenate([cell_of[starts[v]:starts[v + 1]] for v in verts]))
            cand_i = cand_i[cand_i < found[i]]
            if len(cand_i) == 0:
                continue
            lam_i = self.barycentric(cand_i, np.repeat(points[i:i + 1], len(cand_i), 0))
            hit = np.flatnonzero(np.all(lam_i >= -tol, axis=1))
            if len(hit):
                found[i] = cand_i[hit[0]]
        return found, self.barycentric(found, points)

    # ------------------------------------------------------------------- dump
    def dump(self, path_or_file):
        """Plain-text dump: header, vertices, cells, tagged boundary facets."""
        lines = [f"{self.dim} {self.n_vertices} {self.n_cells}"]
        lines += [" ".join(repr(float(c)) for c in v) for v in self.vertices]
        lines += [" ".join(str(int(i)) for i in c) for c in self.cells]
        tags = self.facet_tags if self.facet_tags is not None else np.full(len(self.boundary_facets), -1)
        for f, t in zip(self.boundary_facets, tags):
            name = FacetTag(int(t)).name.capitalize() if t >= 0 else "Untagged"
            lines.append(" ".join(str(int(i)) for i in f) + " " + name)
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_file, "write"):
            path_or_file.write(text)
        else:
            with open(path_or_file, "w") as fh:
                fh.write(text)


def locate_point(mesh: Mesh, point, tol: float = 1e-10):
    cells, lam = mesh.locate(np.asarray(point, dtype=float).reshape(1, -1), tol=tol)
    return int(cells[0]), lam[0]


# ------------------------------------------------------------------- builders
def axis_lines(lo: float, hi: float, n: int, snap: Iterable[float] = ()) -> np.ndarray:
    """Uniform grid lines on [lo, hi], with the nearest line moved onto each snap point."""
    if n < 1:
        raise MeshError(f"resolution must be >= 1, got {n}")
    x = np.linspace(lo, hi, n + 1)
    for s in snap:
        if not lo < s < hi or np.any(np.isclose(x, s, rtol=0, atol=1e-12 * (hi - lo))):
            continue
        i = int(np.argmin(np.abs(x[1:-1] - s))) + 1 if n > 1 else None
        if i is None or np.any(np.isclose(x[[i - 1, i + 1]], s)) or not x[i - 1] < s < x[i + 1]:
            x = np.sort(np.append(x, s))
        else:
            # do not drag a line that already sits on an earlier snap point
            if any(np.isclose(x[i], t, rtol=0, atol=1e-12) for t in snap):
                x = np.sort(np.append(x, s))
            else:
                x[i] = s
    return x


def _grid_mesh(lines: Sequence[np.ndarray], flip: Sequence[bool] | None = None):
    """Vertices and simplices of a tensor grid (2 triangles / 6 tets per box).

    All simplices of a box share its main diagonal; ``flip[k]`` reverses that
    diagonal along axis k.
    """
    dim = len(lines)
    flip = tuple(bool(f) for f in (flip or (False,) * dim))
    shape = tuple(len(l) for l in lines)
    grids = np.meshgrid(*lines, indexing="ij")
    vertices = np.stack([g.ravel() for g in grids], axis=1)
    idx = np.arange(vertices.shape[0]).reshape(shape)
    if dim == 1:
        cells = np.stack([idx[:-1], idx[1:]], axis=1)
        return vertices, cells
    corner = {}
    for b in itertools.product((0, 1), repeat=dim):
        sl = tuple(slice(bi, s - 1 + bi) for bi, s in zip(b, shape))
        corner[b] = idx[sl].ravel()
    cells = []
    for perm in itertools.permutations(range(dim)):
        b = list(flip)
        path = [corner[tuple(b)]]
        for ax in perm:
            b[ax] = 1 - b[ax]
            path.append(corner[tuple(b)])
        cells.append(np.stack(path, axis=1))
    # order cells box-major for locality
    cells = np.stack(cells, axis=1).reshape(-1, dim + 1)
    return vertices, cells


def build_structured(domain: Domain, resolution: Sequence[int], snap: dict | None = None) -> Mesh:
    """Simplicial mesh of the domain box.

    ``resolution`` has one cell count per axis (spatial axes, then energy).
    ``snap`` optionally maps an axis index to coordinates that must coincide
    with grid lines (layer interfaces).
    """
    resolution = [int(r) for r in resolution]
    if len(resolution) != domain.d_tot:
        raise MeshError(f"need {domain.d_tot} resolution entries, got {len(resolution)}")
    if any(r < 1 for r in resolution):
        raise MeshError(f"resolution must be >= 1 per axis, got {resolution}")
    snap = snap or {}
    lines = [axis_lines(lo, hi, n, snap.get(ax, ())) for ax, ((lo, hi), n)
             in enumerate(zip(domain.bounds, resolution))]
    # box diagonals follow the characteristics: downstream in space, down in energy
    flip = [w < 0 for w in domain.omega] + [True]
    vertices, cells = _grid_mesh(lines, flip)
    return Mesh(vertices, cells, domain)


def build_spatial_grid(extent: Sequence[tuple[float, float]], resolution: Sequence[int],
                       snap: dict | None = None) -> Mesh:
    """Untagged simplicial mesh of a spatial box (dose grids)."""
    snap = snap or {}
    for a, b in extent:
        if not b > a:
            raise MeshError(f"non-positive extent [{a}, {b}]")
    lines = [axis_lines(a, b, int(n), snap.get(ax, ())) for ax, ((a, b), n)
             in enumerate(zip(extent, resolution))]
    vertices, cells = _grid_mesh(lines)
    return Mesh(vertices, cells)


# ----------------------------------------------------------------- refinement
_BEY_CHILDREN = (
    (0, 4, 5, 6), (4, 1, 7, 8), (5, 7, 2, 9), (6, 8, 9, 3),
    (4, 5, 6, 8), (4, 5, 7, 8), (5, 6, 8, 9), (5, 7, 8, 9),
)
# local edge numbering: 4:(0,1) 5:(0,2) 6:(0,3) 7:(1,2) 8:(1,3) 9:(2,3)
_RED_CHILDREN = ((0, 3, 4), (3, 1, 5), (4, 5, 2), (3, 5, 4))
# local edge numbering: 3:(0,1) 4:(0,2) 5:(1,2)


def _uniform(mesh: Mesh) -> Mesh:
    d = mesh.dim
    pairs = list(itertools.combinations(range(d + 1), 2))
    m = mesh.n_cells
    e = np.concatenate([mesh.cells[:, list(p)] for p in pairs])
    e = np.sort(e, axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    mids = mesh.n_vertices + inv.ravel().reshape(len(pairs), m).T  # (m, n_edges)
    vertices = np.concatenate([mesh.vertices, mesh.vertices[uniq].mean(axis=1)])
    ext = np.concatenate([mesh.cells, mids], axis=1)
    if d == 1:
        children = ((0, 2), (2, 1))
    elif d == 2:
        children = _RED_CHILDREN
    else:
        children = _BEY_CHILDREN
    cells = np.stack([ext[:, list(c)] for c in children], axis=1).reshape(-1, d + 1)
    parent = np.repeat(np.arange(m), len(children))
    return Mesh(vertices, cells, mesh.domain, parent=parent)


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Refine the marked cells, closing the mesh conformingly.

    Triangles: red refinement of marked cells with red-green closure.
    Other simplices: only uniform refinement (all cells marked) is supported.
    """
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.n_cells:
        raise MeshError("marked cell id out of range")
    everything = len(marked) == mesh.n_cells
    if mesh.dim != 2:
        if not everything:
            raise UnsupportedOperation("adaptive refinement is only available for triangle meshes")
        return _uniform(mesh)
    if everything and np.all(mesh.green_mid < 0):
        return _uniform(mesh)
    return _red_green(mesh, marked)


def _red_green(mesh: Mesh, marked: np.ndarray) -> Mesh:
    verts = [tuple(v) for v in mesh.vertices]
    cells: dict[int, tuple] = {}
    origin: dict[int, int] = {}
    ginfo: dict[int, tuple] = {}  # cell -> (parent triple, split vertex)
    for i, c in enumerate(mesh.cells.tolist()):
        cells[i] = tuple(c)
        origin[i] = i
        if mesh.green_mid[i] >= 0:
            ginfo[i] = (tuple(mesh.green_parent[i].tolist()), int(mesh.green_mid[i]))
    next_id = mesh.n_cells

    siblings: dict[tuple, list] = {}
    for i, (par, _) in ginfo.items():
        siblings.setdefault(par, []).append(i)

    edge_cells: dict[tuple, set] = {}

    def cell_edges(c):
        a, b, cc = c
        return (tuple(sorted((a, b))), tuple(sorted((b, cc))), tuple(sorted((a, cc))))

    for i, c in cells.items():
        for e in cell_edges(c):
            edge_cells.setdefault(e, set()).add(i)

    midpoint: dict[tuple, int] = {}
    marked_edges: set = set()
    red: set = set()
    work: list = []

    def add_cell(c, org, g=None):
        nonlocal next_id
        cid = next_id
        next_id += 1
        cells[cid] = c
        origin[cid] = org
        if g is not None:
            ginfo[cid] = g
        for e in cell_edges(c):
            edge_cells.setdefault(e, set()).add(cid)
        return cid

    def remove_cell(cid):
        for e in cell_edges(cells[cid]):
            edge_cells[e].discard(cid)
        del cells[cid]
        ginfo.pop(cid, None)
        red.discard(cid)

    def make_red(cid):
        if cid in red:
            return
        red.add(cid)
        for e in cell_edges(cells[cid]):
            if e not in marked_edges:
                marked_edges.add(e)
                work.extend(edge_cells.get(e, ()))

    def mid_of(a, b):
        key = (a, b) if a < b else (b, a)
        m = midpoint.get(key)
        if m is None:
            m = len(verts)
            verts.append(tuple((np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0))
            midpoint[key] = m
        return m

    def restore(cid):
        # replace the green pair by the red children of its parent; the
        # children enter the closure like any other cell, since edges already
        # marked may be halves of the parent's edges
        par, mid = ginfo[cid]
        group = siblings.pop(par, [cid])
        org = min(origin[g] for g in group)
        for g in group:
            if g in cells:
                remove_cell(g)
        a, b, c = par
        for e in ((a, b), (b, c), (a, c)):
            key = tuple(sorted(e))
            pm = np.add(verts[key[0]], verts[key[1]]) / 2.0
            if np.allclose(pm, verts[mid], rtol=0, atol=1e-14 * (1 + np.abs(pm).max())):
                midpoint[key] = mid
        ext = (a, b, c, mid_of(a, b), mid_of(a, c), mid_of(b, c))
        for e in cell_edges(par):
            if e not in marked_edges:
                marked_edges.add(e)
                work.extend(edge_cells.get(e, ()))
        for ch in _RED_CHILDREN:
            work.append(add_cell(tuple(ext[k] for k in ch), org))

    for cid in marked.tolist():
        if cid not in cells:
            continue  # already merged into a restored parent
        if cid in ginfo:
            restore(cid)
        else:
            make_red(cid)

    while work:
        cid = work.pop()
        if cid not in cells or cid in red:
            continue
        n_marked = sum(e in marked_edges for e in cell_edges(cells[cid]))
        if n_marked == 0:
            continue
        if cid in ginfo:
            restore(cid)
        elif n_marked >= 2:
            make_red(cid)

    out_cells, out_parent, out_gpar, out_gmid = [], [], [], []
    for cid in sorted(cells):
        c = cells[cid]
        org = origin[cid]
        if cid in red:
            a, b, cc = c
            ext = (a, b, cc, mid_of(a, b), mid_of(a, cc), mid_of(b, cc))
            for ch in _RED_CHILDREN:
                out_cells.append(tuple(ext[k] for k in ch))
                out_parent.append(org)
                out_gpar.append((-1, -1, -1))
                out_gmid.append(-1)
            continue
        split = [e for e in cell_edges(c) if e in marked_edges]
        if split:
            (a, b), = split
            (opp,) = set(c) - {a, b}
            m = mid_of(a, b)
            for ch in ((a, m, opp), (m, b, opp)):
                out_cells.append(ch)
                out_parent.append(org)
                out_gpar.append(c)
                out_gmid.append(m)
            continue
        out_cells.append(c)
        out_parent.append(org)
        g = ginfo.get(cid)
        out_gpar.append(g[0] if g else (-1, -1, -1))
        out_gmid.append(g[1] if g else -1)

    return Mesh(np.array(verts), np.array(out_cells), mesh.domain, parent=out_parent,
                green_parent=np.array(out_gpar), green_mid=np.array(out_gmid))
