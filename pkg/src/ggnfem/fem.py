"""Q1 finite elements on quadtree meshes.

Spaces come in two flavors on the same mesh: ``V`` (H^1_0-conforming,
zero boundary values) and ``Q`` (L^2-type, all non-hanging vertices
free).  Hanging-vertex constraints are eliminated by condensation
through the inclusion matrix ``T`` which expands free coefficients to
continuous all-vertex values; assembled operators are ``T' A_full T``
and stay symmetric.

Old iterates keep their own (coarser) meshes; because refinement is
nested, re-interpolating a field onto any refinement of its mesh is
pointwise exact, so cross-mesh evaluation carries no projection error.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial.legendre import leggauss

from .mesh import QuadMesh, locate

__all__ = [
    "Space",
    "Field",
    "gauss_points",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_weighted_mass",
    "assemble_functional",
    "riesz_dual_norm",
    "evaluate_cross_mesh",
    "interpolate_onto",
    "patch_interpolate",
    "PatchWeight",
    "write_field_vtk",
    "write_field_csv",
]

NQ_BASE = 3  # tensor Gauss order for bilinear forms with Q1 data
NQ_WEIGHTED = 4  # order for cubic-weight terms and estimator pairings


def gauss_points(n: int):
    """Tensor Gauss rule on the unit square: (points (n*n,2), weights)."""
    x, w = leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    ps, pt = np.meshgrid(x, x, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    pts = np.column_stack([ps.ravel(), pt.ravel()])
    return pts, (ws * wt).ravel()


def shape_values(pts: np.ndarray) -> np.ndarray:
    """Bilinear basis (SW,SE,NW,NE) at local points, shape (npts, 4)."""
    s, t = pts[:, 0], pts[:, 1]
    return np.column_stack(
        [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t]
    )


def shape_gradients(pts: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (npts, 4, 2)."""
    s, t = pts[:, 0], pts[:, 1]
    g = np.empty((len(pts), 4, 2))
    g[:, 0, 0] = -(1 - t)
    g[:, 1, 0] = 1 - t
    g[:, 2, 0] = -t
    g[:, 3, 0] = t
    g[:, 0, 1] = -(1 - s)
    g[:, 1, 1] = -s
    g[:, 2, 1] = 1 - s
    g[:, 3, 1] = s
    return g


class Space:
    """Q1 space on a mesh with hanging constraints condensed.

    ``kind`` is "V" (zero trace on the boundary) or "Q" (free boundary).
    """

    def __init__(self, mesh: QuadMesh, kind: str):
        if kind not in ("V", "Q"):
            raise ValueError("kind must be 'V' or 'Q'")
        self.mesh = mesh
        self.kind = kind

        nv = mesh.n_vertices
        free_mask = np.ones(nv, dtype=bool)
        for h in mesh.hanging:
            free_mask[h] = False
        if kind == "V":
            free_mask &= ~mesh.boundary
        self.free = np.nonzero(free_mask)[0]
        self.dim = len(self.free)
        col_of = -np.ones(nv, dtype=np.int64)
        col_of[self.free] = np.arange(self.dim)

        rows, cols, vals = [], [], []
        for v in range(nv):
            if col_of[v] >= 0:
                rows.append(v)
                cols.append(col_of[v])
                vals.append(1.0)
            elif v in mesh.hanging:
                for p in mesh.hanging[v]:
                    if col_of[p] >= 0:
                        rows.append(v)
                        cols.append(col_of[p])
                        vals.append(0.5)
        self.T = sp.csr_matrix(
            (vals, (rows, cols)), shape=(nv, self.dim)
        )
        self._col_of = col_of
        self._cache = {}

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        """Free coefficients -> continuous all-vertex values."""
        return self.T @ coeffs

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.dim))

    def interpolate(self, f) -> "Field":
        """Nodal interpolation of a callable f(x, y) at the free vertices."""
        xy = self.mesh.vertices[self.free]
        return Field(self, np.asarray(f(xy[:, 0], xy[:, 1]), dtype=float))

    def stiffness(self) -> sp.csr_matrix:
        if "K" not in self._cache:
            self._cache["K"] = assemble_stiffness(self)
        return self._cache["K"]

    def mass(self) -> sp.csr_matrix:
        if "M" not in self._cache:
            self._cache["M"] = assemble_mass(self, self)
        return self._cache["M"]

    def stiffness_solver(self):
        if "Klu" not in self._cache:
            self._cache["Klu"] = spla.splu(self.stiffness().tocsc())
        return self._cache["Klu"]

    def __repr__(self):
        return f"Space({self.kind}, dim={self.dim}, mesh={self.mesh!r})"


def _spaces(mesh: QuadMesh):
    """Memoized (V, Q) space pair for a mesh."""
    if not hasattr(mesh, "_space_pair"):
        mesh._space_pair = (Space(mesh, "V"), Space(mesh, "Q"))
    return mesh._space_pair


def vspace(mesh: QuadMesh) -> Space:
    return _spaces(mesh)[0]


def qspace(mesh: QuadMesh) -> Space:
    return _spaces(mesh)[1]


class Field:
    """A Q1 function: a space plus one coefficient per free vertex."""

    def __init__(self, space: Space, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.dim,):
            raise ValueError(
                f"coefficient length {coeffs.shape} != space dim {space.dim}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("non-finite field coefficients")
        self.space = space
        self.coeffs = coeffs
        self._full = None

    @property
    def mesh(self) -> QuadMesh:
        return self.space.mesh

    def full_values(self) -> np.ndarray:
        if self._full is None:
            self._full = self.space.expand(self.coeffs)
        return self._full

    def eval_points(self, points: np.ndarray) -> np.ndarray:
        """Pointwise evaluation anywhere in the closed unit square."""
        full = self.full_values()
        mesh = self.mesh
        points = np.atleast_2d(points)
        out = np.empty(len(points))
        for i, p in enumerate(points):
            cid, (s, t) = locate(mesh, p)
            c = full[mesh.cell_corners[cid]]
            out[i] = (
                c[0] * (1 - s) * (1 - t)
                + c[1] * s * (1 - t)
                + c[2] * (1 - s) * t
                + c[3] * s * t
            )
        return out

    def norm_l2(self) -> float:
        M = self.space.mass()
        return float(np.sqrt(max(self.coeffs @ (M @ self.coeffs), 0.0)))

    def norm_h1semi(self) -> float:
        K = self.space.stiffness()
        return float(np.sqrt(max(self.coeffs @ (K @ self.coeffs), 0.0)))

    def __repr__(self):
        return f"Field({self.space.kind}, dim={self.space.dim})"


# ---------------------------------------------------------------------------
# assembly


def _mesh_cache(mesh: QuadMesh) -> dict:
    cache = getattr(mesh, "_fem_cache", None)
    if cache is None:
        cache = mesh._fem_cache = {}
    return cache


def _cell_quad_data(mesh: QuadMesh, nq: int):
    """Cached per-mesh quadrature tables (points, weights, shapes)."""
    cache = _mesh_cache(mesh)
    key = ("quad", nq)
    if key not in cache:
        pts, wts = gauss_points(nq)
        cache[key] = (pts, wts, shape_values(pts), shape_gradients(pts))
    return cache[key]


def _cell_origin_arrays(mesh: QuadMesh):
    """Cached (x0, y0, h) arrays over cells."""
    cache = _mesh_cache(mesh)
    if "origins" not in cache:
        h = mesh.cell_sizes()
        x0 = np.array([c[1] for c in mesh.cells]) * h
        y0 = np.array([c[2] for c in mesh.cells]) * h
        cache["origins"] = (x0, y0, h)
    return cache["origins"]


def _vertex_to_cell(mesh: QuadMesh) -> np.ndarray:
    """Cached map vertex -> one incident cell id."""
    cache = _mesh_cache(mesh)
    if "v2c" not in cache:
        v2c = np.full(mesh.n_vertices, -1, dtype=np.int64)
        ids = np.repeat(np.arange(mesh.n_cells)[::-1], 4)
        v2c[mesh.cell_corners[::-1].ravel()] = ids
        cache["v2c"] = v2c
    return cache["v2c"]


def _assemble_full(mesh: QuadMesh, element_matrices: np.ndarray) -> sp.csr_matrix:
    """Scatter (n_cells, 4, 4) element matrices into the all-vertex matrix."""
    corners = mesh.cell_corners
    rows = np.repeat(corners, 4, axis=1).ravel()
    cols = np.tile(corners, (1, 4)).ravel()
    A = sp.coo_matrix(
        (element_matrices.ravel(), (rows, cols)),
        shape=(mesh.n_vertices, mesh.n_vertices),
    )
    return A.tocsr()


def assemble_stiffness(space: Space) -> sp.csr_matrix:
    """Condensed matrix of (grad u, grad v); independent of cell size."""
    mesh = space.mesh
    pts, wts, _, grads = _cell_quad_data(mesh, NQ_BASE)
    ref = np.einsum("q,qid,qjd->ij", wts, grads, grads)
    elems = np.broadcast_to(ref, (mesh.n_cells, 4, 4))
    A = _assemble_full(mesh, np.ascontiguousarray(elems))
    return (space.T.T @ A @ space.T).tocsr()


def assemble_mass(space_row: Space, space_col: Space) -> sp.csr_matrix:
    """Condensed matrix of (u, v), exact for Q1 under the base rule."""
    if space_row.mesh is not space_col.mesh:
        raise ValueError("mass assembly requires one mesh; use cross-mesh "
                         "evaluation to move fields first")
    mesh = space_row.mesh
    pts, wts, shapes, _ = _cell_quad_data(mesh, NQ_BASE)
    ref = np.einsum("q,qi,qj->ij", wts, shapes, shapes)
    h2 = mesh.cell_sizes() ** 2
    elems = h2[:, None, None] * ref[None, :, :]
    A = _assemble_full(mesh, elems)
    return (space_row.T.T @ A @ space_col.T).tocsr()


def assemble_weighted_mass(space: Space, weight: "Field", exponent: int) -> sp.csr_matrix:
    """Condensed matrix of (w**exponent u, v) for exponent in {2, 3}.

    The weight may live on a coarser nested mesh; it is re-interpolated
    exactly onto the space's mesh first.
    """
    if exponent not in (2, 3):
        raise ValueError("exponent must be 2 or 3")
    mesh = space.mesh
    wvals = _cell_values(weight, mesh, NQ_WEIGHTED)
    pts, wts, shapes, _ = _cell_quad_data(mesh, NQ_WEIGHTED)
    h2 = mesh.cell_sizes() ** 2
    elems = np.einsum(
        "c,cq,q,qi,qj->cij", h2, wvals**exponent, wts, shapes, shapes
    )
    A = _assemble_full(mesh, elems)
    return (space.T.T @ A @ space.T).tocsr()


def _cell_values(field: "Field", mesh: QuadMesh, nq: int) -> np.ndarray:
    """Values of a field at every quadrature point of every cell of mesh."""
    f = field if field.mesh is mesh else interpolate_onto(field, mesh)
    pts, wts, shapes, _ = _cell_quad_data(mesh, nq)
    corner_vals = f.full_values()[mesh.cell_corners]
    return corner_vals @ shapes.T


def assemble_functional(space: Space, f, nq: int = NQ_BASE) -> np.ndarray:
    """Vector of (f, phi_i) over free nodes; f is a callable or a Field."""
    mesh = space.mesh
    pts, wts, shapes, _ = _cell_quad_data(mesh, nq)
    if isinstance(f, Field):
        fvals = _cell_values(f, mesh, nq)
    else:
        x0, y0, h = _cell_origin_arrays(mesh)
        gx = x0[:, None] + h[:, None] * pts[None, :, 0]
        gy = y0[:, None] + h[:, None] * pts[None, :, 1]
        fvals = f(gx, gy)
    h2 = mesh.cell_sizes() ** 2
    cell_loads = np.einsum("c,cq,q,qi->ci", h2, fvals, wts, shapes)
    full = np.zeros(mesh.n_vertices)
    np.add.at(full, mesh.cell_corners.ravel(), cell_loads.ravel())
    return space.T.T @ full


def riesz_dual_norm(space: Space, functional: np.ndarray):
    """Dual norm of a functional via its Riesz representer.

    Solves (grad v, grad phi) = functional(phi) on the space and returns
    (norm, v) with norm = |grad v|, which realizes the H^-1-type dual
    norm used for state residuals.
    """
    functional = np.asarray(functional, dtype=float)
    if functional.shape != (space.dim,):
        raise ValueError("functional length mismatch")
    if space.dim == 0:
        raise ValueError("empty space has no Riesz representer")
    v = space.stiffness_solver().solve(functional)
    norm = float(np.sqrt(max(functional @ v, 0.0)))
    return norm, Field(space, v)


# ---------------------------------------------------------------------------
# cross-mesh evaluation


def _containment_map(src: QuadMesh, tgt: QuadMesh) -> tuple[np.ndarray, np.ndarray]:
    """For each target cell, the id of the source leaf containing it.

    Requires every target leaf to lie inside a source leaf (the target
    refines the source); raises otherwise.  Cached on the target mesh.
    """
    cache = _mesh_cache(tgt)
    key = ("contain", src.uid)
    if key not in cache:
        src_ids = np.full(tgt.n_cells, -1, dtype=np.int64)
        # Walk dyadic descendants of every source leaf and claim the
        # target leaves encountered; anything left unassigned is coarser
        # than the source there, i.e. the meshes are not nested.
        is_leaf = tgt._cell_ids
        cap = tgt.max_level
        for sid, cell in enumerate(src.cells):
            stack = [cell]
            while stack:
                node = stack.pop()
                tid = is_leaf.get(node)
                if tid is not None:
                    src_ids[tid] = sid
                elif node[0] < cap:
                    level, ix, iy = node
                    stack.extend((
                        (level + 1, 2 * ix, 2 * iy),
                        (level + 1, 2 * ix + 1, 2 * iy),
                        (level + 1, 2 * ix, 2 * iy + 1),
                        (level + 1, 2 * ix + 1, 2 * iy + 1),
                    ))
        if np.any(src_ids < 0):
            raise ValueError("meshes are not nested: some target cells are "
                             "coarser than the source leaves covering them")
        cache[key] = src_ids
    return cache[key]


def evaluate_cross_mesh(field: "Field", target_mesh: QuadMesh, points: np.ndarray) -> np.ndarray:
    """Exact evaluation of a field at arbitrary points of the target mesh.

    The target mesh only fixes the evaluation context (points are global
    coordinates); values come from the field's own mesh, so no
    projection error is introduced.
    """
    del target_mesh  # evaluation is pointwise on the field's own mesh
    return field.eval_points(points)


def interpolate_onto(field: "Field", mesh: QuadMesh) -> "Field":
    """Exact re-representation of a field on a nested finer mesh.

    The result has the same kind of space as the input and agrees with
    the input pointwise everywhere.  Results are cached on the field.
    """
    if field.mesh is mesh:
        return field
    cache = getattr(field, "_interp_cache", None)
    if cache is None:
        cache = field._interp_cache = {}
    if mesh.uid not in cache:
        space = vspace(mesh) if field.space.kind == "V" else qspace(mesh)
        src = field.mesh
        src_ids = _containment_map(src, mesh)
        full_src = field.full_values()
        # Evaluate each free vertex inside the source leaf that contains
        # one of its incident target cells (the vertex lies in its closure).
        cids = _vertex_to_cell(mesh)[space.free]
        sids = src_ids[cids]
        sx0, sy0, sh = _cell_origin_arrays(src)
        xy = mesh.vertices[space.free]
        s = (xy[:, 0] - sx0[sids]) / sh[sids]
        t = (xy[:, 1] - sy0[sids]) / sh[sids]
        c = full_src[src.cell_corners[sids]]
        coeffs = (
            c[:, 0] * (1 - s) * (1 - t)
            + c[:, 1] * s * (1 - t)
            + c[:, 2] * (1 - s) * t
            + c[:, 3] * s * t
        )
        cache[mesh.uid] = Field(space, coeffs)
    return cache[mesh.uid]


# ---------------------------------------------------------------------------
# patchwise biquadratic recovery for DWR weights


def _quad1d(t: np.ndarray) -> np.ndarray:
    """1D quadratic Lagrange basis at nodes {0, 1/2, 1}; shape (n, 3)."""
    return np.column_stack(
        [2 * (t - 0.5) * (t - 1.0), -4 * t * (t - 1.0), 2 * t * (t - 0.5)]
    )


def _quad1d_deriv(t: np.ndarray) -> np.ndarray:
    return np.column_stack([4 * t - 3.0, -8 * t + 4.0, 4 * t - 1.0])


class PatchWeight:
    """Interpolation-defect weight pi_h(x_h) - x_h of a Q1 field.

    Every leaf of level >= 1 recovers a biquadratic on its parent's 2x2
    child patch: the nine patch nodes (parent corners, edge midpoints,
    center) always exist as mesh vertices because the parent was
    subdivided, and constrained hanging values enter as such.  The
    weight on the cell is that biquadratic minus the bilinear field;
    cells whose patch is unavailable (the root cell, or a missing patch
    node) fall back to the identity, i.e. zero weight.
    """

    def __init__(self, field: "Field"):
        mesh = field.mesh
        self.mesh = mesh
        full = field.full_values()
        self.corner_vals = full[mesh.cell_corners]
        n = mesh.n_cells
        self.has_patch = np.zeros(n, dtype=bool)
        self.patch_vals = np.zeros((n, 3, 3))
        self.child_offset = np.zeros((n, 2), dtype=np.int64)
        patch_cache = {}
        for cid, (level, ix, iy) in enumerate(mesh.cells):
            if level == 0:
                continue
            parent = (level - 1, ix // 2, iy // 2)
            if parent not in patch_cache:
                patch_cache[parent] = self._patch_values(mesh, full, parent)
            vals = patch_cache[parent]
            if vals is None:
                continue
            self.has_patch[cid] = True
            self.patch_vals[cid] = vals
            self.child_offset[cid] = (ix % 2, iy % 2)

    @staticmethod
    def _patch_values(mesh, full, parent):
        level, ix, iy = parent
        step = 1 << (mesh.max_level - level)
        half = step // 2
        vals = np.empty((3, 3))
        for j in range(3):
            for i in range(3):
                vi = mesh.vertex_key_index(ix * step + i * half, iy * step + j * half)
                if vi is None:
                    return None
                vals[j, i] = full[vi]
        return vals

    def eval(self, cell_id: int, pts: np.ndarray):
        """Weight values and physical gradients at local points of a cell.

        Returns (w (n,), grad_w (n, 2)).
        """
        vals, grads = self._eval_cells(np.array([cell_id]), np.atleast_2d(pts))
        return vals[0], grads[0]

    def eval_all(self, pts: np.ndarray):
        """Weight values/gradients at the same local points of every cell.

        Returns (w (n_cells, n_pts), grad_w (n_cells, n_pts, 2)).
        """
        return self._eval_cells(np.arange(self.mesh.n_cells), pts)

    def eval_pairs(self, cell_ids: np.ndarray, pts: np.ndarray):
        """One (cell, local point) pair per row; returns (w (n,), gw (n,2))."""
        vals, grads = self._eval_cells(cell_ids, pts[:, None, :], paired=True)
        return vals[:, 0], grads[:, 0]

    def _eval_cells(self, cell_ids: np.ndarray, pts: np.ndarray, paired=False):
        if paired:
            npts = pts.shape[1]
            s, t = pts[..., 0], pts[..., 1]  # (nc, npts)
        else:
            npts = len(pts)
            s, t = pts[None, :, 0], pts[None, :, 1]
        dxy = self.child_offset[cell_ids]  # (nc, 2)
        ps = 0.5 * (s + dxy[:, 0, None])
        pt = 0.5 * (t + dxy[:, 1, None])
        ps = np.broadcast_to(ps, (len(cell_ids), npts))
        pt = np.broadcast_to(pt, (len(cell_ids), npts))
        ls = _quad1d(ps.ravel()).reshape(len(cell_ids), npts, 3)
        lt = _quad1d(pt.ravel()).reshape(len(cell_ids), npts, 3)
        dls = _quad1d_deriv(ps.ravel()).reshape(len(cell_ids), npts, 3)
        dlt = _quad1d_deriv(pt.ravel()).reshape(len(cell_ids), npts, 3)
        vals = self.patch_vals[cell_ids]
        quad = np.einsum("cji,cnj,cni->cn", vals, lt, ls)
        dquad_s = np.einsum("cji,cnj,cni->cn", vals, lt, dls)
        dquad_t = np.einsum("cji,cnj,cni->cn", vals, dlt, ls)

        c = self.corner_vals[cell_ids]
        one_s, one_t = 1 - s, 1 - t
        lin = (
            c[:, 0, None] * one_s * one_t + c[:, 1, None] * s * one_t
            + c[:, 2, None] * one_s * t + c[:, 3, None] * s * t
        )
        dlin_s = (
            (-c[:, 0, None] + c[:, 1, None]) * one_t
            + (-c[:, 2, None] + c[:, 3, None]) * t
        )
        dlin_t = (
            (-c[:, 0, None] + c[:, 2, None]) * one_s
            + (-c[:, 1, None] + c[:, 3, None]) * s
        )

        h = self.mesh.cell_sizes()[cell_ids][:, None]
        # Patch coordinate derivative: d(ps)/dx = 1/(2h).
        gx = dquad_s * (0.5 / h) - dlin_s / h
        gy = dquad_t * (0.5 / h) - dlin_t / h
        w = quad - lin
        mask = self.has_patch[cell_ids]
        w[~mask] = 0.0
        gx[~mask] = 0.0
        gy[~mask] = 0.0
        return w, np.stack([gx, gy], axis=-1)


def patch_interpolate(field: "Field") -> PatchWeight:
    """DWR weight object for a field (see PatchWeight)."""
    return PatchWeight(field)


class FieldWeight:
    """A discrete field presented through the weight-evaluation interface.

    Substituting such a weight into a Lagrangian-derivative pairing must
    annihilate it at a stationary point (Galerkin orthogonality); used
    for consistency checks.
    """

    def __init__(self, field: "Field"):
        self.mesh = field.mesh
        self.corner_vals = field.full_values()[self.mesh.cell_corners]

    def eval_all(self, pts: np.ndarray):
        c = self.corner_vals
        s, t = pts[:, 0], pts[:, 1]
        vals = (
            np.outer(c[:, 0], (1 - s) * (1 - t)) + np.outer(c[:, 1], s * (1 - t))
            + np.outer(c[:, 2], (1 - s) * t) + np.outer(c[:, 3], s * t)
        )
        gs = np.outer(-c[:, 0] + c[:, 1], (1 - t)) + np.outer(-c[:, 2] + c[:, 3], t)
        gt = np.outer(-c[:, 0] + c[:, 2], (1 - s)) + np.outer(-c[:, 1] + c[:, 3], s)
        h = self.mesh.cell_sizes()[:, None]
        return vals, np.stack([gs / h, gt / h], axis=-1)

    def eval(self, cell_id: int, pts: np.ndarray):
        c = self.corner_vals[cell_id]
        s, t = pts[:, 0], pts[:, 1]
        vals = (
            c[0] * (1 - s) * (1 - t) + c[1] * s * (1 - t)
            + c[2] * (1 - s) * t + c[3] * s * t
        )
        gs = (-c[0] + c[1]) * (1 - t) + (-c[2] + c[3]) * t
        gt = (-c[0] + c[2]) * (1 - s) + (-c[1] + c[3]) * s
        _, _, h = self.mesh.cell_geometry(cell_id)
        return vals, np.column_stack([gs / h, gt / h])

    def eval_pairs(self, cell_ids: np.ndarray, pts: np.ndarray):
        c = self.corner_vals[cell_ids]
        s, t = pts[:, 0], pts[:, 1]
        vals = (
            c[:, 0] * (1 - s) * (1 - t) + c[:, 1] * s * (1 - t)
            + c[:, 2] * (1 - s) * t + c[:, 3] * s * t
        )
        gs = (-c[:, 0] + c[:, 1]) * (1 - t) + (-c[:, 2] + c[:, 3]) * t
        gt = (-c[:, 0] + c[:, 2]) * (1 - s) + (-c[:, 1] + c[:, 3]) * s
        h = self.mesh.cell_sizes()[cell_ids]
        return vals, np.column_stack([gs / h, gt / h])


# ---------------------------------------------------------------------------
# export


def write_field_vtk(field: "Field", path, name: str = "value") -> None:
    """Mesh plus point data in legacy ASCII VTK."""
    mesh = field.mesh
    full = field.full_values()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write("field\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.16g} {y:.16g} 0\n")
        fh.write(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}\n")
        for sw, se, nw, ne in mesh.cell_corners:
            fh.write(f"4 {sw} {se} {ne} {nw}\n")
        fh.write(f"CELL_TYPES {mesh.n_cells}\n")
        fh.write("".join("9\n" for _ in range(mesh.n_cells)))
        fh.write(f"POINT_DATA {mesh.n_vertices}\n")
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in full:
            fh.write(f"{v:.16g}\n")


def write_field_csv(field: "Field", path) -> None:
    """CSV of (x, y, value) triples over all vertices."""
    mesh = field.mesh
    full = field.full_values()
    with open(path, "w") as fh:
        fh.write("x,y,value\n")
        for (x, y), v in zip(mesh.vertices, full):
            fh.write(f"{x:.16g},{y:.16g},{v:.16g}\n")
