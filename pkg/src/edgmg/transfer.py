"""Coarse-to-fine skeleton injection and its transpose restriction.

The injection is built in three steps: extend coarse skeleton data to a
continuous piecewise-P_p function on the coarse mesh (face nodes keep their
skeleton values, cell-interior nodes take the local solver's value), embed
that function into the fine space, and take its trace at the fine skeleton
nodes. Each fine node is evaluated from the lowest-indexed coarse cell that
contains it; when several cells contain the node the construction checks that
they all produce the same row, which the continuity of the extension
guarantees up to roundoff.

Restriction is the Euclidean transpose of the assembled matrix. The adjoint
with respect to the weighted skeleton product is available separately as a
diagnostic; the two differ by a bounded factor on quasi-uniform meshes.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .basis import cell_basis
from .edg import CondensedLevel, SkeletonDofMap, LocalSystemSet, gather_trace
from .mesh import MeshHierarchy

__all__ = [
    "TransferOperator",
    "continuous_extension",
    "build_injection",
    "inject",
    "restrict",
    "weighted_restriction",
]


@dataclass(frozen=True)
class TransferOperator:
    fine_level: int
    matrix: linalg.SparseMatrix  # (n_fine, n_coarse)

    @property
    def shape(self):
        return self.matrix.shape


def _extension_matrices(locset: LocalSystemSet):
    """Per congruence class: map from trace slots to cell nodal coefficients."""
    p = locset.degree
    cb = cell_basis(p)
    mats = []
    for loc in locset.classes:
        E = np.zeros((cb.n_functions, 3 * (p + 1)))
        for row, kind in enumerate(cb.node_kinds):
            if kind[0] == "vertex":
                E[row, kind[1] * (p + 1)] = 1.0
            elif kind[0] == "edge":
                E[row, kind[1] * (p + 1) + kind[2]] = 1.0
            else:
                E[row] = loc.u_trace[row]
        mats.append(E)
    return mats


def continuous_extension(coarse_level: CondensedLevel, lam):
    """Nodal coefficients of the continuous extension, one row per coarse cell."""
    lam = np.asarray(lam, dtype=np.float64)
    locset = coarse_level.locals
    lam_loc = gather_trace(coarse_level.dof_map, lam)
    exts = _extension_matrices(locset)
    out = np.zeros((coarse_level.mesh.n_cells, cell_basis(locset.degree).n_functions))
    for ci, E in enumerate(exts):
        members = np.flatnonzero(locset.cell_class == ci)
        out[members] = lam_loc[members] @ E.T
    return out


def _vertex_cells(mesh):
    """CSR-style adjacency vertex -> incident cells."""
    flat = mesh.cells.ravel()
    order = np.argsort(flat, kind="stable")
    owners = np.repeat(np.arange(mesh.n_cells), 3)[order]
    starts = np.searchsorted(flat[order], np.arange(mesh.n_vertices + 1))
    return owners, starts


def _candidate_parents(hierarchy: MeshHierarchy, level, fine_map: SkeletonDofMap):
    """Sorted coarse-cell candidates containing each fine skeleton DoF."""
    fine = hierarchy.levels[level]
    parents = hierarchy.parent_cells(level)
    n = fine_map.n_dofs
    cand = [()] * n

    owners, starts = _vertex_cells(fine)
    for v in np.flatnonzero(fine_map.dof_of_vertex >= 0):
        dof = fine_map.dof_of_vertex[v]
        cand[dof] = tuple(sorted(set(parents[owners[starts[v]:starts[v + 1]]].tolist())))

    p = fine_map.degree
    if p > 1:
        for F in np.flatnonzero(fine_map.dof_of_face_node[:, 0] >= 0):
            cells = fine.face_cells[F]
            here = tuple(sorted({int(parents[c]) for c in cells if c >= 0}))
            for k in range(p - 1):
                cand[fine_map.dof_of_face_node[F, k]] = here
    return cand


def _rows_from_cells(coarse_mesh, coarse_map, locset, exts, dof_idx, cells, points):
    """COO triplets of injection rows evaluated inside the given coarse cells."""
    p = locset.degree
    cb = cell_basis(p)
    gather = coarse_map.cell_gather
    rows_all, cols_all, vals_all = [], [], []
    cls = locset.cell_class[cells]
    for ci in np.unique(cls):
        sel = cls == ci
        loc = locset.classes[ci]
        jinv = np.array([[loc.jac[1, 1], -loc.jac[0, 1]],
                         [-loc.jac[1, 0], loc.jac[0, 0]]]) / loc.det
        ref = (points[sel] - locset.origins[cells[sel]]) @ jinv.T
        vals, _ = cb.eval(ref)
        W = vals @ exts[ci]  # (npts, nt)
        g = gather[cells[sel]]
        r = np.broadcast_to(dof_idx[sel][:, None], g.shape)
        keep = g >= 0
        rows_all.append(r[keep])
        cols_all.append(g[keep])
        vals_all.append(W[keep])
    return (np.concatenate(rows_all) if rows_all else np.zeros(0, dtype=np.int64),
            np.concatenate(cols_all) if cols_all else np.zeros(0, dtype=np.int64),
            np.concatenate(vals_all) if vals_all else np.zeros(0))


def build_injection(hierarchy: MeshHierarchy, level: int,
                    coarse_map: SkeletonDofMap, fine_map: SkeletonDofMap,
                    coarse_locals: LocalSystemSet,
                    consistency_tol=1e-12) -> TransferOperator:
    """Assemble the injection matrix from level-1 to `level`.

    Column j holds the fine skeleton nodal values of the continuous extension
    of the j-th coarse basis vector. Rows are evaluated in the lowest-indexed
    containing coarse cell; other containing cells are evaluated too and must
    agree within consistency_tol.
    """
    coarse_mesh = hierarchy.levels[level - 1]
    exts = _extension_matrices(coarse_locals)
    cand = _candidate_parents(hierarchy, level, fine_map)
    n_fine = fine_map.n_dofs
    pts = fine_map.dof_points

    primary = np.array([c[0] for c in cand], dtype=np.int64)
    dofs = np.arange(n_fine, dtype=np.int64)
    rows, cols, vals = _rows_from_cells(
        coarse_mesh, coarse_map, coarse_locals, exts, dofs, primary, pts
    )
    matrix = linalg.csr_from_coo(
        n_fine, coarse_map.n_dofs, rows, cols, vals, drop_tol=1e-14
    )

    extra_dofs = []
    extra_cells = []
    for dof, cells in enumerate(cand):
        for c in cells[1:]:
            extra_dofs.append(dof)
            extra_cells.append(c)
    if extra_dofs:
        extra_dofs = np.array(extra_dofs, dtype=np.int64)
        extra_cells = np.array(extra_cells, dtype=np.int64)
        r2, c2, v2 = _rows_from_cells(
            coarse_mesh, coarse_map, coarse_locals, exts, extra_dofs, extra_cells, pts[extra_dofs]
        )
        checked = np.unique(extra_dofs)
        counts = np.zeros(n_fine, dtype=np.int64)
        np.add.at(counts, extra_dofs, 1)
        # difference (secondary - primary * multiplicity) must vanish rowwise
        sel = np.isin(rows, checked)
        diff = linalg.csr_from_coo(
            n_fine, coarse_map.n_dofs,
            np.concatenate([r2, rows[sel]]),
            np.concatenate([c2, cols[sel]]),
            np.concatenate([v2, -counts[rows[sel]] * vals[sel]]),
        )
        worst = np.max(np.abs(diff.data)) if diff.data.size else 0.0
        if worst > consistency_tol:
            raise AssertionError(
                f"continuous extension disagrees across coarse cells by {worst:.3e}"
            )
    return TransferOperator(fine_level=level, matrix=matrix)


def inject(op: TransferOperator, lam_coarse):
    return linalg.spmv(op.matrix, lam_coarse)


def restrict(op: TransferOperator, r_fine):
    return linalg.transpose_apply(op.matrix, r_fine)


def weighted_restriction(op: TransferOperator, gram_coarse: linalg.SparseMatrix,
                         gram_fine: linalg.SparseMatrix, r_fine):
    """Adjoint of injection in the weighted skeleton inner product (diagnostic).

    Solves G_coarse x = I^T G_fine r with a dense factorization, so intended
    for the modest level sizes where the discrepancy to the Euclidean
    transpose is examined.
    """
    rhs = linalg.transpose_apply(op.matrix, linalg.spmv(gram_fine, r_fine))
    fact = linalg.factorize(gram_coarse.todense())
    return linalg.back_solve(fact, rhs)
