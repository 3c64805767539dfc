"""Cellwise mixed local solvers, static condensation to the continuous skeleton,
global assembly, reconstruction, and error norms.

The skeleton unknown is a continuous piecewise-P_p function on the mesh faces,
zero on the boundary. Cells see it through a per-face trace layout with
3*(p+1) slots (corner values duplicated across the two incident faces); the
global numbering collapses shared vertices and face nodes to single unknowns.

Local systems depend on a cell only through its Jacobian and the penalty
value, so cells are grouped into congruence classes and each class is solved
once. On the nested hierarchies used here the number of classes per level is
tiny; arbitrary coarse meshes simply produce more classes.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .basis import cell_basis, face_basis, cell_quadrature, face_quadrature, \
    triangle_rule_for_degree, REF_VERTICES
from .mesh import TriMesh

__all__ = [
    "AssemblyError",
    "PenaltyLaw",
    "SkeletonDofMap",
    "CellLocalSystem",
    "LocalSystemSet",
    "CondensedLevel",
    "FieldSolution",
    "build_dof_map",
    "build_local_system",
    "build_local_systems",
    "assemble_condensed",
    "reconstruct",
    "l2_errors",
    "eoc",
    "weighted_skeleton_norm",
    "skeleton_trace_norm",
    "assemble_weighted_gram",
]


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class PenaltyLaw:
    """Penalty tau = c * h^(-alpha); h is the level's maximal cell diameter,
    or each cell's own diameter when per_cell is set (untested variant)."""

    c: float = 1.0
    alpha: float = 1.0
    per_cell: bool = False

    @classmethod
    def inv_h(cls, c=1.0):
        return cls(c=c, alpha=1.0)

    @classmethod
    def const(cls, c=1.0):
        return cls(c=c, alpha=0.0)

    def value(self, h):
        return self.c * float(h) ** (-self.alpha)

    def tau_for(self, mesh: TriMesh):
        """Scalar tau for a level, or per-cell array for the per-cell variant."""
        if not self.per_cell:
            return self.value(mesh.max_diameter())
        p = mesh.vertices[mesh.cells]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
        diam = np.sqrt((e * e).sum(axis=2)).max(axis=0)
        return self.c * diam ** (-self.alpha)

    def label(self):
        if self.alpha == 0.0:
            return f"tau={self.c:g}"
        if self.alpha == 1.0:
            return f"tau={self.c:g}/h" + ("_T" if self.per_cell else "")
        return f"tau={self.c:g}*h^-{self.alpha:g}"


@dataclass(frozen=True)
class SkeletonDofMap:
    """Global numbering of the continuous skeleton unknowns.

    Interior vertices come first (ascending vertex index), then p-1 unknowns
    per interior face (ascending face index, nodes ordered from the lower- to
    the higher-indexed endpoint). Boundary vertices and faces carry no
    unknowns; constrained slots in the per-cell gather lists are -1.
    """

    level: int
    degree: int
    n_dofs: int
    n_interior_vertices: int
    dof_of_vertex: np.ndarray     # (nv,), -1 on boundary
    dof_of_face_node: np.ndarray  # (nf, p-1), -1 on boundary faces
    cell_gather: np.ndarray       # (nc, 3*(p+1))
    dof_points: np.ndarray        # (n_dofs, 2)

    @property
    def slots_per_cell(self):
        return 3 * (self.degree + 1)


def build_dof_map(mesh: TriMesh, p: int) -> SkeletonDofMap:
    if p < 1:
        raise ValueError("degree must be >= 1")
    nv, nc, nf = mesh.n_vertices, mesh.n_cells, mesh.n_faces
    bdry_v = mesh.boundary_vertex_mask()

    dof_of_vertex = np.full(nv, -1, dtype=np.int64)
    interior_v = np.flatnonzero(~bdry_v)
    dof_of_vertex[interior_v] = np.arange(interior_v.size)
    niv = interior_v.size

    dof_of_face_node = np.full((nf, max(p - 1, 1)), -1, dtype=np.int64)[:, : p - 1]
    interior_f = np.flatnonzero(~mesh.face_boundary)
    if p > 1:
        base = niv + (p - 1) * np.arange(interior_f.size)
        dof_of_face_node = np.full((nf, p - 1), -1, dtype=np.int64)
        dof_of_face_node[interior_f] = base[:, None] + np.arange(p - 1)
    n_dofs = niv + (p - 1) * interior_f.size

    tails = mesh.cells
    heads = mesh.cells[:, [1, 2, 0]]
    gather = np.full((nc, 3, p + 1), -1, dtype=np.int64)
    gather[:, :, 0] = dof_of_vertex[tails]
    gather[:, :, p] = dof_of_vertex[heads]
    if p > 1:
        fidx = mesh.cell_faces
        forward = mesh.cell_face_sign > 0
        for j in range(1, p):
            k = np.where(forward, j, p - j)
            gather[:, :, j] = np.take_along_axis(
                dof_of_face_node[fidx], (k - 1)[:, :, None], axis=2
            )[:, :, 0]

    pts = np.zeros((n_dofs, 2))
    pts[dof_of_vertex[interior_v]] = mesh.vertices[interior_v]
    if p > 1:
        a = mesh.vertices[mesh.faces[interior_f, 0]]
        b = mesh.vertices[mesh.faces[interior_f, 1]]
        for k in range(1, p):
            pts[dof_of_face_node[interior_f, k - 1]] = a + (k / p) * (b - a)

    return SkeletonDofMap(
        level=mesh.level,
        degree=p,
        n_dofs=n_dofs,
        n_interior_vertices=niv,
        dof_of_vertex=dof_of_vertex,
        dof_of_face_node=dof_of_face_node,
        cell_gather=gather.reshape(nc, 3 * (p + 1)),
        dof_points=pts,
    )


@dataclass(frozen=True)
class CellLocalSystem:
    """Dense blocks and solution maps of one cell's mixed local problem.

    The mixed system couples flux coefficients (2*n_u, component-blocked) and
    primary coefficients (n_u). Solution maps carry trace data (3*(p+1) slots)
    or load moments (integrals of f against the cell basis) to coefficients.
    """

    degree: int
    tau: float
    jac: np.ndarray
    det: float
    area: float
    perimeter: float
    face_lengths: np.ndarray  # (3,)
    normals: np.ndarray       # (3, 2) outward
    mass_u: np.ndarray        # (nu, nu) scalar mass; flux mass is its 2-block
    div_x: np.ndarray         # D[a, b] = integral of (d phi_a / dx) phi_b
    div_y: np.ndarray
    bdry_mass: np.ndarray     # (nu, nu) boundary mass of the primary basis
    bdry_flux_x: np.ndarray   # (nu, nu) boundary coupling phi_i phi_k nu_x
    bdry_flux_y: np.ndarray
    trace_flux: np.ndarray    # (2 nu, nt) trace against flux normal components
    trace_mass: np.ndarray    # (nu, nt) trace against primary basis
    trace_trace: np.ndarray   # (nt, nt) blockwise face mass of the trace layout
    factorization: linalg.DenseFactorization
    u_trace: np.ndarray       # (nu, nt)
    q_trace: np.ndarray       # (2 nu, nt)
    u_load: np.ndarray        # (nu, nu)
    q_load: np.ndarray        # (2 nu, nu)
    schur: np.ndarray         # (nt, nt)

    @property
    def n_u(self):
        return self.mass_u.shape[0]

    @property
    def n_trace(self):
        return self.trace_trace.shape[0]

    @property
    def load_map(self):
        """Maps load moments to the condensed right-hand-side contribution."""
        return self.u_trace.T


def _local_system_from_jacobian(jac, tau, p) -> CellLocalSystem:
    if tau <= 0.0:
        raise AssemblyError(f"penalty must be positive, got {tau}")
    jac = np.asarray(jac, dtype=np.float64)
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 0.0:
        raise AssemblyError(f"degenerate or inverted cell, det = {det}")
    jinv = np.array([[jac[1, 1], -jac[0, 1]], [-jac[1, 0], jac[0, 0]]]) / det

    cb = cell_basis(p)
    fb = face_basis(p)
    nu = cb.n_functions
    nt = 3 * (p + 1)

    rule = cell_quadrature(p)
    vals, grads_ref = cb.eval(rule.points)
    grads = grads_ref @ jinv  # physical gradients, (ng, nu, 2)
    wdet = rule.weights * det
    mass_u = vals.T @ (wdet[:, None] * vals)
    div_x = grads[:, :, 0].T @ (wdet[:, None] * vals)
    div_y = grads[:, :, 1].T @ (wdet[:, None] * vals)

    frule = face_quadrature(p)
    ts = frule.points[:, 0]
    fw = frule.weights
    x1d = fb.eval(ts)  # (nfq, p+1)

    face_lengths = np.zeros(3)
    normals = np.zeros((3, 2))
    face_vals = []
    for f in range(3):
        ra, rb = REF_VERTICES[f], REF_VERTICES[(f + 1) % 3]
        edge = jac @ (rb - ra)
        L = float(np.hypot(edge[0], edge[1]))
        face_lengths[f] = L
        normals[f] = np.array([edge[1], -edge[0]]) / L
        pts = ra[None, :] + ts[:, None] * (rb - ra)[None, :]
        fv, _ = cb.eval(pts)
        face_vals.append(fv)

    bdry_mass = np.zeros((nu, nu))
    bdry_flux_x = np.zeros((nu, nu))
    bdry_flux_y = np.zeros((nu, nu))
    trace_flux = np.zeros((2 * nu, nt))
    trace_mass = np.zeros((nu, nt))
    trace_trace = np.zeros((nt, nt))
    for f in range(3):
        L = face_lengths[f]
        fv = face_vals[f]
        blk = fv.T @ (fw[:, None] * fv) * L
        bdry_mass += blk
        bdry_flux_x += normals[f, 0] * blk
        bdry_flux_y += normals[f, 1] * blk
        cols = slice(f * (p + 1), (f + 1) * (p + 1))
        cross = fv.T @ (fw[:, None] * x1d) * L
        trace_flux[:nu, cols] = normals[f, 0] * cross
        trace_flux[nu:, cols] = normals[f, 1] * cross
        trace_mass[:, cols] = cross
        trace_trace[cols, cols] = x1d.T @ (fw[:, None] * x1d) * L

    K = np.zeros((3 * nu, 3 * nu))
    K[:nu, :nu] = mass_u
    K[nu : 2 * nu, nu : 2 * nu] = mass_u
    K[:nu, 2 * nu :] = -div_x
    K[nu : 2 * nu, 2 * nu :] = -div_y
    K[2 * nu :, :nu] = bdry_flux_x - div_x
    K[2 * nu :, nu : 2 * nu] = bdry_flux_y - div_y
    K[2 * nu :, 2 * nu :] = tau * bdry_mass

    try:
        fact = linalg.factorize(K)
    except linalg.SingularMatrixError as exc:
        raise AssemblyError(f"local mixed system is singular: {exc}") from exc

    rhs_tr = np.vstack([-trace_flux, tau * trace_mass])
    x_tr = linalg.back_solve(fact, rhs_tr)
    q_trace, u_trace = x_tr[: 2 * nu], x_tr[2 * nu :]
    rhs_f = np.vstack([np.zeros((2 * nu, nu)), np.eye(nu)])
    x_f = linalg.back_solve(fact, rhs_f)
    q_load, u_load = x_f[: 2 * nu], x_f[2 * nu :]

    schur = (
        q_trace[:nu].T @ mass_u @ q_trace[:nu]
        + q_trace[nu:].T @ mass_u @ q_trace[nu:]
    )
    for f in range(3):
        cols = slice(f * (p + 1), (f + 1) * (p + 1))
        misfit = face_vals[f] @ u_trace
        misfit[:, cols] -= x1d
        schur += tau * face_lengths[f] * (misfit.T @ (fw[:, None] * misfit))
    asym = np.max(np.abs(schur - schur.T))
    if asym > 1e-12 * max(np.max(np.abs(schur)), 1e-300):
        raise AssemblyError(f"condensed cell block asymmetric by {asym:.3e}")
    schur = 0.5 * (schur + schur.T)

    return CellLocalSystem(
        degree=p,
        tau=float(tau),
        jac=jac,
        det=float(det),
        area=0.5 * float(det),
        perimeter=float(face_lengths.sum()),
        face_lengths=face_lengths,
        normals=normals,
        mass_u=mass_u,
        div_x=div_x,
        div_y=div_y,
        bdry_mass=bdry_mass,
        bdry_flux_x=bdry_flux_x,
        bdry_flux_y=bdry_flux_y,
        trace_flux=trace_flux,
        trace_mass=trace_mass,
        trace_trace=trace_trace,
        factorization=fact,
        u_trace=u_trace,
        q_trace=q_trace,
        u_load=u_load,
        q_load=q_load,
        schur=schur,
    )


def _cell_jacobians(mesh: TriMesh):
    p = mesh.vertices[mesh.cells]
    jacs = np.empty((mesh.n_cells, 2, 2))
    jacs[:, :, 0] = p[:, 1] - p[:, 0]
    jacs[:, :, 1] = p[:, 2] - p[:, 0]
    return jacs, p[:, 0]


def build_local_system(mesh: TriMesh, cell: int, p: int, tau: float) -> CellLocalSystem:
    jacs, _ = _cell_jacobians(mesh)
    return _local_system_from_jacobian(jacs[cell], tau, p)


@dataclass(frozen=True)
class LocalSystemSet:
    """Local systems for all cells of a level, shared across congruent cells."""

    degree: int
    classes: list
    cell_class: np.ndarray  # (nc,)
    origins: np.ndarray     # (nc, 2) first vertex of each cell

    def for_cell(self, c) -> CellLocalSystem:
        return self.classes[self.cell_class[c]]


def build_local_systems(mesh: TriMesh, p: int, tau) -> LocalSystemSet:
    """Build per-cell local systems, factoring each distinct Jacobian once.

    tau may be a scalar (one penalty per level) or a per-cell array that is
    constant on congruence classes.
    """
    jacs, origins = _cell_jacobians(mesh)
    flat = jacs.reshape(mesh.n_cells, 4)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    tau_arr = np.broadcast_to(np.asarray(tau, dtype=np.float64), (mesh.n_cells,))
    classes = []
    for ci in range(uniq.shape[0]):
        members = np.flatnonzero(inverse == ci)
        t = tau_arr[members]
        if np.ptp(t) != 0.0:
            raise AssemblyError("per-cell penalty differs within a congruence class")
        classes.append(_local_system_from_jacobian(uniq[ci].reshape(2, 2), t[0], p))
    return LocalSystemSet(
        degree=p, classes=classes, cell_class=inverse.astype(np.int64), origins=origins
    )


@dataclass(frozen=True)
class CondensedLevel:
    """Condensed skeleton system A lam = b on one level."""

    level: int
    A: linalg.SparseMatrix
    b: np.ndarray
    tau: float
    dof_map: SkeletonDofMap
    mesh: TriMesh
    locals: LocalSystemSet

    @property
    def n_dofs(self):
        return self.dof_map.n_dofs


@dataclass(frozen=True)
class FieldSolution:
    """Skeleton coefficients plus the reconstructed cellwise fields."""

    level: CondensedLevel
    lam: np.ndarray
    u: np.ndarray  # (nc, nu) cell basis coefficients
    q: np.ndarray  # (nc, 2, nu) component-blocked flux coefficients


def _load_moments(mesh, locset: LocalSystemSet, f, degree_bump=0):
    """Moments m[c, i] = integral over cell c of f * phi_i."""
    p = locset.degree
    nu = cell_basis(p).n_functions
    out = np.zeros((mesh.n_cells, nu))
    if f is None:
        return out
    rule = triangle_rule_for_degree(2 * p + 2 + degree_bump)
    vals, _ = cell_basis(p).eval(rule.points)
    for ci, loc in enumerate(locset.classes):
        members = np.flatnonzero(locset.cell_class == ci)
        X = locset.origins[members, None, :] + rule.points @ loc.jac.T
        fv = np.asarray(f(X[:, :, 0], X[:, :, 1]), dtype=np.float64)
        out[members] = (fv * rule.weights) @ vals * loc.det
    return out


def assemble_condensed(mesh: TriMesh, dof_map: SkeletonDofMap, locset: LocalSystemSet,
                       f=None) -> CondensedLevel:
    """Assemble A = sum of gathered cell Schur blocks and the load vector.

    Boundary slots (gather index -1) are dropped, which eliminates the
    homogeneous Dirichlet skeleton values at numbering time.
    """
    n = dof_map.n_dofs
    nt = dof_map.slots_per_cell
    gather = dof_map.cell_gather

    rows_all, cols_all, vals_all = [], [], []
    for ci, loc in enumerate(locset.classes):
        members = np.flatnonzero(locset.cell_class == ci)
        g = gather[members]
        rows = np.broadcast_to(g[:, :, None], (members.size, nt, nt))
        cols = np.broadcast_to(g[:, None, :], (members.size, nt, nt))
        vals = np.broadcast_to(loc.schur[None, :, :], (members.size, nt, nt))
        keep = (rows >= 0) & (cols >= 0)
        rows_all.append(rows[keep])
        cols_all.append(cols[keep])
        vals_all.append(vals[keep])
    A = linalg.csr_from_coo(
        n, n,
        np.concatenate(rows_all) if rows_all else np.zeros(0, dtype=np.int64),
        np.concatenate(cols_all) if cols_all else np.zeros(0, dtype=np.int64),
        np.concatenate(vals_all) if vals_all else np.zeros(0),
    )

    b = np.zeros(n)
    if f is not None:
        moments = _load_moments(mesh, locset, f)
        for ci, loc in enumerate(locset.classes):
            members = np.flatnonzero(locset.cell_class == ci)
            g = gather[members]
            contrib = moments[members] @ loc.u_trace
            keep = g >= 0
            np.add.at(b, g[keep], contrib[keep])

    tau0 = locset.classes[0].tau if locset.classes else 0.0
    return CondensedLevel(
        level=mesh.level, A=A, b=b, tau=tau0, dof_map=dof_map, mesh=mesh, locals=locset
    )


def gather_trace(dof_map: SkeletonDofMap, lam):
    """Per-cell trace slot values of a skeleton vector (0 in constrained slots)."""
    g = dof_map.cell_gather
    out = np.where(g >= 0, np.asarray(lam)[np.clip(g, 0, None)], 0.0)
    return out


def reconstruct(level: CondensedLevel, lam, f=None) -> FieldSolution:
    """Recover cellwise primary and flux coefficients from skeleton values."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape[0] != level.n_dofs:
        raise ValueError("skeleton vector has wrong length")
    locset = level.locals
    p = locset.degree
    nu = cell_basis(p).n_functions
    nc = level.mesh.n_cells
    lam_loc = gather_trace(level.dof_map, lam)
    moments = _load_moments(level.mesh, locset, f)
    u = np.zeros((nc, nu))
    q = np.zeros((nc, 2 * nu))
    for ci, loc in enumerate(locset.classes):
        members = np.flatnonzero(locset.cell_class == ci)
        u[members] = lam_loc[members] @ loc.u_trace.T + moments[members] @ loc.u_load.T
        q[members] = lam_loc[members] @ loc.q_trace.T + moments[members] @ loc.q_load.T
    return FieldSolution(level=level, lam=lam, u=u, q=q.reshape(nc, 2, nu))


def l2_errors(sol: FieldSolution, u_exact, q_exact):
    """Broken L2 errors of the primary and flux fields against callables.

    u_exact(x, y) returns values; q_exact(x, y) returns a pair (q_x, q_y).
    """
    level = sol.level
    locset = level.locals
    p = locset.degree
    rule = triangle_rule_for_degree(2 * p + 4)
    vals, _ = cell_basis(p).eval(rule.points)
    e2u = 0.0
    e2q = 0.0
    for ci, loc in enumerate(locset.classes):
        members = np.flatnonzero(locset.cell_class == ci)
        X = locset.origins[members, None, :] + rule.points @ loc.jac.T
        x, y = X[:, :, 0], X[:, :, 1]
        du = sol.u[members] @ vals.T - u_exact(x, y)
        e2u += loc.det * float(((du * du) @ rule.weights).sum())
        qx, qy = q_exact(x, y)
        dqx = sol.q[members, 0] @ vals.T - qx
        dqy = sol.q[members, 1] @ vals.T - qy
        e2q += loc.det * float((((dqx * dqx) + (dqy * dqy)) @ rule.weights).sum())
    return np.sqrt(e2u), np.sqrt(e2q)


def eoc(err_coarse, err_fine):
    """Estimated order of convergence between two nested levels."""
    return float(np.log(err_coarse / err_fine) / np.log(2.0))


def _face_mass_1d(p):
    fb = face_basis(p)
    fr = face_quadrature(p)
    x1d = fb.eval(fr.points[:, 0])
    return x1d.T @ (fr.weights[:, None] * x1d)


def _cell_face_weights(mesh, dof_map, weighted):
    """Per-cell slot-space quadratic form of the skeleton inner product."""
    p = dof_map.degree
    mhat = _face_mass_1d(p)
    jacs, _ = _cell_jacobians(mesh)
    det = jacs[:, 0, 0] * jacs[:, 1, 1] - jacs[:, 0, 1] * jacs[:, 1, 0]
    e0 = jacs @ (REF_VERTICES[1] - REF_VERTICES[0])
    e1 = jacs @ (REF_VERTICES[2] - REF_VERTICES[1])
    e2 = jacs @ (REF_VERTICES[0] - REF_VERTICES[2])
    L = np.stack([np.hypot(e0[:, 0], e0[:, 1]),
                  np.hypot(e1[:, 0], e1[:, 1]),
                  np.hypot(e2[:, 0], e2[:, 1])], axis=1)
    if weighted:
        L = L * (0.5 * det / L.sum(axis=1))[:, None]
    return L, mhat


def _skeleton_quadratic(mesh, dof_map, lam, weighted):
    lam_loc = gather_trace(dof_map, lam).reshape(mesh.n_cells, 3, dof_map.degree + 1)
    W, mhat = _cell_face_weights(mesh, dof_map, weighted)
    per_face = np.einsum("cfa,ab,cfb->cf", lam_loc, mhat, lam_loc)
    return float((W * per_face).sum())


def weighted_skeleton_norm(dof_map: SkeletonDofMap, mesh: TriMesh, lam):
    """Norm induced by sum over cells of |T|/|dT| * integral over dT."""
    return float(np.sqrt(_skeleton_quadratic(mesh, dof_map, lam, weighted=True)))


def skeleton_trace_norm(dof_map: SkeletonDofMap, mesh: TriMesh, lam):
    """Unweighted boundary trace norm; interior faces count from both sides."""
    return float(np.sqrt(_skeleton_quadratic(mesh, dof_map, lam, weighted=False)))


def assemble_weighted_gram(mesh: TriMesh, dof_map: SkeletonDofMap) -> linalg.SparseMatrix:
    """Gram matrix of the weighted skeleton inner product on the global numbering."""
    p = dof_map.degree
    n = dof_map.n_dofs
    W, mhat = _cell_face_weights(mesh, dof_map, weighted=True)
    gather = dof_map.cell_gather.reshape(mesh.n_cells, 3, p + 1)
    rows_all, cols_all, vals_all = [], [], []
    for f in range(3):
        g = gather[:, f]
        rows = np.broadcast_to(g[:, :, None], (mesh.n_cells, p + 1, p + 1))
        cols = np.broadcast_to(g[:, None, :], (mesh.n_cells, p + 1, p + 1))
        vals = W[:, f, None, None] * mhat[None, :, :]
        keep = (rows >= 0) & (cols >= 0)
        rows_all.append(rows[keep])
        cols_all.append(cols[keep])
        vals_all.append(vals[keep])
    return linalg.csr_from_coo(
        n, n, np.concatenate(rows_all), np.concatenate(cols_all), np.concatenate(vals_all)
    )
