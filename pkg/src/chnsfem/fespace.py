"""Periodic P1 and P2 spaces on criss-cross torus meshes.

Provides degree-of-freedom maps that respect the periodic identification,
basis tabulation at quadrature points, nodal interpolation, point
evaluation, exact nested prolongation, quadrature-based norms, and the
skew-symmetric convection form.

DOF ordering is deterministic: vertices first (the mesh's lexicographic
vertex order), then edge midpoints sorted lexicographically by their
wrapped coordinates.  Vector-valued P2 coefficients are component-blocked,
``coefficients[c*num_scalar_dofs + k]`` holding component ``c`` at scalar
DOF ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import PeriodicTriMesh, QuadRule, quad_rule

P1 = "P1-scalar"
P1_MEANFREE = "P1-scalar-meanfree"
P2 = "P2-scalar"
P2_VECTOR = "P2-vector-2D"

_FAMILIES = (P1, P1_MEANFREE, P2, P2_VECTOR)

#: quadrature degree shared by norms, the trilinear form and assembly
DEFAULT_QUAD_DEGREE = 6


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    mesh: PeriodicTriMesh
    family: str
    dof_count: int
    #: per-triangle scalar DOF indices, shape (num_triangles, 3 or 6)
    element_dof_table: np.ndarray
    #: coordinates of the scalar interpolation nodes, shape (scalar_dofs, 2)
    node_coords: np.ndarray
    num_components: int
    scalar_dof_count: int

    @property
    def is_vector(self) -> bool:
        return self.num_components == 2


@dataclass(eq=False)
class FeFunction:
    """A coefficient vector tagged by the space it lives in."""

    space: FunctionSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dof_count,):
            raise ValueError(
                f"coefficient vector of length {self.coefficients.shape} does "
                f"not match dof count {self.space.dof_count}")

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.coefficients.copy())

    def component(self, c: int) -> np.ndarray:
        ns = self.space.scalar_dof_count
        return self.coefficients[c * ns:(c + 1) * ns]


@dataclass(frozen=True, eq=False)
class Tabulation:
    """Basis data at the quadrature points of every triangle.

    ``N[q, b]`` are scalar basis values on the reference element (identical
    for all triangles), ``grads[e, q, b, :]`` the physical gradients and
    ``weights[e, q]`` the quadrature weights scaled by the Jacobian
    determinant, so ``sum(weights * f)`` integrates ``f`` over the domain.
    """

    rule: QuadRule
    N: np.ndarray
    grads: np.ndarray
    weights: np.ndarray


def _p1_values(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary, dtype=float)


def _p2_values(bary: np.ndarray) -> np.ndarray:
    b = np.asarray(bary, dtype=float)
    l0, l1, l2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=-1)


def _p1_ref_grads(bary: np.ndarray) -> np.ndarray:
    nq = bary.shape[0]
    g = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return np.broadcast_to(g, (nq, 3, 2)).copy()


def _p2_ref_grads(bary: np.ndarray) -> np.ndarray:
    # chain rule through the barycentric gradients on the reference element
    lg = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    nq = bary.shape[0]
    g = np.empty((nq, 6, 2))
    l = bary
    for i in range(3):
        g[:, i, :] = (4 * l[:, i, None] - 1) * lg[i]
    for k, (i, j) in enumerate(((1, 2), (2, 0), (0, 1))):
        g[:, 3 + k, :] = 4 * (l[:, i, None] * lg[j] + l[:, j, None] * lg[i])
    return g


def _edge_key(mid: np.ndarray, n: int) -> tuple[int, int]:
    return (round(mid[0] * 2 * n) % (2 * n), round(mid[1] * 2 * n) % (2 * n))


def _build_edge_table(mesh: PeriodicTriMesh):
    """Unique periodic edges, id'd lexicographically by wrapped midpoint."""
    n = mesh.n
    keys = {}
    for corners in mesh.tri_coords:
        for a, b in ((1, 2), (2, 0), (0, 1)):
            mid = 0.5 * (corners[a] + corners[b])
            keys.setdefault(_edge_key(mid, n), None)
    ordered = sorted(keys)
    ids = {key: k for k, key in enumerate(ordered)}
    coords = np.array([(kx / (2 * n), ky / (2 * n)) for kx, ky in ordered])
    return ids, coords


def build_space(mesh: PeriodicTriMesh, family: str) -> FunctionSpace:
    """Build a periodic space; DOFs on identified faces coincide."""
    if family not in _FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {_FAMILIES}")
    nv = mesh.num_vertices
    if family in (P1, P1_MEANFREE):
        return FunctionSpace(mesh=mesh, family=family, dof_count=nv,
                             element_dof_table=mesh.triangles.copy(),
                             node_coords=mesh.vertices.copy(),
                             num_components=1, scalar_dof_count=nv)

    edge_ids, edge_coords = _build_edge_table(mesh)
    ne = mesh.num_triangles
    table = np.empty((ne, 6), dtype=np.int64)
    table[:, :3] = mesh.triangles
    for t, corners in enumerate(mesh.tri_coords):
        for k, (a, b) in enumerate(((1, 2), (2, 0), (0, 1))):
            mid = 0.5 * (corners[a] + corners[b])
            table[t, 3 + k] = nv + edge_ids[_edge_key(mid, mesh.n)]
    scalar_dofs = nv + len(edge_ids)
    ncomp = 2 if family == P2_VECTOR else 1
    return FunctionSpace(mesh=mesh, family=family,
                         dof_count=ncomp * scalar_dofs,
                         element_dof_table=table,
                         node_coords=np.vstack([mesh.vertices, edge_coords]),
                         num_components=ncomp, scalar_dof_count=scalar_dofs)


def tabulate(space: FunctionSpace, rule: QuadRule) -> Tabulation:
    """Tabulate scalar basis values and physical gradients at all points."""
    bary = rule.points
    if space.family in (P1, P1_MEANFREE):
        N = _p1_values(bary)
        ref_grads = _p1_ref_grads(bary)
    else:
        N = _p2_values(bary)
        ref_grads = _p2_ref_grads(bary)

    corners = space.mesh.tri_coords
    j1 = corners[:, 1, :] - corners[:, 0, :]
    j2 = corners[:, 2, :] - corners[:, 0, :]
    det = j1[:, 0] * j2[:, 1] - j1[:, 1] * j2[:, 0]
    # inverse-transpose Jacobians, shape (ne, 2, 2)
    jinv_t = np.empty((corners.shape[0], 2, 2))
    jinv_t[:, 0, 0] = j2[:, 1]
    jinv_t[:, 0, 1] = -j1[:, 1]
    jinv_t[:, 1, 0] = -j2[:, 0]
    jinv_t[:, 1, 1] = j1[:, 0]
    jinv_t /= det[:, None, None]

    grads = np.einsum("est,qbt->eqbs", jinv_t, ref_grads)
    weights = rule.weights[None, :] * det[:, None]
    return Tabulation(rule=rule, N=N, grads=grads, weights=weights)


def interpolate(space: FunctionSpace, f) -> FeFunction:
    """Nodal interpolation of a periodic closure.

    Scalar spaces take ``f(x, y) -> values``; the vector space takes
    ``f(x, y) -> (u1, u2)``.  The closure must accept numpy arrays.
    """
    x = space.node_coords[:, 0]
    y = space.node_coords[:, 1]
    if space.is_vector:
        u1, u2 = f(x, y)
        coeffs = np.concatenate([
            np.broadcast_to(np.asarray(u1, dtype=float), x.shape),
            np.broadcast_to(np.asarray(u2, dtype=float), x.shape),
        ])
    else:
        vals = np.asarray(f(x, y), dtype=float)
        coeffs = np.broadcast_to(vals, x.shape).copy()
    return FeFunction(space, coeffs)


def _locate(mesh: PeriodicTriMesh, points: np.ndarray):
    """Map points to (triangle index, barycentric coordinates)."""
    pts = np.mod(np.asarray(points, dtype=float), 1.0)
    n = mesh.n
    sx = pts[:, 0] * n
    sy = pts[:, 1] * n
    i = np.minimum(np.floor(sx).astype(np.int64), n - 1)
    j = np.minimum(np.floor(sy).astype(np.int64), n - 1)
    xi = sx - i
    eta = sy - j
    upper = eta > xi
    tri = 2 * (i * n + j) + upper
    bary = np.empty((pts.shape[0], 3))
    # lower triangle (a, b, c): bary = (1-xi, xi-eta, eta)
    bary[~upper, 0] = 1.0 - xi[~upper]
    bary[~upper, 1] = xi[~upper] - eta[~upper]
    bary[~upper, 2] = eta[~upper]
    # upper triangle (a, c, d): bary = (1-eta, xi, eta-xi)
    bary[upper, 0] = 1.0 - eta[upper]
    bary[upper, 1] = xi[upper]
    bary[upper, 2] = eta[upper] - xi[upper]
    return tri, bary


def evaluate(f: FeFunction, points: np.ndarray) -> np.ndarray:
    """Evaluate at arbitrary points; periodic wrap applied first.

    Returns shape (npts,) for scalar spaces and (npts, 2) for the vector
    space.
    """
    space = f.space
    tri, bary = _locate(space.mesh, points)
    if space.family in (P1, P1_MEANFREE):
        basis = _p1_values(bary)
    else:
        basis = _p2_values(bary)
    dofs = space.element_dof_table[tri]
    if space.is_vector:
        out = np.empty((len(tri), 2))
        for c in range(2):
            out[:, c] = np.sum(basis * f.component(c)[dofs], axis=1)
        return out
    return np.sum(basis * f.coefficients[dofs], axis=1)


def prolong(f: FeFunction, fine_space: FunctionSpace) -> FeFunction:
    """Exact embedding of a coarse function into the once-refined space."""
    coarse_space = f.space
    if fine_space.family != coarse_space.family:
        raise ValueError("prolongation requires matching families")
    if fine_space.mesh.n != 2 * coarse_space.mesh.n:
        raise ValueError(
            f"fine mesh must halve the coarse mesh size "
            f"(coarse n={coarse_space.mesh.n}, fine n={fine_space.mesh.n})")
    nodes = fine_space.node_coords
    tri, bary = _locate(coarse_space.mesh, nodes)
    if coarse_space.family in (P1, P1_MEANFREE):
        basis = _p1_values(bary)
    else:
        basis = _p2_values(bary)
    dofs = coarse_space.element_dof_table[tri]
    if coarse_space.is_vector:
        coeffs = np.concatenate([
            np.sum(basis * f.component(c)[dofs], axis=1) for c in range(2)])
    else:
        coeffs = np.sum(basis * f.coefficients[dofs], axis=1)
    return FeFunction(fine_space, coeffs)


def scalar_qp(tab: Tabulation, space: FunctionSpace, coeffs: np.ndarray):
    """Values and gradients of a scalar coefficient vector at the points."""
    local = coeffs[space.element_dof_table]
    vals = np.einsum("qb,eb->eq", tab.N, local)
    grads = np.einsum("eqbs,eb->eqs", tab.grads, local)
    return vals, grads


def vector_qp(tab: Tabulation, space: FunctionSpace, coeffs: np.ndarray):
    """Component values (ne,nq,2) and gradients (ne,nq,2,2), grads[...,c,l] = d_l u_c."""
    ns = space.scalar_dof_count
    vals = np.empty(tab.weights.shape + (2,))
    grads = np.empty(tab.weights.shape + (2, 2))
    for c in range(2):
        v, g = scalar_qp(tab, space, coeffs[c * ns:(c + 1) * ns])
        vals[..., c] = v
        grads[..., c, :] = g
    return vals, grads


def mean_value(f: FeFunction, degree: int = DEFAULT_QUAD_DEGREE) -> float:
    """Integral of f over the domain (the domain has unit measure)."""
    tab = tabulate(f.space, quad_rule(degree))
    if f.space.is_vector:
        raise ValueError("mean_value expects a scalar function")
    vals, _ = scalar_qp(tab, f.space, f.coefficients)
    return float(np.sum(tab.weights * vals))


def norms(f: FeFunction, degree: int = DEFAULT_QUAD_DEGREE) -> tuple[float, float]:
    """(L2 norm, H1 seminorm) by quadrature."""
    tab = tabulate(f.space, quad_rule(degree))
    if f.space.is_vector:
        vals, grads = vector_qp(tab, f.space, f.coefficients)
        l2sq = np.sum(tab.weights * np.sum(vals**2, axis=-1))
        h1sq = np.sum(tab.weights * np.sum(grads**2, axis=(-1, -2)))
    else:
        vals, grads = scalar_qp(tab, f.space, f.coefficients)
        l2sq = np.sum(tab.weights * vals**2)
        h1sq = np.sum(tab.weights * np.sum(grads**2, axis=-1))
    return float(np.sqrt(max(l2sq, 0.0))), float(np.sqrt(max(h1sq, 0.0)))


def c_skw(u: FeFunction, v: FeFunction, w: FeFunction,
          degree: int = DEFAULT_QUAD_DEGREE) -> float:
    """Skew-symmetric convection form 0.5*c(u,v,w) - 0.5*c(u,w,v).

    ``c(u,v,w)`` integrates ``((u . grad) v) . w``.  The combination
    vanishes for v == w even when u is not divergence-free.
    """
    for g in (v, w):
        if g.space is not u.space:
            raise ValueError("c_skw requires all arguments from the same space")
    if not u.space.is_vector:
        raise ValueError("c_skw is defined for vector functions")
    tab = tabulate(u.space, quad_rule(degree))
    uv, _ = vector_qp(tab, u.space, u.coefficients)
    vv, vg = vector_qp(tab, u.space, v.coefficients)
    wv, wg = vector_qp(tab, u.space, w.coefficients)
    adv_v = np.einsum("eql,eqcl->eqc", uv, vg)
    adv_w = np.einsum("eql,eqcl->eqc", uv, wg)
    first = np.sum(tab.weights * np.sum(adv_v * wv, axis=-1))
    second = np.sum(tab.weights * np.sum(adv_w * vv, axis=-1))
    return float(0.5 * (first - second))
