"""Finite element assembly of per-subdomain systems.

Q1 isoparametric elements (4-node quads, 8-node hexes) with 2x2(x2) Gauss
quadrature, for two physics kinds:

* ``scalar``: diffusion with conductivity given by the material value;
* ``elasticity``: isotropic linear elasticity (plane strain in 2D) with
  Young's modulus given by the material value and a shared Poisson ratio.

Material patterns are constant per subdomain block, so strong contrast sits
exactly on subdomain interfaces. Dirichlet conditions are homogeneous and
eliminated by row/column deletion; trace and jump maps are reduced to the free
dof set alongside. Applied loads are assembled globally first, then handed to
exactly one owning subdomain (or split equally), which keeps sum(L^T f) equal
to the assembled load vector by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import (
    GridSpec, Mesh, MeshError, Partition, TraceMap, JumpMap,
    build_structured_mesh, partition_blocks, build_trace_maps, build_jump_operator,
    _FACE_AXES,
)

_GAUSS = 1.0 / np.sqrt(3.0)


class AssemblyError(ValueError):
    """Raised for degenerate elements or inconsistent assembly input."""


@dataclass(frozen=True)
class MaterialField:
    """Per-subdomain-block material pattern.

    pattern 'uniform' uses ``value`` everywhere; 'checkerboard' alternates
    ``value``/``value2`` by the parity of the block index sum; 'layers'
    alternates by the block index along ``layer_axis`` (default: last axis).
    ``poisson`` only matters for elasticity.
    """

    pattern: str = "uniform"
    value: float = 1.0
    value2: float = 1.0
    layer_axis: int | None = None
    poisson: float = 0.3

    def __post_init__(self):
        if self.pattern not in ("uniform", "checkerboard", "layers"):
            raise AssemblyError(f"unknown material pattern {self.pattern!r}")
        if self.value <= 0 or self.value2 <= 0:
            raise AssemblyError("material values must be positive")
        if not (0 <= self.poisson < 0.5):
            raise AssemblyError("poisson must lie in [0, 0.5)")

    def value_for_block(self, block):
        if self.pattern == "uniform":
            return self.value
        if self.pattern == "checkerboard":
            return self.value if sum(block) % 2 == 0 else self.value2
        axis = self.layer_axis if self.layer_axis is not None else len(block) - 1
        return self.value if block[axis] % 2 == 0 else self.value2


def _shape_gradients(dim, point):
    """d N / d xi for the Q1 reference element at one quadrature point."""
    if dim == 2:
        xi, eta = point
        signs = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)
        grads = np.empty((4, 2))
        grads[:, 0] = 0.25 * signs[:, 0] * (1 + signs[:, 1] * eta)
        grads[:, 1] = 0.25 * signs[:, 1] * (1 + signs[:, 0] * xi)
        return grads
    xi, eta, zeta = point
    signs = np.array(
        [(-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
         (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1)], dtype=float)
    grads = np.empty((8, 3))
    grads[:, 0] = 0.125 * signs[:, 0] * (1 + signs[:, 1] * eta) * (1 + signs[:, 2] * zeta)
    grads[:, 1] = 0.125 * signs[:, 1] * (1 + signs[:, 0] * xi) * (1 + signs[:, 2] * zeta)
    grads[:, 2] = 0.125 * signs[:, 2] * (1 + signs[:, 0] * xi) * (1 + signs[:, 1] * eta)
    return grads


def _quad_points(dim):
    return list(np.array(p) for p in np.stack(
        np.meshgrid(*([[-_GAUSS, _GAUSS]] * dim), indexing="ij"), axis=-1
    ).reshape(-1, dim))


def _elastic_moduli(dim, young, poisson):
    lam = young * poisson / ((1 + poisson) * (1 - 2 * poisson))
    mu = young / (2 * (1 + poisson))
    if dim == 2:
        # plane strain
        return np.array([
            [lam + 2 * mu, lam, 0.0],
            [lam, lam + 2 * mu, 0.0],
            [0.0, 0.0, mu],
        ])
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] = lam + 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _strain_matrix(dim, dndx):
    """Engineering strain-displacement matrix, node-major dof columns."""
    nen = dndx.shape[0]
    if dim == 2:
        B = np.zeros((3, 2 * nen))
        B[0, 0::2] = dndx[:, 0]
        B[1, 1::2] = dndx[:, 1]
        B[2, 0::2] = dndx[:, 1]
        B[2, 1::2] = dndx[:, 0]
        return B
    B = np.zeros((6, 3 * nen))
    B[0, 0::3] = dndx[:, 0]
    B[1, 1::3] = dndx[:, 1]
    B[2, 2::3] = dndx[:, 2]
    B[3, 0::3] = dndx[:, 1]   # gamma_xy
    B[3, 1::3] = dndx[:, 0]
    B[4, 1::3] = dndx[:, 2]   # gamma_yz
    B[4, 2::3] = dndx[:, 1]
    B[5, 0::3] = dndx[:, 2]   # gamma_zx
    B[5, 2::3] = dndx[:, 0]
    return B


def element_stiffness(kind, coords, value, poisson=0.3):
    """Element stiffness for one Q1 element.

    Parameters
    ----------
    kind : 'scalar' or 'elasticity'
    coords : (nen, dim) vertex coordinates in mesh order
    value : conductivity (scalar) or Young's modulus (elasticity)
    poisson : Poisson ratio, elasticity only

    Raises AssemblyError on a degenerate element (non-positive Jacobian).
    """
    coords = np.asarray(coords, dtype=float)
    dim = coords.shape[1]
    nen = coords.shape[0]
    if (dim, nen) not in ((2, 4), (3, 8)):
        raise AssemblyError(f"expected Q1 vertex block, got shape {coords.shape}")
    if kind == "elasticity":
        D = _elastic_moduli(dim, value, poisson)
        K = np.zeros((nen * dim, nen * dim))
    elif kind == "scalar":
        K = np.zeros((nen, nen))
    else:
        raise AssemblyError(f"unknown physics kind {kind!r}")

    for pt in _quad_points(dim):
        grads = _shape_gradients(dim, pt)
        J = coords.T @ grads
        detJ = np.linalg.det(J)
        if detJ <= 1e-14:
            raise AssemblyError(f"degenerate element, det(J) = {detJ:.3e}")
        dndx = grads @ np.linalg.inv(J)
        if kind == "scalar":
            K += detJ * value * (dndx @ dndx.T)
        else:
            Bmat = _strain_matrix(dim, dndx)
            K += detJ * (Bmat.T @ D @ Bmat)
    return 0.5 * (K + K.T)


def rigid_body_modes(coords, physics):
    """Geometric rigid-mode candidates for a node set, node-major dofs.

    scalar: the constant field. elasticity: translations plus rotations about
    the centroid (1 in 2D, 3 in 3D). Columns are not yet filtered against the
    actual stiffness; see the problem builder.
    """
    n, dim = coords.shape
    if physics == "scalar":
        return np.ones((n, 1))
    c = coords - coords.mean(axis=0)
    if dim == 2:
        modes = np.zeros((2 * n, 3))
        modes[0::2, 0] = 1.0
        modes[1::2, 1] = 1.0
        modes[0::2, 2] = -c[:, 1]
        modes[1::2, 2] = c[:, 0]
        return modes
    modes = np.zeros((3 * n, 6))
    for a in range(3):
        modes[a::3, a] = 1.0
    modes[1::3, 3] = -c[:, 2]   # rotation about x
    modes[2::3, 3] = c[:, 1]
    modes[0::3, 4] = c[:, 2]    # rotation about y
    modes[2::3, 4] = -c[:, 0]
    modes[0::3, 5] = -c[:, 1]   # rotation about z
    modes[1::3, 5] = c[:, 0]
    return modes


def _orthonormalize(cols):
    """SVD-based orthonormal basis with a deterministic sign convention."""
    if cols.shape[1] == 0:
        return cols
    u, s, _ = np.linalg.svd(cols, full_matrices=False)
    keep = s > 1e-12 * s[0]
    u = u[:, keep]
    for j in range(u.shape[1]):
        k = np.argmax(np.abs(u[:, j]))
        if u[k, j] < 0:
            u[:, j] = -u[:, j]
    return u


@dataclass
class SubdomainSystem:
    """Reduced (Dirichlet-eliminated) system of one subdomain.

    K is symmetric positive semi-definite on the free local dofs; R spans its
    kernel (orthonormal columns, empty for grounded subdomains) and satisfies
    ||K R|| <= 1e-10 ||K||. ``boundary`` lists local dofs on interface nodes,
    ``internal`` the rest; ``f`` is the raw assigned share of the global load.
    """

    index: int
    K: sp.csr_matrix
    f: np.ndarray
    boundary: np.ndarray
    internal: np.ndarray
    R: np.ndarray
    nodes: np.ndarray = None
    constrained: np.ndarray = None

    @property
    def n_dofs(self):
        return self.K.shape[0]

    @property
    def n_modes(self):
        return self.R.shape[1]


@dataclass
class DecomposedProblem:
    """A partitioned, assembled, reduced problem ready for the solvers."""

    physics: str
    dofs_per_node: int
    systems: list
    trace: TraceMap
    jump: JumpMap
    K_global: sp.csr_matrix
    f_global: np.ndarray
    spec: GridSpec = None
    mesh: Mesh = None
    partition: Partition = None
    free_dofs: np.ndarray = None
    material: MaterialField = None

    @property
    def n_global(self):
        return self.trace.n_global

    @property
    def n_multipliers(self):
        return self.jump.n_multipliers

    def dof_multiplicity(self):
        return self.trace.dof_multiplicity()

    def average_global(self, u_locals):
        return self.trace.average(u_locals)

    def global_residual(self, u_global):
        """Relative residual of the assembled problem at a global iterate."""
        scale = np.linalg.norm(self.f_global)
        r = np.linalg.norm(self.K_global @ u_global - self.f_global)
        return r / scale if scale > 0 else r


def dirichlet_dofs(mesh, faces, dofs_per_node):
    """All dof ids (full numbering) of every node on the given faces."""
    if isinstance(faces, str):
        faces = (faces,)
    nodes = np.unique(np.concatenate([mesh.boundary_face_nodes(f) for f in faces])) \
        if faces else np.zeros(0, dtype=np.int64)
    return (nodes[:, None] * dofs_per_node + np.arange(dofs_per_node)).ravel()


def _face_elements(mesh, face):
    """(element id, local face vertex indices) pairs of a boundary face."""
    sign, axis = face[0], _FACE_AXES[face[1:]]
    ne = int(mesh.element_grid[:, axis].max())
    target = 0 if sign == "-" else ne
    elems = np.flatnonzero(mesh.element_grid[:, axis] == target)
    if mesh.dimension == 2:
        local = {
            (0, "-"): [0, 3], (0, "+"): [1, 2],
            (1, "-"): [0, 1], (1, "+"): [3, 2],
        }[(axis, sign)]
    else:
        local = {
            (0, "-"): [0, 3, 7, 4], (0, "+"): [1, 2, 6, 5],
            (1, "-"): [0, 1, 5, 4], (1, "+"): [3, 2, 6, 7],
            (2, "-"): [0, 1, 2, 3], (2, "+"): [4, 5, 6, 7],
        }[(axis, sign)]
    return elems, local


def face_pressure_load(mesh, face, magnitude, physics, direction=None):
    """Consistent nodal forces of a uniform traction on a logical face.

    The traction acts along a fixed coordinate axis (``direction``, default:
    the face axis) for elasticity, or is a plain surface source for scalar
    problems. Integration runs over the actual face geometry, so shear slant
    changes the load consistently with the deformed face measure.
    """
    dim = mesh.dimension
    dpn = dim if physics == "elasticity" else 1
    if physics == "elasticity":
        axis = _FACE_AXES[direction if direction is not None else face[1:]]
    f_full = np.zeros(mesh.n_nodes * dpn)
    elems, local = _face_elements(mesh, face)
    if dim == 2:
        qpts = [(-_GAUSS,), (_GAUSS,)]
        shape = lambda t: np.array([0.5 * (1 - t[0]), 0.5 * (1 + t[0])])
        dshape = np.array([[-0.5], [0.5]])
    else:
        qpts = [np.array(p) for p in
                np.stack(np.meshgrid([-_GAUSS, _GAUSS], [-_GAUSS, _GAUSS], indexing="ij"),
                         axis=-1).reshape(-1, 2)]
        signs = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=float)

        def shape(t):
            return 0.25 * (1 + signs[:, 0] * t[0]) * (1 + signs[:, 1] * t[1])

    for e in elems:
        face_nodes = mesh.elements[e][local]
        xyz = mesh.coords[face_nodes]
        for t in qpts:
            if dim == 2:
                N = shape(t)
                tangent = xyz.T @ dshape
                measure = np.linalg.norm(tangent)
            else:
                N = shape(t)
                dN = np.empty((4, 2))
                dN[:, 0] = 0.25 * signs[:, 0] * (1 + signs[:, 1] * t[1])
                dN[:, 1] = 0.25 * signs[:, 1] * (1 + signs[:, 0] * t[0])
                tangents = xyz.T @ dN
                measure = np.linalg.norm(np.cross(tangents[:, 0], tangents[:, 1]))
            w = magnitude * measure
            if physics == "scalar":
                np.add.at(f_full, face_nodes, w * N)
            else:
                np.add.at(f_full, face_nodes * dpn + axis, w * N)
    return f_full


def nodal_face_load(mesh, face, magnitude, physics, direction=None):
    """Equal point loads on every node of a logical face."""
    dim = mesh.dimension
    dpn = dim if physics == "elasticity" else 1
    nodes = mesh.boundary_face_nodes(face)
    f_full = np.zeros(mesh.n_nodes * dpn)
    if physics == "scalar":
        f_full[nodes] = magnitude
    else:
        axis = _FACE_AXES[direction if direction is not None else face[1:]]
        f_full[nodes * dpn + axis] = magnitude
    return f_full


def build_problem(
    spec: GridSpec,
    physics: str = "scalar",
    material: MaterialField = None,
    clamp_faces=("-x",),
    load=None,
    redundancy: str = "non-redundant",
    raw_assignment: str = "owner",
    mesh: Mesh = None,
    partition: Partition = None,
) -> DecomposedProblem:
    """Assemble, constrain, and decompose one structured problem.

    ``load`` is a full-numbering global force vector or None; see
    :func:`face_pressure_load` / :func:`nodal_face_load` for builders. Loads
    landing on Dirichlet dofs are dropped with a warning. ``raw_assignment``
    chooses who receives each interface nodal load: the lowest-index owner
    ('owner') or all owners equally ('shared').
    """
    if physics not in ("scalar", "elasticity"):
        raise AssemblyError(f"unknown physics {physics!r}")
    if raw_assignment not in ("owner", "shared"):
        raise AssemblyError(f"unknown raw_assignment {raw_assignment!r}")
    material = material or MaterialField()
    mesh = mesh if mesh is not None else build_structured_mesh(spec)
    partition = partition if partition is not None else partition_blocks(mesh, spec)
    dim = spec.dimension
    dpn = dim if physics == "elasticity" else 1
    nen = 2 ** dim

    trace_full = build_trace_maps(partition, dpn)
    jump_full = build_jump_operator(partition, dpn, redundancy)

    n_full = mesh.n_nodes * dpn
    constrained = np.asarray(dirichlet_dofs(mesh, clamp_faces, dpn), dtype=np.int64)
    free_mask = np.ones(n_full, dtype=bool)
    free_mask[constrained] = False
    free_dofs = np.flatnonzero(free_mask)
    new_id = -np.ones(n_full, dtype=np.int64)
    new_id[free_dofs] = np.arange(free_dofs.shape[0])

    f_full = np.zeros(n_full) if load is None else np.asarray(load, dtype=float).copy()
    if f_full.shape[0] != n_full:
        raise AssemblyError("load vector length does not match the full dof count")
    dropped = np.abs(f_full[constrained]).sum() if constrained.size else 0.0
    if dropped > 0:
        warnings.warn("load applied on Dirichlet dofs was dropped", stacklevel=2)
    f_global = f_full[free_dofs]

    # element stiffness cache: blocks share geometry up to translation, so one
    # matrix per (block material value) suffices on a uniform tensor grid
    kind_cache = {}

    def elem_matrix(e, value):
        key = value
        if key not in kind_cache:
            xyz = mesh.coords[mesh.elements[e]]
            kind_cache[key] = element_stiffness(physics, xyz, value, material.poisson)
        return kind_cache[key]

    def elem_dofs(e):
        return (mesh.elements[e][:, None] * dpn + np.arange(dpn)).ravel()

    # global matrix on free dofs
    rows, cols, vals = [], [], []
    for sub in partition.subdomains:
        value = material.value_for_block(sub.block)
        for e in sub.elements:
            ke = elem_matrix(e, value)
            gd = elem_dofs(e)
            rows.append(np.repeat(gd, nen * dpn))
            cols.append(np.tile(gd, nen * dpn))
            vals.append(ke.ravel())
    K_full = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_full, n_full),
    )
    K_global = K_full[free_dofs][:, free_dofs].tocsr()

    # per-subdomain reduced systems plus reduced trace maps
    systems = []
    maps_red = []
    interface_nodes = set(partition.interface_nodes.tolist())
    mult = partition.multiplicity
    for sub in partition.subdomains:
        loc_full = trace_full.maps[sub.index]
        keep = free_mask[loc_full]
        loc_free_global = new_id[loc_full[keep]]
        n_loc_full = loc_full.shape[0]
        l_new = -np.ones(n_loc_full, dtype=np.int64)
        l_new[keep] = np.arange(int(keep.sum()))

        value = material.value_for_block(sub.block)
        lrow, lcol, lval = [], [], []
        g2l = {int(g): i for i, g in enumerate(sub.nodes)}
        for e in sub.elements:
            ke = elem_matrix(e, value)
            ln = np.asarray([g2l[int(g)] for g in mesh.elements[e]], dtype=np.int64)
            ld = (ln[:, None] * dpn + np.arange(dpn)).ravel()
            lrow.append(np.repeat(ld, nen * dpn))
            lcol.append(np.tile(ld, nen * dpn))
            lval.append(ke.ravel())
        K_loc_full = sp.csr_matrix(
            (np.concatenate(lval), (np.concatenate(lrow), np.concatenate(lcol))),
            shape=(n_loc_full, n_loc_full),
        )
        kept_idx = np.flatnonzero(keep)
        K_loc = K_loc_full[kept_idx][:, kept_idx].tocsr()

        # raw force share
        f_loc = np.zeros(kept_idx.shape[0])
        node_of_local = np.repeat(sub.nodes, dpn)[kept_idx]
        glob = loc_free_global
        if raw_assignment == "owner":
            owner_here = np.asarray(
                [partition.node_owners[n][0] == sub.index for n in node_of_local]
            )
            f_loc[owner_here] = f_global[glob[owner_here]]
        else:
            f_loc = f_global[glob] / mult[node_of_local]

        on_interface = np.asarray([n in interface_nodes for n in node_of_local])
        boundary = np.flatnonzero(on_interface)
        internal = np.flatnonzero(~on_interface)

        cand = rigid_body_modes(mesh.coords[sub.nodes], physics)[kept_idx]
        norm_K = sp.linalg.norm(K_loc, ord=1) if K_loc.nnz else 0.0
        kept_modes = []
        for j in range(cand.shape[1]):
            r = cand[:, j]
            nr = np.linalg.norm(r)
            if nr == 0:
                continue
            if np.linalg.norm(K_loc @ r) <= 1e-8 * norm_K * nr:
                kept_modes.append(r)
        R = _orthonormalize(np.stack(kept_modes, axis=1) if kept_modes else
                            np.zeros((kept_idx.shape[0], 0)))

        systems.append(SubdomainSystem(
            sub.index, K_loc, f_loc, boundary, internal, R,
            nodes=sub.nodes, constrained=np.flatnonzero(~keep),
        ))
        maps_red.append(glob)

    trace = TraceMap(dpn, free_dofs.shape[0], maps_red)

    # reduce the jump operator: a multiplier survives iff its dof is free
    jf = jump_full
    row_free = free_mask[jf.node * dpn + jf.component]
    keep_rows = np.flatnonzero(row_free)
    local_new = []
    for s, sub in enumerate(partition.subdomains):
        loc_full = trace_full.maps[s]
        l_new = -np.ones(loc_full.shape[0], dtype=np.int64)
        l_new[free_mask[loc_full]] = np.arange(int(free_mask[loc_full].sum()))
        local_new.append(l_new)
    plus_dof = np.asarray([local_new[s][d] for s, d in zip(jf.plus_sub[keep_rows], jf.plus_dof[keep_rows])], dtype=np.int64)
    minus_dof = np.asarray([local_new[s][d] for s, d in zip(jf.minus_sub[keep_rows], jf.minus_dof[keep_rows])], dtype=np.int64)
    old_to_new = -np.ones(jf.n_multipliers, dtype=np.int64)
    old_to_new[keep_rows] = np.arange(keep_rows.shape[0])
    groups = []
    for g in jf.groups:
        gg = old_to_new[g]
        gg = gg[gg >= 0]
        if gg.size:
            groups.append(gg)
    jump = JumpMap(
        dpn, jf.redundancy, [s.n_dofs for s in systems],
        jf.plus_sub[keep_rows], plus_dof, jf.minus_sub[keep_rows], minus_dof,
        jf.node[keep_rows], jf.component[keep_rows], groups,
    )

    return DecomposedProblem(
        physics, dpn, systems, trace, jump, K_global, f_global,
        spec=spec, mesh=mesh, partition=partition, free_dofs=free_dofs,
        material=material,
    )
