"""Structured meshes, block partitions, and the interface bookkeeping operators.

The mesh is a tensor grid of Q1 elements (quads in 2D, hexes in 3D) that can be
sheared into a parallelogram/parallelepiped. A partition groups elements into
axis-aligned blocks of subdomains. Two index-array operators connect the pieces:

* trace maps ``L``: per subdomain, the injection of local dofs into global dofs
  (boolean selection, stored as an index array);
* jump operator ``B``: one signed row per interface constraint, +1 on the side
  with the lower subdomain index and -1 on the other, so that ``B u = 0``
  expresses pointwise continuity across subdomain boundaries.

Node and dof ordering is lexicographic in the grid index (first axis fastest),
then by field component. Everything here is physics-free: dof counts enter only
through ``dofs_per_node``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Raised for invalid grid specifications or degenerate geometry."""


_FACE_AXES = {"x": 0, "y": 1, "z": 2}


def _as_tuple(value, dimension, kind=float):
    if np.isscalar(value):
        return (kind(value),) * dimension
    out = tuple(kind(v) for v in value)
    if len(out) != dimension:
        raise MeshError(f"expected {dimension} entries per axis, got {out}")
    return out


@dataclass(frozen=True)
class GridSpec:
    """Geometry and decomposition parameters for one structured problem.

    Parameters
    ----------
    dimension : 2 or 3
    elements_per_axis : int or tuple, elements along each axis; each entry must
        be divisible by the matching ``subdomains_per_axis`` entry.
    subdomains_per_axis : int or tuple.
    element_size : element edge length per axis (pre-shear).
    slant_angle : shear angle in degrees, open interval (-90, 90). The shear
        moves x by tan(angle) times y (2D) or times z (3D) and leaves the
        connectivity untouched.
    """

    dimension: int
    elements_per_axis: tuple
    subdomains_per_axis: tuple
    element_size: tuple = 1.0
    slant_angle: float = 0.0

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise MeshError(f"dimension must be 2 or 3, got {self.dimension}")
        object.__setattr__(
            self, "elements_per_axis", _as_tuple(self.elements_per_axis, self.dimension, int)
        )
        object.__setattr__(
            self, "subdomains_per_axis", _as_tuple(self.subdomains_per_axis, self.dimension, int)
        )
        object.__setattr__(self, "element_size", _as_tuple(self.element_size, self.dimension))
        for ne, ns in zip(self.elements_per_axis, self.subdomains_per_axis):
            if ne < 1 or ns < 1:
                raise MeshError("element and subdomain counts must be positive")
            if ne % ns:
                raise MeshError(
                    f"elements_per_axis {self.elements_per_axis} not divisible by "
                    f"subdomains_per_axis {self.subdomains_per_axis}"
                )
        for h in self.element_size:
            if h <= 0:
                raise MeshError("element_size entries must be positive")
        if not (-90.0 < self.slant_angle < 90.0):
            raise MeshError("slant_angle must lie in (-90, 90) degrees")

    @property
    def n_subdomains(self):
        return int(np.prod(self.subdomains_per_axis))

    @property
    def elements_per_block(self):
        return tuple(ne // ns for ne, ns in zip(self.elements_per_axis, self.subdomains_per_axis))


@dataclass
class Mesh:
    """Tensor-grid mesh with per-element grid indices retained.

    ``elements`` holds global node ids, counterclockwise in 2D and bottom face
    then top face in 3D, matching the reference element used by the assembly.
    """

    dimension: int
    nodes_per_axis: tuple
    coords: np.ndarray
    elements: np.ndarray
    element_grid: np.ndarray

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    def node_id(self, grid_index):
        """Global node id for a grid index tuple (first axis fastest)."""
        idx = 0
        for ax in reversed(range(self.dimension)):
            idx = idx * self.nodes_per_axis[ax] + grid_index[ax]
        return idx

    def boundary_face_nodes(self, face):
        """Node ids on a logical boundary face such as '-x' or '+z'.

        Faces are selected in the unsheared grid index space, so a slanted mesh
        keeps the same face node sets as its straight counterpart.
        """
        sign, axis_name = face[0], face[1:]
        if sign not in "+-" or axis_name not in _FACE_AXES:
            raise MeshError(f"bad face spec {face!r}, expected like '-x' or '+y'")
        axis = _FACE_AXES[axis_name]
        if axis >= self.dimension:
            raise MeshError(f"face {face!r} out of range for dimension {self.dimension}")
        target = 0 if sign == "-" else self.nodes_per_axis[axis] - 1
        grids = np.unravel_index(np.arange(self.n_nodes), self.nodes_per_axis, order="F")
        return np.flatnonzero(grids[axis] == target)


def build_structured_mesh(spec: GridSpec) -> Mesh:
    """Build the tensor grid and shear it by the requested slant angle."""
    dim = spec.dimension
    nna = tuple(ne + 1 for ne in spec.elements_per_axis)
    n_nodes = int(np.prod(nna))

    grids = np.unravel_index(np.arange(n_nodes), nna, order="F")
    coords = np.empty((n_nodes, dim))
    for ax in range(dim):
        coords[:, ax] = grids[ax] * spec.element_size[ax]
    if spec.slant_angle != 0.0:
        shear = np.tan(np.radians(spec.slant_angle))
        coords[:, 0] += shear * coords[:, dim - 1]

    n_elems = int(np.prod(spec.elements_per_axis))
    egrids = np.unravel_index(np.arange(n_elems), spec.elements_per_axis, order="F")
    element_grid = np.stack(egrids, axis=1)

    def nid(offsets):
        idx = np.zeros(n_elems, dtype=np.int64)
        for ax in reversed(range(dim)):
            idx = idx * nna[ax] + (egrids[ax] + offsets[ax])
        return idx

    if dim == 2:
        corner_offsets = [(0, 0), (1, 0), (1, 1), (0, 1)]
    else:
        corner_offsets = [
            (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
            (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
        ]
    elements = np.stack([nid(off) for off in corner_offsets], axis=1)
    return Mesh(dim, nna, coords, elements, element_grid)


@dataclass
class Subdomain:
    """One block of the partition: its elements and its sorted node set."""

    index: int
    block: tuple
    elements: np.ndarray
    nodes: np.ndarray

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    def local_node(self, global_nodes):
        """Local indices of the given global node ids (must belong here)."""
        pos = np.searchsorted(self.nodes, global_nodes)
        if np.any(pos >= self.nodes.shape[0]) or np.any(self.nodes[np.minimum(pos, self.nodes.shape[0] - 1)] != global_nodes):
            raise MeshError("node does not belong to this subdomain")
        return pos


@dataclass
class Partition:
    """Non-overlapping element partition with node multiplicity bookkeeping."""

    mesh: Mesh
    subdomains: list
    multiplicity: np.ndarray
    node_owners: list

    @property
    def n_subdomains(self):
        return len(self.subdomains)

    @property
    def interface_nodes(self):
        return np.flatnonzero(self.multiplicity >= 2)


def partition_blocks(mesh: Mesh, spec: GridSpec) -> Partition:
    """Group elements into axis-aligned blocks, one subdomain per block.

    Subdomains are numbered lexicographically by block index (first axis
    fastest), the same convention as nodes. Every element lands in exactly one
    subdomain and every node in at least one.
    """
    epb = spec.elements_per_block
    block_of_elem = mesh.element_grid // np.asarray(epb)
    nsa = spec.subdomains_per_axis
    flat = np.zeros(mesh.n_elements, dtype=np.int64)
    for ax in reversed(range(spec.dimension)):
        flat = flat * nsa[ax] + block_of_elem[:, ax]

    n_sub = spec.n_subdomains
    subdomains = []
    n_nodes = mesh.n_nodes
    multiplicity = np.zeros(n_nodes, dtype=np.int64)
    node_owners = [[] for _ in range(n_nodes)]
    for s in range(n_sub):
        elems = np.flatnonzero(flat == s)
        nodes = np.unique(mesh.elements[elems])
        block = tuple(int(b) for b in block_of_elem[elems[0]])
        subdomains.append(Subdomain(s, block, elems, nodes))
        multiplicity[nodes] += 1
        for n in nodes:
            node_owners[n].append(s)

    if np.any(multiplicity == 0):
        raise MeshError("partition does not cover every node")
    return Partition(mesh, subdomains, multiplicity, node_owners)


@dataclass
class TraceMap:
    """Per-subdomain injection of local dofs into global dofs.

    ``maps[s][i]`` is the global dof that local dof ``i`` of subdomain ``s``
    selects; as a boolean matrix each row of L has a single unit entry, so the
    stacked column sums equal the dof multiplicity.
    """

    dofs_per_node: int
    n_global: int
    maps: list

    @property
    def local_sizes(self):
        return [m.shape[0] for m in self.maps]

    @property
    def offsets(self):
        """Start offsets of each subdomain block in the stacked local vector."""
        return np.concatenate(([0], np.cumsum(self.local_sizes)))

    def dof_multiplicity(self):
        counts = np.zeros(self.n_global, dtype=np.int64)
        for m in self.maps:
            np.add.at(counts, m, 1)
        return counts

    def assemble(self, locals_):
        """Sum local vectors into a global vector: L^T applied blockwise."""
        out = np.zeros(self.n_global)
        for m, v in zip(self.maps, locals_):
            np.add.at(out, m, v)
        return out

    def distribute(self, u_global):
        """Restrict a global vector to each subdomain: L applied blockwise."""
        return [u_global[m] for m in self.maps]

    def average(self, locals_):
        """Multiplicity-weighted average of (possibly incompatible) locals."""
        return self.assemble(locals_) / self.dof_multiplicity()

    def dense(self):
        """Stacked L as a sparse integer matrix (total local dofs x global)."""
        sizes = self.local_sizes
        rows = np.arange(int(sum(sizes)))
        cols = np.concatenate(self.maps) if self.maps else np.zeros(0, dtype=np.int64)
        data = np.ones(rows.shape[0], dtype=np.int64)
        return sp.csr_matrix((data, (rows, cols)), shape=(rows.shape[0], self.n_global))


def build_trace_maps(partition: Partition, dofs_per_node: int = 1) -> TraceMap:
    """Expand the node sets of a partition into dof-level trace maps."""
    dpn = dofs_per_node
    n_global = partition.mesh.n_nodes * dpn if partition.mesh is not None else None
    maps = []
    for sub in partition.subdomains:
        maps.append((sub.nodes[:, None] * dpn + np.arange(dpn)).ravel())
    if n_global is None:
        n_global = int(max(m.max() for m in maps)) + 1
    return TraceMap(dpn, n_global, maps)


@dataclass
class JumpMap:
    """Signed pairwise difference operator on interface dofs.

    Row r encodes u[plus_sub[r]][plus_dof[r]] - u[minus_sub[r]][minus_dof[r]].
    Rows are grouped per (interface node, component); ``groups`` stores the row
    index array of each group, which is exactly the block structure of
    B A B^T for diagonal A.
    """

    dofs_per_node: int
    redundancy: str
    local_sizes: list
    plus_sub: np.ndarray
    plus_dof: np.ndarray
    minus_sub: np.ndarray
    minus_dof: np.ndarray
    node: np.ndarray
    component: np.ndarray
    groups: list = field(default_factory=list)

    @property
    def n_multipliers(self):
        return self.plus_sub.shape[0]

    def _stacked_indices(self):
        # cached stacked-dof positions of the +/- entries
        if not hasattr(self, "_plus_idx"):
            offsets = np.concatenate(([0], np.cumsum(self.local_sizes))).astype(np.int64)
            self._offsets = offsets
            self._plus_idx = offsets[self.plus_sub] + self.plus_dof
            self._minus_idx = offsets[self.minus_sub] + self.minus_dof
        return self._offsets, self._plus_idx, self._minus_idx

    def apply(self, locals_):
        """B applied to per-subdomain local vectors: the interface jump."""
        if self.n_multipliers == 0:
            return np.zeros(0)
        _, plus_idx, minus_idx = self._stacked_indices()
        stacked = np.concatenate(locals_)
        return stacked[plus_idx] - stacked[minus_idx]

    def apply_t(self, mu):
        """B^T applied to a multiplier vector, returned as local vectors."""
        offsets, plus_idx, minus_idx = self._stacked_indices()
        stacked = np.zeros(int(offsets[-1]))
        np.add.at(stacked, plus_idx, mu)
        np.subtract.at(stacked, minus_idx, mu)
        return [stacked[offsets[s]:offsets[s + 1]] for s in range(len(self.local_sizes))]

    def dense(self):
        """B as a sparse integer matrix over the stacked local dofs."""
        offsets = np.concatenate(([0], np.cumsum(self.local_sizes)))
        m = self.n_multipliers
        rows = np.repeat(np.arange(m), 2)
        cols = np.empty(2 * m, dtype=np.int64)
        data = np.empty(2 * m, dtype=np.int64)
        cols[0::2] = offsets[self.plus_sub] + self.plus_dof
        cols[1::2] = offsets[self.minus_sub] + self.minus_dof
        data[0::2] = 1
        data[1::2] = -1
        return sp.csr_matrix((data, (rows, cols)), shape=(m, int(offsets[-1])))


def expected_multiplier_count(partition: Partition, dofs_per_node=1, redundancy="non-redundant"):
    """Closed-form multiplier count from node multiplicities."""
    mult = partition.multiplicity[partition.interface_nodes]
    if redundancy == "non-redundant":
        per_node = mult - 1
    else:
        per_node = mult * (mult - 1) // 2
    return int(per_node.sum()) * dofs_per_node


def build_jump_operator(
    partition: Partition, dofs_per_node: int = 1, redundancy: str = "non-redundant"
) -> JumpMap:
    """Build the signed jump operator over all interface nodes.

    non-redundant mode chains every sharer to the lowest-index owner (a star
    spanning tree), giving multiplicity-1 constraints per node and a B of full
    row rank. fully-redundant mode emits one row per owner pair. In both modes
    the +1 entry sits on the lower subdomain index.
    """
    if redundancy not in ("non-redundant", "fully-redundant"):
        raise MeshError(f"unknown redundancy mode {redundancy!r}")
    dpn = dofs_per_node
    local_cache = {}

    def local_dof(s, node, comp):
        if s not in local_cache:
            local_cache[s] = partition.subdomains[s]
        return local_cache[s].local_node(np.asarray([node]))[0] * dpn + comp

    plus_sub, plus_dof, minus_sub, minus_dof = [], [], [], []
    node_col, comp_col, groups = [], [], []
    for node in partition.interface_nodes:
        owners = partition.node_owners[node]
        if redundancy == "non-redundant":
            pairs = [(owners[0], o) for o in owners[1:]]
        else:
            pairs = list(itertools.combinations(owners, 2))
        for comp in range(dpn):
            start = len(plus_sub)
            for lo, hi in pairs:
                plus_sub.append(lo)
                plus_dof.append(local_dof(lo, node, comp))
                minus_sub.append(hi)
                minus_dof.append(local_dof(hi, node, comp))
                node_col.append(node)
                comp_col.append(comp)
            groups.append(np.arange(start, len(plus_sub)))

    local_sizes = [sub.n_nodes * dpn for sub in partition.subdomains]
    return JumpMap(
        dpn, redundancy, local_sizes,
        np.asarray(plus_sub, dtype=np.int64), np.asarray(plus_dof, dtype=np.int64),
        np.asarray(minus_sub, dtype=np.int64), np.asarray(minus_dof, dtype=np.int64),
        np.asarray(node_col, dtype=np.int64), np.asarray(comp_col, dtype=np.int64),
        groups,
    )
