"""Redistribution of raw interface forces among the sharing subdomains.

A raw decomposed load gives each applied nodal force to one owner. The solvers
do not need anything else, but the quality of cheap initial estimates of the
interface forces depends on how loads on shared nodes are apportioned. Three
equivalent views are implemented:

* classical: share by local diagonal stiffness, f~ = D L (L^T D L)^-1 L^T f
  with D = diag(K). Internal dofs are untouched and assembled totals are
  preserved exactly.
* via the jump operator: f~ = f - B^T (B D^-1 B^T)^+ B D^-1 f. Provably the
  same splitting (complement of the same D-orthogonal projector), kept as an
  independent construction and cross-checked in tests.
* condensed: apply the classical share to the statically condensed boundary
  forces, then return the equivalent non-condensed local loads (internal
  forces kept, boundary set to the shared condensed force plus the interior
  coupling term), so downstream code never needs a special case.

The identity behind the first two,
    A L (L^T A L)^-1 L^T + B^T (B A^-1 B^T)^+ B A^-1 = I,
holds for any SPD weighting A whenever range(L) = null(B); the deviation is
measured by :func:`complementarity_check`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import small_pinv


@dataclass
class SplitForces:
    """Per-subdomain load vectors plus the provenance of their splitting."""

    vectors: list
    mode: str

    def __iter__(self):
        return iter(self.vectors)

    def __getitem__(self, s):
        return self.vectors[s]


class JumpGram:
    """Blockwise pseudo-inverse of B diag(a) B^T over the jump rows.

    For a diagonal weighting, multiplier rows of different interface nodes or
    components never share a dof, so the Gram matrix is block diagonal with
    one small block per (node, component) group. Blocks are pseudo-inverted
    eagerly; redundant rows make them rank deficient, which the truncated
    pseudo-inverse absorbs.
    """

    def __init__(self, jump, weights):
        """weights: per-subdomain arrays of diagonal entries of ``a``."""
        self.jump = jump
        self.blocks = []
        for g in jump.groups:
            k = g.shape[0]
            dofs = {}
            for r in g:
                dofs.setdefault((int(jump.plus_sub[r]), int(jump.plus_dof[r])), len(dofs))
                dofs.setdefault((int(jump.minus_sub[r]), int(jump.minus_dof[r])), len(dofs))
            Bg = np.zeros((k, len(dofs)))
            for i, r in enumerate(g):
                Bg[i, dofs[(int(jump.plus_sub[r]), int(jump.plus_dof[r]))]] = 1.0
                Bg[i, dofs[(int(jump.minus_sub[r]), int(jump.minus_dof[r]))]] = -1.0
            a = np.asarray([weights[s][d] for (s, d) in dofs])
            self.blocks.append((g, small_pinv((Bg * a) @ Bg.T)))

    def apply(self, mu):
        out = np.zeros_like(np.asarray(mu, dtype=float))
        for g, pinv in self.blocks:
            out[g] = pinv @ mu[g]
        return out


def _diagonals(systems):
    diags = [np.asarray(s.K.diagonal()) for s in systems]
    for d in diags:
        if np.any(d <= 0):
            raise ValueError("stiffness diagonal must be positive after elimination")
    return diags


def split_classical(problem, forces=None) -> SplitForces:
    """Diagonal-stiffness share of assembled nodal forces.

    Every global force is distributed to its sharers proportionally to their
    local diagonal stiffness; multiplicity-1 dofs come back unchanged.
    """
    systems = problem.systems
    trace = problem.trace
    vecs = forces.vectors if isinstance(forces, SplitForces) else forces
    vecs = [s.f for s in systems] if vecs is None else vecs
    diags = _diagonals(systems)
    assembled_diag = trace.assemble(diags)
    total = trace.assemble(vecs)
    share = total / assembled_diag
    return SplitForces([d * share[m] for d, m in zip(diags, trace.maps)], "classical")


def split_via_jump(problem, forces=None) -> SplitForces:
    """The same share built from the jump operator side of the identity."""
    systems = problem.systems
    vecs = forces.vectors if isinstance(forces, SplitForces) else forces
    vecs = [s.f for s in systems] if vecs is None else vecs
    inv_diags = [1.0 / d for d in _diagonals(systems)]
    gram = JumpGram(problem.jump, inv_diags)
    weighted = [w * f for w, f in zip(inv_diags, vecs)]
    mu = gram.apply(problem.jump.apply(weighted))
    correction = problem.jump.apply_t(mu)
    return SplitForces([f - c for f, c in zip(vecs, correction)], "via-jump")


def split_condensed(problem, condensed, forces=None) -> SplitForces:
    """Classical share applied to statically condensed boundary forces.

    ``condensed`` is the list of CondensedSubdomain bundles. The result is
    expressed as ordinary (non-condensed) local loads: internal components are
    kept and boundary components become the shared condensed force plus
    K_bi K_ii^-1 f_i, so re-condensing reproduces the shared values exactly.
    """
    systems = problem.systems
    trace = problem.trace
    vecs = forces.vectors if isinstance(forces, SplitForces) else forces
    vecs = [s.f for s in systems] if vecs is None else vecs

    diags = _diagonals(systems)
    assembled_diag = trace.assemble(diags)
    f_cond = [c.condense(f) for c, f in zip(condensed, vecs)]

    total_b = np.zeros(trace.n_global)
    for s, sys_ in enumerate(systems):
        np.add.at(total_b, trace.maps[s][sys_.boundary], f_cond[s])
    share = total_b / assembled_diag

    out = []
    for s, sys_ in enumerate(systems):
        f_new = np.asarray(vecs[s], dtype=float).copy()
        shared_b = diags[s][sys_.boundary] * share[trace.maps[s][sys_.boundary]]
        coupling = np.zeros(sys_.boundary.size)
        if sys_.internal.size:
            coupling = condensed[s].K_ib.T @ condensed[s].internal_solve(
                np.asarray(vecs[s])[sys_.internal])
        f_new[sys_.boundary] = shared_b + coupling
        out.append(f_new)
    return SplitForces(out, "condensed")


def make_split(problem, mode, condensed=None, forces=None) -> SplitForces:
    """Dispatch on a splitting mode name: none | classical | condensed."""
    if mode in (None, "none", "raw"):
        vecs = forces.vectors if isinstance(forces, SplitForces) else forces
        vecs = [s.f.copy() for s in problem.systems] if vecs is None else list(vecs)
        return SplitForces(vecs, "none")
    if mode == "classical":
        return split_classical(problem, forces)
    if mode == "condensed":
        if condensed is None:
            raise ValueError("condensed splitting needs the condensed bundles")
        return split_condensed(problem, condensed, forces)
    raise ValueError(f"unknown splitting mode {mode!r}")


def complementarity_check(A, jump, trace):
    """Max entry deviation of the splitting identity from the identity matrix.

    A is either a 1-D array (diagonal weighting) or a dense SPD matrix over
    the stacked local dofs. Builds both projectors densely, so intended for
    desk-scale checks only.
    """
    L = np.asarray(trace.dense().todense(), dtype=float)
    B = np.asarray(jump.dense().todense(), dtype=float)
    n = L.shape[0]
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A_mat = np.diag(A)
        A_inv = np.diag(1.0 / A)
    else:
        A_mat = A
        A_inv = np.linalg.inv(A)
    P1 = A_mat @ L @ np.linalg.solve(L.T @ A_mat @ L, L.T)
    P2 = B.T @ small_pinv(B @ A_inv @ B.T) @ B @ A_inv
    return float(np.max(np.abs(P1 + P2 - np.eye(n))))
