"""Tiny hand-built problems with closed-form solutions.

These exist so the solvers can be checked against numbers worked out on
paper, without any mesh or assembly code in the loop. The spring pair is
the smallest problem with one floating subdomain; the three-patch partition
is the smallest with a multiplicity-3 interface node.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .assembly import DecomposedProblem, SubdomainSystem
from .mesh import JumpMap, Partition, Subdomain, TraceMap, build_jump_operator


def spring2() -> DecomposedProblem:
    """Two unit springs in series, left end clamped, unit pull on the right.

    Nodes 0-1-2, node 0 grounded. Subdomain 0 owns spring (0,1) and keeps
    only the free dof at node 1; subdomain 1 owns spring (1,2), floats, and
    carries the load f = (0, 1). Exact solution u = (1, 2), interface force
    multiplier lam = -1 (subdomain 0 pulls subdomain 1 leftward).
    """
    K0 = sp.csr_matrix(np.array([[1.0]]))
    K1 = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
    s0 = SubdomainSystem(
        index=0, K=K0, f=np.array([0.0]),
        boundary=np.array([0]), internal=np.array([], dtype=np.int64),
        R=np.zeros((1, 0)), nodes=np.array([1]),
        constrained=np.array([], dtype=np.int64),
    )
    s1 = SubdomainSystem(
        index=1, K=K1, f=np.array([0.0, 1.0]),
        boundary=np.array([0]), internal=np.array([1]),
        R=np.full((2, 1), 1.0 / np.sqrt(2.0)), nodes=np.array([1, 2]),
        constrained=np.array([], dtype=np.int64),
    )
    trace = TraceMap(1, 2, [np.array([0]), np.array([0, 1])])
    jump = JumpMap(
        dofs_per_node=1, redundancy="non-redundant", local_sizes=[1, 2],
        plus_sub=np.array([0]), plus_dof=np.array([0]),
        minus_sub=np.array([1]), minus_dof=np.array([0]),
        node=np.array([1]), component=np.array([0]),
        groups=[np.arange(0, 1)],
    )
    K_global = sp.csr_matrix(np.array([[2.0, -1.0], [-1.0, 1.0]]))
    f_global = np.array([0.0, 1.0])
    return DecomposedProblem(
        physics="scalar", dofs_per_node=1, systems=[s0, s1],
        trace=trace, jump=jump, K_global=K_global, f_global=f_global,
    )


def spring2_solution():
    """Closed-form facts for the spring pair, worked out by hand."""
    return {
        "u_global": np.array([1.0, 2.0]),
        "u_local": [np.array([1.0]), np.array([1.0, 2.0])],
        "multiplier": np.array([-1.0]),
        "amplitude": np.array([-np.sqrt(2.0)]),
        "flexibility": np.array([[1.0]]),
        "gap": np.array([0.0]),
        "mode_jump": np.array([[-1.0 / np.sqrt(2.0)]]),
        "mode_force": np.array([1.0 / np.sqrt(2.0)]),
        "force_estimate": np.array([-0.5]),
        "superlumped_Q": np.array([[0.5]]),
    }


def three_patch(redundancy="non-redundant"):
    """Three subdomains sharing one node: the smallest multiplicity-3 case.

    Node 0 is shared by all three subdomains; nodes 1..3 are private. With
    star-tree constraints this gives 2 multipliers, with all pairs 3.
    Returns (partition, jump).
    """
    subs = [
        Subdomain(index=0, block=None, elements=np.zeros(0, dtype=np.int64),
                  nodes=np.array([0, 1])),
        Subdomain(index=1, block=None, elements=np.zeros(0, dtype=np.int64),
                  nodes=np.array([0, 2])),
        Subdomain(index=2, block=None, elements=np.zeros(0, dtype=np.int64),
                  nodes=np.array([0, 3])),
    ]
    multiplicity = np.array([3, 1, 1, 1])
    owners = [[0, 1, 2], [0], [1], [2]]
    partition = Partition(mesh=None, subdomains=subs,
                          multiplicity=multiplicity, node_owners=owners)
    jump = build_jump_operator(partition, dofs_per_node=1, redundancy=redundancy)
    return partition, jump
