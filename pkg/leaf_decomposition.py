"""
Leaf decomposition of a pair of discrete measures driven by covariance differences.

Each node S of the tree lives on an affine subspace anchor + range(T_S).
Its covariance difference C_S = P_T C P_T splits into V1(S) (positive part)
and V2(S) (negative part); atoms are then re-partitioned by their projection
onto the kernel of C_S inside the tangent space. Recursion stops when C_S is
non-degenerate on the tangent space, or when mu_S = nu_S (identical
conditionals, split into single-atom trivial leaves).

Terminal leaves are solved with a bimartingale coupling each, and the global
plan is sigma = sum_S theta(S) (R_S)_# pi_S.

Usage:
  tree = decompose(mu, nu)
  plan, report = solve_decomposed(mu, nu)
  report.ledger().to_csv("leaves.csv", index=False)
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from beckmann_solver import QuadraticPotential, ThreePlan, assemble_from_bimartingale, check_optimality
from core_measures import (DiscreteMeasure, NumericMode, Scalar, SymmetricMatrix, barycenter,
                           covariance_difference, format_scalar, format_vector, is_zero, max_abs,
                           point_key, require_common_barycenter, to_scalar, zeros)
from errors import BalanceError, LeafCouplingError
from linalg_spectral import SubspacePair, compress, identity, schatten1, split_subspaces
from order_checks import Coupling, find_bimartingale

logger = logging.getLogger(__name__)

KEY_TOL = 1e-9


@dataclass(eq=False)
class LeafNode:
    """One cell of the partition tree"""
    path: Tuple[int, ...]
    anchor: np.ndarray
    tangent: np.ndarray
    key: Tuple
    theta: Scalar
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    pair: Optional[SubspacePair] = None
    covariance: Optional[SymmetricMatrix] = None
    trivial: bool = False
    children: List["LeafNode"] = field(default_factory=list)

    @property
    def id(self) -> str:
        return "root" if not self.path else ".".join(str(p) for p in self.path)

    @property
    def depth(self) -> int:
        return len(self.path)

    @property
    def mode(self) -> NumericMode:
        return self.mu.mode

    @property
    def terminal(self) -> bool:
        return not self.children

    @property
    def tangent_rank(self) -> int:
        return int(round(float(np.trace(self.tangent.astype(float)))))

    def kernel_projector(self) -> np.ndarray:
        """Projector onto the kernel of C_S inside the tangent space"""
        if self.pair is None:
            return self.tangent
        return self.tangent - self.pair.proj1 - self.pair.proj2

    def kernel_basis(self) -> np.ndarray:
        if self.pair is None:
            return np.zeros((0, self.mu.dim))
        return SubspacePair.from_spanning(self.kernel_projector().astype(float), [], self.mu.dim,
                                          NumericMode.FLOAT).basis1

    def leaf_cost(self) -> Scalar:
        """1/2 |C_S|_1 (zero on trivial leaves)"""
        if self.trivial or self.covariance is None:
            return zeros((), self.mode)[()]
        exact_pair = self.pair if self.pair is not None and (self.pair.exact or self.mode == NumericMode.FLOAT) else None
        return schatten1(self.covariance, exact_pair) / 2

    def support_gap(self) -> Scalar:
        """Largest component of x - anchor outside the tangent space over all atoms"""
        out = zeros((), self.mode)[()]
        for m in (self.mu, self.nu):
            for p, _ in m.atoms():
                d = p - self.anchor
                out = max(out, max_abs(d - self.tangent @ d))
        return out

    def walk(self) -> Iterator["LeafNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def leaves(self) -> Iterator["LeafNode"]:
        return (node for node in self.walk() if node.terminal)

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "id": self.id,
            "depth": self.depth,
            "key": [format_scalar(k) for k in self.key],
            "theta": format_scalar(self.theta),
            "trivial": self.trivial,
            "anchor": format_vector(self.anchor),
            "mu": self.mu.to_records(),
            "nu": self.nu.to_records(),
            "children": [c.to_dict() for c in self.children],
        }
        if self.pair is not None:
            out["v1"] = [list(map(float, r)) for r in self.pair.basis1]
            out["v2"] = [list(map(float, r)) for r in self.pair.basis2]
            out["kernel"] = [list(map(float, r)) for r in self.kernel_basis()]
        if self.terminal:
            out["cost"] = format_scalar(self.leaf_cost())
        return out


def _leaf_keys(points: np.ndarray, projector: np.ndarray, mode: NumericMode) -> List[Tuple]:
    return [point_key(projector @ p) for p in points]


def _cluster_float_keys(keys: Sequence[Tuple], tol: float) -> Dict[Tuple, Tuple]:
    """
    Map each float key to the representative of its cluster: the smallest key
    of the connected component under max-abs distance <= tol.
    """
    distinct = sorted(set(keys))
    parent = list(range(len(distinct)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(distinct):
        for j in range(i + 1, len(distinct)):
            b = distinct[j]
            if b[0] - a[0] > tol:
                break
            if max(abs(u - v) for u, v in zip(a, b)) <= tol:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    # Roots are the smallest index of each component, so the smallest key
    rep = {key: distinct[find(i)] for i, key in enumerate(distinct)}
    merged = sum(1 for key, r in rep.items() if key != r)
    if merged:
        logger.warning(f"Float leaf keys: {merged} near-equal keys merged within {tol:g}")
    return rep


def partition_by_leaf(mu: DiscreteMeasure, nu: DiscreteMeasure, pair: SubspacePair,
                      tangent: Optional[np.ndarray] = None, path: Tuple[int, ...] = (),
                      theta: Scalar = 1, tol: float = KEY_TOL) -> List[LeafNode]:
    """
    Group atoms of mu and nu by their projection onto the complement of
    V1 + V2 inside `tangent` (R^n by default) and build normalized conditionals.
    Every group must balance in mass and barycenter.
    """
    mode = mu.mode
    require_common_barycenter(mu, nu, tol)
    tangent = identity(mu.dim, mode) if tangent is None else tangent
    projector = tangent - pair.proj1 - pair.proj2
    mu_keys = _leaf_keys(mu.points, projector, mode)
    nu_keys = _leaf_keys(nu.points, projector, mode)
    if mode == NumericMode.FLOAT:
        rep = _cluster_float_keys(mu_keys + nu_keys, tol)
        mu_keys = [rep[k] for k in mu_keys]
        nu_keys = [rep[k] for k in nu_keys]

    nodes = []
    for index, key in enumerate(sorted(set(mu_keys) | set(nu_keys))):
        child_path = path + (index,)
        mu_idx = [i for i, k in enumerate(mu_keys) if k == key]
        nu_idx = [j for j, k in enumerate(nu_keys) if k == key]
        mass_mu = sum((mu.weights[i] for i in mu_idx), zeros((), mode)[()])
        mass_nu = sum((nu.weights[j] for j in nu_idx), zeros((), mode)[()])
        if not mu_idx or not nu_idx or not is_zero(mass_mu - mass_nu, mode, tol):
            raise BalanceError(
                f"Mass balance fails: mu-mass {format_scalar(mass_mu)} vs nu-mass {format_scalar(mass_nu)}",
                child_path, key)
        mu_s, nu_s = mu.restricted(mu_idx), nu.restricted(nu_idx)
        b_mu, b_nu = barycenter(mu_s), barycenter(nu_s)
        if not is_zero(max_abs(b_mu - b_nu), mode, tol):
            raise BalanceError(
                f"Moment balance fails: barycenters {format_vector(b_mu)} vs {format_vector(b_nu)}",
                child_path, key)
        nodes.append(LeafNode(path=child_path, anchor=b_mu, tangent=pair.proj1 + pair.proj2, key=key,
                              theta=theta * mass_mu, mu=mu_s, nu=nu_s))
    logger.debug(f"Partition of node {list(path)}: {len(nodes)} leaves")
    return nodes


def _split_trivial(node: LeafNode) -> None:
    """Identical conditionals: terminal, zero cost, one trivial child per atom"""
    mode = node.mode
    node.trivial = True
    node.pair = SubspacePair.from_spanning([], [], node.mu.dim, mode)
    node.covariance = SymmetricMatrix.zeros(node.mu.dim, mode)
    if node.mu.size == 1:
        return
    for index, (p, w) in enumerate(node.mu.atoms()):
        atom = DiscreteMeasure.dirac(p, mode)
        node.children.append(LeafNode(path=node.path + (index,), anchor=p, tangent=zeros((node.mu.dim,) * 2, mode),
                                      key=point_key(p), theta=node.theta * w, mu=atom, nu=atom,
                                      pair=node.pair, covariance=node.covariance, trivial=True))


def refine(node: LeafNode, tol: Optional[float] = None, key_tol: float = KEY_TOL, **split_options) -> LeafNode:
    """Split node by the spectral subspaces of its covariance difference, recursively"""
    if node.mu.same_as(node.nu, key_tol):
        _split_trivial(node)
        logger.debug(f"Leaf {node.id}: identical conditionals, {len(node.children)} trivial children")
        return node

    C = compress(covariance_difference(node.mu, node.nu), node.tangent)
    pair, _ = split_subspaces(C, tol=tol, **split_options)
    node.covariance = C
    node.pair = pair
    if pair.dim1 + pair.dim2 >= node.tangent_rank:
        logger.debug(f"Leaf {node.id}: terminal (dim V1 = {pair.dim1}, dim V2 = {pair.dim2})")
        return node

    node.children = partition_by_leaf(node.mu, node.nu, pair, tangent=node.tangent, path=node.path,
                                      theta=node.theta, tol=key_tol)
    for child in node.children:
        refine(child, tol=tol, key_tol=key_tol, **split_options)
    return node


def decompose(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: Optional[float] = None,
              key_tol: float = KEY_TOL, **split_options) -> LeafNode:
    """Full partition tree; the root lives on R^n"""
    b = require_common_barycenter(mu, nu, key_tol)
    root = LeafNode(path=(), anchor=b, tangent=identity(mu.dim, mu.mode), key=(),
                    theta=to_scalar(1, mu.mode), mu=mu, nu=nu)
    refine(root, tol=tol, key_tol=key_tol, **split_options)
    terminal = list(root.leaves())
    logger.info(f"Decomposition: {sum(1 for _ in root.walk())} nodes, {len(terminal)} terminal leaves, "
                f"depth {max(n.depth for n in terminal)}")
    return root


def reconstruct(root: LeafNode) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """(sum theta mu_S, sum theta nu_S) over terminal leaves"""
    leaves = list(root.leaves())
    mode = root.mode
    return (DiscreteMeasure.mixture([(n.theta, n.mu) for n in leaves], mode, normalize=False),
            DiscreteMeasure.mixture([(n.theta, n.nu) for n in leaves], mode, normalize=False))


@dataclass
class LeafSolution:
    node: LeafNode
    coupling: Coupling
    plan: ThreePlan
    potential: QuadraticPotential
    residual: Scalar

    def row(self) -> Dict[str, Any]:
        pair = self.node.pair
        cost = self.node.leaf_cost()
        return {
            "leaf": self.node.id,
            "depth": self.node.depth,
            "theta": format_scalar(self.node.theta),
            "trivial": self.node.trivial,
            "dim_v1": pair.dim1 if pair is not None else 0,
            "dim_v2": pair.dim2 if pair is not None else 0,
            "leaf_cost": format_scalar(cost),
            "weighted_cost": format_scalar(self.node.theta * cost),
            "plan_cost": format_scalar(self.plan.total_cost()),
            "residual": format_scalar(self.residual),
        }


@dataclass
class DecompositionReport:
    """Tree plus per-leaf solutions of solve_decomposed"""
    root: LeafNode
    solutions: List[LeafSolution]
    total_cost: Scalar

    def ledger(self) -> pd.DataFrame:
        return pd.DataFrame([s.row() for s in self.solutions])

    def to_dict(self) -> Dict[str, Any]:
        return {"tree": self.root.to_dict(), "total_cost": format_scalar(self.total_cost),
                "leaves": [s.row() for s in self.solutions]}


def _solve_leaf(node: LeafNode, tol: float, **solver_options) -> LeafSolution:
    if node.trivial:
        coupling = Coupling.identity(node.mu)
        plan = ThreePlan.diagonal(node.mu)
        potential = QuadraticPotential.zero(node.mu.dim, node.mode)
        return LeafSolution(node, coupling, plan, potential, check_optimality(plan, potential).max_residual)

    # mu_S and nu_S differ only inside the tangent space, so absorbing its complement into V1 is free
    pair = node.pair.completed(into=1)
    coupling = find_bimartingale(node.mu, node.nu, pair, tol, **solver_options)
    if coupling is None:
        raise LeafCouplingError(node.path)
    plan = assemble_from_bimartingale(coupling, pair, tol)
    potential = QuadraticPotential.from_pair(pair)
    return LeafSolution(node, coupling, plan, potential, check_optimality(plan, potential).max_residual)


def solve_decomposed(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: Optional[float] = None,
                     key_tol: float = KEY_TOL, split_options: Optional[Dict[str, Any]] = None,
                     **solver_options) -> Tuple[ThreePlan, DecompositionReport]:
    """Global plan sum_S theta(S) (R_S)_# pi_S and the per-leaf ledger"""
    root = decompose(mu, nu, tol=tol, key_tol=key_tol, **(split_options or {}))
    solutions = []
    total = zeros((), mu.mode)[()]
    atoms = []
    for node in root.leaves():
        solution = _solve_leaf(node, key_tol, **solver_options)
        solutions.append(solution)
        total = total + node.theta * node.leaf_cost()
        atoms.extend((((x, y, z), node.theta * w) for x, y, z, w in solution.plan.atoms()))
    plan = ThreePlan.from_atoms(atoms, mu.mode)
    logger.info(f"Decomposed solve: {len(solutions)} leaves, total cost {format_scalar(total)}")
    return plan, DecompositionReport(root, solutions, total)


def to_dot(root: LeafNode) -> str:
    """Graphviz DOT text of the partition tree"""
    lines = ["digraph leaves {", '  node [shape=box, fontname="Helvetica"];']
    for node in root.walk():
        label = f"{node.id}\\ntheta={format_scalar(node.theta)}"
        if node.pair is not None and not node.trivial:
            label += f"\\ndim V1={node.pair.dim1}, dim V2={node.pair.dim2}"
        if node.trivial:
            label += "\\ntrivial"
        lines.append(f'  "{node.id}" [label="{label}"];')
        for child in node.children:
            lines.append(f'  "{node.id}" -> "{child.id}";')
    lines.append("}")
    return "\n".join(lines) + "\n"
