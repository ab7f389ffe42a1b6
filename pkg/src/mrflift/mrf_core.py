"""Energy-form MRF representation and the exact operations on it.

The energy of an assignment ``x`` is

    E(x) = sum_i unary[i][x_i] + sum_C table_C[x_C]

with every table dense over its scope. Energies are summed with
``math.fsum`` so that the value does not depend on term order; this is what
lets relaxed losses evaluated at one-hot points reproduce ``energy`` bit for
bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from mrflift.errors import ShapeMismatch, TooLarge

BRUTE_FORCE_BUDGET = 2_000_000


@dataclass(eq=False)
class MrfInstance:
    """Unary energy vectors plus dense clique energy tables.

    Clique scopes are strictly ascending and unique as sets; build instances
    through :func:`canonicalize` to get that normal form from arbitrary
    factor lists.
    """

    n_vars: int
    cardinalities: tuple[int, ...]
    unary: list[np.ndarray]
    cliques: list[tuple[tuple[int, ...], np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.cardinalities = tuple(int(c) for c in self.cardinalities)
        if len(self.cardinalities) != self.n_vars:
            raise ShapeMismatch(f"{len(self.cardinalities)} cardinalities for {self.n_vars} vars")
        self.unary = [np.asarray(u, dtype=np.float64) for u in self.unary]
        if len(self.unary) != self.n_vars:
            raise ShapeMismatch(f"{len(self.unary)} unary vectors for {self.n_vars} vars")
        for i, u in enumerate(self.unary):
            if u.shape != (self.cardinalities[i],):
                raise ShapeMismatch(f"unary {i} has shape {u.shape}, want ({self.cardinalities[i]},)")
            if not np.all(np.isfinite(u)):
                raise ShapeMismatch(f"unary {i} has non-finite energies")
        seen = set()
        cliques = []
        for scope, table in self.cliques:
            scope = tuple(int(v) for v in scope)
            table = np.asarray(table, dtype=np.float64)
            if len(scope) < 2 or any(a >= b for a, b in zip(scope, scope[1:])):
                raise ShapeMismatch(f"clique scope {scope} is not ascending with size >= 2")
            if scope[0] < 0 or scope[-1] >= self.n_vars:
                raise ShapeMismatch(f"clique scope {scope} out of range")
            if scope in seen:
                raise ShapeMismatch(f"duplicate clique scope {scope}")
            seen.add(scope)
            want = tuple(self.cardinalities[v] for v in scope)
            if table.shape != want:
                raise ShapeMismatch(f"clique {scope} table shape {table.shape}, want {want}")
            if not np.all(np.isfinite(table)):
                raise ShapeMismatch(f"clique {scope} has non-finite energies")
            cliques.append((scope, table))
        self.cliques = cliques

    @property
    def max_order(self):
        return max((len(s) for s, _ in self.cliques), default=1)

    def factors(self):
        """All terms as ``(scope, table)`` pairs, unaries as singleton scopes."""
        out = [((i,), u) for i, u in enumerate(self.unary)]
        out.extend(self.cliques)
        return out

    @cached_property
    def padded(self):
        return pad(self)

    def __eq__(self, other):
        if not isinstance(other, MrfInstance):
            return NotImplemented
        return (
            self.n_vars == other.n_vars
            and self.cardinalities == other.cardinalities
            and all(np.array_equal(a, b) for a, b in zip(self.unary, other.unary))
            and len(self.cliques) == len(other.cliques)
            and all(
                sa == sb and np.array_equal(ta, tb)
                for (sa, ta), (sb, tb) in zip(self.cliques, other.cliques)
            )
        )


def canonicalize(n_vars, cardinalities, factors):
    """Build an :class:`MrfInstance` from ``(scope, energy_table)`` pairs.

    Singleton scopes fold into the unaries, every scope is sorted ascending
    with its table transposed to match, and factors over the same variable
    set are summed.
    """
    cards = tuple(int(c) for c in cardinalities)
    if len(cards) != n_vars:
        raise ShapeMismatch(f"{len(cards)} cardinalities for {n_vars} vars")
    unary = [np.zeros(c) for c in cards]
    merged = {}
    for scope, table in factors:
        scope = tuple(int(v) for v in scope)
        table = np.asarray(table, dtype=np.float64)
        if not scope:
            raise ShapeMismatch("empty scope")
        if len(set(scope)) != len(scope):
            raise ShapeMismatch(f"repeated variable in scope {scope}")
        if any(not 0 <= v < n_vars for v in scope):
            raise ShapeMismatch(f"scope {scope} out of range")
        shape = tuple(cards[v] for v in scope)
        if table.size != math.prod(shape):
            raise ShapeMismatch(f"table of size {table.size} for scope {scope} with shape {shape}")
        table = table.reshape(shape)
        order = sorted(range(len(scope)), key=scope.__getitem__)
        key = tuple(scope[k] for k in order)
        table = np.transpose(table, order)
        if len(key) == 1:
            unary[key[0]] = unary[key[0]] + table
        elif key in merged:
            merged[key] = merged[key] + table
        else:
            merged[key] = np.array(table)
    return MrfInstance(n_vars, cards, unary, list(merged.items()))


def check_assignment(inst, x):
    x = np.asarray(x)
    if x.shape != (inst.n_vars,):
        raise ShapeMismatch(f"assignment of shape {x.shape} for {inst.n_vars} vars")
    x = x.astype(np.int64)
    if np.any(x < 0) or np.any(x >= np.asarray(inst.cardinalities, dtype=np.int64)):
        raise ShapeMismatch("assignment state outside its variable's range")
    return x


def energy_terms(inst, x):
    """Per-term energies: ``n_vars`` unary values followed by one per clique."""
    p = inst.padded
    parts = [p.unary[np.arange(inst.n_vars), x]]
    for scopes, tables in p.groups.values():
        idx = (np.arange(len(scopes)),) + tuple(x[scopes[:, k]] for k in range(scopes.shape[1]))
        parts.append(tables[idx])
    return np.concatenate(parts) if parts else np.zeros(0)


def energy(inst, x):
    """Exact energy of assignment ``x``."""
    x = check_assignment(inst, x)
    return math.fsum(energy_terms(inst, x))


@dataclass(eq=False)
class PairwiseGraph:
    """Undirected simple graph linking every two variables that share a clique."""

    n_vars: int
    edges: np.ndarray
    neighbors: list[np.ndarray]

    @property
    def n_edges(self):
        return len(self.edges)

    def degrees(self):
        return np.array([len(nb) for nb in self.neighbors], dtype=np.int64)

    def adjacency(self):
        n = self.n_vars
        if self.n_edges == 0:
            return sp.csr_matrix((n, n))
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))

    def mean_operator(self):
        """Row-normalized adjacency; isolated nodes get an all-zero row."""
        a = self.adjacency()
        deg = self.degrees().astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return sp.csr_matrix(sp.diags(inv) @ a)

    def gcn_operator(self):
        """Symmetric normalization ``D^-1/2 (A + I) D^-1/2`` with self loops."""
        a = self.adjacency() + sp.identity(self.n_vars, format="csr")
        d = np.asarray(a.sum(axis=1)).ravel()
        s = sp.diags(1.0 / np.sqrt(d))
        return sp.csr_matrix(s @ a @ s)


def clique_expansion(inst):
    """Pairwise graph with one edge per pair of variables sharing a clique."""
    pairs = set()
    for scope, _ in inst.cliques:
        for a in range(len(scope)):
            for b in range(a + 1, len(scope)):
                i, j = scope[a], scope[b]
                pairs.add((min(i, j), max(i, j)))
    edges = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    nbrs = [[] for _ in range(inst.n_vars)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    return PairwiseGraph(inst.n_vars, edges, [np.array(sorted(nb), dtype=np.int64) for nb in nbrs])


@dataclass(eq=False)
class PaddedInstance:
    """An instance lifted to ``S`` states per variable.

    Padded entries of each term hold that term's maximum original value;
    ``mask[i, a]`` is true iff ``a`` is a real state of variable ``i``.
    ``groups`` maps clique order to ``(scopes, tables)`` with ``scopes`` of
    shape ``(m, order)`` and ``tables`` of shape ``(m,) + (S,) * order``.
    """

    base: MrfInstance
    S: int
    unary: np.ndarray
    groups: dict[int, tuple[np.ndarray, np.ndarray]]
    mask: np.ndarray

    @property
    def padded_cliques(self):
        out = []
        for scopes, tables in self.groups.values():
            out.extend((tuple(int(v) for v in s), t) for s, t in zip(scopes, tables))
        return out

    def additive_mask(self):
        """0 on real states, ``-inf`` on padded ones."""
        return np.where(self.mask, 0.0, -np.inf)


def _pad_table(table, S):
    out = np.full((S,) * table.ndim, table.max() if table.size else 0.0)
    out[tuple(slice(0, n) for n in table.shape)] = table
    return out


def pad(inst):
    S = max(inst.cardinalities, default=1)
    unary = np.stack([_pad_table(u, S) for u in inst.unary]) if inst.n_vars else np.zeros((0, S))
    by_order = {}
    for scope, table in inst.cliques:
        by_order.setdefault(len(scope), []).append((scope, table))
    groups = {}
    for order in sorted(by_order):
        items = by_order[order]
        scopes = np.array([s for s, _ in items], dtype=np.int64)
        tables = np.stack([_pad_table(t, S) for _, t in items])
        groups[order] = (scopes, tables)
    mask = np.arange(S)[None, :] < np.asarray(inst.cardinalities, dtype=np.int64)[:, None]
    return PaddedInstance(inst, S, unary, groups, mask.reshape(inst.n_vars, S))


def brute_force_map(inst, budget=BRUTE_FORCE_BUDGET):
    """Globally optimal assignment by full enumeration.

    Ties go to the lexicographically smallest assignment. Raises
    :class:`TooLarge` when the joint state space exceeds ``budget``.
    """
    cards = inst.cardinalities
    total = math.prod(cards)
    if total > budget:
        raise TooLarge(f"{total} joint states exceed the budget of {budget}")
    table = np.zeros(cards)
    n = inst.n_vars
    for i, u in enumerate(inst.unary):
        shape = [1] * n
        shape[i] = cards[i]
        table = table + u.reshape(shape)
    for scope, t in inst.cliques:
        shape = [1] * n
        for v in scope:
            shape[v] = cards[v]
        table = table + t.reshape(shape)
    flat = table.ravel()
    lo = flat.min()
    # the broadcast sum is not exactly rounded; re-score near-ties with fsum
    near = np.flatnonzero(flat <= lo + 1e-9 * max(1.0, abs(lo)))
    best_x, best_e = None, math.inf
    for k in near:
        x = np.array(np.unravel_index(k, cards), dtype=np.int64).reshape(n)
        e = energy(inst, x)
        if e < best_e:
            best_x, best_e = x, e
    return best_x, best_e


def unary_argmin(inst):
    """Assignment minimizing each unary independently (first index on ties)."""
    return np.array([int(np.argmin(u)) for u in inst.unary], dtype=np.int64)
