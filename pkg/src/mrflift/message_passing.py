"""Min-sum loopy BP and tree-reweighted BP for pairwise instances.

Messages live in the energy domain. One synchronous sweep computes, for
every directed edge ``i -> j``,

    m'(x_j) = min_{x_i} [ unary_i(x_i) + pair_ij(x_i, x_j) / rho_ij
                          + sum_{k in N(i)} rho_ki m_ki(x_i) - m_ji(x_i) ]

(``rho = 1`` is ordinary loopy BP), blends it with the previous message by
``damping`` and shifts it so its minimum is 0. Variables with fewer than
``S`` states carry ``+inf`` energies on their padded states, which keeps the
minimization over real states only; padded message entries are held at 0.
"""

from __future__ import annotations

import time

import numpy as np

from mrflift.errors import HighOrderUnsupported, InvalidRho
from mrflift.mrf_core import energy
from mrflift.report import BestTracker, SolveReport

CONVERGENCE_TOL = 1e-6


class _Layout:
    """Directed-edge arrays for a pairwise instance."""

    def __init__(self, inst):
        if any(len(scope) > 2 for scope, _ in inst.cliques):
            raise HighOrderUnsupported("message passing here handles pairwise cliques only")
        n = inst.n_vars
        S = max(inst.cardinalities, default=1)
        self.S = S
        self.valid = np.arange(S)[None, :] < np.asarray(inst.cardinalities)[:, None]
        self.unary = np.full((n, S), np.inf)
        for i, u in enumerate(inst.unary):
            self.unary[i, : len(u)] = u
        E = len(inst.cliques)
        self.n_edges = E
        self.src = np.empty(2 * E, dtype=np.int64)
        self.dst = np.empty(2 * E, dtype=np.int64)
        self.tables = np.full((2 * E, S, S), np.inf)
        for e, ((i, j), t) in enumerate(inst.cliques):
            si, sj = t.shape
            self.src[2 * e], self.dst[2 * e] = i, j
            self.src[2 * e + 1], self.dst[2 * e + 1] = j, i
            self.tables[2 * e, :si, :sj] = t
            self.tables[2 * e + 1, :sj, :si] = t.T
        self.rev = np.arange(2 * E) ^ 1
        self.dst_valid = self.valid[self.dst]

    def incoming(self, msgs, weights=None):
        tot = np.zeros_like(self.unary)
        np.add.at(tot, self.dst, msgs if weights is None else msgs * weights[:, None])
        return tot

    def normalize(self, msgs):
        msgs = np.where(self.dst_valid, msgs, np.inf)
        msgs = msgs - msgs.min(axis=1, keepdims=True)
        return np.where(self.dst_valid, msgs, 0.0)

    def decode(self, beliefs):
        return np.argmin(np.where(self.valid, beliefs, np.inf), axis=1).astype(np.int64)


def _edge_rho(inst, rho):
    E = len(inst.cliques)
    if rho is None:
        value = 1.0 if E == 0 else min(1.0, (inst.n_vars - 1) / E)
        if value <= 0:
            value = 1.0
        per_edge = np.full(E, value)
    elif np.isscalar(rho):
        per_edge = np.full(E, float(rho))
    elif isinstance(rho, dict):
        lookup = {tuple(sorted(k)): float(v) for k, v in rho.items()}
        try:
            per_edge = np.array([lookup[scope] for scope, _ in inst.cliques])
        except KeyError as exc:
            raise InvalidRho(f"no edge weight for edge {exc.args[0]}") from None
    else:
        per_edge = np.asarray(rho, dtype=np.float64)
        if per_edge.shape != (E,):
            raise InvalidRho(f"need {E} edge weights, got shape {per_edge.shape}")
    if np.any(~(per_edge > 0)) or np.any(per_edge > 1):
        raise InvalidRho("edge appearance probabilities must lie in (0, 1]")
    return np.repeat(per_edge, 2)


def _check_damping(damping):
    if not 0 <= damping < 1:
        raise ValueError(f"damping must lie in [0, 1), got {damping}")


def _run(name, inst, lay, sweep, weights, max_iters, damping, seed, time_limit, history):
    start = time.perf_counter()
    msgs = np.zeros((2 * lay.n_edges, lay.S))
    tracker = BestTracker()

    def observe(it):
        x = lay.decode(lay.unary + lay.incoming(msgs, weights))
        tracker.observe(it, time.perf_counter() - start, x, energy(inst, x))

    observe(0)
    reason = "max_iters"
    it = 0
    while it < max_iters:
        if time_limit is not None and time.perf_counter() - start >= time_limit:
            reason = "time_limit"
            break
        new = lay.normalize(sweep(msgs))
        if damping:
            new = lay.normalize((1.0 - damping) * new + damping * msgs)
        change = float(np.max(np.abs(new - msgs), initial=0.0))
        msgs = new
        it += 1
        if history is not None:
            history.append(msgs.copy())
        observe(it)
        if change < CONVERGENCE_TOL:
            reason = "converged"
            break
    return SolveReport(name, tracker.x, tracker.energy, reason, seed, iterations=it,
                       trace=tracker.trace, elapsed=time.perf_counter() - start)


def lbp_minsum(inst, max_iters=60, damping=0.1, seed=0, time_limit=None, history=None):
    """Synchronous min-sum loopy BP; returns the best decoded assignment seen.

    ``history``, if a list, receives a copy of the messages after each sweep.
    """
    _check_damping(damping)
    lay = _Layout(inst)

    def sweep(msgs):
        pre = (lay.unary + lay.incoming(msgs))[lay.src] - msgs[lay.rev]
        return np.min(pre[:, :, None] + lay.tables, axis=1)

    return _run("lbp", inst, lay, sweep, None, max_iters, damping, seed, time_limit, history)


def trbp_minsum(inst, max_iters=60, damping=0.1, rho=None, seed=0, time_limit=None,
                history=None):
    """Tree-reweighted min-sum with edge appearance probabilities ``rho``.

    ``rho`` may be a scalar, a per-clique sequence or a dict keyed by edge;
    by default every edge gets ``min(1, (n - 1) / |E|)``.
    """
    _check_damping(damping)
    lay = _Layout(inst)
    w = _edge_rho(inst, rho)
    scaled = lay.tables / w[:, None, None]

    def sweep(msgs):
        pre = (lay.unary + lay.incoming(msgs, w))[lay.src] - msgs[lay.rev]
        return np.min(pre[:, :, None] + scaled, axis=1)

    return _run("trbp", inst, lay, sweep, w, max_iters, damping, seed, time_limit, history)
