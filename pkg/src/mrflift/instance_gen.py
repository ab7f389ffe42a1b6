"""Seeded synthetic MRFs on Erdos-Renyi graphs.

Instances are produced in the potential domain (a :class:`RawModel`), so
they go through exactly the same ``-log`` conversion as files read from
disk. Potts tables store ``exp(-(alpha * [all states equal] + beta))``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from mrflift.errors import DegenerateTopology
from mrflift.uai_io import RawModel, write_uai

MAX_ATTEMPTS = 10
# exp(-x) stays a normal double for x below ~708
MAX_POTTS_ENERGY = 700.0


@dataclass(frozen=True)
class GenSpec:
    """What to generate.

    Give exactly one of ``edge_prob`` and ``mean_degree``. With
    ``order="highorder"`` the instance also gets ``n_highorder`` cliques
    (default ``n_vars // 2``) whose sizes follow ``clique_sizes``.
    """

    n_vars: int
    edge_prob: float | None = None
    mean_degree: float | None = None
    order: str = "pairwise"
    clique_sizes: tuple[tuple[int, float], ...] = ((3, 0.5), (4, 0.5))
    n_highorder: int | None = None
    states: tuple[int, int] = (2, 6)
    energy_mode: str = "random"
    random_range: tuple[float, float] = (0.2, 3.0)
    potts_range: tuple[float, float] = (1e-5, 1000.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_vars < 2:
            raise ValueError("need at least 2 variables")
        if (self.edge_prob is None) == (self.mean_degree is None):
            raise ValueError("give exactly one of edge_prob and mean_degree")
        if not 0 < self.p < 1:
            raise ValueError(f"edge probability {self.p} outside (0, 1)")
        if self.order not in ("pairwise", "highorder"):
            raise ValueError(f"unknown order {self.order!r}")
        if self.energy_mode not in ("random", "potts"):
            raise ValueError(f"unknown energy mode {self.energy_mode!r}")
        lo, hi = self.states
        if not 1 <= lo <= hi:
            raise ValueError(f"bad state range {self.states}")
        for a, b in (self.random_range, self.potts_range):
            if not 0 < a <= b:
                raise ValueError("value ranges must be positive and nonempty")
        sizes = [s for s, _ in self.clique_sizes]
        weights = [w for _, w in self.clique_sizes]
        bad_sizes = self.order == "highorder" and any(s < 2 or s > self.n_vars for s in sizes)
        if bad_sizes or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError(f"bad clique size distribution {self.clique_sizes}")

    @property
    def p(self):
        if self.edge_prob is not None:
            return self.edge_prob
        return self.mean_degree / (self.n_vars - 1)

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def er_edges(rng, n, p):
    """Uniform G(n, p) edge list, sorted, as an ``(m, 2)`` array with i < j."""
    n_pairs = n * (n - 1) // 2
    m = int(rng.binomial(n_pairs, p))
    chosen = set()
    while len(chosen) < m:
        need = m - len(chosen)
        i = rng.integers(0, n, size=2 * need + 8)
        j = rng.integers(0, n, size=2 * need + 8)
        for a, b in zip(i.tolist(), j.tolist()):
            if a != b:
                chosen.add((a, b) if a < b else (b, a))
                if len(chosen) == m:
                    break
    return np.array(sorted(chosen), dtype=np.int64).reshape(-1, 2)


def _log_uniform(rng, lo, hi, size):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


def potts_params(rng, lo, hi):
    """One ``(alpha, beta)`` pair, log-uniform on ``[lo, hi]`` each.

    Pairs whose top energy ``alpha + beta`` would underflow ``exp(-.)`` to
    zero are redrawn.
    """
    while True:
        alpha, beta = _log_uniform(rng, lo, hi, 2)
        if alpha + beta <= MAX_POTTS_ENERGY:
            return float(alpha), float(beta)


def potts_table(shape, alpha, beta):
    """Potential table ``exp(-(alpha * [all equal] + beta))`` over ``shape``."""
    grids = np.indices(shape)
    equal = np.all(grids == grids[0], axis=0)
    return np.exp(-(alpha * equal + beta))


def _scopes(spec, rng, cards):
    n = spec.n_vars
    scopes = [tuple(e) for e in er_edges(rng, n, spec.p).tolist()]
    if spec.order == "highorder":
        sizes = np.array([s for s, _ in spec.clique_sizes])
        w = np.array([w for _, w in spec.clique_sizes], dtype=np.float64)
        count = spec.n_highorder if spec.n_highorder is not None else n // 2
        seen = set(scopes)
        for s in rng.choice(sizes, size=count, p=w / w.sum()):
            scope = tuple(sorted(rng.choice(n, size=int(s), replace=False).tolist()))
            if scope not in seen:
                seen.add(scope)
                scopes.append(scope)
    return scopes


def gen(spec):
    """Sample a :class:`RawModel` for ``spec``; equal specs give equal models."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.states
    cards = rng.integers(lo, hi + 1, size=spec.n_vars)
    for _ in range(MAX_ATTEMPTS):
        scopes = _scopes(spec, rng, cards)
        if scopes:
            break
    else:
        raise DegenerateTopology(f"no edges after {MAX_ATTEMPTS} attempts for {spec}")

    rlo, rhi = spec.random_range
    all_scopes = [(i,) for i in range(spec.n_vars)] + scopes
    tables = [rng.uniform(rlo, rhi, size=int(c)) for c in cards]
    for scope in scopes:
        shape = tuple(int(cards[v]) for v in scope)
        if spec.energy_mode == "random":
            tables.append(rng.uniform(rlo, rhi, size=shape).ravel())
        else:
            alpha, beta = potts_params(rng, *spec.potts_range)
            tables.append(potts_table(shape, alpha, beta).ravel())
    return RawModel(spec.n_vars, tuple(int(c) for c in cards), all_scopes, tables)


def gen_highorder(spec):
    if spec.order != "highorder":
        raise ValueError("gen_highorder needs order='highorder'")
    return gen(spec)


def write_instance(spec, out_dir, name=None):
    """Write ``<name>.uai`` under ``out_dir`` and append to ``manifest.txt``."""
    model = gen(spec)
    name = name or f"{spec.energy_mode}_{spec.order}_{spec.n_vars}_s{spec.seed}"
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.uai")
    with open(path, "w") as fh:
        fh.write(write_uai(model))
    n_cliques = sum(1 for s in model.scopes if len(s) > 1)
    with open(os.path.join(out_dir, "manifest.txt"), "a") as fh:
        fh.write(f"{name} {model.n_vars} {n_cliques} {spec.seed} {spec.digest()}\n")
    return path
