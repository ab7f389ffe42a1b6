"""GNN lifting solver.

Each variable gets a learnable embedding row. A stack of GraphSAGE layers
(or GCN layers) mixes the embeddings along the pairwise graph, the outputs of
all layers are concatenated (jumping knowledge) and mapped to one logit per
padded state. A masked softmax turns the logits into per-variable state
distributions ``P``, and the training loss is the expected energy of ``P``
under independent rows:

    L = sum_i <P_i, unary_i> + sum_C <table_C, (x)_{i in C} P_i>

At a one-hot ``P`` this is exactly the energy of the encoded assignment.
Adam minimizes ``L`` over all network parameters while the softmax
temperature is annealed toward 1; every iterate is rounded to an assignment
and scored exactly.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from mrflift import autodiff as ad
from mrflift.errors import ShapeMismatch
from mrflift.mrf_core import clique_expansion, energy, unary_argmin
from mrflift.report import BestTracker, SolveReport

log = logging.getLogger(__name__)

BACKBONES = ("graphsage", "gcn")


@dataclass(frozen=True)
class LiftConfig:
    d_l: int = 1024
    layers: int = 5
    d_h: int = 64
    lr: float = 1e-4
    max_iters: int = 150
    tol: float = 1e-4
    patience: int = 10
    T0: float = 5.0
    gamma: float = 0.95
    seed: int = 0
    backbone: str = "graphsage"

    def __post_init__(self):
        if self.d_l < 1 or self.layers < 1 or self.d_h < 1:
            raise ValueError("d_l, layers and d_h must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.T0 < 1:
            raise ValueError("T0 must be >= 1")
        if self.max_iters < 0 or self.patience < 1:
            raise ValueError("max_iters must be >= 0 and patience >= 1")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")


# settings used for the UAI benchmark files
UAI_CONFIG = LiftConfig(layers=8, max_iters=100)


@dataclass(eq=False)
class LiftedModel:
    """Parameters of the lifted network, in a fixed order.

    ``params`` maps names to arrays: ``H0`` (n x d_l embeddings), per layer
    ``self_k``/``nbr_k`` (GraphSAGE) or ``w_k`` (GCN), ``jk`` (layers*d_l x
    d_h), ``head`` (d_h x S) and ``head_bias`` (S,).
    """

    cfg: LiftConfig
    params: dict[str, np.ndarray]
    mask: np.ndarray

    def param_list(self):
        return list(self.params.values())

    def copy(self):
        return LiftedModel(self.cfg, {k: v.copy() for k, v in self.params.items()}, self.mask)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def init_model(graph, padded, cfg):
    """Random initial parameters; identical for identical ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    n, d, S = graph.n_vars, cfg.d_l, padded.S
    params = {"H0": _uniform(rng, (n, d), math.sqrt(6.0 / d))}
    glorot = math.sqrt(6.0 / (d + d))
    for k in range(cfg.layers):
        if cfg.backbone == "graphsage":
            params[f"self_{k}"] = _uniform(rng, (d, d), glorot)
            params[f"nbr_{k}"] = _uniform(rng, (d, d), glorot)
        else:
            params[f"w_{k}"] = _uniform(rng, (d, d), glorot)
    params["jk"] = _uniform(rng, (cfg.layers * d, cfg.d_h), math.sqrt(6.0 / (cfg.layers * d + cfg.d_h)))
    params["head"] = _uniform(rng, (cfg.d_h, S), math.sqrt(6.0 / (cfg.d_h + S)))
    params["head_bias"] = np.zeros(S)
    return LiftedModel(cfg, params, padded.additive_mask())


def _operators(graph):
    ops = graph.__dict__.get("_lift_ops")
    if ops is None:
        ops = (graph.mean_operator(), graph.gcn_operator())
        graph.__dict__["_lift_ops"] = ops
    return ops


def forward_tape(model, graph, temperature, tape):
    """Forward pass on ``tape``; returns ``(P, leaves)`` with leaves in param order."""
    mean_op, gcn_op = _operators(graph)
    leaves = {name: tape.leaf(v) for name, v in model.params.items()}
    h = leaves["H0"]
    outs = []
    for k in range(model.cfg.layers):
        if model.cfg.backbone == "graphsage":
            h = ad.sage_layer(h, leaves[f"self_{k}"], leaves[f"nbr_{k}"], mean_op)
        else:
            h = ad.relu(ad.matmul(ad.spmm(gcn_op, h), leaves[f"w_{k}"]))
        outs.append(h)
    jk = ad.matmul(ad.concat(outs, axis=1), leaves["jk"])
    logits = ad.add_bias(ad.matmul(jk, leaves["head"]), leaves["head_bias"])
    P = ad.masked_softmax(logits, model.mask, temperature)
    return P, list(leaves.values())


def forward(model, graph, temperature=1.0):
    """State distributions ``(n_vars, S)``; padded states get probability 0."""
    tape = ad.Tape()
    P, _ = forward_tape(model, graph, temperature, tape)
    tape.release()
    return P.value


def loss(padded, P):
    """Expected energy of independent rows ``P`` on the padded tables.

    ``P`` may be a tensor (differentiable result) or a plain array (float).
    """
    plain = not isinstance(P, ad.Tensor)
    if plain:
        P = ad.Tape().constant(P)
    if P.shape != (padded.base.n_vars, padded.S):
        raise ShapeMismatch(f"P has shape {P.shape}, want {(padded.base.n_vars, padded.S)}")
    tape = P.tape
    parts = [ad.flatten(ad.mul(P, tape.constant(padded.unary)))]
    for scopes, tables in padded.groups.values():
        parts.append(ad.batched_clique_contract(tables, P, scopes))
    out = ad.fsum(ad.concat(parts, axis=0))
    if plain:
        tape.release()
        return float(out.value)
    return out


def decode(P, mask=None):
    """Most probable real state per row; ties go to the smallest index."""
    P = np.asarray(P, dtype=np.float64)
    if mask is not None:
        P = np.where(mask, P, -np.inf)
    return np.argmax(P, axis=1).astype(np.int64)


@dataclass(eq=False)
class FitResult:
    report: SolveReport
    model: LiftedModel | None
    graph: object
    padded: object
    temperature: float


def fit(inst, cfg=LiftConfig(), time_limit=None, trial=0, on_iteration=None):
    """Train a lifted model on ``inst`` and keep the best rounded assignment.

    ``on_iteration(point)`` is called with each new trace point.
    """
    start = time.perf_counter()
    padded = inst.padded
    graph = clique_expansion(inst)
    tracker = BestTracker()

    if not inst.cliques:
        x = unary_argmin(inst)
        e = energy(inst, x)
        tracker.observe(0, time.perf_counter() - start, x, e, e)
        rep = SolveReport("neurolift", tracker.x, tracker.energy, "converged", cfg.seed, trial,
                          loss=e, iterations=0, trace=tracker.trace,
                          elapsed=time.perf_counter() - start)
        return FitResult(rep, None, graph, padded, 1.0)

    model = init_model(graph, padded, cfg)
    params = model.param_list()
    adam = ad.AdamState.for_params(params, lr=cfg.lr)
    T = cfg.T0
    prev, calm = None, 0
    reason = "max_iters"
    it = 0
    while it < cfg.max_iters:
        if time_limit is not None and time.perf_counter() - start >= time_limit:
            reason = "time_limit"
            break
        tape = ad.Tape()
        P, leaves = forward_tape(model, graph, T, tape)
        L = loss(padded, P)
        lv = float(L.value)
        x = decode(P.value, padded.mask)
        tracker.observe(it, time.perf_counter() - start, x, energy(inst, x), lv)
        if on_iteration is not None:
            on_iteration(tracker.trace[-1])
        grads = ad.backward(L, leaves)
        ad.adam_step(adam, params, grads)
        # free this step's activations before the next forward pass allocates its own
        tape.release()
        del tape, P, L, leaves, grads
        T = max(1.0, cfg.gamma * T)
        it += 1
        calm = calm + 1 if prev is not None and abs(lv - prev) < cfg.tol else 0
        prev = lv
        if calm >= cfg.patience:
            reason = "converged"
            break

    # score the parameters the last step produced
    P = forward(model, graph, T)
    final_loss = loss(padded, P)
    x = decode(P, padded.mask)
    tracker.observe(it, time.perf_counter() - start, x, energy(inst, x), final_loss)
    if on_iteration is not None:
        on_iteration(tracker.trace[-1])
    rep = SolveReport("neurolift", tracker.x, tracker.energy, reason, cfg.seed, trial,
                      loss=final_loss, iterations=it, trace=tracker.trace,
                      elapsed=time.perf_counter() - start)
    log.debug("neurolift trial %d: %s after %d iters, best %.6f", trial, reason, it, rep.energy)
    return FitResult(rep, model, graph, padded, T)


def train(inst, cfg=LiftConfig(), time_limit=None, trial=0):
    return fit(inst, cfg, time_limit, trial).report


def trial_seeds(base_seed, trials):
    """Independent per-trial seeds derived from ``base_seed``."""
    children = np.random.SeedSequence(base_seed).spawn(trials)
    return [int(c.generate_state(1, dtype=np.uint32)[0]) for c in children]


@dataclass
class TrialSummary:
    reports: list[SolveReport] = field(default_factory=list)

    @property
    def energies(self):
        return np.array([r.energy for r in self.reports])

    @property
    def best(self):
        return min(self.reports, key=lambda r: (r.energy, r.trial))

    @property
    def mean(self):
        return float(np.mean(self.energies))

    @property
    def std(self):
        return float(np.std(self.energies))

    def format(self, digits=3):
        return f"{self.mean:.{digits}f} ± {self.std:.{digits}f}"


def multi_trial(inst, cfg=LiftConfig(), trials=5, time_limit=None, workers=1):
    """Run ``trials`` independently seeded trainings and aggregate them."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = trial_seeds(cfg.seed, trials)

    def one(k):
        return train(inst, replace(cfg, seed=seeds[k]), time_limit, trial=k)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reports = list(pool.map(one, range(trials)))
    else:
        reports = [one(k) for k in range(trials)]
    return TrialSummary(reports)
