import math
from dataclasses import replace

import numpy as np
import pytest

import mrflift.autodiff as ad
from conftest import fd_rel_errors, random_instance
from mrflift.errors import NonPositiveTemperature, ShapeMismatch
from mrflift.mrf_core import MrfInstance, brute_force_map, canonicalize, clique_expansion, energy
from mrflift.neurolift import (
    LiftConfig,
    LiftedModel,
    decode,
    fit,
    forward,
    forward_tape,
    init_model,
    loss,
    multi_trial,
    train,
    trial_seeds,
)

SMALL = LiftConfig(d_l=16, layers=2, d_h=8, lr=1e-2, max_iters=40)


def setup(inst, cfg=SMALL):
    g = clique_expansion(inst)
    return g, inst.padded, init_model(g, inst.padded, cfg)


def two_node():
    return canonicalize(2, (2, 2), [((0, 1), [[0.0, 2.0], [2.0, 0.0]])])


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(d_l=0), dict(layers=0), dict(lr=0.0), dict(gamma=1.0), dict(gamma=0.0),
               dict(T0=0.5), dict(backbone="gat"), dict(patience=0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            LiftConfig(**kw)

    def test_defaults(self):
        cfg = LiftConfig()
        assert (cfg.d_l, cfg.layers, cfg.lr, cfg.max_iters, cfg.tol, cfg.patience) == (
            1024, 5, 1e-4, 150, 1e-4, 10)
        assert cfg.backbone == "graphsage"


class TestInit:
    def test_shapes(self):
        inst = canonicalize(3, (2, 3, 2), [((0, 1), np.zeros((2, 3)))])
        cfg = LiftConfig(d_l=2, layers=3, d_h=5)
        _, _, m = setup(inst, cfg)
        assert m.params["H0"].shape == (3, 2)
        assert m.params["self_0"].shape == (2, 2) and m.params["nbr_2"].shape == (2, 2)
        assert m.params["jk"].shape == (6, 5)
        assert m.params["head"].shape == (5, 3) and m.params["head_bias"].shape == (3,)
        bound = math.sqrt(6 / 2)
        assert np.all(np.abs(m.params["H0"]) <= bound)

    def test_gcn_shapes(self):
        _, _, m = setup(two_node(), replace(SMALL, backbone="gcn"))
        assert "w_1" in m.params and "self_0" not in m.params

    def test_deterministic(self):
        _, _, a = setup(two_node())
        _, _, b = setup(two_node())
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_seeds_differ(self):
        inst = two_node()
        for s in range(100):
            _, _, a = setup(inst, replace(SMALL, seed=s))
            _, _, b = setup(inst, replace(SMALL, seed=s + 1000))
            assert not np.array_equal(a.params["H0"], b.params["H0"])


class TestForward:
    def test_zero_weights_uniform(self):
        inst = canonicalize(3, (2, 3, 1), [((0, 1), np.zeros((2, 3))), ((1, 2), np.zeros((3, 1)))])
        g, p, m = setup(inst)
        for v in m.params.values():
            v[...] = 0.0
        P = forward(m, g, 1.7)
        np.testing.assert_allclose(P, [[0.5, 0.5, 0], [1 / 3, 1 / 3, 1 / 3], [1, 0, 0]], rtol=1e-15)

    def test_mask_three_of_five(self):
        inst = canonicalize(2, (3, 5), [((0, 1), np.zeros((3, 5)))])
        g, p, m = setup(inst)
        P = forward(m, g, 1.0)
        assert P[0].sum() == pytest.approx(1.0, abs=1e-12)
        assert P[0, 3] == 0.0 and P[0, 4] == 0.0

    def test_hand_computed_single_edge(self):
        inst = two_node()
        g = clique_expansion(inst)
        cfg = LiftConfig(d_l=1, layers=1, d_h=1)
        params = {
            "H0": np.array([[0.5], [-2.0]]),
            "self_0": np.array([[3.0]]),
            "nbr_0": np.array([[1.5]]),
            "jk": np.array([[-0.7]]),
            "head": np.array([[2.0, -1.0]]),
            "head_bias": np.array([0.1, 0.3]),
        }
        m = LiftedModel(cfg, params, inst.padded.additive_mask())
        T = 1.3
        h0, h1 = 0.5, -2.0
        z = [max(0.0, 3.0 * h0 + 1.5 * h1), max(0.0, 3.0 * h1 + 1.5 * h0)]
        want = []
        for zi in z:
            j = -0.7 * zi
            logits = [2.0 * j + 0.1, -1.0 * j + 0.3]
            e = [math.exp(l / T) for l in logits]
            want.append([v / sum(e) for v in e])
        np.testing.assert_allclose(forward(m, g, T), want, rtol=1e-14)

    def test_isolated_node_uses_zero_mean(self):
        inst = canonicalize(3, (2, 2, 2), [((0, 1), np.zeros((2, 2)))])
        g = clique_expansion(inst)
        cfg = LiftConfig(d_l=1, layers=1, d_h=1)
        params = {"H0": np.array([[1.0], [1.0], [2.0]]), "self_0": np.array([[1.0]]),
                  "nbr_0": np.array([[100.0]]), "jk": np.array([[1.0]]),
                  "head": np.array([[1.0, 0.0]]), "head_bias": np.zeros(2)}
        m = LiftedModel(cfg, params, inst.padded.additive_mask())
        P = forward(m, g, 1.0)
        np.testing.assert_allclose(P[2, 0], math.exp(2) / (math.exp(2) + 1), rtol=1e-14)

    def test_temperature_must_be_positive(self):
        g, _, m = setup(two_node())
        with pytest.raises(NonPositiveTemperature):
            forward(m, g, 0.0)


class TestLoss:
    def test_half_half(self):
        assert loss(two_node().padded, np.full((2, 2), 0.5)) == 1.0

    def test_one_hot_equals_energy(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            inst = random_instance(rng, 6, states=(1, 4), max_order=4, n_high=2)
            x = np.array([rng.integers(0, c) for c in inst.cardinalities])
            P = np.zeros((6, inst.padded.S))
            P[np.arange(6), x] = 1.0
            assert loss(inst.padded, P) == energy(inst, decode(P, inst.padded.mask))
            assert decode(P).tolist() == x.tolist()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            loss(two_node().padded, np.full((3, 2), 0.5))

    def test_tensor_input_is_differentiable(self):
        tape = ad.Tape()
        P = tape.leaf(np.full((2, 2), 0.5))
        L = loss(two_node().padded, P)
        (g,) = ad.backward(L, [P])
        np.testing.assert_allclose(g, [[1.0, 1.0], [1.0, 1.0]])


class TestDecode:
    def test_argmax(self):
        assert decode([[0.2, 0.7, 0.1]]).tolist() == [1]

    def test_tie_goes_low(self):
        assert decode([[0.5, 0.5, 0.0]]).tolist() == [0]

    def test_never_padded(self):
        mask = np.array([[True, True, True, False, False]])
        assert decode([[0.3, 0.3, 0.4, 0.0, 0.0]], mask).tolist() == [2]
        assert decode([[0.1, 0.1, 0.1, 0.9, 0.9]], mask).tolist() == [0]


@pytest.mark.parametrize("backbone", ["graphsage", "gcn"])
@pytest.mark.parametrize("seed", range(4))
def test_model_gradient_matches_finite_differences(backbone, seed):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 5, states=(2, 3), p=0.6, max_order=3, n_high=1)
    cfg = LiftConfig(d_l=6, layers=2, d_h=4, seed=seed, backbone=backbone)
    g, padded, m = setup(inst, cfg)
    tape = ad.Tape()
    P, leaves = forward_tape(m, g, 2.0, tape)
    grads = ad.backward(loss(padded, P), leaves)
    names = list(m.params)

    def f(vals):
        m.params.update(zip(names, vals))
        return loss(padded, forward(m, g, 2.0))

    vals = m.param_list()
    assert max(fd_rel_errors(f, vals, grads, rng, probes=6)) < 1e-4


class TestTrain:
    def test_unary_only_is_exact(self):
        inst = MrfInstance(3, (3, 2, 4), [np.array([3.0, 1.0, 2.0]), np.array([0.5, -1.0]),
                                          np.array([0.0, 0.0, -2.0, 5.0])])
        rep = train(inst, SMALL)
        assert rep.energy == 1.0 - 1.0 - 2.0
        assert rep.assignment.tolist() == [1, 1, 2]
        assert rep.reason == "converged"

    def test_report_invariants(self):
        rng = np.random.default_rng(1)
        inst = random_instance(rng, 7, p=0.5)
        rep = train(inst, SMALL)
        best = rep.best_energies()
        assert all(b <= a for a, b in zip(best, best[1:]))
        assert rep.energy == min(p.energy for p in rep.trace) == best[-1]
        assert rep.energy == energy(inst, rep.assignment)
        times = [p.t_seconds for p in rep.trace]
        assert times == sorted(times)
        assert rep.reason in ("converged", "max_iters")
        assert rep.iterations <= SMALL.max_iters
        assert rep.loss == rep.trace[-1].loss

    def test_small_instance_reaches_optimum(self):
        inst = two_node()
        rep = train(inst, SMALL)
        assert rep.energy == 0.0

    def test_seed_determinism(self):
        rng = np.random.default_rng(2)
        inst = random_instance(rng, 6)
        a, b = train(inst, SMALL), train(inst, SMALL)
        assert a.energy == b.energy and a.loss == b.loss and a.iterations == b.iterations
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert [p.loss for p in a.trace] == [p.loss for p in b.trace]
        assert [p.energy for p in a.trace] == [p.energy for p in b.trace]

    def test_time_limit(self):
        rng = np.random.default_rng(3)
        inst = random_instance(rng, 6)
        rep = train(inst, replace(SMALL, max_iters=10_000, tol=0.0), time_limit=0.3)
        assert rep.reason == "time_limit"
        assert rep.energy == energy(inst, rep.assignment)

    def test_zero_iterations(self):
        rng = np.random.default_rng(4)
        inst = random_instance(rng, 5)
        res = fit(inst, replace(SMALL, max_iters=0))
        assert res.report.iterations == 0 and len(res.report.trace) == 1
        assert res.temperature == SMALL.T0

    def test_gcn_backbone_trains(self):
        rep = train(two_node(), replace(SMALL, backbone="gcn"))
        assert rep.energy == 0.0

    def test_high_order_instance(self):
        rng = np.random.default_rng(5)
        inst = random_instance(rng, 6, max_order=4, n_high=3)
        rep = train(inst, SMALL)
        _, best = brute_force_map(inst)
        assert rep.energy >= best


class TestMultiTrial:
    def test_single_trial_equals_train(self):
        rng = np.random.default_rng(6)
        inst = random_instance(rng, 5)
        summary = multi_trial(inst, SMALL, trials=1)
        rep = train(inst, replace(SMALL, seed=trial_seeds(SMALL.seed, 1)[0]))
        assert summary.best.energy == rep.energy == summary.mean
        assert summary.std == 0.0

    def test_deterministic_and_distinct_seeds(self):
        rng = np.random.default_rng(7)
        inst = random_instance(rng, 5)
        a = multi_trial(inst, SMALL, trials=3)
        b = multi_trial(inst, SMALL, trials=3, workers=3)
        np.testing.assert_array_equal(a.energies, b.energies)
        assert len({r.seed for r in a.reports}) == 3
        assert [r.trial for r in a.reports] == [0, 1, 2]
        assert a.best.energy == a.energies.min()

    def test_format(self):
        rng = np.random.default_rng(8)
        s = multi_trial(random_instance(rng, 4), SMALL, trials=2)
        assert s.format() == f"{s.mean:.3f} ± {s.std:.3f}"

    def test_trials_must_be_positive(self):
        with pytest.raises(ValueError):
            multi_trial(two_node(), SMALL, trials=0)
