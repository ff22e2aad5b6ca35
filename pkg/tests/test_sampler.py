import math

import numpy as np
import pytest

from gossip_langevin.analysis import consensus_error, gossip_gradient_expectation
from gossip_langevin.errors import DivergenceError, InvalidParameterError
from gossip_langevin.models import GaussianMixtureTiedMeans, QuadraticModel
from gossip_langevin.rng import chain_stream
from gossip_langevin.sampler import (
    AgentStates,
    SamplerConfig,
    gradient_weights,
    run,
    step_centralized,
    step_gossip_et,
    step_gossip_plain,
    step_isolated,
    step_synchronous,
)
from gossip_langevin.scheduler import GossipEvent, GossipScheduler
from gossip_langevin.topology import activation_probabilities, build_complete, build_ring, build_star, laplacian

ZERO = np.zeros((2, 1))


def two_agent_case():
    g = build_complete(2)
    model = QuadraticModel.isotropic(2, 1, 1.0)
    cfg = SamplerConfig(alpha=0.01, beta=0.25, mu_e=0.0)
    states = AgentStates.initial(np.array([[1.0], [-1.0]]))
    return g, model, cfg, states


class TestWorkedExample:
    def test_event_triggered(self):
        g, model, cfg, states = two_agent_case()
        step_gossip_et(states, GossipEvent(0, 0, 1), model, cfg, gradient_weights(g, cfg.alpha), ZERO)
        # 1 - 2 beta - n alpha / (2 p_i), with p_i = 1, n = 2
        assert np.allclose(states.w.ravel(), [0.49, -0.49], atol=1e-15)

    def test_plain(self):
        g, model, cfg, states = two_agent_case()
        step_gossip_plain(states, GossipEvent(0, 1, 0), model, cfg, gradient_weights(g, cfg.alpha), ZERO)
        assert np.allclose(states.w.ravel(), [0.49, -0.49], atol=1e-15)
        assert list(states.broadcasts) == [1, 1]


class TestGossipStep:
    def test_no_fusion_no_trigger_is_langevin(self, gm_model):
        g = build_ring(5)
        cfg = SamplerConfig(alpha=1e-3, beta=0.0, mu_e=np.inf)
        gw = gradient_weights(g, cfg.alpha)
        w0 = np.random.default_rng(0).standard_normal((5, 2))
        states = AgentStates.initial(w0)
        states.w_hat[:] = 100.0
        z = np.random.default_rng(1).standard_normal((2, 2))
        step_gossip_et(states, GossipEvent(0, 2, 3), gm_model, cfg, gw, z)
        p = activation_probabilities(g).p
        for row, a in enumerate((2, 3)):
            expect = w0[a] - 5 * cfg.alpha / (2 * p[a]) * gm_model.grad_energy_i(a, w0[a]) + math.sqrt(2 * cfg.alpha) * (5 / math.sqrt(2)) * z[row]
            assert np.allclose(states.w[a], expect, atol=1e-14)
        assert np.array_equal(np.delete(states.w, [2, 3], axis=0), np.delete(w0, [2, 3], axis=0))
        assert states.broadcasts.sum() == 0

    def test_first_tick_never_triggers(self, gm_model):
        g = build_ring(5)
        cfg = SamplerConfig(alpha=1e-4, beta=0.1, mu_e=1e-12)
        w0 = np.random.default_rng(2).standard_normal((5, 2))
        states = AgentStates.initial(w0)
        step_gossip_et(states, GossipEvent(0, 0, 1), gm_model, cfg, gradient_weights(g, cfg.alpha), np.zeros((2, 2)))
        assert states.broadcasts.sum() == 0
        assert np.array_equal(states.w_hat, w0)
        fusion = -cfg.beta * (w0[0] - w0[1])
        drift = -gradient_weights(g, cfg.alpha)[0] * gm_model.grad_energy_i(0, w0[0])
        assert np.allclose(states.w[0], w0[0] + fusion + drift, atol=1e-15)

    def test_always_trigger_matches_plain(self, gm_model):
        g = build_ring(5)
        cfg = SamplerConfig(alpha=1e-4, beta=0.1, mu_e=0.0, ticks=3000, thin=1)
        a = run("gossip_et", gm_model, g, cfg)
        b = run("gossip", gm_model, g, cfg)
        assert np.allclose(a.final_w, b.final_w, atol=1e-12)
        assert np.allclose(a.consensus_error, b.consensus_error, rtol=1e-10, atol=1e-12)

    def test_per_neighbour_copies_on_single_edge(self, gm_model):
        model = GaussianMixtureTiedMeans(shards=gm_model.shards[:2])
        g = build_complete(2)
        base = SamplerConfig(alpha=1e-3, beta=0.2, mu_e=0.5, ticks=500)
        a = run("gossip_et", model, g, base)
        b = run("gossip_et", model, g, SamplerConfig(**{**base.to_dict(), "per_neighbor_copies": True}))
        assert np.array_equal(a.final_w, b.final_w)

    def test_per_neighbour_copies_go_stale(self, gm_model):
        g = build_ring(5)
        base = SamplerConfig(alpha=1e-4, beta=0.1, mu_e=8.0, delta_e=0.51, ticks=2000)
        a = run("gossip_et", gm_model, g, base)
        b = run("gossip_et", gm_model, g, SamplerConfig(**{**base.to_dict(), "per_neighbor_copies": True}))
        assert not np.array_equal(a.final_w, b.final_w)
        assert np.array_equal(a.tau, b.tau)


class TestAverageDynamics:
    """Fusion cancels in the network mean: only the pair's gradients and noise move it."""

    @pytest.mark.parametrize("engine", ["gossip", "gossip_et"])
    def test_identity(self, gm_model, engine):
        g = build_star(5)
        cfg = SamplerConfig(alpha=1e-3, beta=0.3, mu_e=0.05, delta_e=0.5)
        p = activation_probabilities(g).p
        gw = gradient_weights(g, cfg.alpha)
        sched = GossipScheduler(g, np.random.default_rng(0))
        zr = np.random.default_rng(1)
        states = AgentStates.initial(np.random.default_rng(2).standard_normal((5, 2)))
        step = step_gossip_et if engine == "gossip_et" else step_gossip_plain
        for _ in range(500):
            ev = next(sched)
            z = zr.standard_normal((2, 2))
            before = states.w.copy()
            step(states, ev, gm_model, cfg, gw, z)
            pair = (ev.i, ev.j)
            v = (5 / math.sqrt(2)) * z
            expect = -cfg.alpha * sum(gm_model.grad_energy_i(a, before[a]) / (2 * p[a]) for a in pair)
            expect = expect + math.sqrt(2 * cfg.alpha) * v.sum(axis=0) / 5
            assert np.allclose(states.w.mean(axis=0) - before.mean(axis=0), expect, atol=1e-10)


class TestGradientExpectation:
    @pytest.mark.parametrize("graph", [build_ring(5), build_star(5)], ids=["ring", "star"])
    def test_weighted_pair_gradient_is_half_full_gradient(self, gm_model, graph):
        r = np.random.default_rng(0)
        for _ in range(20):
            w = r.standard_normal(2)
            got = gossip_gradient_expectation(gm_model, graph, w, "pairwise")
            assert np.allclose(got, 0.5 * gm_model.grad_energy(w), atol=1e-10)

    @pytest.mark.parametrize("graph", [build_ring(5), build_star(5)], ids=["ring", "star"])
    def test_unbiased_scaling(self, gm_model, graph):
        r = np.random.default_rng(1)
        for _ in range(20):
            w = r.standard_normal(2)
            assert np.allclose(gossip_gradient_expectation(gm_model, graph, w, "unbiased"), gm_model.grad_energy(w), atol=1e-10)

    def test_unbiased_weights(self):
        g = build_star(4)
        assert np.allclose(gradient_weights(g, 0.1, "unbiased"), 2 * gradient_weights(g, 0.1, "pairwise"))


class TestTriggerProperties:
    def test_raising_threshold_reduces_broadcasts(self, gm_model):
        g = build_ring(5)
        counts = []
        for mu in (0.5, 8.0, 128.0):
            cfg = SamplerConfig(alpha=1e-4, beta=0.1, mu_e=mu, delta_e=0.51, ticks=20000, seed=4)
            counts.append(run("gossip_et", gm_model, g, cfg).broadcasts)
        assert np.all(counts[0] >= counts[1]) and np.all(counts[1] >= counts[2])
        assert counts[0].sum() > counts[2].sum()

    def test_staleness(self, gm_model):
        g = build_ring(5)
        cfg = SamplerConfig(alpha=1e-4, beta=0.1, mu_e=2.0, delta_e=0.51)
        mu, delta = cfg.per_agent("mu_e", 5), cfg.per_agent("delta_e", 5)
        gw = gradient_weights(g, cfg.alpha)
        sched = GossipScheduler(g, np.random.default_rng(5))
        zr = np.random.default_rng(6)
        states = AgentStates.initial(np.random.default_rng(7).standard_normal((5, 2)))
        for _ in range(5000):
            ev = next(sched)
            pre = states.copy()
            step_gossip_et(states, ev, gm_model, cfg, gw, zr.standard_normal((2, 2)), mu, delta)
            for a in (ev.i, ev.j):
                e = pre.w[a] - pre.w_hat[a]
                eps = mu[a] / (pre.tau[a] + 1) ** delta[a]
                assert float(e @ e) <= eps or states.broadcasts[a] == pre.broadcasts[a] + 1
                if states.broadcasts[a] > pre.broadcasts[a]:
                    assert np.array_equal(states.w_hat[a], pre.w[a])
            assert np.all(states.broadcasts <= states.tau)


class TestSynchronous:
    def test_single_agent_is_centralized(self):
        model = QuadraticModel.isotropic(1, 2, 0.7)
        z = np.array([[0.3, -1.2]])
        states = AgentStates.initial(np.array([[1.0, 2.0]]))
        step_synchronous(states, model, np.zeros((1, 1)), 0.01, 0.0, z)
        expect = step_centralized(np.array([1.0, 2.0]), model, 0.01, z[0])
        assert np.allclose(states.w[0], expect, atol=1e-15)

    def test_consensus_only_non_increasing(self):
        g = build_ring(5)
        model = QuadraticModel.isotropic(5, 2, 0.0)
        states = AgentStates.initial(np.random.default_rng(0).standard_normal((5, 2)))
        lap = laplacian(g)
        prev = consensus_error(states)
        for k in range(100):
            step_synchronous(states, model, lap, 0.0, 0.1, np.zeros((5, 2)), tick=k)
            cur = consensus_error(states)
            assert cur <= prev + 1e-15
            prev = cur
        assert prev < 1e-3

    def test_equal_states_no_fusion(self):
        model = QuadraticModel.isotropic(5, 2, 1.0)
        states = AgentStates.initial(np.ones((5, 2)))
        step_synchronous(states, model, laplacian(build_ring(5)), 0.01, 0.4, np.zeros((5, 2)))
        assert np.allclose(states.w, 1 - 0.01 * 5)

    def test_noise_variance(self):
        model = QuadraticModel.isotropic(4, 1, 0.0)
        states = AgentStates.initial(np.zeros((4, 1)))
        z = np.random.default_rng(0).standard_normal((4, 1))
        step_synchronous(states, model, np.zeros((4, 4)), 0.02, 0.0, z)
        assert np.allclose(states.w, math.sqrt(2 * 0.02 * 4) * z)


class TestCentralized:
    def test_zero_gradient_increments(self):
        model = QuadraticModel.isotropic(1, 1, 0.0)
        r = np.random.default_rng(0)
        w = np.zeros(1)
        inc = []
        for _ in range(20000):
            new = step_centralized(w, model, 0.05, r.standard_normal(1))
            inc.append(new - w)
            w = new
        inc = np.array(inc).ravel()
        assert abs(inc.mean()) < 4 * math.sqrt(0.1 / 20000)
        assert inc.var() == pytest.approx(0.1, rel=0.05)

    def test_zero_step(self, gm_model):
        w = np.array([0.4, -0.1])
        assert np.array_equal(step_centralized(w, gm_model, 0.0, np.ones(2)), w)

    def test_gaussian_target_short(self):
        model = QuadraticModel.isotropic(2, 2, 0.5)
        cfg = SamplerConfig(alpha=1e-2, ticks=200000, thin=5, burn_in=2000, seed=1)
        tr = run("centralized", model, build_complete(2), cfg)
        s = tr.samples[:, 0, :]
        # ULA on N(0, I) has stationary variance 1 / (1 - alpha / 2)
        assert np.allclose(np.var(s, axis=0), 1 / (1 - 0.005), rtol=0.1)


class TestIsolated:
    def test_step(self, gm_model):
        cfg = SamplerConfig(alpha=1e-3)
        w0 = np.random.default_rng(0).standard_normal((5, 2))
        states = AgentStates.initial(w0)
        z = np.random.default_rng(1).standard_normal((2, 2))
        step_isolated(states, GossipEvent(0, 1, 2), gm_model, cfg, z)
        for row, a in enumerate((1, 2)):
            g = gm_model.grad_neg_log_lik(a, w0[a]) + gm_model.grad_neg_log_prior(w0[a])
            assert np.allclose(states.w[a], w0[a] - 1e-3 * g + math.sqrt(2e-3) * z[row], atol=1e-15)
        assert np.array_equal(states.w[[0, 3, 4]], w0[[0, 3, 4]])
        assert states.broadcasts.sum() == 0

    def test_untouched_agent(self, gm_model):
        g = build_star(5)
        cfg = SamplerConfig(alpha=1e-3, ticks=1)
        tr = run("isolated", gm_model, g, cfg)
        idle = np.flatnonzero(tr.tau == 0)
        assert idle.size == 3
        assert np.array_equal(tr.final_w[idle], tr.initial_w[idle])


class TestRun:
    def test_zero_ticks(self, gm_model):
        tr = run("gossip_et", gm_model, build_ring(5), SamplerConfig(alpha=1e-4, ticks=0))
        assert list(tr.record_ticks) == [0] and tr.samples.shape == (1, 5, 2)
        assert np.array_equal(tr.final_w, tr.initial_w)

    @pytest.mark.parametrize("engine", ["gossip_et", "gossip", "synchronous", "isolated", "centralized"])
    def test_deterministic(self, gm_model, engine):
        cfg = SamplerConfig(alpha=1e-4, ticks=500, thin=7, seed=3)
        a = run(engine, gm_model, build_ring(5), cfg, chain=2)
        b = run(engine, gm_model, build_ring(5), cfg, chain=2)
        for f in ("consensus_error", "samples", "tau", "broadcasts", "record_ticks"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        assert a.record_ticks[-1] == 500

    def test_chains_differ(self, gm_model):
        cfg = SamplerConfig(alpha=1e-4, ticks=200)
        a = run("gossip_et", gm_model, build_ring(5), cfg, chain=0)
        b = run("gossip_et", gm_model, build_ring(5), cfg, chain=1)
        assert not np.array_equal(a.final_w, b.final_w)

    def test_initial_state_from_init_stream(self, gm_model):
        tr = run("gossip", gm_model, build_ring(5), SamplerConfig(alpha=1e-4, ticks=3, seed=9), chain=4)
        assert np.array_equal(tr.initial_w, chain_stream(9, 4, "init").standard_normal((5, 2)))

    def test_gossip_activity(self, gm_model):
        tr = run("gossip_et", gm_model, build_ring(5), SamplerConfig(alpha=1e-4, ticks=20000, thin=100))
        pct = tr.tau / tr.ticks
        assert np.all(np.abs(pct - 0.4) < 3 * math.sqrt(0.24 / 20000))
        assert tr.tau.sum() == 2 * tr.ticks

    def test_burn_in_and_thin(self, gm_model):
        tr = run("gossip", gm_model, build_ring(5), SamplerConfig(alpha=1e-4, ticks=95, thin=10, burn_in=40))
        assert list(tr.record_ticks) == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]
        assert list(tr.sample_ticks) == [40, 50, 60, 70, 80, 90, 95]

    def test_event_log(self, gm_model):
        g = build_ring(5)
        tr = run("gossip_et", gm_model, g, SamplerConfig(alpha=1e-4, ticks=300, log_events=True, seed=2))
        expect = GossipScheduler(g, chain_stream(2, 0, "schedule")).take(300)
        assert [tuple(r) for r in tr.events.tolist()] == [(e.k, e.i, e.j) for e in expect]

    def test_divergence(self):
        model = QuadraticModel.isotropic(5, 2, 1.0)
        with pytest.raises(DivergenceError) as err:
            run("gossip", model, build_ring(5), SamplerConfig(alpha=50.0, beta=0.1, ticks=100000))
        assert err.value.tick > 0
        assert err.value.trace is not None and not err.value.trace.completed

    def test_shape_mismatch(self, gm_model):
        with pytest.raises(InvalidParameterError):
            run("gossip", gm_model, build_ring(6), SamplerConfig(alpha=1e-4, ticks=1))

    def test_unknown_engine(self, gm_model):
        with pytest.raises(InvalidParameterError):
            run("metropolis", gm_model, build_ring(5), SamplerConfig(alpha=1e-4))


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"beta": 1.5},
            {"beta": -0.1},
            {"alpha": -1.0},
            {"alpha": float("nan")},
            {"mu_e": -1.0},
            {"thin": 0},
            {"ticks": -3},
            {"gradient_scaling": "other"},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(InvalidParameterError):
            SamplerConfig(**{"alpha": 1e-4, **kw}).validate()

    def test_beta_message_mentions_condition(self):
        with pytest.raises(InvalidParameterError, match="fusion-weight condition"):
            SamplerConfig(alpha=1e-4, beta=1.5).validate()

    def test_per_agent(self):
        cfg = SamplerConfig(alpha=1e-4, mu_e=[1.0, 2.0, 3.0])
        assert list(cfg.per_agent("mu_e", 3)) == [1.0, 2.0, 3.0]
        with pytest.raises(InvalidParameterError):
            cfg.per_agent("mu_e", 4)
