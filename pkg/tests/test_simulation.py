import math

import numpy as np
import pytest

from vaechoice import gev
from vaechoice.data import ROUTE_SCHEMA, fit_normalization, normalize, split, synth_corpus
from vaechoice.errors import ConfigError, FilterInfeasibleError
from vaechoice.estimation import ModelSpec
from vaechoice.simulation import (
    ExperimentConfig,
    accepts,
    choice_probabilities,
    generate_filtered_choice_set,
    run_consistency_experiment,
    simulate_choices,
)
from vaechoice.vae import VaeHyperparams, estimate_log_bc, generate_alternatives, init_model, train


@pytest.fixture(scope="module")
def model():
    c = split(synth_corpus(600, seed=1), 0.8, seed=2)
    s = fit_normalization(c)
    hp = VaeHyperparams(latent_dim=3, encoder_hidden_layers=1, decoder_hidden_layers=1, hidden_width=8,
                        mc_draws=20, max_iterations=60, minibatch_size=50, learning_rate=0.01)
    m = init_model(9, hp, np.random.default_rng(3), lower=s.lower_bounds, normalization=s)
    return train(m, normalize(c.train, s), np.random.default_rng(4)).model


class TestFilteredChoiceSet:
    def test_random_mode_keeps_first_draws(self, model):
        cs = generate_filtered_choice_set(model, 20, "random", np.random.default_rng(5))
        rng = np.random.default_rng(5)
        xn = generate_alternatives(model, 20, rng)
        np.testing.assert_array_equal(cs.x_normalized, xn)
        np.testing.assert_array_equal(cs.log_bc, estimate_log_bc(model, xn, model.hp.mc_draws, rng))
        assert cs.draws == 20

    def test_absolute_space_non_negative(self, model):
        cs = generate_filtered_choice_set(model, 50, "random", np.random.default_rng(6))
        assert np.all(cs.x >= 0)

    def test_unreachable_high_threshold(self, model):
        with pytest.raises(FilterInfeasibleError) as info:
            generate_filtered_choice_set(model, 20, "high", np.random.default_rng(7), log_tau=50.0, max_draws=500)
        assert info.value.mode == "high"

    @pytest.mark.parametrize("mode", ["low", "high"])
    def test_predicate_holds(self, model, mode):
        pilot = estimate_log_bc(model, generate_alternatives(model, 400, np.random.default_rng(8)), 20,
                                np.random.default_rng(9))
        log_tau = float(np.median(pilot))
        tau = math.exp(log_tau)
        cs = generate_filtered_choice_set(model, 20, mode, np.random.default_rng(10), log_tau=log_tau)
        assert len(cs.log_bc) == 20
        bc = np.exp(cs.log_bc)
        assert np.all(bc <= tau) if mode == "low" else np.all(bc >= tau)
        assert cs.draws >= 20 and len(cs.candidate_log_bc) == cs.draws

    def test_accepts(self):
        lbc = np.log([1e-4, 1e-3, 1e-2])
        t = math.log(1e-3)
        assert accepts(lbc, "low", t).tolist() == [True, True, False]
        assert accepts(lbc, "high", t).tolist() == [False, True, True]
        assert accepts(lbc, "random", t).all()


ATTRS = ("p", "q")


class TestSimulateChoices:
    def test_uniform_at_zero_beta(self):
        n, J = 10_000, 5
        x = np.random.default_rng(0).normal(size=(n, J, 2))
        d = simulate_choices(x, ATTRS, {"p": 0.0, "q": 0.0}, ModelSpec("MNL", ATTRS), np.random.default_rng(1))
        freq = np.bincount(d.chosen, minlength=J) / n
        band = 3 * math.sqrt(0.2 * 0.8 / n)
        assert np.all(np.abs(freq - 0.2) < band)

    def test_zero_bc_never_chosen(self):
        n = 5000
        x = np.random.default_rng(2).normal(size=(n, 3, 2))
        lbc = np.tile([0.0, -np.inf, 0.5], (n, 1))
        d = simulate_choices(x, ATTRS, {"p": 1.0, "q": -1.0}, ModelSpec("IAP-MNL", ATTRS),
                             np.random.default_rng(3), log_bc=lbc)
        assert not np.any(d.chosen == 1)

    def test_deterministic(self):
        x = np.random.default_rng(4).normal(size=(100, 4, 2))
        spec = ModelSpec("MNL", ATTRS)
        a = simulate_choices(x, ATTRS, {"p": 1.0, "q": 0.2}, spec, np.random.default_rng(5))
        b = simulate_choices(x, ATTRS, {"p": 1.0, "q": 0.2}, spec, np.random.default_rng(5))
        np.testing.assert_array_equal(a.chosen, b.chosen)

    @pytest.mark.parametrize("family", ["IAP-MNL", "IAP-CNL"])
    def test_frequencies_match_probabilities(self, family):
        n = 100_000
        base = np.array([[0.2, 1.0], [1.5, 0.1], [0.7, 0.7]])
        beta = {"p": 0.8, "q": -0.6}
        v = base @ np.array([0.8, -0.6])
        lbc = np.log([0.3, 1.0, 0.6])
        alpha = np.array([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
        if family == "IAP-MNL":
            expected = gev.iap_mnl_prob(v, lbc)
        else:
            expected = gev.iap_cnl_prob(v, lbc, gev.NestStructure(1.0, np.array([2.0, 2.0]), alpha))
        d = simulate_choices(np.tile(base, (n, 1, 1)), ATTRS, beta, ModelSpec(family, ATTRS),
                             np.random.default_rng(6), np.tile(lbc, (n, 1)), np.tile(alpha, (n, 1, 1)))
        freq = np.bincount(d.chosen, minlength=3) / n
        se = np.sqrt(expected * (1 - expected) / n)
        assert np.all(np.abs(freq - expected) < 3 * se)

    def test_probabilities_sum_to_one(self):
        x = np.random.default_rng(7).normal(size=(50, 6, 2))
        p = choice_probabilities(x, ATTRS, {"p": 2.0, "q": -3.0}, ModelSpec("MNL", ATTRS))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


class TestExperiment:
    def test_small_run_flags_low_power(self, model):
        r = run_consistency_experiment(model, ExperimentConfig(n_observations=10, seed=1))
        assert r.low_power
        assert r.result.n_obs == 10
        assert "low_power: True" in r.format()

    def test_deterministic_and_worker_independent(self, model):
        cfg = ExperimentConfig(n_observations=40, seed=2)
        a = run_consistency_experiment(model, cfg).format()
        b = run_consistency_experiment(model, cfg).format()
        c = run_consistency_experiment(model, cfg, workers=3).format()
        assert a == b == c

    def test_report_layout(self, model):
        r = run_consistency_experiment(model, ExperimentConfig(n_observations=60, seed=3, mode="high",
                                                               threshold_quantile=0.5, pilot_draws=300))
        text = r.format()
        assert "ln_bc_quantiles_all_draws: q0.01=" in text
        rows = [l.split("\t") for l in text.splitlines() if not l.startswith("#")]
        assert rows[0] == ["attribute", "true_beta", "beta_hat", "std", "t_vs_0", "t_vs_truth", "bias"]
        assert [r_[0] for r_ in rows[1:]] == list(ExperimentConfig().true_beta)
        assert r.threshold is not None and r.draws >= 60 * 20
        assert np.all(r.kept_bc_quantiles["0.01"] >= math.log(r.threshold) - 1e-12)

    def test_cnl_family(self, model):
        r = run_consistency_experiment(model, ExperimentConfig(n_observations=30, seed=4, family="IAP-CNL"))
        assert r.result.spec.family == "IAP-CNL"
        assert np.all(np.isfinite(r.result.beta))

    def test_default_true_beta(self):
        cfg = ExperimentConfig()
        assert cfg.true_beta == {
            "Route length detour": -1.5,
            "Route highway/expressway percentage": 1.5,
            "Route city node percentage": 0.5,
        }
        assert (cfg.n_observations, cfg.n_alternatives, cfg.threshold) == (1000, 20, 0.001)
        assert all(a in ROUTE_SCHEMA.names for a in cfg.true_beta)

    @pytest.mark.parametrize("kw", [{"mode": "mid"}, {"n_observations": 0}, {"mode": "low", "threshold": 0.0},
                                    {"threshold_quantile": 1.5}, {"true_beta": {}}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_unknown_attribute(self, model):
        with pytest.raises(ConfigError):
            run_consistency_experiment(model, ExperimentConfig(true_beta={"nope": 1.0}, n_observations=5))
