import math

import numpy as np
import pytest

from vaechoice.errors import DataError, NestStructureError, ShapeError, SpecError
from vaechoice.estimation import (
    FAMILIES,
    ChoiceData,
    ModelSpec,
    Observation,
    estimate,
    evaluate,
    joint_wald,
    log_likelihood,
    log_likelihood_grad,
    utility,
)
from vaechoice.numeric import central_difference, relative_error

ATTRS = ("a", "b", "c")


def literal_prob(v, bc, alpha, mu, scales):
    """Textbook CNL-with-perception probabilities, one alternative at a time."""
    J, M = alpha.shape
    y = [sum(bc[j] * alpha[j, m] * math.exp(scales[m] * v[j]) for j in range(J)) for m in range(M)]
    G = sum(y[m] ** (mu / scales[m]) for m in range(M) if y[m] > 0)
    out = []
    for i in range(J):
        num = sum(bc[i] * alpha[i, m] * math.exp(scales[m] * v[i]) * y[m] ** (mu / scales[m] - 1)
                  for m in range(M) if y[m] > 0)
        out.append(num / G)
    return np.array(out)


def fixture(n=10, J=4, M=2, seed=0, ragged=False):
    rng = np.random.default_rng(seed)
    obs = []
    for _ in range(n):
        j = int(rng.integers(2, J + 1)) if ragged else J
        alpha = rng.uniform(0.05, 1, size=(j, M))
        obs.append(Observation(int(rng.integers(j)), rng.uniform(0, 2, size=(j, 3)),
                               np.log(rng.uniform(0.05, 1, size=j)), alpha / alpha.sum(1, keepdims=True)))
    return obs, ChoiceData.from_observations(obs, ATTRS)


def literal_ll(obs, beta, family, mu=1.0, scales=(2.0, 2.0)):
    total = 0.0
    for o in obs:
        v = [float(sum(beta[k] * o.x[j, k] for k in range(3))) for j in range(len(o.x))]
        bc = np.exp(o.log_bc) if family.startswith("IAP") else np.ones(len(v))
        if family.endswith("CNL"):
            p = literal_prob(v, bc, o.alpha, mu, scales)
        else:
            e = [bc[j] * math.exp(v[j]) for j in range(len(v))]
            p = np.array(e) / sum(e)
        total += math.log(p[o.chosen])
    return total


def simulate_mnl(beta, n, J, seed, log_bc=False):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, J, len(beta)))
    lbc = rng.normal(size=(n, J)) if log_bc else np.zeros((n, J))
    v = x @ beta + lbc
    p = np.exp(v - v.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(n)
    chosen = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), J - 1)
    names = tuple(f"x{k}" for k in range(len(beta)))
    return ChoiceData(names, x, chosen, np.ones((n, J), bool), lbc if log_bc else None)


class TestUtility:
    def test_zero(self):
        assert np.all(utility(np.zeros(3), np.ones((4, 3))) == 0)

    def test_unit_pick(self):
        assert utility([1.0, 0, 0], [2.5, 7.0, -1.0]) == 2.5

    def test_naive_dot(self):
        rng = np.random.default_rng(1)
        b, x = rng.normal(size=5), rng.normal(size=(3, 5))
        naive = [sum(b[k] * x[j, k] for k in range(5)) for j in range(3)]
        np.testing.assert_allclose(utility(b, x), naive, atol=1e-13)

    def test_shape(self):
        with pytest.raises(ShapeError):
            utility(np.zeros(2), np.zeros(3))


class TestLogLikelihood:
    def test_uniform_at_zero(self):
        d = simulate_mnl(np.zeros(2), 50, 20, seed=0)
        assert log_likelihood(d, np.zeros(2), ModelSpec("MNL", d.attributes)) == pytest.approx(50 * math.log(1 / 20))

    def test_iap_at_zero(self):
        obs, d = fixture()
        expected = sum(math.log(math.exp(o.log_bc[o.chosen]) / np.exp(o.log_bc).sum()) for o in obs)
        assert log_likelihood(d, np.zeros(3), ModelSpec("IAP-MNL", ATTRS)) == pytest.approx(expected, rel=1e-12)

    def test_binary_logit(self):
        d = ChoiceData(("x",), np.array([[[1.0], [3.0]]]), np.array([0]), np.ones((1, 2), bool))
        beta = 0.7
        expected = math.log(1 / (1 + math.exp(beta * (3.0 - 1.0))))
        assert log_likelihood(d, [beta], ModelSpec("MNL", ("x",))) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("family", FAMILIES)
    @pytest.mark.parametrize("ragged", [False, True])
    def test_matches_literal(self, family, ragged):
        obs, d = fixture(ragged=ragged, seed=3)
        rng = np.random.default_rng(4)
        for _ in range(5):
            beta = rng.normal(size=3)
            got = log_likelihood(d, beta, ModelSpec(family, ATTRS))
            assert got == pytest.approx(literal_ll(obs, beta, family), rel=1e-11)

    def test_attribute_subset_and_order(self):
        obs, d = fixture()
        full = log_likelihood(d, [0.5, 0.0, -0.3], ModelSpec("MNL", ATTRS))
        sub = log_likelihood(d, [-0.3, 0.5], ModelSpec("MNL", ("c", "a")))
        assert sub == pytest.approx(full, abs=1e-12)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_gradient_matches_finite_differences(self, family):
        _, d = fixture(seed=5)
        spec = ModelSpec(family, ATTRS)
        rng = np.random.default_rng(6)
        for _ in range(20):
            beta = rng.normal(size=3)
            _, g = log_likelihood_grad(d, beta, spec)
            fd = central_difference(lambda b: log_likelihood(d, b, spec), beta)
            assert relative_error(g, fd) < 1e-6

    def test_iap_with_unit_bc_collapses(self):
        _, d = fixture(seed=7)
        d.log_bc = np.zeros_like(d.log_bc)
        beta = np.array([0.3, -1.0, 0.8])
        for iap, plain in (("IAP-MNL", "MNL"), ("IAP-CNL", "CNL")):
            assert log_likelihood(d, beta, ModelSpec(iap, ATTRS)) == pytest.approx(
                log_likelihood(d, beta, ModelSpec(plain, ATTRS)), abs=1e-10)

    def test_single_nest_cnl_is_mnl(self):
        obs, d = fixture(seed=8, M=1)
        beta = np.array([0.3, -1.0, 0.8])
        cnl = log_likelihood(d, beta, ModelSpec("CNL", ATTRS, mu=1.0, nest_scales=(1.0,)))
        assert cnl == pytest.approx(log_likelihood(d, beta, ModelSpec("MNL", ATTRS)), abs=1e-10)

    @pytest.mark.parametrize("family", ["IAP-MNL", "IAP-CNL"])
    def test_bc_scale_invariance(self, family):
        _, d = fixture(seed=9)
        beta = np.array([0.3, -1.0, 0.8])
        base = log_likelihood(d, beta, ModelSpec(family, ATTRS))
        d.log_bc = d.log_bc + np.random.default_rng(0).normal(size=(len(d), 1)) * 3
        assert log_likelihood(d, beta, ModelSpec(family, ATTRS)) == pytest.approx(base, abs=1e-9)

    def test_zero_bc_alternative_costs_nothing(self):
        obs, d = fixture(seed=10)
        d.log_bc[:, -1] = -np.inf
        d.chosen = np.minimum(d.chosen, 2)
        beta = np.array([0.3, -1.0, 0.8])
        trimmed = ChoiceData(ATTRS, d.x[:, :3], d.chosen, d.avail[:, :3], d.log_bc[:, :3])
        assert log_likelihood(d, beta, ModelSpec("IAP-MNL", ATTRS)) == pytest.approx(
            log_likelihood(trimmed, beta, ModelSpec("IAP-MNL", ATTRS)), abs=1e-12)


class TestErrors:
    def test_iap_needs_bc(self):
        d = simulate_mnl(np.zeros(2), 5, 3, 0)
        with pytest.raises(SpecError):
            log_likelihood(d, np.zeros(2), ModelSpec("IAP-MNL", d.attributes))

    def test_cnl_needs_alpha(self):
        d = simulate_mnl(np.zeros(2), 5, 3, 0)
        with pytest.raises(SpecError):
            log_likelihood(d, np.zeros(2), ModelSpec("CNL", d.attributes))

    def test_unknown_family(self):
        with pytest.raises(SpecError):
            ModelSpec("NL", ATTRS)

    def test_unknown_attribute(self):
        _, d = fixture()
        with pytest.raises(SpecError):
            log_likelihood(d, [0.0], ModelSpec("MNL", ("zzz",)))

    def test_bad_alpha_rows(self):
        _, d = fixture()
        d.alpha = d.alpha * 2
        with pytest.raises(NestStructureError):
            log_likelihood(d, np.zeros(3), ModelSpec("CNL", ATTRS))

    def test_nest_scale_below_mu(self):
        _, d = fixture()
        with pytest.raises(NestStructureError):
            log_likelihood(d, np.zeros(3), ModelSpec("CNL", ATTRS, mu=1.0, nest_scales=(0.5, 2.0)))

    def test_chosen_out_of_range(self):
        with pytest.raises(DataError):
            ChoiceData(("x",), np.zeros((1, 2, 1)), np.array([2]), np.ones((1, 2), bool))

    def test_empty_choice_set(self):
        with pytest.raises(DataError):
            ChoiceData.from_observations([Observation(0, np.zeros((0, 3)))], ATTRS)


class TestEstimate:
    def test_zero_truth_within_three_joint_se(self):
        d = simulate_mnl(np.zeros(3), 1500, 5, seed=11)
        r = estimate(d, ModelSpec("MNL", d.attributes))
        assert r.converged
        assert math.sqrt(joint_wald(r, np.zeros(3))) < 3.0

    def test_recovers_truth(self):
        beta = np.array([1.0, -0.5, 0.3])
        d = simulate_mnl(beta, 3000, 6, seed=12, log_bc=True)
        r = estimate(d, ModelSpec("IAP-MNL", d.attributes), targets=beta)
        assert r.converged and r.se_available
        assert np.all(np.abs(r.t_target) < 3)
        assert r.ll >= r.ll0

    def test_standard_errors_match_fisher_information(self):
        beta = np.array([0.8, -0.4])
        d = simulate_mnl(beta, 2000, 4, seed=13)
        r = estimate(d, ModelSpec("MNL", d.attributes))
        v = d.x @ r.beta
        p = np.exp(v - v.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        xbar = np.einsum("nj,njk->nk", p, d.x)
        dev = d.x - xbar[:, None, :]
        info = np.einsum("nj,njk,njl->kl", p, dev, dev)
        np.testing.assert_allclose(r.se, np.sqrt(np.diag(np.linalg.inv(info))), rtol=1e-4)

    def test_optimum_gradient(self):
        _, d = fixture(n=200, seed=14)
        r = estimate(d, ModelSpec("IAP-CNL", ATTRS))
        _, g = log_likelihood_grad(d, r.beta, ModelSpec("IAP-CNL", ATTRS))
        assert r.converged and r.ll >= r.ll0
        assert np.max(np.abs(g)) < 1e-3

    def test_ordering_invariance(self):
        beta = np.array([1.0, -0.5])
        d = simulate_mnl(beta, 800, 5, seed=15, log_bc=True)
        spec = ModelSpec("IAP-MNL", d.attributes)
        a = estimate(d, spec).beta
        rng = np.random.default_rng(0)
        perm_n = rng.permutation(len(d))
        perm_j = np.stack([rng.permutation(5) for _ in range(len(d))])
        rows = np.arange(len(d))[:, None]
        x = d.x[perm_n][rows, perm_j]
        lbc = d.log_bc[perm_n][rows, perm_j]
        chosen = np.argmax(perm_j == d.chosen[perm_n][:, None], axis=1)
        b = estimate(ChoiceData(d.attributes, x, chosen, d.avail, lbc), spec).beta
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_non_convergence_flagged(self):
        d = simulate_mnl(np.array([1.0, -1.0]), 300, 4, seed=16)
        r = estimate(d, ModelSpec("MNL", d.attributes), max_iter=1)
        assert not r.converged and r.iterations == 1

    def test_singular_hessian_flagged(self):
        d = simulate_mnl(np.array([1.0]), 200, 4, seed=17)
        x = np.concatenate([d.x, d.x], axis=2)
        dup = ChoiceData(("p", "q"), x, d.chosen, d.avail)
        r = estimate(dup, ModelSpec("MNL", ("p", "q")))
        assert not r.se_available
        assert "unavailable" in r.format_report()

    def test_report(self):
        d = simulate_mnl(np.array([1.0, -1.0]), 300, 4, seed=18)
        r = estimate(d, ModelSpec("MNL", d.attributes), targets=[1.0, -1.0])
        text = r.format_report()
        assert "# LL0:" in text and "# rho2:" in text
        header = [l for l in text.splitlines() if not l.startswith("#")][0]
        assert header.split("\t") == ["attribute", "beta", "se", "t_vs_0", "target", "t_vs_target"]
        assert r.rho2 == pytest.approx(1 - r.ll / r.ll0)

    def test_initial_vector_shape(self):
        d = simulate_mnl(np.array([1.0, -1.0]), 30, 4, seed=18)
        with pytest.raises(ShapeError):
            estimate(d, ModelSpec("MNL", d.attributes), init=np.zeros(3))


class TestEvaluate:
    def test_training_set_gives_llhat(self):
        d = simulate_mnl(np.array([0.5, -1.0]), 400, 5, seed=19)
        spec = ModelSpec("MNL", d.attributes)
        r = estimate(d, spec)
        assert evaluate(d, r.beta, spec) == r.ll

    def test_zero_beta_gives_ll0(self):
        d = simulate_mnl(np.array([0.5, -1.0]), 400, 5, seed=20)
        spec = ModelSpec("MNL", d.attributes)
        assert evaluate(d, np.zeros(2), spec) == pytest.approx(400 * math.log(1 / 5))

    def test_perturbation_lowers_test_ll(self):
        beta = np.array([0.5, -1.0, 0.7])
        train = simulate_mnl(beta, 1000, 5, seed=21)
        test = simulate_mnl(beta, 500, 5, seed=22)
        spec = ModelSpec("MNL", train.attributes)
        bhat = estimate(train, spec).beta
        base = evaluate(test, bhat, spec)
        rng = np.random.default_rng(23)
        worse = [evaluate(test, bhat + rng.normal(scale=2.0, size=3), spec) < base for _ in range(100)]
        assert np.mean(worse) >= 0.95
