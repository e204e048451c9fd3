import numpy as np
import pytest

from netgps import ValidationError
from netgps import outcome as O
from netgps import splines as S
from netgps.mcmc import McmcConfig


def linear_design(n=200, p=3, seed=0, labels=None, weights=None):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    vp = np.column_stack([np.ones(n), x])  # stand-in for V'
    z = rng.integers(0, 2, n).astype(float)
    return O.OutcomeDesign(vprime=vp, z=z, labels=labels, weights=weights)


class TestVprime:
    def test_full_model_columns(self):
        v = np.array([[0.5, 0.3, 0.2]])
        out = O.vprime(v)
        assert np.allclose(out, [[1.0, 0.5, 0.3, 0.2, 0.1]])

    def test_matching_drops_phi(self):
        v = np.array([[0.5, 0.2]])
        out = O.vprime(v, matching=True)
        assert np.allclose(out, [[1.0, 0.5, 0.2, 0.1]])

    def test_dimension_checks(self):
        with pytest.raises(ValidationError):
            O.vprime(np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            O.vprime(np.zeros((2, 3)), matching=True)


class TestConjugateOracle:
    def test_matches_closed_form(self):
        # linear model, fixed nu, no splines/RE: the (e) step draws iid from
        # the exact normal-normal posterior; oracle is the closed form
        n, nu = 200, 2.5
        design = linear_design(n=n, p=3, seed=1)
        rng = np.random.default_rng(2)
        truth = np.array([1.0, -0.5, 0.25, 0.0, 0.5, 0.0, 0.0, 0.0])
        f = design.fixed_block()
        y = f @ truth + rng.normal(0, np.sqrt(nu), n)

        spec = O.OutcomeModelSpec(linear_only=True, include_random_effects=False,
                                  fixed_nu=nu)
        cfg = McmcConfig(iterations=3000, burn_in=1000, thin=1, seed=3)
        post = O.gibbs_sample(spec, design, y, cfg)

        prec = f.T @ f / nu + np.eye(8) / 100.0
        cov = np.linalg.inv(prec)
        mean = cov @ (f.T @ y / nu)
        m = post.n_draws
        se = np.sqrt(np.diag(cov) / m)
        assert np.all(np.abs(post.beta.mean(axis=0) - mean) <= 3 * se)
        sd_ratio = post.beta.std(axis=0) / np.sqrt(np.diag(cov))
        assert np.all((sd_ratio > 0.9) & (sd_ratio < 1.1))
        assert np.allclose(post.nu, nu)

    def test_zero_outcome_centers_at_zero(self):
        design = linear_design(n=150, p=2, seed=4)
        spec = O.OutcomeModelSpec(linear_only=True, include_random_effects=False,
                                  fixed_nu=1.0)
        cfg = McmcConfig(iterations=2000, burn_in=500, thin=1, seed=5)
        post = O.gibbs_sample(spec, design, np.zeros(150), cfg)
        se = post.beta.std(axis=0) / np.sqrt(post.n_draws)
        assert np.all(np.abs(post.beta.mean(axis=0)) <= 4 * se)


class TestRandomEffects:
    def test_sig2_u_coverage_planted_two(self):
        # planted sig2_u = 2, J = 100 communities of 5
        hits = 0
        reps = 20
        for rep in range(reps):
            rng = np.random.default_rng(100 + rep)
            J, per = 100, 5
            labels = np.repeat(np.arange(J), per)
            n = J * per
            u = rng.normal(0, np.sqrt(2.0), J)
            x = rng.normal(size=(n, 1))
            vp = np.column_stack([np.ones(n), x])
            z = rng.integers(0, 2, n).astype(float)
            y = 0.5 + 0.8 * x[:, 0] + u[labels] + rng.normal(0, 1.0, n)
            design = O.OutcomeDesign(vprime=vp, z=z, labels=labels)
            spec = O.OutcomeModelSpec(linear_only=True)
            cfg = McmcConfig(iterations=1500, burn_in=500, thin=2, seed=rep)
            post = O.gibbs_sample(spec, design, y, cfg)
            lo, hi = np.quantile(post.sig2_u, [0.025, 0.975])
            hits += lo <= 2.0 <= hi
        assert hits >= 0.9 * reps

    def test_u_draws_have_j_components(self):
        labels = np.repeat(np.arange(7), 10)
        design = linear_design(n=70, p=1, seed=6, labels=labels)
        y = np.random.default_rng(7).normal(size=70)
        post = O.gibbs_sample(
            O.OutcomeModelSpec(linear_only=True), design, y,
            McmcConfig(iterations=400, burn_in=200, seed=8),
        )
        assert post.u.shape[1] == 7

    def test_single_community_warns(self):
        labels = np.zeros(40, dtype=int)
        design = linear_design(n=40, p=1, seed=9, labels=labels)
        y = np.random.default_rng(10).normal(size=40)
        with pytest.warns(UserWarning, match="weakly identified"):
            O.gibbs_sample(
                O.OutcomeModelSpec(linear_only=True), design, y,
                McmcConfig(iterations=300, burn_in=100, seed=11),
            )

    def test_re_requires_labels(self):
        design = linear_design(n=30, p=1, seed=12)
        with pytest.raises(ValidationError):
            O.gibbs_sample(
                O.OutcomeModelSpec(linear_only=True), design,
                np.zeros(30), McmcConfig(iterations=200, burn_in=100),
            )


def spline_design(n=250, seed=13):
    rng = np.random.default_rng(seed)
    v = np.column_stack([rng.random(n), rng.random(n), rng.random(n)])
    u, basis = S.build_basis(v, n_knots=12, seed=seed)
    vp = O.vprime(v)
    z = rng.integers(0, 2, n).astype(float)
    y = np.sin(6.0 * v[:, 0]) + 2.0 * np.cos(4.0 * v[:, 1]) + rng.normal(0, 0.3, n)
    return O.OutcomeDesign(vprime=vp, z=z, u_basis=u), y


class TestSplinesInSampler:
    def test_smoothing_prior_shrinks_coefficients(self):
        design, y = spline_design()
        cfg = McmcConfig(iterations=1200, burn_in=400, seed=14)
        norms = {}
        for tag, s2 in (("tight", 1e-6), ("loose", 1e2)):
            spec = O.OutcomeModelSpec(include_random_effects=False,
                                      fixed_smoothing=(s2, s2), fixed_nu=0.1)
            post = O.gibbs_sample(spec, design, y, cfg)
            k = post.b.shape[1] // 2
            norms[tag] = np.linalg.norm(post.b[:, :k], axis=1).mean()
        assert norms["tight"] < 0.01 * norms["loose"]

    def test_variance_draws_positive(self):
        design, y = spline_design(n=150, seed=15)
        spec = O.OutcomeModelSpec(include_random_effects=False)
        post = O.gibbs_sample(spec, design, y,
                              McmcConfig(iterations=800, burn_in=300, seed=16))
        assert np.all(post.sig2_bu > 0) and np.all(post.sig2_buz > 0)
        assert np.all(post.nu > 0)

    def test_mh_acceptance_window(self):
        design, y = spline_design(n=200, seed=17)
        spec = O.OutcomeModelSpec(include_random_effects=False)
        post = O.gibbs_sample(spec, design, y,
                              McmcConfig(iterations=3000, burn_in=1500, seed=18))
        for name in ("bu", "buz", "nu"):
            assert 0.1 <= post.accept[name] <= 0.5, name

    def test_spline_model_needs_basis(self):
        design = linear_design(n=40, p=1, seed=19)
        with pytest.raises(ValidationError):
            O.gibbs_sample(O.OutcomeModelSpec(include_random_effects=False),
                           design, np.zeros(40),
                           McmcConfig(iterations=200, burn_in=100))


class TestRowPermutationInvariance:
    def test_posterior_means_match(self):
        rng = np.random.default_rng(20)
        n = 300
        labels = rng.integers(0, 10, n)
        design = linear_design(n=n, p=2, seed=21, labels=labels)
        f = design.fixed_block()
        y = f @ np.array([1.0, 0.3, -0.2, 0.0, 0.4, 0.0]) + rng.normal(0, 1, n)
        perm = rng.permutation(n)
        design_p = O.OutcomeDesign(vprime=design.vprime[perm], z=design.z[perm],
                                   labels=labels[perm])
        spec = O.OutcomeModelSpec(linear_only=True)
        cfg = McmcConfig(iterations=2500, burn_in=1000, seed=22)
        post_a = O.gibbs_sample(spec, design, y, cfg)
        post_b = O.gibbs_sample(spec, design_p, y[perm], cfg)
        se = post_a.beta.std(axis=0) / np.sqrt(200)  # generous MC error
        assert np.all(np.abs(post_a.beta.mean(0) - post_b.beta.mean(0)) <= 4 * se)


class TestPredictiveDraw:
    def _toy_posterior(self):
        design = linear_design(n=60, p=1, seed=23,
                               labels=np.repeat(np.arange(6), 10))
        y = np.random.default_rng(24).normal(size=60)
        return O.gibbs_sample(
            O.OutcomeModelSpec(linear_only=True), design, y,
            McmcConfig(iterations=400, burn_in=200, seed=25),
        )

    def test_zero_coefficients_mean_mode(self):
        post = self._toy_posterior()
        post.beta[0] = 0.0
        post.u[0] = 0.0
        val = O.predictive_draw(post, 0, np.zeros(post.beta.shape[1]),
                                community=0, mode="mean")
        assert val == 0.0

    def test_known_community_used_exactly(self):
        post = self._toy_posterior()
        f = np.zeros(post.beta.shape[1])
        val = O.predictive_draw(post, 3, f, community=4, mode="mean")
        assert val == pytest.approx(post.u[3, 4])

    def test_draw_mode_variance(self):
        post = self._toy_posterior()
        post.beta[5] = 0.0
        post.u[5] = 0.0
        post.nu[5] = 1.7
        rng = np.random.default_rng(26)
        f = np.zeros(post.beta.shape[1])
        draws = [O.predictive_draw(post, 5, f, community=0, rng=rng)
                 for _ in range(10000)]
        assert np.var(draws) == pytest.approx(1.7, rel=0.05)

    def test_weight_scales_noise(self):
        post = self._toy_posterior()
        post.beta[5] = 0.0
        post.u[5] = 0.0
        post.nu[5] = 2.0
        rng = np.random.default_rng(27)
        f = np.zeros(post.beta.shape[1])
        draws = [O.predictive_draw(post, 5, f, community=0, rng=rng, weight=4.0)
                 for _ in range(10000)]
        assert np.var(draws) == pytest.approx(0.5, rel=0.06)

    def test_unknown_community_fresh_intercept(self):
        post = self._toy_posterior()
        post.beta[5] = 0.0
        post.sig2_u[5] = 3.0
        post.nu[5] = 1e-12
        rng = np.random.default_rng(28)
        f = np.zeros(post.beta.shape[1])
        draws = [O.predictive_draw(post, 5, f, community=None, rng=rng)
                 for _ in range(8000)]
        assert np.var(draws) == pytest.approx(3.0, rel=0.08)


class TestExport:
    def test_csv_and_diagnostics(self, tmp_path):
        design = linear_design(n=80, p=1, seed=29,
                               labels=np.repeat(np.arange(8), 10))
        y = np.random.default_rng(30).normal(size=80)
        post = O.gibbs_sample(
            O.OutcomeModelSpec(linear_only=True), design, y,
            McmcConfig(iterations=600, burn_in=200, seed=31),
        )
        p = tmp_path / "chains.csv"
        post.to_csv(p)
        lines = p.read_text().strip().split("\n")
        assert len(lines) == 1 + post.n_draws
        assert lines[0].startswith("beta0,")
        diag = post.convergence_summary()
        names = {d["param"] for d in diag}
        assert "nu" in names and "sig2_u" in names
        assert all(np.isfinite(d["ess"]) for d in diag)


class TestPriorConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            O.PriorConfig(coef_var=0.0)
        with pytest.raises(ValidationError):
            O.PriorConfig(lkj_shape=-1.0)
        with pytest.raises(ValidationError):
            O.OutcomeModelSpec(fixed_nu=0.0)
