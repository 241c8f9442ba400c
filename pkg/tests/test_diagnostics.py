from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from skewmodal.diagnostics import (
    BoundInputs,
    DiagnosticsReport,
    ExactPosterior,
    average_probability_error,
    c1_star,
    c2_star,
    default_box,
    exact_posterior,
    functional_error,
    integrate_density,
    nonasymptotic_bound,
    quadrature_mean,
    tv_distance,
    tv_quadrature,
)
from skewmodal.errors import EmptyReference, PreconditionFailed, ResolutionExceeded, UnsupportedModel
from skewmodal.map_estimate import find_map
from skewmodal.model import exponential_expprior, gamma_poisson, probit_gaussian
from skewmodal.sampler import sample
from skewmodal.skew import LOGIT, PROBIT, build_gaussian_laplace, build_skew_modal


def normal_logpdf(mu, sd=1.0):
    return lambda x: stats.norm.logpdf(x[:, 0], mu, sd)


def fit_pair(model, data, skewing=PROBIT):
    fit = find_map(model, data)
    return build_skew_modal(model, data, fit, skewing), build_gaussian_laplace(fit, skewing=skewing)


# ---------------------------------------------------------------- quadrature TV


def test_identical_densities_zero():
    tv = tv_quadrature(normal_logpdf(0.3), normal_logpdf(0.3), [(-10, 10)])
    assert abs(tv) < 1e-10


def test_unit_shift_gaussians():
    tv = tv_quadrature(normal_logpdf(0.0), normal_logpdf(1.0), [(-12, 13)])
    assert tv == pytest.approx(2 * special.ndtr(0.5) - 1, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 3.0))
def test_equal_variance_gaussians_closed_form(shift, sd):
    tv = tv_quadrature(normal_logpdf(0.0, sd), normal_logpdf(shift, sd), [(-12 * sd - 3, 12 * sd + 3)])
    assert tv == pytest.approx(2 * special.ndtr(abs(shift) / (2 * sd)) - 1, abs=2e-6)


def test_two_dimensional_gaussians():
    cov = np.array([[1.0, 0.4], [0.4, 0.8]])
    shift = np.array([0.6, -0.3])
    p = stats.multivariate_normal(np.zeros(2), cov)
    q = stats.multivariate_normal(shift, cov)
    mahal = np.sqrt(shift @ np.linalg.solve(cov, shift))
    tv = tv_quadrature(p.logpdf, q.logpdf, [(-9, 9), (-9, 9)])
    assert tv == pytest.approx(2 * special.ndtr(mahal / 2) - 1, abs=1e-6)


def test_details_and_slack():
    res = tv_quadrature(normal_logpdf(0.0), normal_logpdf(1.0), [(-2, 3)], return_details=True)
    assert res.mass_p < 1 and res.slack > 0
    full = tv_quadrature(normal_logpdf(0.0), normal_logpdf(1.0), [(-12, 13)], return_details=True)
    assert full.slack < 1e-12


def test_resolution_cap():
    with pytest.raises(ResolutionExceeded):
        tv_quadrature(normal_logpdf(0.0, 1e-3), normal_logpdf(1e-3, 1e-3), [(-50, 50)], max_points=200)


def test_box_validation():
    with pytest.raises(ValueError):
        tv_quadrature(normal_logpdf(0.0), normal_logpdf(0.0), [(1, 0)])
    with pytest.raises(ValueError):
        tv_quadrature(normal_logpdf(0.0), normal_logpdf(0.0), [(0, 1)] * 4)


def test_symmetry_and_triangle(exp_data):
    skew, gauss = fit_pair(exponential_expprior(), exp_data)
    exact = exact_posterior("exponential_expprior", exp_data)
    box = default_box(skew, gauss, exact)
    dens = {"exact": exact, "skew": skew, "gauss": gauss}
    tv = {}
    for a in dens:
        for b in dens:
            tv[a, b] = tv_quadrature(dens[a].log_density, dens[b].log_density, box, tol=1e-8)
    for a in dens:
        for b in dens:
            assert tv[a, b] == pytest.approx(tv[b, a], abs=1e-8)
            for c in dens:
                assert tv[a, c] <= tv[a, b] + tv[b, c] + 1e-7


def test_exponential_fixture_ordering(exp_data):
    skew, gauss = fit_pair(exponential_expprior(), exp_data)
    exact = exact_posterior("exponential_expprior", exp_data)
    assert tv_distance(exact, skew) < tv_distance(exact, gauss)


def test_h_scale_approximations_are_moved(exp_data):
    model = exponential_expprior()
    fit = find_map(model, exp_data)
    exact = exact_posterior(model, exp_data)
    h = build_skew_modal(model, exp_data, fit, scale="h_scale")
    t = build_skew_modal(model, exp_data, fit, scale="theta_scale")
    assert tv_distance(exact, h) == pytest.approx(tv_distance(exact, t), abs=1e-6)


def test_normalization_and_mean(probit_data):
    skew, _ = fit_pair(probit_gaussian(25.0), probit_data)
    box = default_box(skew)
    assert integrate_density(skew.log_density, box) == pytest.approx(1.0, abs=1e-6)
    mc = sample(skew, 400_000, seed=3).points
    se = mc.std(axis=0) / np.sqrt(mc.shape[0])
    assert np.all(np.abs(quadrature_mean(skew, box, tol=1e-8) - mc.mean(axis=0)) < 4 * se)


# ---------------------------------------------------------------- exact posteriors


def test_exact_exponential(exp_data):
    post = exact_posterior("exponential_expprior", exp_data)
    assert (post.shape, post.rate) == (5.0, 3.0)
    assert post.mean == pytest.approx(5 / 3)


def test_exact_gamma_poisson_mode_is_map(gp_data):
    model = gamma_poisson(2.0, 1.0)
    post = exact_posterior(model, gp_data)
    assert (post.shape, post.rate) == (5.0, 4.0)
    assert post.mode == 1.0
    assert find_map(model, gp_data).theta_hat[0] == pytest.approx(1.0, abs=1e-10)


def test_exact_prior_params_override(gp_data):
    post = exact_posterior("gamma_poisson", gp_data, {"alpha": 1.0, "beta": 0.5})
    assert (post.shape, post.rate) == (4.0, 3.5)


def test_exact_posterior_guards(probit_data):
    with pytest.raises(UnsupportedModel):
        exact_posterior("exponential_expprior", None)
    with pytest.raises(UnsupportedModel):
        exact_posterior("probit_gaussian", probit_data)
    with pytest.raises(UnsupportedModel):
        ExactPosterior(1.0, 1.0, family="beta")


def test_exact_density_normalized():
    post = ExactPosterior(5.0, 3.0)
    assert integrate_density(post.log_density, [(1e-12, 30.0)]) == pytest.approx(1.0, abs=1e-8)
    assert post.expectation(lambda t: t) == pytest.approx(5 / 3, abs=1e-10)


# ---------------------------------------------------------------- functional errors


def test_functional_error_against_own_sampler(probit_data):
    skew, _ = fit_pair(probit_gaussian(25.0), probit_data)
    ref = sample(skew, 200_000, seed=77)
    rep = functional_error(skew, ref, m=200_000, seed=78)
    assert rep.method == "monte_carlo" and rep.tv is None
    assert np.all(rep.fmae < 3 * rep.standard_error)


def test_exponential_fmae(exp_data):
    skew, gauss = fit_pair(exponential_expprior(), exp_data)
    exact = exact_posterior("exponential_expprior", exp_data)
    g = functional_error(gauss, exact, m=1_000_000, seed=1)
    s = functional_error(skew, exact, m=1_000_000, seed=1)
    assert g.fmae[0] == pytest.approx(1 / 3, abs=4 * g.standard_error[0])
    assert s.fmae[0] + 4 * s.standard_error[0] < g.fmae[0]


@pytest.mark.parametrize("f", [PROBIT, LOGIT], ids=["probit", "logit"])
def test_even_functional_equal_for_skew_and_gaussian(probit_data, f):
    skew, gauss = fit_pair(probit_gaussian(25.0), probit_data, f)
    loc = skew.location
    G = lambda x: np.sum((x - loc) ** 2, axis=1) + np.cos((x - loc)[:, 0])
    rep = functional_error(skew, sample(gauss, 500_000, seed=6), G, m=500_000, seed=5)
    assert rep.fmae[0] < 4 * rep.standard_error[0]


def test_empty_reference(exp_data):
    skew, _ = fit_pair(exponential_expprior(), exp_data)
    with pytest.raises(EmptyReference):
        functional_error(skew, np.zeros((0, 1)), m=10)


def test_report_invariants():
    with pytest.raises(ValueError):
        DiagnosticsReport(1.5, None, "quadrature")
    with pytest.raises(ValueError):
        DiagnosticsReport(0.1, None, "quadrature", standard_error=np.array([0.1]))
    assert DiagnosticsReport(0.1, None, "quadrature").to_dict()["standard_error"] is None


def test_average_probability_error():
    rng = np.random.default_rng(0)
    z = np.column_stack([np.ones(5), rng.normal(size=5)])
    ref = rng.normal(size=(400, 2))
    app = rng.normal(0.1, 1.0, size=(300, 2))
    expected = np.mean(np.abs(special.ndtr(ref @ z.T).mean(0) - special.ndtr(app @ z.T).mean(0)))
    assert average_probability_error(ref, app, z) == pytest.approx(expected, rel=1e-14)
    expected_logit = np.mean(np.abs(special.expit(ref @ z.T).mean(0) - special.expit(app @ z.T).mean(0)))
    assert average_probability_error(ref, app, z, link="logit") == pytest.approx(expected_logit, rel=1e-14)
    assert average_probability_error(ref, ref, z) == 0.0
    with pytest.raises(EmptyReference):
        average_probability_error(np.zeros((0, 2)), app, z)


# ---------------------------------------------------------------- bound calculator


def unit_inputs(**kw):
    base = dict(L3=1.0, L4=1.0, L_pi2=1.0, L_F_delta=1.0, eta_bar1=1.0, eta_bar2=2.0, c0=3.0, c5=1.0, d=2, n=10 ** 6)
    base.update(kw)
    return BoundInputs(**base)


def test_unit_constants():
    b = unit_inputs()
    assert c1_star(b) == 4.0
    assert c2_star(b) == pytest.approx(16 / 3 + 512 / 81 + 8 / 3, abs=1e-12)
    assert c2_star(b) == pytest.approx(14.321, abs=1e-3)


def test_bound_limit():
    ratios = []
    for n in (1e8, 1e12, 1e16, 1e24):
        b = unit_inputs(n=int(n))
        r = nonasymptotic_bound(b)
        ratios.append(r.bound * n / np.log(n) ** 3)
    target = 2 * c2_star(unit_inputs()) * 3.0 ** 3 * 2 ** 3
    errs = [abs(x / target - 1) for x in ratios]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-6


def test_large_dimension_flagged():
    b = unit_inputs(d=135, n=333)
    res = nonasymptotic_bound(b)
    assert not res.valid
    assert not res.preconditions["sample_size"]
    assert res.preconditions["sample_size_lhs"] > res.preconditions["sample_size_rhs"]
    with pytest.raises(PreconditionFailed) as info:
        nonasymptotic_bound(b, strict=True)
    assert info.value.result.bound == res.bound


def test_c0_condition():
    assert not nonasymptotic_bound(unit_inputs(c0=1.5)).preconditions["c0"]
    res = nonasymptotic_bound(unit_inputs(c0=3.0, L_pi_delta=1.0, C_pi_delta=1.0))
    assert res.preconditions["c0_evaluated"]
    assert isinstance(res.preconditions["c0_floor"], float)


def test_bound_input_validation():
    with pytest.raises(ValueError):
        unit_inputs(L3=0.0)
    with pytest.raises(ValueError):
        unit_inputs(eta_bar1=3.0, eta_bar2=2.0)
