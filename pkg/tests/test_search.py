import math

import numpy as np
import pytest

from trimeta import (
    AlphaGrid,
    BootstrapEnsemble,
    PipelineConfig,
    TrimSpec,
    analyze,
    apply_alpha_m_correction,
    dsl_fit,
    evaluate_cell,
    generate_ensemble,
    grid_search,
    inclusion_probability,
    make_residuals,
    trimmed_fit,
)
from trimeta.errors import DegenerateTrimError, InputError, SearchError
from trimeta.search import EnsembleTrimmer
from trimeta.simulation import SimTemplate, parametric_replicate


@pytest.fixture(scope="module")
def cdp_ensemble(cdp):
    fit = dsl_fit(cdp)
    return generate_ensemble(cdp, fit, make_residuals(cdp, fit), 10000, seed=20190612)


@pytest.fixture(scope="module")
def small_ensemble(cdp):
    fit = dsl_fit(cdp)
    return generate_ensemble(cdp, fit, make_residuals(cdp, fit), 400, seed=5)


def test_grid_construction():
    g = AlphaGrid.regular()
    assert g.values_lo[0] == 0.0 and g.values_hi[0] == 0.0
    assert max(g.values_lo) <= g.alpha_max
    assert all(a + b <= g.alpha_max + 1e-12 for a, b in g.coarse_cells())
    assert g.step == 0.02 and g.refine_rounds == 2
    with pytest.raises(InputError):
        AlphaGrid((0.1, 0.2), (0.0,))
    with pytest.raises(InputError):
        AlphaGrid.regular(0.0)


def test_per_replicate_theta_matches_scalar_path(small_ensemble):
    trimmer = EnsembleTrimmer(small_ensemble)
    spec = TrimSpec(0.05, 0.3)
    theta = trimmer.thetas(spec)
    for r in range(0, 400, 20):
        ds = small_ensemble.replicate(r)
        try:
            fit, _ = trimmed_fit(ds, spec)
        except DegenerateTrimError:
            assert math.isnan(theta[r])
            continue
        assert theta[r] == pytest.approx(fit.theta_hat, abs=1e-9)


def test_cell_statistics(small_ensemble):
    cell = evaluate_cell(small_ensemble, TrimSpec(0.0, 0.2))
    assert cell.boot_se**2 == pytest.approx(cell.boot_var, abs=1e-12)
    assert cell.feasible == (cell.n_valid >= 0.95 * cell.n_replicates)


def test_identical_replicates_zero_variance(cdp):
    fit = dsl_fit(cdp)
    res = make_residuals(cdp, fit)
    eff = np.broadcast_to(cdp.effects, (50, 10))
    ses = np.broadcast_to(cdp.ses, (50, 10))
    idx = np.broadcast_to(np.arange(10), (50, 10))
    ens = BootstrapEnsemble(eff, ses, idx, 0, cdp, fit, res)
    cell = evaluate_cell(ens, TrimSpec(0.0, 0.34))
    assert cell.boot_var == pytest.approx(0.0, abs=1e-24)


def test_cdp_bagged_untrimmed(cdp_ensemble):
    cell = evaluate_cell(cdp_ensemble, TrimSpec(0, 0))
    assert abs(cell.bagged_mean - 0.320) <= 0.03
    assert abs(cell.boot_se - 0.127) <= 0.03


def test_cdp_bagged_at_reference_optimum(cdp_ensemble):
    cell = evaluate_cell(cdp_ensemble, TrimSpec(0, 0.34))
    assert abs(cell.bagged_mean - 0.146) <= 0.03
    assert abs(cell.boot_se - 0.089) <= 0.03


def test_degenerate_grid_is_plain_fit(small_ensemble, cdp):
    grid = AlphaGrid((0.0,), (0.0,), refine_rounds=0)
    result = grid_search(small_ensemble, grid)
    plain = dsl_fit(cdp)
    assert result.optimum.is_identity
    assert result.final_fit.theta_hat == plain.theta_hat
    assert result.final_fit.se_theta == plain.se_theta
    assert np.all(result.proportions_kept == 1.0)


@pytest.fixture(scope="module")
def coarse_result(small_ensemble):
    return grid_search(small_ensemble, AlphaGrid.regular(0.05, refine_rounds=1))


def test_optimum_is_minimum(coarse_result):
    feas = [c for c in coarse_result.surface if c.feasible]
    best = min(c.boot_var for c in feas)
    assert coarse_result.optimum_cell.boot_var <= best + 1e-12
    base = coarse_result.baseline_cell
    assert base.spec.is_identity
    assert coarse_result.optimum_cell.boot_var <= base.boot_var
    assert coarse_result.outlier_index == pytest.approx(coarse_result.optimum.total)


def test_proportions_consistent_with_trimming(coarse_result, cdp):
    b = coarse_result.final_bounds
    for s, p in zip(cdp, coarse_result.proportions_kept):
        assert p == pytest.approx(inclusion_probability(s, b), abs=1e-15)


def test_search_deterministic(small_ensemble, coarse_result, cdp):
    fit = dsl_fit(cdp)
    again = generate_ensemble(cdp, fit, make_residuals(cdp, fit), 400, seed=5, workers=3)
    assert again.fingerprint == small_ensemble.fingerprint
    r2 = grid_search(again, AlphaGrid.regular(0.05, refine_rounds=1))
    assert r2.optimum == coarse_result.optimum
    assert [c.boot_var for c in r2.surface] == [c.boot_var for c in coarse_result.surface]
    assert r2.final_fit.theta_hat == coarse_result.final_fit.theta_hat


def test_tie_break_prefers_least_trimming(cdp):
    fit = dsl_fit(cdp)
    res = make_residuals(cdp, fit)
    eff = np.broadcast_to(cdp.effects, (20, 10))
    ens = BootstrapEnsemble(eff, np.broadcast_to(cdp.ses, (20, 10)), np.broadcast_to(np.arange(10), (20, 10)), 0, cdp, fit, res)
    result = grid_search(ens, AlphaGrid.regular(0.1, refine_rounds=0))
    # every cell has zero variance, so (0, 0) must win
    assert result.optimum.is_identity


def test_all_infeasible_raises(cdp):
    # a single replicate gives no variance estimate in any cell
    fit = dsl_fit(cdp)
    ens = generate_ensemble(cdp, fit, make_residuals(cdp, fit), 1, seed=1)
    with pytest.raises(SearchError):
        grid_search(ens, AlphaGrid.regular(0.1, refine_rounds=0))


def test_alpha_m_correction_formula(cdp):
    cfg = PipelineConfig(n_replicates=200, grid_step=0.1, refine_rounds=0)
    result = analyze(cdp, cfg, spec=TrimSpec(0.03, 0.10))
    corrected = apply_alpha_m_correction(result, 0.052)
    assert corrected.optimum.alpha_lo == 0.0
    assert corrected.optimum.alpha_hi == pytest.approx(0.048, abs=1e-15)
    assert corrected.alpha_m_correction.original == TrimSpec(0.03, 0.10)
    assert apply_alpha_m_correction(result, 0.0) is result
    ident = analyze(cdp, cfg, spec=TrimSpec(0, 0))
    assert apply_alpha_m_correction(ident, 0.2).optimum.is_identity
    fit, _ = trimmed_fit(cdp, corrected.optimum)
    assert corrected.final_fit.theta_hat == fit.theta_hat


def test_fixed_spec_identity_matches_plain(cdp):
    result = analyze(cdp, PipelineConfig(n_replicates=200), spec=TrimSpec(0, 0))
    plain = dsl_fit(cdp)
    assert result.final_fit.theta_hat == plain.theta_hat
    assert result.final_fit.se_theta == plain.se_theta
    assert result.final_fit.tau2 == plain.tau2


def test_parametric_null_prefers_little_trimming():
    t = SimTemplate(tuple(np.linspace(0.1, 0.3, 20)), 0.05, seed=17)
    ds = parametric_replicate(t, 0)
    result = analyze(ds, PipelineConfig(n_replicates=400, grid_step=0.05, refine_rounds=0))
    plain = dsl_fit(ds)
    assert result.optimum.total <= 0.1
    assert abs(result.final_fit.theta_hat - plain.theta_hat) <= plain.se_theta
