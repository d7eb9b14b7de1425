import numpy as np
import pytest

from peglue import models
from peglue.grid import ScalarField, SymTensor2Field, make_boundary_grid, make_grid
from peglue.tensor_calculus import (
    CCMetric,
    MarchingError,
    MetricError,
    boundary_expansion,
    boundary_metric,
    brute_force_singular_ricci,
    conformal_ricci,
    einstein_deviation,
    extrapolate_to_boundary,
    frame_tensor_norm,
    inverse_metric,
    normal_form,
    ricci_cc,
    ricci_matrix,
    scalar_curvature,
)


def test_hyperbolic_is_einstein(half_space_grid):
    cc = models.hyperbolic_half_space(half_space_grid)
    dev = einstein_deviation(cc)
    assert dev.max_abs() < 1e-11


def test_poincare_ball_is_einstein(ctx_ball):
    # exact Einstein model; deviation is pure finite-difference truncation
    assert einstein_deviation(ctx_ball.g).max_abs() < 2e-4


def test_ball_einstein_deviation_converges():
    errs, hs = [], []
    for count in (16, 24):
        grid = make_grid(2, count, (0.03, 0.8), 0.6)
        cc = models.poincare_ball_chart(grid)
        errs.append(einstein_deviation(cc).max_abs())
        hs.append(grid.min_spacing())
    order = np.log(errs[0] / errs[1]) / np.log(hs[0] / hs[1])
    assert order > 1.8


def test_inverse_metric_flags_indefinite():
    grid = make_grid(2, 5, (0.1, 1.0), 1.0)
    mat = np.broadcast_to(np.diag([1.0, -1.0, 1.0]), grid.shape + (3, 3)).copy()
    with pytest.raises(MetricError):
        inverse_metric(mat)


def test_ricci_matrix_round_sphere():
    # Ric(h_sph) = (n-1) h_sph for the unit round 2-sphere
    grid = make_boundary_grid(2, 40, 0.8)
    y = np.stack(grid.meshgrid(), axis=-1)
    h = models.round_sphere_matrix(y)
    ric = ricci_matrix(h, grid)
    assert np.abs(ric - h).max() < 2e-4


def test_conformal_identity_matches_brute_force():
    grid = make_grid(2, 16, (0.5, 1.5), 0.8)
    cc = models.perturbed_conformal(grid, 0.08, width=0.7)
    gmat = cc.gbar.to_matrix()
    f = 0.05 * np.exp(-np.sum((np.stack(grid.meshgrid(), axis=-1)
                               - np.array([1.0, 0.1, -0.2])) ** 2, axis=-1))
    assembled = conformal_ricci(gmat, f, grid)
    brute = ricci_matrix(np.exp(2.0 * f)[..., None, None] * gmat, grid)
    # agreement up to truncation; the fitted order lives in the acceptance
    # suite
    assert np.abs(assembled - brute).max() < 1e-2


def test_brute_force_oracle_agrees_with_frame_ricci():
    # the oracle differences 1/x^2 directly, so keep x away from 0
    grid = make_grid(2, 20, (0.5, 0.9), 0.5)
    cc = models.poincare_ball_chart(grid)
    direct = ricci_cc(cc).to_matrix()
    brute = brute_force_singular_ricci(cc)
    core = (slice(2, -2),) * 3  # both routes use centered stencils here
    assert np.abs((direct - brute)[core]).max() < 5e-3


def test_extrapolate_to_boundary_linear_field(half_space_grid):
    x = np.broadcast_to(half_space_grid.x, half_space_grid.shape)
    vals = 3.0 + 2.0 * x
    bdry = extrapolate_to_boundary(vals, half_space_grid)
    assert np.abs(bdry - 3.0).max() < 1e-9


def test_boundary_expansion_recovers_sphere(ctx_ball):
    h0, h1, _, resid = boundary_expansion(ctx_ball.g)
    ygrid = make_boundary_grid(2, 5, 0.5)  # shape check only
    del ygrid
    y = np.stack(np.meshgrid(*ctx_ball.grid.coords[1:], indexing="ij"), axis=-1)
    expected = models.round_sphere_matrix(y)
    assert np.abs(h0 - expected).max() < 5e-3
    # even expansion: no linear term for the ball chart
    assert np.abs(h1).max() < 5e-2
    assert resid < 1e-3


def test_scalar_curvature_round_sphere(ctx_ball):
    h = boundary_metric(ctx_ball.g)
    r = scalar_curvature(h)
    core = (slice(4, -4),) * 2
    assert np.abs(r.values[core] - 2.0).max() < 2e-3


def test_frame_tensor_norm_scaling(ctx_ball, rng):
    mat = rng.standard_normal(ctx_ball.grid.shape + (3, 3))
    k = SymTensor2Field.from_matrix(ctx_ball.grid, mat + np.swapaxes(mat, -1, -2))
    n1 = frame_tensor_norm(ctx_ball.g, k)
    n2 = frame_tensor_norm(ctx_ball.g, 2.0 * k)
    assert np.all(n1 >= 0)
    assert np.allclose(n2, 2.0 * n1, rtol=1e-12)


def test_normal_form_straightens_perturbed_metric():
    grid = make_grid(2, (24, 14, 14), (0.03, 0.6), 0.5)
    cc = models.perturbed_conformal(grid, 0.05, center=(0.0, 0.0, 0.0), width=0.8)
    rho = ScalarField(grid, np.broadcast_to(grid.x, grid.shape).copy())
    result = normal_form(cc, rho)
    assert np.abs(result.eikonal_defect.values).max() < 5e-2
    gm = result.metric.gbar.to_matrix()
    # g00 = 1 up to marching error; the mixed terms vanish like O(x) since
    # only the defining function is straightened, not the tangential flow
    assert np.abs(gm[..., 0, 0] - 1.0).max() < 2e-2
    x = np.broadcast_to(grid.x, grid.shape)[..., None]
    assert np.abs(gm[..., 0, 1:] / x).max() < 0.25
    assert np.abs(gm[0, ..., 0, 1:]).max() < 5e-3


def test_normal_form_diverges_on_wild_data():
    grid = make_grid(2, (30, 8, 8), (0.05, 3.0), 0.6)
    cc = models.perturbed_conformal(grid, 3.0, center=(1.5, 0.0, 0.0), width=0.2)
    rho = ScalarField(grid, np.broadcast_to(grid.x, grid.shape).copy())
    with pytest.raises(MarchingError):
        normal_form(cc, rho)


def test_ccmetric_requires_positive_definite():
    grid = make_grid(2, 5, (0.1, 1.0), 1.0)
    mat = np.broadcast_to(np.diag([1.0, 1.0, -2.0]), grid.shape + (3, 3)).copy()
    with pytest.raises(MetricError):
        CCMetric(SymTensor2Field.from_matrix(grid, mat))
