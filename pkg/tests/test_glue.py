import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from peglue import models
from peglue.glue import (
    ANNULUS,
    EPS_MAX,
    GlueError,
    cutoff,
    discrepancy,
    dx_norm_defect,
    glue_boundary,
    glue_metrics,
    glued_residual,
    inversion,
    inversion_frame_matrix,
    inversion_pullback,
    rescale_pullback,
    residual_study,
)
from peglue.grid import make_boundary_grid, make_grid
from peglue.tensor_calculus import scalar_curvature


def small_neck_grid(counts=(14, 14, 14)):
    return make_grid(2, counts, (0.05, 2.75), 2.75, grade=1.1)


def test_cutoff_profile():
    assert cutoff(np.array([0.0, ANNULUS[0]])).tolist() == [0.0, 0.0]
    assert cutoff(np.array([ANNULUS[1], 5.0])).tolist() == [1.0, 1.0]
    mid = cutoff(np.array([1.25]))[0]
    assert mid == pytest.approx(0.5)
    r = np.linspace(0.2, 2.3, 200)
    c = cutoff(r)
    assert np.all(np.diff(c) >= 0)
    assert np.all((c >= 0) & (c <= 1))


points_strategy = arrays(np.float64, (7, 3),
                         elements=st.floats(-3, 3).filter(lambda v: abs(v) > 0.1))


@given(points_strategy)
@settings(max_examples=30, deadline=None)
def test_inversion_is_involutive(pts):
    back = inversion(inversion(pts))
    assert np.abs(back - pts).max() < 1e-10 * max(1.0, np.abs(pts).max())


@given(points_strategy)
@settings(max_examples=30, deadline=None)
def test_inversion_frame_matrix_is_orthogonal_involution(pts):
    a = inversion_frame_matrix(pts)
    eye = np.broadcast_to(np.eye(3), a.shape)
    assert np.abs(np.einsum("...ij,...kj->...ik", a, a) - eye).max() < 1e-10
    assert np.abs(a - np.swapaxes(a, -1, -2)).max() < 1e-12


def test_inversion_pullback_composes_to_identity():
    chart = models.ball_chart(2)
    pulled = inversion_pullback(inversion_pullback(chart))
    rng = np.random.default_rng(3)
    pts = rng.uniform(0.3, 1.0, size=(40, 3))
    assert np.abs(pulled(pts) - chart.k_func(pts)).max() < 1e-12


def test_rescale_pullback_rejects_large_eps():
    with pytest.raises(GlueError):
        rescale_pullback(models.flat_chart(2), EPS_MAX + 0.01)
    with pytest.raises(GlueError):
        glue_metrics(models.flat_chart(2), models.flat_chart(2), 0.4,
                     grid=small_neck_grid())


def test_flat_pair_glues_to_hyperbolic():
    atlas = glue_metrics(models.flat_chart(2), models.flat_chart(2), 0.1,
                         grid=small_neck_grid())
    gm = atlas.metric.gbar.to_matrix()
    assert np.abs(gm - np.eye(3)).max() == 0.0
    res = glued_residual(atlas)
    assert res.max_abs() < 1e-10


def test_glued_residual_vanishes_bitwise_outside_annulus():
    atlas = glue_metrics(models.ball_chart(2), models.ball_chart(2), 0.1,
                         grid=small_neck_grid())
    res = glued_residual(atlas).to_matrix()
    outside = atlas.outside_mask()
    assert outside.any()
    assert np.all(res[outside] == 0.0)
    assert np.abs(res[atlas.annulus_mask()]).max() > 0


def test_discrepancy_of_ball_chart():
    grid = make_grid(2, 20, (0.02, 0.5), 0.5, grade=1.05)
    cc = models.poincare_ball_chart(grid)
    disc = discrepancy(cc)
    km = disc.k.to_matrix()
    assert np.abs(km[..., 0, :]).max() == 0.0  # purely tangential
    assert disc.exponent == pytest.approx(2.0, abs=0.35)
    assert np.isfinite(disc.c_bound)


def test_discrepancy_rejects_off_center_point():
    grid = make_grid(2, 8, (0.05, 0.5), 0.5)
    cc = models.poincare_ball_chart(grid)
    with pytest.raises(GlueError):
        discrepancy(cc, p=(0.0, 0.3, 0.0))


def test_dx_norm_defect_scales_like_eps_squared():
    grid = small_neck_grid()
    sups = []
    for eps in (0.2, 0.1):
        atlas = glue_metrics(models.ball_chart(2), models.ball_chart(2), eps,
                             grid=grid)
        defect = np.abs(dx_norm_defect(atlas))
        sups.append(defect[atlas.annulus_mask()].max())
    ratio = sups[0] / sups[1]
    assert ratio == pytest.approx(4.0, rel=0.3)


def test_residual_study_needs_three_eps():
    with pytest.raises(GlueError):
        residual_study(models.flat_chart(2), models.flat_chart(2), [0.2, 0.1])


def test_residual_study_flat_pair_reports_no_slope(tmp_path):
    study = residual_study(models.flat_chart(2), models.flat_chart(2),
                           [0.2, 0.1, 0.05], grid=small_neck_grid())
    assert study.slope is None
    assert max(study.sup_in_annulus) < 1e-8
    path = tmp_path / "study.csv"
    study.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "eps,sup_residual,sup_outside,slope_so_far"


def test_glue_boundary_flat_pair_is_flat():
    grid = make_boundary_grid(2, 24, 2.5)
    h = glue_boundary(models.flat_chart(2), models.flat_chart(2), 0.1, grid)
    assert np.abs(h.mat - 0.01 * np.eye(2)).max() < 1e-16  # blend roundoff
    r = scalar_curvature(h)
    assert np.abs(r.values).max() < 1e-9


def test_glue_boundary_outside_neck_is_isometric_copy():
    grid = make_boundary_grid(2, 36, 3.0)
    eps = 0.1
    h = glue_boundary(models.ball_chart(2), models.ball_chart(2), eps, grid)
    y = np.stack(grid.meshgrid(), axis=-1)
    far = np.linalg.norm(y, axis=-1) >= ANNULUS[1]
    expected = eps ** 2 * models.round_sphere_matrix(eps * y)
    assert np.abs((h.mat - expected)[far]).max() < 1e-14


def test_glue_boundary_rejects_origin_and_eps():
    grid_odd = make_boundary_grid(2, 25, 2.0)  # contains y = 0
    with pytest.raises(GlueError):
        glue_boundary(models.ball_chart(2), models.ball_chart(2), 0.1, grid_odd)
    grid = make_boundary_grid(2, 24, 2.0)
    with pytest.raises(GlueError):
        glue_boundary(models.ball_chart(2), models.ball_chart(2), 0.5, grid)
    bdry_grid = make_grid(2, 8, (0.1, 1.0), 1.0)
    with pytest.raises(GlueError):
        glue_boundary(models.ball_chart(2), models.ball_chart(2), 0.1, bdry_grid)
