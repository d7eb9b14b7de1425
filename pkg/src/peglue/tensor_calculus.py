"""Curvature of compactified metrics and boundary normal form.

The curvature of a conformally compact metric g = x^{-2} gbar is never
obtained by differencing the singular components.  Everything is computed
from the regular compactified metric gbar together with the conformal-change
identity for Ricci, with the exact powers of x cancelled analytically
against the singular-frame normalization, so all outputs stay bounded up to
x = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .grid import Grid, GridError, ScalarField, SymTensor2Field


class MetricError(ValueError):
    pass


class MarchingError(RuntimeError):
    pass


# -- generic coordinate curvature -----------------------------------------

def metric_gradient(gmat: np.ndarray, grid: Grid) -> np.ndarray:
    """dg[..., l, i, j] = d g_ij / d w_l."""
    d = grid.ndim
    dg = np.empty(grid.shape + (d,) + gmat.shape[grid.ndim:])
    for l in range(d):
        dg[..., l, :, :] = grid.diff_values(gmat, l)
    return dg


def inverse_metric(gmat: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(gmat)
    except np.linalg.LinAlgError as exc:
        bad = _first_indefinite_node(gmat)
        raise MetricError("metric not positive definite at node %s" % (bad,)) from exc
    return np.linalg.inv(gmat)


def _first_indefinite_node(gmat: np.ndarray):
    eigs = np.linalg.eigvalsh(gmat)
    bad = np.argwhere(eigs[..., 0] <= 0)
    return tuple(bad[0]) if len(bad) else None


def christoffel_matrix(gmat: np.ndarray, grid: Grid, ginv=None) -> np.ndarray:
    """Levi-Civita symbols Gamma[..., k, i, j] of a coordinate metric."""
    if ginv is None:
        ginv = inverse_metric(gmat)
    dg = metric_gradient(gmat, grid)
    t = (np.einsum("...ilj->...lij", dg)
         + np.einsum("...jli->...lij", dg)
         - dg)
    return 0.5 * np.einsum("...kl,...lij->...kij", ginv, t)


def ricci_matrix(gmat: np.ndarray, grid: Grid, gamma=None) -> np.ndarray:
    """Coordinate Ricci tensor by the dGamma + GammaGamma contraction."""
    if gamma is None:
        gamma = christoffel_matrix(gmat, grid)
    d = grid.ndim
    dgam = np.empty(grid.shape + (d, d, d, d))
    for l in range(d):
        dgam[..., l, :, :, :] = grid.diff_values(gamma, l)
    ric = (np.einsum("...kkij->...ij", dgam)
           - np.einsum("...jkik->...ij", dgam)
           + np.einsum("...kkl,...lij->...ij", gamma, gamma)
           - np.einsum("...kjl,...lik->...ij", gamma, gamma))
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def conformal_ricci(gmat: np.ndarray, f: np.ndarray, grid: Grid) -> np.ndarray:
    """Ricci of e^{2f} g assembled from the conformal-change identity.

    Uses Ric(g), the g-Hessian and g-Laplacian of f; the conformal factor
    never enters a finite-difference stencil directly.
    """
    d = grid.ndim
    ginv = inverse_metric(gmat)
    gamma = christoffel_matrix(gmat, grid, ginv)
    ric = ricci_matrix(gmat, grid, gamma)
    df = np.stack([grid.diff_values(f, l) for l in range(d)], axis=-1)
    hess = np.empty(grid.shape + (d, d))
    for i in range(d):
        hess[..., i, i] = grid.diff_values(f, i, 2)
        for j in range(i + 1, d):
            hess[..., i, j] = hess[..., j, i] = grid.diff_values(df[..., j], i)
    hess -= np.einsum("...kij,...k->...ij", gamma, df)
    lap = np.einsum("...ij,...ij->...", ginv, hess)
    df2 = np.einsum("...ij,...i,...j->...", ginv, df, df)
    m = d - 2
    return (ric
            - m * (hess - df[..., :, None] * df[..., None, :])
            - (lap + m * df2)[..., None, None] * gmat)


def brute_force_singular_ricci(cc: "CCMetric") -> np.ndarray:
    """Oracle: Ricci of x^{-2} gbar by differencing the singular components
    directly.  Valid only away from x = 0; returns singular-frame components
    (x^2 times the coordinate components)."""
    grid = cc.gbar.grid
    x2 = grid.x[..., None, None] ** 2
    gsing = cc.gbar.to_matrix() / x2
    return x2 * ricci_matrix(gsing, grid)


# -- conformally compact metrics ------------------------------------------

@dataclass
class CCMetric:
    """Compactified metric gbar = x^2 g, regular up to x = 0.

    gbar holds the coordinate components; the singular-frame components of
    g itself coincide numerically with those of gbar.
    """

    gbar: SymTensor2Field
    einstein_expected: bool = False

    def __post_init__(self):
        inverse_metric(self.gbar.to_matrix())  # positive definiteness

    @property
    def grid(self) -> Grid:
        return self.gbar.grid

    @property
    def n(self) -> int:
        return self.grid.n


@dataclass
class BoundaryMetric:
    """Conformal-infinity representative on an n-dimensional tangential grid."""

    grid: Grid
    mat: np.ndarray

    def __post_init__(self):
        if self.grid.boundary_axis:
            raise GridError("boundary metric lives on a tangential grid")
        nb = self.grid.ndim
        if self.mat.shape != self.grid.shape + (nb, nb):
            raise GridError("boundary metric shape mismatch")
        if np.abs(self.mat - np.swapaxes(self.mat, -1, -2)).max() > 1e-12 * np.abs(self.mat).max():
            raise MetricError("boundary metric must be symmetric")
        inverse_metric(self.mat)


def christoffel(cc: CCMetric) -> np.ndarray:
    """Symbols of the compactified metric gbar."""
    return christoffel_matrix(cc.gbar.to_matrix(), cc.grid)


def ricci_compactified(cc: CCMetric) -> np.ndarray:
    """Coordinate Ricci of the regular metric gbar."""
    return ricci_matrix(cc.gbar.to_matrix(), cc.grid)


def _frame_ricci(cc: CCMetric):
    grid = cc.grid
    n = cc.n
    gmat = cc.gbar.to_matrix()
    ginv = inverse_metric(gmat)
    gamma = christoffel_matrix(gmat, grid, ginv)
    ricbar = ricci_matrix(gmat, grid, gamma)
    g0 = gamma[..., 0, :, :]
    c = np.einsum("...ab,...ab->...", ginv, g0)
    x = grid.x
    xg = x[..., None, None]
    frame = (xg ** 2 * ricbar
             - (n - 1) * xg * g0
             - (n * ginv[..., 0, 0] + x * c)[..., None, None] * gmat)
    return frame, gmat


def ricci_cc(cc: CCMetric) -> SymTensor2Field:
    """Singular-frame Ricci of g = x^{-2} gbar, bounded up to x = 0.

    The conformal-change identity is applied with f = -log x handled in
    closed form: only the symbols and curvature of gbar are differenced, and
    every 1/x power cancels against the frame normalization.
    """
    frame, _ = _frame_ricci(cc)
    return SymTensor2Field.from_matrix(cc.grid, frame)


def einstein_deviation(cc: CCMetric) -> SymTensor2Field:
    """E(g) = Ric(g) + n g in the singular frame."""
    frame, gmat = _frame_ricci(cc)
    return SymTensor2Field.from_matrix(cc.grid, frame + cc.n * gmat)


def frame_tensor_norm(cc: CCMetric, k: SymTensor2Field) -> np.ndarray:
    """Pointwise |k|_g for singular-frame components."""
    ginv = inverse_metric(cc.gbar.to_matrix())
    km = k.to_matrix()
    sq = np.einsum("...ip,...jq,...ij,...pq->...", ginv, ginv, km, km)
    return np.sqrt(np.maximum(sq, 0.0))


# -- boundary values -------------------------------------------------------

def extrapolate_to_boundary(values: np.ndarray, grid: Grid, layers: int = 5) -> np.ndarray:
    """Polynomial extrapolation of the first x-layers to x = 0."""
    if not grid.boundary_axis:
        raise GridError("extrapolation needs a half-space grid")
    xs = grid.coords[0][:layers]
    w = np.empty(layers)
    for i in range(layers):
        others = np.delete(xs, i)
        w[i] = np.prod((0.0 - others) / (xs[i] - others))
    return np.tensordot(w, values[:layers], axes=(0, 0))


def _check_normal_form(gmat: np.ndarray, grid: Grid, tol: float = 5e-2):
    g00 = extrapolate_to_boundary(gmat[..., 0, 0], grid)
    mix = extrapolate_to_boundary(gmat[..., 0, 1:], grid)
    if np.abs(g00 - 1).max() > tol or np.abs(mix).max() > tol:
        raise MetricError("metric is not in boundary normal form")


def boundary_expansion(cc: CCMetric, layers: int = 8, degree: int = 3):
    """Coefficients (h0, h1, h2) of the tangential block h(x) near x = 0.

    Least-squares polynomial fit over the first x-layers; for an Einstein
    metric in normal form the linear coefficient h1 vanishes to fit
    tolerance.
    """
    grid = cc.grid
    if layers < degree + 2:
        raise MetricError("ill-conditioned fit: need layers >= degree + 2")
    if layers > grid.shape[0]:
        raise MetricError("not enough x-layers for the fit window")
    gmat = cc.gbar.to_matrix()
    _check_normal_form(gmat, grid)
    n = cc.n
    xs = grid.coords[0][:layers]
    vand = np.vander(xs, degree + 1, increasing=True)
    tang = gmat[:layers, ..., 1:, 1:].reshape(layers, -1)
    coef, _, _, _ = np.linalg.lstsq(vand, tang, rcond=None)
    out_shape = grid.shape[1:] + (n, n)
    h0 = coef[0].reshape(out_shape)
    h1 = coef[1].reshape(out_shape)
    h2 = coef[2].reshape(out_shape)
    resid = float(np.abs(vand @ coef - tang).max())
    return h0, h1, h2, resid


def boundary_metric(cc: CCMetric) -> BoundaryMetric:
    """Conformal-infinity representative h0 extracted from gbar."""
    h0, _, _, _ = boundary_expansion(cc)
    ygrid = Grid(cc.grid.coords[1:], boundary_axis=False)
    return BoundaryMetric(ygrid, h0)


def scalar_curvature(h: BoundaryMetric) -> ScalarField:
    """Scalar curvature of a boundary metric by double contraction."""
    ginv = inverse_metric(h.mat)
    ric = ricci_matrix(h.mat, h.grid)
    return ScalarField(h.grid, np.einsum("...ij,...ij->...", ginv, ric))


# -- special defining functions (boundary normal form) ---------------------

@dataclass
class NormalFormResult:
    x_hat: ScalarField
    u: ScalarField
    metric: CCMetric
    eikonal_defect: ScalarField


def _eikonal_defect(gmat, grid, x_hat):
    d = grid.ndim
    ginv = np.linalg.inv(gmat)
    dxh = np.stack([grid.diff_values(x_hat, l) for l in range(d)], axis=-1)
    q = np.einsum("...ab,...a,...b->...", ginv, dxh, dxh)
    return (grid.x / x_hat) ** 2 * q - 1.0


def normal_form(cc: CCMetric, rho: ScalarField, u0=0.0) -> NormalFormResult:
    """Solve for the special defining function x_hat = e^u rho.

    The first-order PDE 2<d rho, du> + rho |du|^2 = (1 - |d rho|^2)/rho
    (all inner products with respect to rho^2 g) is noncharacteristic in
    rho, and is marched layer by layer in x with tangential derivatives
    lagged one half-step (Heun update).  Near the boundary the result
    satisfies |d x_hat|^2 in the x_hat^2 g metric = 1 + O(x_hat).
    """
    grid = cc.grid
    d = grid.ndim
    x = grid.x
    gmat = cc.gbar.to_matrix()
    rv = rho.values
    if np.any(rv <= 0):
        raise MetricError("defining function must be positive on the grid")
    ginv_rho = (x / rv)[..., None, None] ** 2 * np.linalg.inv(gmat)
    drho = np.stack([grid.diff_values(rv, l) for l in range(d)], axis=-1)
    grad_norm = np.einsum("...ab,...a,...b->...", ginv_rho, drho, drho)
    if np.any(np.abs(drho[..., 0]) < 1e-12):
        raise MarchingError("|d rho| vanishes along the marching direction")
    rhs = (1.0 - grad_norm) / rv

    nx = grid.shape[0]
    steps = grid.spacings(0)
    if steps.max() > grid.min_spacing() * (1 + 1e-12) and d > 1:
        tang_min = min(float(grid.spacings(a).min()) for a in range(1, d))
        if steps.max() > tang_min * (1 + 1e-12):
            raise MarchingError("marching step exceeds min tangential spacing")

    u = np.zeros(grid.shape)
    u[0] = np.asarray(u0) + np.zeros(grid.shape[1:])
    # u0 is the boundary value at x = 0; advance it to the first layer so
    # the O(x_min) offset does not pollute the whole solution
    x0 = grid.coords[0][0]

    def slope(layer, ulayer):
        gi = ginv_rho[layer]
        p = drho[layer]
        r = rv[layer]
        tgrads = []
        for a in range(1, d):
            mat = grid.diff_matrix(a, 1)
            moved = np.moveaxis(ulayer, a - 1, 0)
            der = (mat @ moved.reshape(moved.shape[0], -1)).reshape(moved.shape)
            tgrads.append(np.moveaxis(der, 0, a - 1))
        a_c = r * gi[..., 0, 0]
        b_c = 2.0 * np.einsum("...b,...b->...", gi[..., 0, :], p)
        c_c = -rhs[layer]
        for al in range(1, d):
            b_c = b_c + 2.0 * r * gi[..., 0, al] * tgrads[al - 1]
            c_c = c_c + 2.0 * np.einsum("...b,...b->...", gi[..., al, :], p) * tgrads[al - 1]
            for be in range(1, d):
                c_c = c_c + r * gi[..., al, be] * tgrads[al - 1] * tgrads[be - 1]
        disc = b_c ** 2 - 4.0 * a_c * c_c
        if np.any(disc < 0):
            raise MarchingError("marching instability: negative discriminant (step too large)")
        q = -0.5 * (b_c + np.sign(b_c) * np.sqrt(disc))
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(np.abs(q) > 0, c_c / np.where(q == 0, 1.0, q), 0.0)
        return root

    u[0] += x0 * slope(0, u[0])

    for m in range(1, nx):
        h = steps[m - 1]
        s1 = slope(m - 1, u[m - 1])
        upred = u[m - 1] + h * s1
        s2 = slope(m, upred)
        u[m] = u[m - 1] + 0.5 * h * (s1 + s2)
        if not np.all(np.isfinite(u[m])):
            raise MarchingError("marching diverged at layer %d" % m)

    x_hat = np.exp(u) * rv
    defect = _eikonal_defect(gmat, grid, x_hat)
    metric = _resample_to_normal_form(cc, x_hat)
    return NormalFormResult(
        x_hat=ScalarField(grid, x_hat),
        u=ScalarField(grid, u),
        metric=metric,
        eikonal_defect=ScalarField(grid, defect),
    )


def _resample_to_normal_form(cc: CCMetric, x_hat: np.ndarray) -> CCMetric:
    """Transform gbar to coordinates (x_hat, y) and resample onto the grid's
    x-nodes, reinterpreted as x_hat-nodes."""
    grid = cc.grid
    d = grid.ndim
    gmat = cc.gbar.to_matrix()
    dxh = np.stack([grid.diff_values(x_hat, l) for l in range(d)], axis=-1)
    # dw in terms of d(new coords): dx = (dxhat - sum_b xhat_{y_b} dy_b)/xhat_x
    jac = np.zeros(grid.shape + (d, d))  # rows: old coords, cols: new coords
    jac[..., 0, 0] = 1.0 / dxh[..., 0]
    for b in range(1, d):
        jac[..., 0, b] = -dxh[..., b] / dxh[..., 0]
        jac[..., b, b] = 1.0
    scale = (x_hat / grid.x) ** 2
    gnew = scale[..., None, None] * np.einsum("...ia,...ij,...jb->...ab", jac, gmat, jac)

    targets = grid.coords[0]
    ny = int(np.prod(grid.shape[1:], dtype=int))
    xh_cols = x_hat.reshape(grid.shape[0], ny)
    g_cols = gnew.reshape(grid.shape[0], ny, d, d)
    out = np.empty_like(g_cols)
    for c in range(ny):
        xs = xh_cols[:, c]
        if not np.all(np.diff(xs) > 0):
            raise MarchingError("x_hat not monotone along a column; cannot resample")
        tc = np.clip(targets, xs[0], xs[-1])
        back = PchipInterpolator(xs, grid.coords[0])(tc)
        for i in range(d):
            for j in range(i, d):
                vals = CubicSpline(grid.coords[0], g_cols[:, c, i, j])(back)
                out[:, c, i, j] = vals
                out[:, c, j, i] = vals
    return CCMetric(SymTensor2Field.from_matrix(grid, out.reshape(grid.shape + (d, d))))
