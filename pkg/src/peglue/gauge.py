"""Bianchi gauge operator, the gauged Einstein operator and its linearization.

All tensors carry singular-frame components (basis dw_i/x dw_j/x), so the
covariant calculus below uses the frame connection of g = x^{-2} gbar,
which stays bounded up to x = 0.  The linearization convention: the
customary Lichnerowicz display

    (nabla)* nabla - 2 Rcirc + Ric o . + . o Ric + 2n

equals twice the derivative of N at 0; `linearized` returns the derivative
itself, so that N(t k) - N(0) - t linearized(k) = O(t^2) holds discretely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridError, SymTensor2Field
from .tensor_calculus import (
    CCMetric,
    christoffel_matrix,
    einstein_deviation,
    inverse_metric,
    ricci_cc,
)


@dataclass
class OneFormField:
    """Singular-frame 1-form components (basis dw_i/x)."""

    grid: Grid
    comps: np.ndarray

    def __post_init__(self):
        if self.comps.shape != self.grid.shape + (self.grid.ndim,):
            raise GridError("one-form shape mismatch")

    def max_abs(self) -> float:
        return float(np.abs(self.comps).max())


def _frame_connection(gmat: np.ndarray, ginv: np.ndarray, grid: Grid) -> np.ndarray:
    """omega[..., m, l, i]: connection coefficients of x^{-2} gbar in the
    frame e_l = x d_l, bounded up to x = 0."""
    d = grid.ndim
    gam = christoffel_matrix(gmat, grid, ginv)
    xb = grid.x.reshape(grid.x.shape + (1, 1, 1))
    om = xb * gam
    eye = np.eye(d)
    e0 = np.zeros(d)
    e0[0] = 1.0
    om = om - eye[:, :, None] * e0[None, None, :]
    om = om + np.einsum("...li,...k->...kli", gmat, ginv[..., :, 0])
    return om


@dataclass
class GaugeContext:
    """Background metric with its cached frame connection and curvature."""

    g: CCMetric
    gmat: np.ndarray = field(init=False)
    ginv: np.ndarray = field(init=False)
    omega: np.ndarray = field(init=False)
    ric: np.ndarray = field(init=False)
    riemann: np.ndarray = field(init=False)

    def __post_init__(self):
        self.gmat = self.g.gbar.to_matrix()
        self.ginv = inverse_metric(self.gmat)
        self.omega = _frame_connection(self.gmat, self.ginv, self.grid)
        self.ric = ricci_cc(self.g).to_matrix()
        self.riemann = _frame_riemann(self)

    @property
    def grid(self) -> Grid:
        return self.g.grid

    @property
    def n(self) -> int:
        return self.g.n


def _frame_riemann(ctx: GaugeContext) -> np.ndarray:
    """Rm[..., i, p, j, q] with all indices down; on g0 this equals
    delta_iq delta_pj - delta_ij delta_pq (curvature -1)."""
    grid = ctx.grid
    d = grid.ndim
    om = ctx.omega
    dom = np.empty(grid.shape + (d, d, d, d))
    for j in range(d):
        dom[..., j, :, :, :] = grid.scaled_diff_values(om, j)
    f = (np.einsum("...jaqp->...apjq", dom)
         - np.einsum("...qajp->...apjq", dom)
         + np.einsum("...bqp,...ajb->...apjq", om, om)
         - np.einsum("...bjp,...aqb->...apjq", om, om))
    # commutator term: c^b_{jq} = delta_{j0} delta^b_q - delta_{q0} delta^b_j
    sw = np.swapaxes(om, -1, -2)  # sw[..., a, p, q] = omega^a_{qp}
    f[..., :, :, 0, :] -= sw
    f[..., :, :, :, 0] += sw
    return np.einsum("...ia,...apjq->...ipjq", ctx.gmat, f)


def frame_covariant_derivative(ctx: GaugeContext, km: np.ndarray) -> np.ndarray:
    """(nabla k)[..., l, i, j] for frame components k_{ij}."""
    grid = ctx.grid
    d = grid.ndim
    dk = np.empty(grid.shape + (d, d, d))
    for l in range(d):
        dk[..., l, :, :] = grid.scaled_diff_values(km, l)
    dk -= np.einsum("...mli,...mj->...lij", ctx.omega, km)
    dk -= np.einsum("...mlj,...im->...lij", ctx.omega, km)
    return dk


def _second_covariant_derivative(ctx: GaugeContext, dk: np.ndarray) -> np.ndarray:
    grid = ctx.grid
    d = grid.ndim
    ddk = np.empty(grid.shape + (d, d, d, d))
    for m in range(d):
        ddk[..., m, :, :, :] = grid.scaled_diff_values(dk, m)
    ddk -= np.einsum("...pml,...pij->...mlij", ctx.omega, dk)
    ddk -= np.einsum("...pmi,...lpj->...mlij", ctx.omega, dk)
    ddk -= np.einsum("...pmj,...lip->...mlij", ctx.omega, dk)
    return ddk


def rough_laplacian(ctx: GaugeContext, km: np.ndarray) -> np.ndarray:
    """(nabla)* nabla k, built from first covariant derivatives applied
    twice."""
    dk = frame_covariant_derivative(ctx, km)
    ddk = _second_covariant_derivative(ctx, dk)
    return -np.einsum("...ml,...mlij->...ij", ctx.ginv, ddk)


def bianchi(ctx: GaugeContext, k: SymTensor2Field) -> OneFormField:
    """B^g(k) = delta^g k + (1/2) d tr^g k in the singular frame."""
    if not k.grid.same_as(ctx.grid):
        raise GridError("tensor not on context grid")
    km = k.to_matrix()
    dk = frame_covariant_derivative(ctx, km)
    div = -np.einsum("...ml,...mli->...i", ctx.ginv, dk)
    tr = np.einsum("...ab,...ab->...", ctx.ginv, km)
    dtr = np.empty(ctx.grid.shape + (ctx.grid.ndim,))
    for i in range(ctx.grid.ndim):
        dtr[..., i] = ctx.grid.scaled_diff_values(tr, i)
    return OneFormField(ctx.grid, div + 0.5 * dtr)


def _delta_star(ctx_pert: GaugeContext, b: OneFormField) -> np.ndarray:
    """Symmetrized covariant derivative of a 1-form, with the perturbed
    metric's connection."""
    grid = ctx_pert.grid
    d = grid.ndim
    db = np.empty(grid.shape + (d, d))
    for l in range(d):
        db[..., l, :] = grid.scaled_diff_values(b.comps, l)
    db -= np.einsum("...mli,...m->...li", ctx_pert.omega, b.comps)
    return 0.5 * (db + np.swapaxes(db, -1, -2))


def gauged_residual(ctx: GaugeContext, k: SymTensor2Field) -> SymTensor2Field:
    """N_g(k) = Ric^{g+k} + n(g+k) + (delta^{g+k})* B^g(k).

    The curvature of g+k is rebuilt from scratch; for k = 0 this returns
    einstein_deviation(g) exactly.
    """
    if not k.grid.same_as(ctx.grid):
        raise GridError("tensor not on context grid")
    km = k.to_matrix()
    if not np.any(km):
        return einstein_deviation(ctx.g)
    pert = CCMetric(SymTensor2Field.from_matrix(ctx.grid, ctx.gmat + km))
    dev = einstein_deviation(pert)
    b = bianchi(ctx, k)
    pmat = pert.gbar.to_matrix()
    pinv = inverse_metric(pmat)
    om = _frame_connection(pmat, pinv, ctx.grid)
    d = ctx.grid.ndim
    db = np.empty(ctx.grid.shape + (d, d))
    for l in range(d):
        db[..., l, :] = ctx.grid.scaled_diff_values(b.comps, l)
    db -= np.einsum("...mli,...m->...li", om, b.comps)
    sym = 0.5 * (db + np.swapaxes(db, -1, -2))
    return SymTensor2Field.from_matrix(ctx.grid, dev.to_matrix() + sym)


def _lichnerowicz_display(ctx: GaugeContext, km: np.ndarray) -> np.ndarray:
    """The operator of the linearization display: twice the derivative of
    N at 0."""
    n = ctx.n
    lap = rough_laplacian(ctx, km)
    kup = np.einsum("...pa,...qb,...ab->...pq", ctx.ginv, ctx.ginv, km)
    rk = np.einsum("...ipjq,...pq->...ij", ctx.riemann, kup)
    ricmix = np.einsum("...ia,...ab->...ib", ctx.ric, ctx.ginv)
    comp = (np.einsum("...im,...mj->...ij", ricmix, km)
            + np.einsum("...im,...mj->...ij", km, np.swapaxes(ricmix, -1, -2)))
    return lap - 2.0 * rk + comp + 2.0 * n * km


def linearized(ctx: GaugeContext, kappa: SymTensor2Field) -> SymTensor2Field:
    """Derivative of N_g at k = 0 (half the display operator); on an
    Einstein background it reduces to ((nabla)* nabla - 2 Rcirc)/2."""
    if not kappa.grid.same_as(ctx.grid):
        raise GridError("tensor not on context grid")
    out = 0.5 * _lichnerowicz_display(ctx, kappa.to_matrix())
    return SymTensor2Field.from_matrix(ctx.grid, out)


def display_operator(ctx: GaugeContext, kappa: SymTensor2Field) -> SymTensor2Field:
    """The linearization in the Lichnerowicz normalization (2 x derivative); the
    closed-form identities for indicial roots and the pure-trace action are
    stated for this operator."""
    out = _lichnerowicz_display(ctx, kappa.to_matrix())
    return SymTensor2Field.from_matrix(ctx.grid, out)


def quadratic_remainder(ctx: GaugeContext, k: SymTensor2Field) -> SymTensor2Field:
    """Q(k) = N(k) - N(0) - DN(k)."""
    return gauged_residual(ctx, k) - gauged_residual(ctx, _zero(ctx)) - linearized(ctx, k)


def _zero(ctx: GaugeContext) -> SymTensor2Field:
    d = ctx.grid.ndim
    return SymTensor2Field.from_matrix(ctx.grid, np.zeros(ctx.grid.shape + (d, d)))


def zero_tensor(grid: Grid) -> SymTensor2Field:
    d = grid.ndim
    return SymTensor2Field.from_matrix(grid, np.zeros(grid.shape + (d, d)))
