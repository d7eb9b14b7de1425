"""Neck weight function, defining functions and weighted-norm proxies.

The norms here are discrete sup-norm proxies for the doubly weighted
Holder norms: derivatives enter through the uniformly degenerate x*d/dw,
and the Holder seminorm is replaced by a scaled first-difference quotient
with exponent alpha = 1/2 (any fixed alpha in (0,1) serves, only
consistency across comparisons matters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, ScalarField, SymTensor2Field
from .models import soft_radius_clamp


class WeightError(ValueError):
    pass


HOLDER_ALPHA = 0.5


@dataclass(frozen=True)
class WeightSpec:
    mu: float
    nu: float
    eps: float
    width: float = 0.3

    def __post_init__(self):
        if not (0 < self.eps < 1):
            raise WeightError("eps must lie in (0, 1)")
        if self.width <= 0:
            raise WeightError("smoothing width must be positive")
        if self.mu <= 0 or self.nu < 0:
            raise WeightError("weights must be positive")

    @property
    def s_eps(self) -> float:
        return -math.log(self.eps)

    def require_solver_window(self, n: int):
        """Two-weight solver regime: mu = nu in (0, n/2)."""
        if self.mu != self.nu:
            raise WeightError("solver weights need mu = nu")
        if not (0 < self.mu < n / 2):
            raise WeightError("mu must lie in (0, n/2) = (0, %g)" % (n / 2))

    def require_single_window(self, n: int):
        if not (0 < self.mu < n):
            raise WeightError("mu must lie in the Fredholm window (0, %d)" % n)


# smoothing bump: normalized C^inf bump on (-1, 1), fixed quadrature
_BUMP_T = np.linspace(-0.985, 0.985, 33)
_BUMP_W = np.exp(-1.0 / (1.0 - _BUMP_T ** 2))
_BUMP_W /= _BUMP_W.sum()


def raw_neck_weight(s: np.ndarray, s_eps: float) -> np.ndarray:
    """The unsmoothed profile: cosh s / cosh s_eps in the neck, 1 outside."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) <= s_eps
    return np.where(inside, np.cosh(np.where(inside, s, 0.0)) / math.cosh(s_eps), 1.0)


def smoothed_neck_weight(s: np.ndarray, spec: WeightSpec) -> np.ndarray:
    """Mollified profile: agrees with the raw one for ||s| - s_eps| > width
    and stays between the raw profile's local bounds near the corners."""
    s = np.asarray(s, dtype=float)
    near = np.abs(np.abs(s) - spec.s_eps) <= spec.width
    out = raw_neck_weight(s, spec.s_eps)
    if near.any():
        sn = s[near]
        shifted = sn[:, None] - spec.width * _BUMP_T[None, :]
        out[near] = raw_neck_weight(shifted, spec.s_eps) @ _BUMP_W
    return out


def neck_weight(atlas, spec: WeightSpec) -> ScalarField:
    """w_eps on the glued chart, as a function of s = log|w|."""
    s = np.log(atlas.r)
    return ScalarField(atlas.grid, smoothed_neck_weight(s, spec))


def defining_function(atlas) -> ScalarField:
    """rho = cos(phi) = x/|w| in the neck, blended to a fixed defining
    function away from it.

    The radial coordinate saturates smoothly beyond the annulus, so deep
    interior values stay bounded below and rho/x is bounded above and
    below on the chart.
    """
    grid = atlas.grid
    x = np.broadcast_to(grid.x, grid.shape)
    r_sat = soft_radius_clamp(atlas.r, start=2.0, limit=2.5)
    return ScalarField(grid, x / r_sat)


def _component_stack(field, grid: Grid) -> np.ndarray:
    if isinstance(field, ScalarField):
        return field.values[..., None]
    if isinstance(field, SymTensor2Field):
        mat = field.to_matrix()
        return mat.reshape(mat.shape[:-2] + (-1,))
    arr = np.asarray(getattr(field, "comps", field), dtype=float)
    if isinstance(arr, np.ndarray) and arr.shape[: grid.ndim] == grid.shape:
        return arr.reshape(grid.shape + (-1,))
    raise WeightError("cannot interpret field of type %r" % type(field).__name__)


def _scaled_jet(grid: Grid, comps: np.ndarray, order: int):
    """All x-scaled derivative strings (x d)^j, j <= order, of each
    component."""
    jets = [comps]
    frontier = [comps]
    for _ in range(order):
        new = []
        for arr in frontier:
            for axis in range(grid.ndim):
                new.append(grid.scaled_diff_values(arr, axis))
        jets.extend(new)
        frontier = new
    return jets


def weighted_norm(field, spec: WeightSpec, order: int, rho: ScalarField,
                  weight: ScalarField) -> float:
    """sup of rho^{-mu} w_eps^{-nu} |(x d)^{<= order} field| plus the
    alpha = 1/2 scaled difference quotient at the top order."""
    if order not in (0, 1, 2):
        raise WeightError("order must be 0, 1 or 2")
    grid = rho.grid
    comps = _component_stack(field, grid)
    inv = rho.values ** (-spec.mu) * weight.values ** (-spec.nu)
    jets = _scaled_jet(grid, comps, order)
    total = max(float(np.abs(inv[..., None] * jet).max()) for jet in jets)
    if order == 0:
        # plain sup: keeps the norm monotone under pointwise domination
        return total
    # Holder proxy on the weighted top-order jet, quotients within cubes of
    # side x/2 only
    x = np.broadcast_to(grid.x, grid.shape)
    for jet in jets[-grid.ndim ** order:]:
        u = inv[..., None] * jet
        for axis in range(grid.ndim):
            du = np.abs(np.diff(u, axis=axis))
            h = grid.spacings(axis).reshape([-1 if a == axis else 1 for a in range(grid.ndim)] + [1])
            xm = 0.5 * (_axis_slice(x, axis, 1) + _axis_slice(x, axis, 0))[..., None]
            scaled = np.broadcast_to(h / xm, du.shape)
            ok = scaled <= 0.5
            if ok.any():
                q = du[ok] / scaled[ok] ** HOLDER_ALPHA
                total = max(total, float(q.max()))
    return total


def _axis_slice(arr, axis, drop_first):
    sl = [slice(None)] * arr.ndim
    sl[axis] = slice(1, None) if drop_first else slice(None, -1)
    return arr[tuple(sl)]
