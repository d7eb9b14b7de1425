"""Indicial roots, the indicial family and the hyperbolic normal operator.

Everything here is exact-by-construction: the block coefficient tables are
entered in closed form, and the numerical normal-operator application is a
cross-check against them, not their source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridError


class IndicialError(ValueError):
    pass


@dataclass(frozen=True)
class IndicialSpectrum:
    n: int
    zeta1: tuple[float, float]  # (plus, minus): normal block and pure trace
    zeta2: tuple[float, float]  # mixed block
    zeta3: tuple[float, float]  # tangential block
    mu_minus: float
    mu_plus: float

    @property
    def window(self) -> tuple[float, float]:
        return (self.mu_minus, self.mu_plus)

    def rows(self):
        """CSV rows: label, zeta_plus, zeta_minus."""
        return [
            ("zeta1", self.zeta1[0], self.zeta1[1]),
            ("zeta2", self.zeta2[0], self.zeta2[1]),
            ("zeta3", self.zeta3[0], self.zeta3[1]),
        ]


def indicial_roots(n: int) -> IndicialSpectrum:
    """Closed-form indicial roots of the linearized operator.

    zeta2 simplifies exactly: sqrt(n^2+4n+4) = n+2, so zeta2 = {n+1, -1}.
    """
    if n < 2:
        raise IndicialError("boundary dimension must be >= 2")
    s1 = math.sqrt(n * n + 8.0 * n)
    z1 = ((n + s1) / 2.0, (n - s1) / 2.0)
    z2 = (float(n + 1), -1.0)
    z3 = (float(n), 0.0)
    return IndicialSpectrum(n, z1, z2, z3, mu_minus=0.0, mu_plus=float(n))


def fredholm_window(n: int) -> tuple[float, float]:
    """Open interval of weights for which the operator is Fredholm of
    index zero."""
    spec = indicial_roots(n)
    return spec.window


@dataclass(frozen=True)
class OpSpec:
    """Coefficients a_j of the indicial family I(zeta) = sum_j a_j zeta^j,
    entered as constant matrices (here all blocks are scalar)."""

    name: str
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray


def block_spec(block: str, n: int) -> OpSpec:
    """Indicial-family table for the operator display on g0.

    With p(zeta) = n zeta - zeta^2 (from s^2 dss + (1-n) s ds applied to
    s^zeta with a sign flip for -Laplacian):
      normal:      p + 2n     roots zeta1
      mixed:       p + n + 1  roots zeta2
      tangential:  p          roots zeta3
      trace:       p + 2n     roots zeta1
      laplacian:   zeta^2 - n zeta  (the Laplacian itself), roots {0, n}
    """
    if n < 2:
        raise IndicialError("boundary dimension must be >= 2")
    one = np.eye(1)
    if block == "laplacian":
        return OpSpec(block, 0.0 * one, -float(n) * one, one)
    shift = {"normal": 2.0 * n, "mixed": float(n + 1), "tangential": 0.0, "trace": 2.0 * n}
    if block not in shift:
        raise IndicialError("unknown block %r" % block)
    return OpSpec(block, shift[block] * one, float(n) * one, -one)


def indicial_apply(op_spec: OpSpec, zeta: float) -> np.ndarray:
    """The matrix I_L(zeta) = a0 + a1 zeta + a2 zeta^2."""
    return op_spec.a0 + zeta * op_spec.a1 + zeta * zeta * op_spec.a2


def is_indicial_root(op_spec: OpSpec, zeta: float, tol: float = 1e-10) -> bool:
    mat = indicial_apply(op_spec, zeta)
    scale = max(1.0, float(np.abs([op_spec.a0, op_spec.a1, op_spec.a2]).max()))
    return abs(float(np.linalg.det(mat))) <= tol * scale ** mat.shape[0]


# -- normal operator on the half-space model -------------------------------

@dataclass
class TraceFreeBlockTensor:
    """Trace-free symmetric 2-tensor in the frame ds^2/s^2, (ds/s)(du_i/s),
    (du_i/s)(du_j/s) over a half-space (s, u) grid."""

    grid: Grid
    h00: np.ndarray
    h0: np.ndarray
    hij: np.ndarray

    def __post_init__(self):
        nb = self.grid.n
        if not self.grid.boundary_axis:
            raise GridError("block tensor needs a half-space (s,u) grid")
        if (self.h00.shape != self.grid.shape
                or self.h0.shape != self.grid.shape + (nb,)
                or self.hij.shape != self.grid.shape + (nb, nb)):
            raise GridError("block tensor shape mismatch")
        scale = max(1.0, float(np.abs(self.hij).max()), float(np.abs(self.h00).max()))
        if np.abs(self.hij - np.swapaxes(self.hij, -1, -2)).max() > 1e-12 * scale:
            raise IndicialError("tangential block must be symmetric")
        tr = self.h00 + np.einsum("...ii->...", self.hij)
        if np.abs(tr).max() > 1e-10 * scale:
            raise IndicialError("block tensor must be trace-free")

    def max_abs(self) -> float:
        return max(float(np.abs(self.h00).max()),
                   float(np.abs(self.h0).max()),
                   float(np.abs(self.hij).max()))


def hyperbolic_laplacian(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Laplace-Beltrami operator of the upper half-space model,
    s^2 dss + (1-n) s ds + s^2 Lap_u, applied componentwise."""
    n = grid.n
    s = grid.x
    extra = values.ndim - grid.ndim
    sb = s.reshape(s.shape + (1,) * extra)
    out = sb ** 2 * grid.diff_values(values, 0, 2) + (1 - n) * sb * grid.diff_values(values, 0)
    for a in range(1, grid.ndim):
        out += sb ** 2 * grid.diff_values(values, a, 2)
    return out


def normal_operator_apply(h: TraceFreeBlockTensor) -> TraceFreeBlockTensor:
    """Blockwise action of the display operator on trace-free tensors:

      ( -Lap h00 + 2n h00 - 4 s du_i h0i ) ds^2/s^2
      ( -Lap h0i + (n+1) h0i - 2 s du_j hij ) (ds/s)(du_i/s)
      ( -Lap hij + 2 s (du_j h0i + du_i h0j) - 2 h00 delta_ij )
    """
    grid = h.grid
    n = grid.n
    s = grid.x
    div_h0 = sum(grid.diff_values(h.h0[..., i], 1 + i) for i in range(n))
    row1 = -hyperbolic_laplacian(grid, h.h00) + 2 * n * h.h00 - 4 * s * div_h0

    row2 = -hyperbolic_laplacian(grid, h.h0) + (n + 1) * h.h0
    for i in range(n):
        div_hi = sum(grid.diff_values(h.hij[..., i, j], 1 + j) for j in range(n))
        row2[..., i] -= 2 * s * div_hi

    row3 = -hyperbolic_laplacian(grid, h.hij)
    dh0 = np.empty(grid.shape + (n, n))
    for a in range(n):
        dh0[..., a, :] = grid.diff_values(h.h0, 1 + a)  # du_a of h0_i
    sb = s.reshape(s.shape + (1, 1))
    row3 += 2 * sb * (np.swapaxes(dh0, -1, -2) + dh0)
    row3 -= 2 * h.h00[..., None, None] * np.eye(n)
    return TraceFreeBlockTensor(grid, row1, row2, row3)
