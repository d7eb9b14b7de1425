"""Half-space tensor-product grids, field storage and finite-difference stencils.

Coordinates are w = (x, y_1, ..., y_n) with x > 0 the boundary-defining
direction.  The x = 0 face is never a node; boundary values are obtained by
extrapolation downstream.  All derivative stencils are five-point (degree-4
polynomial exactness), centered in the interior and one-sided within two
nodes of each face, so curvature quantities built from two differentiations
retain at least second-order accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

STENCIL_WIDTH = 5
MIN_NODES = 5


class GridError(ValueError):
    pass


def fd_weights(nodes: np.ndarray, x0: float, max_order: int) -> np.ndarray:
    """Finite-difference weights on arbitrary nodes (Fornberg's recursion).

    Returns an array of shape (max_order+1, len(nodes)); row m holds the
    weights of the m-th derivative at x0.
    """
    nodes = np.asarray(nodes, dtype=float)
    npts = len(nodes)
    c = np.zeros((max_order + 1, npts))
    c1 = 1.0
    c4 = nodes[0] - x0
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, max_order)
        c2 = 1.0
        c5 = c4
        c4 = nodes[i] - x0
        for j in range(i):
            c3 = nodes[i] - nodes[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


class Grid:
    """Tensor-product grid over strictly increasing 1D coordinate axes.

    If ``boundary_axis`` is true, axis 0 is the defining direction x and the
    boundary dimension is n = ndim - 1; otherwise the grid discretizes an
    n-dimensional tangential slice (all axes are y-like).
    """

    def __init__(self, coords, boundary_axis: bool = True):
        coords = tuple(np.ascontiguousarray(c, dtype=float) for c in coords)
        for c in coords:
            if c.ndim != 1 or len(c) < MIN_NODES:
                raise GridError("counts too small: need >= %d nodes per axis" % MIN_NODES)
            if not np.all(np.diff(c) > 0):
                raise GridError("axis nodes must be strictly increasing")
        if boundary_axis and coords[0][0] <= 0:
            raise GridError("x_min must be positive (x=0 is the conformal boundary)")
        self.coords = coords
        self.boundary_axis = bool(boundary_axis)
        self._diff_cache: dict[tuple[int, int], sp.csr_matrix] = {}

    @property
    def ndim(self) -> int:
        return len(self.coords)

    @property
    def n(self) -> int:
        return self.ndim - 1 if self.boundary_axis else self.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.coords)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def x(self) -> np.ndarray:
        """Broadcastable x-coordinate array (boundary grids return ones)."""
        if not self.boundary_axis:
            return np.ones((1,) * self.ndim)
        shape = [1] * self.ndim
        shape[0] = len(self.coords[0])
        return self.coords[0].reshape(shape)

    def meshgrid(self):
        return np.meshgrid(*self.coords, indexing="ij")

    def spacings(self, axis: int) -> np.ndarray:
        return np.diff(self.coords[axis])

    def min_spacing(self) -> float:
        return min(float(self.spacings(a).min()) for a in range(self.ndim))

    def same_as(self, other: "Grid") -> bool:
        return (
            self.boundary_axis == other.boundary_axis
            and self.shape == other.shape
            and all(np.array_equal(a, b) for a, b in zip(self.coords, other.coords))
        )

    # -- finite differences ------------------------------------------------

    def diff_matrix(self, axis: int, order: int) -> sp.csr_matrix:
        """Five-point differentiation matrix along one axis.

        Exact for polynomials of degree <= 4; the row applied to a constant
        vanishes exactly (the central weight absorbs the rounding residual).
        """
        if axis < 0 or axis >= self.ndim:
            raise GridError("invalid axis %d" % axis)
        if order not in (1, 2):
            raise GridError("derivative order must be 1 or 2")
        key = (axis, order)
        if key in self._diff_cache:
            return self._diff_cache[key]
        nodes = self.coords[axis]
        m = len(nodes)
        rows, cols, vals = [], [], []
        for i in range(m):
            lo = min(max(i - 2, 0), m - STENCIL_WIDTH)
            window = nodes[lo : lo + STENCIL_WIDTH]
            w = fd_weights(window, nodes[i], order)[order]
            # the central weight absorbs the rounding residual so the row
            # applied to a constant vanishes to the last bit or two
            w[i - lo] -= w.sum()
            rows.extend([i] * STENCIL_WIDTH)
            cols.extend(range(lo, lo + STENCIL_WIDTH))
            vals.extend(w)
        mat = sp.csr_matrix((vals, (rows, cols)), shape=(m, m))
        self._diff_cache[key] = mat
        return mat

    def apply_along_axis(self, mat: sp.csr_matrix, values: np.ndarray, axis: int) -> np.ndarray:
        """Apply a per-axis operator to an array with leading grid axes."""
        moved = np.moveaxis(values, axis, 0)
        flat = moved.reshape(moved.shape[0], -1)
        out = mat @ flat
        return np.moveaxis(out.reshape(moved.shape), 0, axis)

    def diff_values(self, values: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        return self.apply_along_axis(self.diff_matrix(axis, order), values, axis)

    def scaled_diff_values(self, values: np.ndarray, axis: int) -> np.ndarray:
        """The uniformly degenerate derivative x * d/dw_axis."""
        d = self.diff_values(values, axis, 1)
        if self.boundary_axis:
            extra = values.ndim - self.ndim
            xx = self.x.reshape(self.x.shape + (1,) * extra)
            return xx * d
        return d


def make_grid(n, counts, x_range, y_extent, grade: float = 1.0) -> Grid:
    """Half-space grid with optionally graded x-nodes.

    counts may be a single int or one count per axis (x first).  With
    grade > 1 the x-spacings grow geometrically away from x_min, which
    resolves fields behaving like powers of x near the boundary.
    """
    if n not in (2, 3):
        raise GridError("boundary dimension n must be 2 or 3")
    x_min, x_max = map(float, x_range)
    if not (0 < x_min < x_max):
        raise GridError("need 0 < x_min < x_max")
    if np.isscalar(counts):
        counts = (int(counts),) * (n + 1)
    counts = tuple(int(c) for c in counts)
    if len(counts) != n + 1:
        raise GridError("expected %d axis counts" % (n + 1))
    if min(counts) < MIN_NODES:
        raise GridError("counts too small: need >= %d nodes per axis" % MIN_NODES)
    if grade <= 0:
        raise GridError("grade must be positive")
    if grade == 1.0:
        x_nodes = np.linspace(x_min, x_max, counts[0])
    else:
        steps = grade ** np.arange(counts[0] - 1)
        x_nodes = x_min + (x_max - x_min) * np.concatenate(([0.0], np.cumsum(steps))) / steps.sum()
        x_nodes[-1] = x_max
    y_extent = float(y_extent)
    if y_extent <= 0:
        raise GridError("y_extent must be positive")
    axes = [x_nodes]
    for c in counts[1:]:
        axes.append(np.linspace(-y_extent, y_extent, c))
    return Grid(axes, boundary_axis=True)


def make_boundary_grid(n: int, count, extent: float) -> Grid:
    """Uniform n-dimensional tangential grid on [-extent, extent]^n.

    An even count keeps y = 0 off the grid (the inversion map is singular
    there).
    """
    if np.isscalar(count):
        count = (int(count),) * n
    count = tuple(int(c) for c in count)
    if len(count) != n or min(count) < MIN_NODES:
        raise GridError("need %d axis counts, each >= %d" % (n, MIN_NODES))
    axes = [np.linspace(-float(extent), float(extent), c) for c in count]
    return Grid(axes, boundary_axis=False)


@dataclass
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError("value array shape %s does not match grid %s"
                            % (self.values.shape, self.grid.shape))
        if not np.all(np.isfinite(self.values)):
            raise GridError("field values must be finite")


def diff(fld: ScalarField, axis: int, order: int = 1) -> ScalarField:
    """Partial derivative of a scalar field along a grid axis."""
    return ScalarField(fld.grid, fld.grid.diff_values(fld.values, axis, order))


def scaled_diff(fld: ScalarField, axis: int) -> ScalarField:
    """x * d/dw_axis, the uniformly degenerate vector field applied to fld."""
    return ScalarField(fld.grid, fld.grid.scaled_diff_values(fld.values, axis))


class SymTensor2Field:
    """Symmetric 2-tensor field stored by upper-triangle components.

    Components are interpreted against the singular coframe
    (dw_i / x)(dw_j / x); only i <= j is stored, the symmetric extension is
    definitional.
    """

    def __init__(self, grid: Grid, comps: dict):
        self.grid = grid
        d = grid.ndim
        self.comps = {}
        for (i, j), v in comps.items():
            if not (0 <= i <= j < d):
                raise GridError("component index (%d,%d) out of range" % (i, j))
            v = np.asarray(v, dtype=float)
            if v.shape != grid.shape:
                raise GridError("component (%d,%d) shape mismatch" % (i, j))
            if not np.all(np.isfinite(v)):
                raise GridError("component (%d,%d) must be finite" % (i, j))
            self.comps[(i, j)] = v
        for i in range(d):
            for j in range(i, d):
                self.comps.setdefault((i, j), np.zeros(grid.shape))

    @classmethod
    def from_matrix(cls, grid: Grid, mat: np.ndarray) -> "SymTensor2Field":
        d = grid.ndim
        if mat.shape != grid.shape + (d, d):
            raise GridError("matrix shape mismatch")
        return cls(grid, {(i, j): mat[..., i, j] for i in range(d) for j in range(i, d)})

    def comp(self, i: int, j: int) -> np.ndarray:
        """Accessor honoring k_ij == k_ji."""
        return self.comps[(i, j) if i <= j else (j, i)]

    def to_matrix(self) -> np.ndarray:
        d = self.grid.ndim
        out = np.empty(self.grid.shape + (d, d))
        for i in range(d):
            for j in range(d):
                out[..., i, j] = self.comp(i, j)
        return out

    def __add__(self, other: "SymTensor2Field") -> "SymTensor2Field":
        return SymTensor2Field(
            self.grid, {k: v + other.comps[k] for k, v in self.comps.items()}
        )

    def __sub__(self, other: "SymTensor2Field") -> "SymTensor2Field":
        return SymTensor2Field(
            self.grid, {k: v - other.comps[k] for k, v in self.comps.items()}
        )

    def __mul__(self, a: float) -> "SymTensor2Field":
        return SymTensor2Field(self.grid, {k: a * v for k, v in self.comps.items()})

    __rmul__ = __mul__

    def max_abs(self) -> float:
        return max(float(np.abs(v).max()) for v in self.comps.values())


# -- serialization ---------------------------------------------------------

def _grid_header(grid: Grid) -> list[str]:
    lines = []
    axes = ",".join(str(s) for s in grid.shape)
    if grid.boundary_axis:
        x = grid.coords[0]
        y_ext = max(float(np.abs(grid.coords[a]).max()) for a in range(1, grid.ndim))
        lines.append("# n=%d axes=%s x_range=%.17g,%.17g y_extent=%.17g"
                     % (grid.n, axes, x[0], x[-1], y_ext))
    else:
        ext = float(np.abs(grid.coords[0]).max())
        lines.append("# n=%d axes=%s x_range=, y_extent=%.17g" % (grid.n, axes, ext))
    for c in grid.coords:
        lines.append("# axis " + ",".join("%.17g" % v for v in c))
    return lines


def save_field(fld, path) -> None:
    """CSV layout: header (n, axis counts, x_range, y_extent), axis node
    lines, then row-major values (one column per tensor component)."""
    if isinstance(fld, ScalarField):
        cols = [fld.values.ravel()]
        names = ["value"]
        grid = fld.grid
    elif isinstance(fld, SymTensor2Field):
        keys = sorted(fld.comps)
        cols = [fld.comps[k].ravel() for k in keys]
        names = ["k%d%d" % k for k in keys]
        grid = fld.grid
    else:
        raise TypeError("unsupported field type %r" % type(fld))
    with open(path, "w") as fh:
        for line in _grid_header(grid):
            fh.write(line + "\n")
        fh.write(",".join(names) + "\n")
        data = np.column_stack(cols)
        for row in data:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def load_field(path):
    """Inverse of save_field; returns ScalarField or SymTensor2Field."""
    axes = []
    boundary_axis = True
    with open(path) as fh:
        first = fh.readline()
        if "x_range=," in first:
            boundary_axis = False
        line = fh.readline()
        while line.startswith("# axis"):
            axes.append(np.array([float(v) for v in line[len("# axis "):].split(",")]))
            line = fh.readline()
        names = line.strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = Grid(axes, boundary_axis=boundary_axis)
    if names == ["value"]:
        return ScalarField(grid, data[:, 0].reshape(grid.shape))
    comps = {}
    for col, name in enumerate(names):
        i, j = int(name[1]), int(name[2])
        comps[(i, j)] = data[:, col].reshape(grid.shape)
    return SymTensor2Field(grid, comps)
