"""Built-in model metrics and the chart evaluators used by the gluing code.

Charts evaluate compactified metric components at arbitrary points, which
lets the gluing assembly sample them at rescaled and inverted arguments
without leaving the chart's validity region: arguments are passed through a
C^2 radial clamp that is the identity on the region actually used by the
experiments and saturates smoothly below the chart's degeneration radius.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.special import gamma as gamma_fn, gammainc

from .grid import Grid, ScalarField, SymTensor2Field, make_grid
from .tensor_calculus import CCMetric


def soft_radius_clamp(r: np.ndarray, start: float = 1.2, limit: float = 1.8) -> np.ndarray:
    """Monotone C^2 map: identity for r <= start, saturating to limit.

    The transition has slope exp(-t^3), integrated in closed form through
    the regularized incomplete gamma function, so the map and its first two
    derivatives are continuous at r = start.
    """
    delta = (limit - start) / gamma_fn(4.0 / 3.0)
    r = np.asarray(r, dtype=float)
    out = r.copy()
    m = r > start
    t = (r[m] - start) / delta
    out[m] = start + (limit - start) * gammainc(1.0 / 3.0, t ** 3)
    return out


def clamp_points(points: np.ndarray, start: float = 1.2, limit: float = 1.8) -> np.ndarray:
    """Radially clamp points (..., d) into the ball of radius `limit`."""
    r = np.linalg.norm(points, axis=-1)
    rc = soft_radius_clamp(r, start, limit)
    scale = np.ones_like(r)
    m = r > 0
    scale[m] = rc[m] / r[m]
    return points * scale[..., None]


@dataclass
class ModelChart:
    """A boundary normal-form chart around a boundary point.

    k_func maps points (..., n+1) in chart coordinates w = (x, y) to the
    singular-frame discrepancy components k = gbar - delta, shape
    (..., n+1, n+1), tangential block only and O(|w|^2).  h_func maps
    boundary points (..., n) to the components of the conformal-infinity
    representative h0.
    """

    name: str
    n: int
    k_func: "callable"
    h_func: "callable"
    params: dict = field(default_factory=dict)

    def gbar(self, points: np.ndarray) -> np.ndarray:
        d = self.n + 1
        return np.eye(d) + self.k_func(points)


# -- hyperbolic half space -------------------------------------------------

def _flat_k(points):
    d = points.shape[-1]
    return np.zeros(points.shape[:-1] + (d, d))


def _flat_h(y):
    nb = y.shape[-1]
    return np.broadcast_to(np.eye(nb), y.shape[:-1] + (nb, nb)).copy()


def flat_chart(n: int) -> ModelChart:
    """Hyperbolic half space g0: zero discrepancy, flat boundary metric."""
    return ModelChart("hyperbolic_half_space", n, _flat_k, _flat_h)


def hyperbolic_half_space(grid: Grid) -> CCMetric:
    d = grid.ndim
    mat = np.broadcast_to(np.eye(d), grid.shape + (d, d)).copy()
    return CCMetric(SymTensor2Field.from_matrix(grid, mat), einstein_expected=True)


# -- Poincare ball in boundary normal form ---------------------------------

def round_sphere_matrix(y: np.ndarray) -> np.ndarray:
    """Unit round sphere in geodesic normal coordinates about a point.

    h = delta + (sin^2 r / r^2 - 1)(delta - yhat yhat^T), r = |y|; valid
    for r < pi and equal to delta + O(|y|^2) at the origin.
    """
    nb = y.shape[-1]
    r = np.linalg.norm(y, axis=-1)
    sinc = np.sinc(r / np.pi)  # sin(r)/r, exact limit 1 at r=0
    f = sinc ** 2 - 1.0
    rr = np.where(r > 0, r, 1.0)
    yhat = y / rr[..., None]
    proj = np.eye(nb) - yhat[..., :, None] * yhat[..., None, :]
    proj = np.where((r > 0)[..., None, None], proj, 0.0)
    return np.eye(nb) + f[..., None, None] * proj


def _ball_k(points):
    pts = clamp_points(points)
    x = pts[..., 0]
    y = pts[..., 1:]
    nb = y.shape[-1]
    d = nb + 1
    warp = (1.0 - x ** 2 / 4.0) ** 2
    h = round_sphere_matrix(y)
    k = np.zeros(points.shape[:-1] + (d, d))
    k[..., 1:, 1:] = warp[..., None, None] * h - np.eye(nb)
    return k


def _ball_h(y):
    return round_sphere_matrix(clamp_points(y))


def ball_chart(n: int) -> ModelChart:
    """Poincare ball about a boundary point, in boundary normal form.

    gbar = dx^2 + (1 - x^2/4)^2 h_sph(y) with h_sph the unit round sphere
    in normal coordinates; Einstein with Ric = -n g, conformal infinity the
    round sphere.
    """
    return ModelChart("poincare_ball_chart", n, _ball_k, _ball_h)


def poincare_ball_chart(grid: Grid) -> CCMetric:
    pts = np.stack(grid.meshgrid(), axis=-1)
    mat = np.eye(grid.ndim) + _ball_k(pts)
    return CCMetric(SymTensor2Field.from_matrix(grid, mat), einstein_expected=True)


# -- conformally perturbed flat model --------------------------------------

def perturbed_conformal(grid: Grid, amplitude: float, center=None, width: float = 0.5) -> CCMetric:
    """gbar = e^{2 a phi} delta with a Gaussian bump phi; a generic smooth
    non-Einstein test metric."""
    d = grid.ndim
    pts = np.stack(grid.meshgrid(), axis=-1)
    if center is None:
        center = np.zeros(d)
        center[0] = float(np.mean(grid.coords[0]))
    center = np.asarray(center, dtype=float)
    phi = np.exp(-np.sum((pts - center) ** 2, axis=-1) / width ** 2)
    mat = np.exp(2.0 * amplitude * phi)[..., None, None] * np.eye(d)
    return CCMetric(SymTensor2Field.from_matrix(grid, mat))


def conformal_bump(grid: Grid, center=None, width: float = 0.5) -> ScalarField:
    """The bump phi used by perturbed_conformal, as a field."""
    d = grid.ndim
    pts = np.stack(grid.meshgrid(), axis=-1)
    if center is None:
        center = np.zeros(d)
        center[0] = float(np.mean(grid.coords[0]))
    center = np.asarray(center, dtype=float)
    return ScalarField(grid, np.exp(-np.sum((pts - center) ** 2, axis=-1) / width ** 2))


# -- manifests -------------------------------------------------------------

class ManifestError(ValueError):
    pass


_CHARTS = {
    "hyperbolic_half_space": flat_chart,
    "poincare_ball_chart": ball_chart,
}


def chart_from_name(name: str, n: int) -> ModelChart:
    if name not in _CHARTS:
        raise ManifestError("unknown model metric %r" % name)
    return _CHARTS[name](n)


def grid_from_manifest(doc: dict) -> Grid:
    try:
        return make_grid(
            int(doc["n"]),
            tuple(doc["counts"]),
            tuple(doc["x_range"]),
            float(doc["y_extent"]),
            grade=float(doc.get("grade", 1.0)),
        )
    except KeyError as exc:
        raise ManifestError("grid manifest missing key %s" % exc) from exc


def metric_from_manifest(doc: dict, grid: Grid | None = None) -> CCMetric:
    model = doc.get("model")
    if grid is None:
        if "grid" not in doc:
            raise ManifestError("manifest needs a grid section")
        grid = grid_from_manifest(doc["grid"])
    params = doc.get("params", {}) or {}
    if model == "hyperbolic_half_space":
        return hyperbolic_half_space(grid)
    if model == "poincare_ball_chart":
        return poincare_ball_chart(grid)
    if model == "perturbed":
        return perturbed_conformal(
            grid,
            float(params.get("amplitude", 0.1)),
            params.get("center"),
            float(params.get("width", 0.5)),
        )
    raise ManifestError("unknown model metric %r" % model)


def load_metric_manifest(path) -> CCMetric:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ManifestError("manifest %s is not a mapping" % path)
    return metric_from_manifest(doc)
