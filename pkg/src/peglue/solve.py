"""Discrete linearized solve and the Picard iteration for the Einstein
correction.

The linear system works in the weighted unknown kappa_tilde with
k = rho^mu w_eps^nu kappa_tilde, homogeneous Dirichlet on kappa_tilde at
all grid faces.  The operator application is matrix-free (each matvec
rebuilds the frame-covariant Lichnerowicz action on the scattered tensor);
only the blockwise scalar preconditioner

    rho^{-mu} w^{-nu} (1/2)(-Lap_hyp + 2n) (rho^mu w^nu .)

is assembled as a sparse matrix and factored once per system.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .gauge import GaugeContext, bianchi, gauged_residual, linearized, zero_tensor
from .glue import GluedAtlas, glued_residual
from .grid import Grid, ScalarField, SymTensor2Field
from .tensor_calculus import inverse_metric
from .weights import WeightSpec, defining_function, neck_weight, weighted_norm

LINEAR_RTOL = 1e-9
LINEAR_MAXITER = 400
# layers skipped when reading off the gauge defect: faces plus the
# off-centered 5-point rows that only see the Dirichlet zero of k
STENCIL_INTERIOR = 3


class SolveError(RuntimeError):
    pass


def _interior_mask(grid: Grid) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.ndim):
        sl = [slice(None)] * grid.ndim
        for edge in (0, -1):
            sl[axis] = edge
            mask[tuple(sl)] = False
    return mask


def _sym_pairs(d: int):
    return [(i, j) for i in range(d) for j in range(i, d)]


@dataclass
class LinearSystem:
    """Weighted, Dirichlet-truncated discretization of L_{g_eps}.

    Vector layout: (interior node, upper-triangle component), row-major
    nodes.  Dimensions are (tensor components) x (interior nodes); the
    sparsity pattern of the matrix-free operator is symmetric because the
    stencils are.
    """

    ctx: GaugeContext
    spec: WeightSpec
    rho: ScalarField
    weight: ScalarField
    rhs: SymTensor2Field | None = None
    _lu: object = field(init=False, default=None, repr=False)

    def __post_init__(self):
        grid = self.ctx.grid
        if not self.rho.grid.same_as(grid) or not self.weight.grid.same_as(grid):
            raise SolveError("weight fields not on the context grid")
        self.interior = _interior_mask(grid)
        self.pairs = _sym_pairs(grid.ndim)
        self.wvals = self.rho.values ** self.spec.mu * self.weight.values ** self.spec.nu
        self.n_interior = int(self.interior.sum())

    @property
    def size(self) -> int:
        return self.n_interior * len(self.pairs)

    # -- vector packing ----------------------------------------------------

    def pack(self, mat: np.ndarray) -> np.ndarray:
        cols = [mat[..., i, j][self.interior] for (i, j) in self.pairs]
        return np.stack(cols, axis=-1).ravel()

    def scatter(self, v: np.ndarray) -> np.ndarray:
        """Interior vector -> full symmetric matrix field, zero at faces."""
        grid = self.ctx.grid
        d = grid.ndim
        cols = v.reshape(self.n_interior, len(self.pairs))
        mat = np.zeros(grid.shape + (d, d))
        for c, (i, j) in enumerate(self.pairs):
            comp = np.zeros(grid.shape)
            comp[self.interior] = cols[:, c]
            mat[..., i, j] = comp
            mat[..., j, i] = comp
        return mat

    # -- operator ----------------------------------------------------------

    def weighted_to_tensor(self, v: np.ndarray) -> SymTensor2Field:
        """k = rho^mu w^nu kappa_tilde."""
        km = self.scatter(v) * self.wvals[..., None, None]
        return SymTensor2Field.from_matrix(self.ctx.grid, km)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        k = self.weighted_to_tensor(v)
        lk = linearized(self.ctx, k).to_matrix()
        return self.pack(lk / self.wvals[..., None, None])

    def operator(self) -> spla.LinearOperator:
        return spla.LinearOperator((self.size, self.size), matvec=self.matvec)

    def rhs_vector(self) -> np.ndarray:
        if self.rhs is None:
            return np.zeros(self.size)
        return self.pack(self.rhs.to_matrix() / self.wvals[..., None, None])

    # -- preconditioner ----------------------------------------------------

    def _axis_operator(self, axis: int, mat1d: sp.spmatrix) -> sp.spmatrix:
        grid = self.ctx.grid
        out = mat1d if axis == 0 else sp.identity(grid.shape[0], format="csr")
        for a in range(1, grid.ndim):
            nxt = mat1d if a == axis else sp.identity(grid.shape[a], format="csr")
            out = sp.kron(out, nxt, format="csr")
        return out

    def _scalar_model(self) -> sp.spmatrix:
        """1/2 (-Lap_hyp + 2n) on the flattened scalar grid."""
        grid = self.ctx.grid
        n = self.ctx.n
        x = np.broadcast_to(grid.x, grid.shape).ravel()
        xd = sp.diags(x)
        lap = xd @ xd @ self._axis_operator(0, grid.diff_matrix(0, 2))
        lap = lap + (1 - n) * xd @ self._axis_operator(0, grid.diff_matrix(0, 1))
        for a in range(1, grid.ndim):
            lap = lap + xd @ xd @ self._axis_operator(a, grid.diff_matrix(a, 2))
        return 0.5 * (-lap + 2.0 * n * sp.identity(grid.size, format="csr"))

    def _factorized(self):
        if self._lu is None:
            w = self.wvals.ravel()
            conj = sp.diags(1.0 / w) @ self._scalar_model() @ sp.diags(w)
            idx = np.flatnonzero(self.interior.ravel())
            self._lu = spla.splu(conj.tocsc()[idx][:, idx])
        return self._lu

    def preconditioner(self) -> spla.LinearOperator:
        lu = self._factorized()
        ncomp = len(self.pairs)

        def apply(v):
            cols = v.reshape(self.n_interior, ncomp)
            return np.column_stack([lu.solve(np.ascontiguousarray(cols[:, c]))
                                    for c in range(ncomp)]).ravel()

        return spla.LinearOperator((self.size, self.size), matvec=apply)


def assemble(ctx: GaugeContext, spec: WeightSpec, rho: ScalarField | None = None,
             weight: ScalarField | None = None,
             rhs: SymTensor2Field | None = None) -> LinearSystem:
    """Weighted linear system for L_{g} on ctx's grid.

    When rho/weight are omitted (single-summand systems) rho = x and
    w = 1, and only the single-weight window mu in (0, n) is enforced;
    two-weight neck systems must satisfy mu = nu in (0, n/2).
    """
    grid = ctx.grid
    if rho is None and weight is None:
        spec.require_single_window(ctx.n)
        rho = ScalarField(grid, np.broadcast_to(grid.x, grid.shape).copy())
        weight = ScalarField(grid, np.ones(grid.shape))
    else:
        if rho is None or weight is None:
            raise SolveError("rho and weight must be given together")
        spec.require_solver_window(ctx.n)
    return LinearSystem(ctx, spec, rho, weight, rhs)


@dataclass
class LinearSolveResult:
    k: SymTensor2Field
    iterations: int
    rel_residual: float
    g_norm: float


def linear_solve(system: LinearSystem, rtol: float = LINEAR_RTOL,
                 maxiter: int = LINEAR_MAXITER) -> LinearSolveResult:
    """Preconditioned LGMRES solve; returns the unweighted correction
    k = rho^mu w^nu kappa_tilde and the empirical applied-inverse norm
    ||k||_{2,mu,nu} / ||rhs||_{0,mu,nu}."""
    b = system.rhs_vector()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return LinearSolveResult(zero_tensor(system.ctx.grid), 0, 0.0, 0.0)
    count = {"mv": 0}

    def counted(v):
        count["mv"] += 1
        return system.matvec(v)

    op = spla.LinearOperator((system.size, system.size), matvec=counted)
    v, info = spla.lgmres(op, b, M=system.preconditioner(), rtol=rtol,
                          atol=0.0, maxiter=maxiter)
    rel = float(np.linalg.norm(system.matvec(v) - b)) / bnorm
    if info != 0 or rel > 100 * rtol:
        raise SolveError("linear solver stagnated after %d matvecs "
                         "(relative residual %.3e)" % (count["mv"], rel))
    k = system.weighted_to_tensor(v)
    gn = (weighted_norm(k, system.spec, 2, system.rho, system.weight)
          / weighted_norm(system.rhs, system.spec, 0, system.rho, system.weight))
    return LinearSolveResult(k, count["mv"], rel, gn)


# -- Picard iteration ------------------------------------------------------

@dataclass
class SolveReport:
    eps: float
    mu: float
    tol: float
    residuals: list = field(default_factory=list)
    contraction: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    g_norms: list = field(default_factory=list)
    bianchi_norm: float = float("nan")
    converged: bool = False
    failure: str | None = None

    @property
    def iterations(self) -> int:
        return max(len(self.residuals) - 1, 0)

    def rows(self):
        out = []
        for i, r in enumerate(self.residuals):
            out.append((i, r,
                        self.contraction[i - 1] if i >= 1 else "",
                        self.linear_iterations[i - 1] if i >= 1 else ""))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "weighted_residual", "contraction_factor",
                        "linear_matvecs"])
            for row in self.rows():
                w.writerow(["%.17e" % v if isinstance(v, float) else v for v in row])

    def to_text(self) -> str:
        lines = ["fixed point solve: eps=%g mu=%g tol=%g" % (self.eps, self.mu, self.tol),
                 "iterations: %d" % self.iterations,
                 "status: %s" % ("converged" if self.converged
                                 else (self.failure or "max iterations reached"))]
        for i, r, c, li in self.rows():
            lines.append("  iter %2d  residual %.6e  contraction %s  matvecs %s"
                         % (i, r, ("%.4f" % c) if c != "" else "-", li if li != "" else "-"))
        lines.append("final Bianchi norm: %.6e" % self.bianchi_norm)
        return "\n".join(lines)


def _interior_norm_fn(grid: Grid, spec: WeightSpec, rho: ScalarField,
                      weight: ScalarField, strip: int = 1):
    """Weighted sup-norm over the interior sub-box.

    The Dirichlet-truncated system has no equations at face nodes, so the
    discrete fixed-point residual is measured where the discrete problem is
    posed; face layers are excluded wholesale (not zeroed, which would
    poison the difference quotients)."""
    core = tuple(slice(strip, -strip) for _ in range(grid.ndim))
    sub = Grid([c[strip:-strip] for c in grid.coords],
               boundary_axis=grid.boundary_axis)
    rho_sub = ScalarField(sub, rho.values[core])
    w_sub = ScalarField(sub, weight.values[core])

    def norm(fld, order: int = 0) -> float:
        arr = fld.to_matrix() if isinstance(fld, SymTensor2Field) else np.asarray(fld.comps)
        return weighted_norm(arr[core], spec, order, rho_sub, w_sub)

    return norm


def _corrected_residual(atlas: GluedAtlas, ctx: GaugeContext):
    """Defect-corrected N_{g_eps}: the k = 0 value comes from the glued
    residual (bitwise zero outside the annulus); curvature terms of k are
    added as a difference so the shared truncation still cancels."""
    base = glued_residual(atlas)
    zero = zero_tensor(atlas.grid)

    def residual(k: SymTensor2Field) -> SymTensor2Field:
        if not any(np.any(v) for v in k.comps.values()):
            return base
        return base + gauged_residual(ctx, k) - gauged_residual(ctx, zero)

    return residual


def fixed_point(atlas: GluedAtlas, spec: WeightSpec, tol: float = 1e-8,
                max_iter: int = 20, residual_fn=None):
    """Picard iteration k <- k - G N(k) in the weighted norm.

    Returns (k, SolveReport); the report is complete even on failure.
    Requires mu = nu in (0, 1) (the contraction regime), and eps within
    the gluing range enforced by the atlas itself.
    """
    if not (0 < spec.mu < 1):
        raise SolveError("fixed point iteration needs mu in (0, 1)")
    spec.require_solver_window(atlas.grid.n)
    ctx = GaugeContext(atlas.metric)
    rho = defining_function(atlas)
    w = neck_weight(atlas, spec)
    if residual_fn is None:
        residual_fn = _corrected_residual(atlas, ctx)
    norm = _interior_norm_fn(atlas.grid, spec, rho, w)

    report = SolveReport(eps=atlas.eps, mu=spec.mu, tol=tol)
    k = zero_tensor(atlas.grid)
    res = residual_fn(k)
    rnorm = norm(res)
    report.residuals.append(rnorm)
    for it in range(max_iter):
        if rnorm <= tol:
            report.converged = True
            break
        system = LinearSystem(ctx, spec, rho, w, rhs=res)
        try:
            lin = linear_solve(system)
        except SolveError as exc:
            report.failure = str(exc)
            break
        k = k - lin.k
        gm = ctx.gmat + k.to_matrix()
        try:
            inverse_metric(gm)
        except Exception:
            report.failure = "positivity loss of g_eps + k"
            break
        res = residual_fn(k)
        prev, rnorm = rnorm, norm(res)
        report.residuals.append(rnorm)
        report.contraction.append(rnorm / prev if prev > 0 else 0.0)
        report.linear_iterations.append(lin.iterations)
        report.g_norms.append(lin.g_norm)
        if it >= 1 and rnorm > prev and rnorm > 10 * tol:
            report.failure = ("contraction failure: factor %.3f at iteration %d "
                              "(eps too large or grid too coarse)"
                              % (rnorm / prev, it + 1))
            break
    if rnorm <= tol:
        report.converged = True
    # the gauge defect has no defect correction available, so it is read off
    # the halo-free interior: face rows hold the artificial Dirichlet zero of
    # k and the adjacent off-centered stencils measure only that truncation
    strip = min(STENCIL_INTERIOR,
                (min(len(c) for c in atlas.grid.coords) - 5) // 2)
    halo_norm = _interior_norm_fn(atlas.grid, spec, rho, w,
                                  strip=max(strip, 1))
    report.bianchi_norm = halo_norm(bianchi(ctx, k))
    return k, report


# -- kernel detection ------------------------------------------------------

@dataclass
class KernelProbe:
    sigma_min: float
    threshold: float
    flagged: bool
    iterations: int


def kernel_probe(system: LinearSystem, threshold: float = 1e-6,
                 max_iter: int = 8, seed: int = 0) -> KernelProbe:
    """Inverse-iteration estimate of the smallest singular value of the
    assembled operator; flags near-degeneracy below the threshold.

    Each step solves the system once with the blockwise preconditioner; on
    a (near-)singular operator the solves blow up along the kernel and the
    estimate collapses toward zero.
    """
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(system.size)
    q /= np.linalg.norm(q)
    op = system.operator()
    m = system.preconditioner()
    sigma = float("inf")
    for it in range(max_iter):
        z, info = spla.lgmres(op, q, M=m, rtol=1e-8, atol=0.0, maxiter=50)
        zn = float(np.linalg.norm(z))
        if not np.isfinite(zn) or zn == 0.0:
            raise SolveError("inverse iteration failed to converge")
        if info != 0:
            # stalled solve: the Krylov iteration reduced everything it can
            # reach, so the leftover residual leans along the unreachable
            # directions. Solving the consistent system A z = A u then strips
            # the reachable part of the candidate u; whatever u - z remains
            # carries a small image and certifies a near-kernel vector.
            r = q - op.matvec(z)
            rn = float(np.linalg.norm(r))
            if rn > 0.0:
                u = r / rn
                z2, _ = spla.lgmres(op, op.matvec(u), M=m, rtol=1e-10,
                                    atol=0.0, maxiter=50)
                w = u - z2
                wn = float(np.linalg.norm(w))
                if wn > 1e-2:
                    sigma = min(sigma,
                                float(np.linalg.norm(op.matvec(w))) / wn)
        q = z / zn
        new = float(np.linalg.norm(op.matvec(q)))
        if it >= 1 and abs(new - sigma) <= 1e-3 * sigma:
            sigma = min(sigma, new)
            break
        sigma = min(sigma, new)
        if threshold > 0.0 and sigma < 0.1 * threshold:
            break
    return KernelProbe(sigma, threshold, bool(sigma < threshold), it + 1)
