"""Scalar Dirichlet problems for the p(x)-Laplacian by convex energy minimization.

The discrete energy is

    J(u) = sum_e |e| (|grad u|_e^2 + eps^2)^(p_e/2) / p_e - b.u + sum_i m_i c_i G_i(u_i)

with P1 elements, p frozen per element, a load vector ``b`` assembled by the
singular-aware quadrature of :mod:`pxqlap.grid`, and an optional monotone
zeroth-order reaction term. J is strictly convex, so damped Newton with an
Armijo line search converges globally.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import _accel
from .expr import ExprField, as_expr, eval_on_elements, eval_on_grid
from .grid import Field, Grid

log = logging.getLogger(__name__)


@dataclass
class BoundCertificate:
    """Outcome of one displayed inequality checked on the grid.

    ``margin`` is the worst signed slack (negative = violated) and the check
    passes when ``margin >= -slack``.
    """

    name: str
    margin: float
    location: int = -1
    slack: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return bool(self.margin >= -self.slack)

    def to_dict(self):
        return {
            "name": self.name,
            "satisfied": self.satisfied,
            "margin": json_float(self.margin),
            "location": int(self.location),
            "slack": float(self.slack),
            "details": self.details,
        }

    def __repr__(self):
        tag = "pass" if self.satisfied else "FAIL"
        return f"<{self.name}: {tag} margin={self.margin:.3e} slack={self.slack:.1e}>"


def json_float(x):
    """Finite floats pass through; inf and nan become strings so reports stay valid JSON."""
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def flag_certificate(name, ok, **details):
    """Pass/fail check without a numeric margin."""
    return BoundCertificate(name, math.inf if ok else -math.inf, -1, 0.0, details)


def min_margin_certificate(name, margin_values, mask, slack, **details):
    """Certificate for ``margin_values >= -slack`` on the nodes in ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return BoundCertificate(name, math.inf, -1, slack, dict(details, empty=True))
    vals = np.asarray(margin_values)[idx]
    k = int(np.argmin(vals))
    return BoundCertificate(name, float(vals[k]), int(idx[k]), slack, details)


# -- problem description -----------------------------------------------------


@dataclass(frozen=True)
class Source:
    """Load term ``factor(x) * d(x)**exponent`` restricted to a region.

    ``region`` is ``"all"``, ``"strip"`` (d < delta) or ``"bulk"`` (d >= delta).
    """

    factor: np.ndarray
    exponent: object = None
    region: str = "all"
    delta: float = 0.0


@dataclass(frozen=True)
class Reaction:
    """Monotone nodal term ``coef * max(thresh, u^(p-1))``, lumped with the hat masses.

    Its primitive is ``coef * G(u)`` with G(u) = thresh*u below
    m = thresh^(1/(p-1)) and thresh*m + (u^p - m^p)/p above.
    """

    coef: np.ndarray
    thresh: np.ndarray
    p: np.ndarray


def _nodal(grid, value):
    if isinstance(value, Field):
        return np.asarray(value.values, dtype=float)
    if isinstance(value, np.ndarray):
        return value.astype(float)
    return eval_on_grid(as_expr(value), grid).values


class PlapProblem:
    """-div((|grad u|^2+eps^2)^((p-2)/2) grad u) [+ reaction] = sum of sources, u = 0 on the boundary."""

    def __init__(self, grid: Grid, p, sources=None, rhs=None, reaction: Reaction | None = None):
        self.grid = grid
        if isinstance(p, Field):
            self.p_nodal = np.asarray(p.values)
            self.p_elem = self.p_nodal[grid.elements].mean(axis=1)
        else:
            pe = as_expr(p)
            self.p_nodal = eval_on_grid(pe, grid).values
            self.p_elem = eval_on_elements(pe, grid)
        pin = self.p_nodal[grid.inside]
        if min(pin.min(), self.p_elem.min()) <= 1.0 or not np.all(np.isfinite(self.p_elem)):
            raise ValueError(f"exponent must satisfy p > 1, got inf {min(pin.min(), self.p_elem.min()):.6g}")
        srcs = list(sources or [])
        if rhs is not None:
            srcs.append(Source(_nodal(grid, rhs)))
        self.sources = tuple(srcs)
        self.reaction = reaction

    @cached_property
    def load(self) -> np.ndarray:
        g = self.grid
        b = np.zeros(g.size)
        for s in self.sources:
            expo = None
            if s.exponent is not None:
                e = as_expr(s.exponent)
                expo = e.constant_value() if e.is_constant else eval_on_elements(e, g)
            W = g.weights(expo, s.region, s.delta)
            f = np.broadcast_to(np.asarray(s.factor, dtype=float), (g.size,))
            b += np.where(g.interior, f, 0.0) * W
        return b

    def replace(self, sources=None, reaction=None):
        """Same grid and exponent with new sources and reaction (p is not re-evaluated)."""
        out = PlapProblem.__new__(PlapProblem)
        out.grid = self.grid
        out.p_nodal = self.p_nodal
        out.p_elem = self.p_elem
        out.sources = tuple(sources or ())
        out.reaction = reaction
        return out


@dataclass(frozen=True)
class SolverConfig:
    eps_reg: float = 1e-8
    tol: float = 1e-10
    max_iter: int = 500
    damping: float = 0.5
    armijo: float = 1e-4
    use_numba: bool | None = None

    def __post_init__(self):
        if not (self.eps_reg > 0 and self.tol > 0 and self.max_iter > 0 and self.armijo > 0):
            raise ValueError("solver tolerances must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")


@dataclass
class SolveReport:
    iterations: int
    final_energy: float
    grad_sup: float
    weak_residual: float
    linf: float
    converged: bool
    fallback_steps: int = 0
    energy_decrements: list = field(default_factory=list)
    message: str = ""

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "final_energy": self.final_energy,
            "grad_sup": self.grad_sup,
            "weak_residual": self.weak_residual,
            "linf": self.linf,
            "converged": self.converged,
            "fallback_steps": self.fallback_steps,
            "message": self.message,
        }


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# -- discrete operators --------------------------------------------------------


def _reaction_terms(rx: Reaction, u):
    """Primitive G, derivative G' and curvature G'' of the reaction, per node."""
    A, p = rx.thresh, rx.p
    m = np.power(A, 1.0 / (p - 1.0))
    up = np.maximum(u, m)
    above = u > m
    G = np.where(above, A * m + (np.power(up, p) - np.power(m, p)) / p, A * u)
    dG = np.where(above, np.power(up, p - 1.0), A)
    d2G = np.where(above, (p - 1.0) * np.power(up, p - 2.0), 0.0)
    return rx.coef * G, rx.coef * dG, rx.coef * d2G


def _reaction_delta(rx: Reaction, u, du):
    """G(u + du) - G(u) per node, free of cancellation against G itself."""
    A, p = rx.thresh, rx.p
    m = np.power(A, 1.0 / (p - 1.0))
    v = u + du
    lin = A * (np.minimum(v, m) - np.minimum(u, m))
    a = np.maximum(u, m)
    b = np.maximum(v, m)
    # (b^p - a^p)/p with a, b >= m > 0
    powr = np.power(a, p) / p * np.expm1(p * np.log1p((b - a) / a))
    return rx.coef * (lin + powr)


class _Discretization:
    def __init__(self, prob: PlapProblem, cfg: SolverConfig):
        self.prob = prob
        self.cfg = cfg
        g = prob.grid
        self.grid = g
        self.free = np.flatnonzero(g.interior)
        self.area = g.element_measure
        self.B = g.grad_operator
        self.conn = g.elements
        self.mass = g.hat_mass
        # gradient tolerance is relative to the load so large singular loads do not sit below roundoff
        self.scale = max(1.0, float(np.abs(prob.load[self.free]).max()) if self.free.size else 1.0)

    def grads(self, u):
        return self.grid.gradients(u)

    def energy(self, u):
        g = self.grads(u)
        e, _, _ = _accel.flux_terms((g * g).sum(axis=1), self.prob.p_elem, self.cfg.eps_reg, self.cfg.use_numba)
        J = float(np.dot(self.area, e) - np.dot(self.prob.load, u))
        if self.prob.reaction is not None:
            G, _, _ = _reaction_terms(self.prob.reaction, u)
            J += float(np.dot(self.mass, G))
        return J

    def energy_change(self, u, du, t):
        """J(u + t du) - J(u) without cancellation against the absolute energy."""
        g = self.grads(u)
        dg = t * self.grads(du)
        gsq = (g * g).sum(axis=1)
        dgsq = (dg * (2.0 * g + dg)).sum(axis=1)
        de = _accel.energy_delta(gsq, gsq + dgsq, self.prob.p_elem, self.cfg.eps_reg, self.cfg.use_numba)
        dJ = float(np.dot(self.area, de) - t * np.dot(self.prob.load, du))
        if self.prob.reaction is not None:
            dJ += float(np.dot(self.mass, _reaction_delta(self.prob.reaction, u, t * du)))
        return dJ

    def gradient(self, u, with_hessian=False):
        g = self.grads(u)
        gsq = (g * g).sum(axis=1)
        _, a, b = _accel.flux_terms(gsq, self.prob.p_elem, self.cfg.eps_reg, self.cfg.use_numba)
        flux = (self.area * a)[:, None] * g  # (ne, dim)
        F = self.grid.scatter(np.einsum("ed,edk->ek", flux, self.B)) - self.prob.load
        diag_extra = None
        if self.prob.reaction is not None:
            _, dG, d2G = _reaction_terms(self.prob.reaction, u)
            F = F + self.mass * dG
            diag_extra = self.mass * d2G
        if not with_hessian:
            return F
        return F, (g, a, b, diag_extra)

    def hessian_solve(self, state, rhs_free):
        g, a, b, diag_extra = state
        grid = self.grid
        free = self.free
        if grid.dim == 1:
            k = self.area * (a + b * g[:, 0] ** 2) / grid.hx**2
            diag = k[:-1] + k[1:]
            if diag_extra is not None:
                diag = diag + diag_extra[free]
            off = -k[1:-1]
            return _accel.tridiag_solve(off, diag, off, rhs_free, self.cfg.use_numba)
        # H_e = |e| B^T (a I + b g g^T) B
        Bg = np.einsum("ed,edk->ek", g, self.B)
        Ke = np.einsum("edk,edl->ekl", self.B, self.B) * a[:, None, None]
        Ke += b[:, None, None] * Bg[:, :, None] * Bg[:, None, :]
        Ke *= self.area[:, None, None]
        rows = np.repeat(self.conn, 3, axis=1).ravel()
        cols = np.tile(self.conn, (1, 3)).ravel()
        H = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(grid.size, grid.size))
        if diag_extra is not None:
            H = H + sp.diags(diag_extra)
        H = H[free][:, free].tocsc()
        return spsolve(H, rhs_free)


def energy(prob: PlapProblem, u, cfg: SolverConfig | None = None) -> float:
    cfg = cfg or SolverConfig()
    u = np.asarray(u.values if isinstance(u, Field) else u, dtype=float)
    if np.any(u[prob.grid.boundary_mask] != 0):
        raise ValueError("energy is defined for fields vanishing on the boundary")
    return _Discretization(prob, cfg).energy(u)


def _linear_guess(disc: _Discretization):
    """Solution of the p = 2 problem with the same load."""
    g = disc.grid
    n_el = len(disc.conn)
    ones = np.ones(n_el)
    zero = np.zeros(n_el)
    state = (np.zeros((n_el, g.dim)), ones, zero, None)
    u = np.zeros(g.size)
    u[disc.free] = disc.hessian_solve(state, disc.prob.load[disc.free])
    return u


def solve_dirichlet(prob: PlapProblem, cfg: SolverConfig | None = None, init=None, raise_on_fail=False):
    """Minimize the regularized energy; returns ``(Field, SolveReport)``.

    For p < 2 the curvature (|g|^2+eps^2)^((p-2)/2) blows up where the
    gradient vanishes and Newton crawls, so eps is first lowered
    geometrically from the gradient scale of the initial guess.
    """
    cfg = cfg or SolverConfig()
    disc = _Discretization(prob, cfg)
    grid = prob.grid
    if init is None:
        u = _linear_guess(disc)
    else:
        u = np.array(init.values if isinstance(init, Field) else init, dtype=float)
    u[~grid.interior] = 0.0
    decrements = []
    if prob.p_elem.min() < 2.0:
        g = grid.gradients(u)
        eps = 0.1 * float(np.sqrt((g * g).sum(axis=1)).max())
        while eps > 10.0 * cfg.eps_reg:
            stage = SolverConfig(eps, max(cfg.tol, 1e-8), 50, cfg.damping, cfg.armijo, cfg.use_numba)
            u, _, _ = _newton(_Discretization(prob, stage), u, stage)
            eps *= 0.1
    u, report, _ = _newton(disc, u, cfg)
    if not report.converged:
        log.warning("solve_dirichlet: %s", report.message)
        if raise_on_fail:
            raise SolverError(report.message, report)
    return Field(grid, u), report


def _newton(disc, u, cfg):
    grid = disc.grid
    free = disc.free
    decrements = []
    fallbacks = 0
    converged = False
    message = ""
    it = 0
    for it in range(cfg.max_iter + 1):
        F, state = disc.gradient(u, with_hessian=True)
        Ff = F[free]
        gsup = float(np.abs(Ff).max()) if Ff.size else 0.0
        if gsup <= cfg.tol * disc.scale:
            converged = True
            break
        if it == cfg.max_iter:
            message = f"no convergence in {cfg.max_iter} iterations (grad sup {gsup:.3e})"
            break
        try:
            with np.errstate(all="raise"):
                step = -disc.hessian_solve(state, Ff)
            slope = float(np.dot(Ff, step))
            if not (np.all(np.isfinite(step)) and slope < 0):
                raise FloatingPointError
        except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError, ValueError):
            fallbacks += 1
            step = -Ff / max(np.abs(Ff).max(), 1e-300) * grid.h
            slope = float(np.dot(Ff, step))
        du = np.zeros(grid.size)
        du[free] = step
        t = 1.0
        accepted = False
        while t > 1e-14:
            dJ = disc.energy_change(u, du, t)
            if dJ <= cfg.armijo * t * slope:
                accepted = True
                break
            t *= cfg.damping
        if not accepted:
            # no representable decrease left: accept only if already at the roundoff floor
            converged = gsup <= 1e3 * cfg.tol * disc.scale
            message = f"line search stalled at iteration {it} (grad sup {gsup:.3e})"
            break
        decrements.append(dJ)
        u = u + t * du
    report = SolveReport(
        iterations=it,
        final_energy=disc.energy(u),
        grad_sup=gsup,
        weak_residual=float("nan"),
        linf=float(np.abs(u).max()),
        converged=converged,
        fallback_steps=fallbacks,
        energy_decrements=decrements,
        message=message,
    )
    return u, report, converged


# -- weak residuals -------------------------------------------------------------


def default_test_fields(grid: Grid, n_bumps=5, seed=0, coarsen=8):
    """Coarse hat functions (interpolated to the grid) plus smooth random bumps."""
    tests = []
    if grid.dim == 1:
        n = grid.shape[0]
        step = max(1, min(coarsen, (n - 1) // 4))
        centers = np.arange(step, n - 1, step)
        idx = np.arange(n)
        for c in centers:
            phi = np.maximum(0.0, 1.0 - np.abs(idx - c) / step)
            phi[grid.boundary_mask] = 0.0
            tests.append(phi)
    else:
        nx, ny = grid.shape
        step = max(1, min(coarsen, (min(nx, ny) - 1) // 4))
        i = np.tile(np.arange(nx), ny)
        j = np.repeat(np.arange(ny), nx)
        for ci in range(step, nx - 1, step):
            for cj in range(step, ny - 1, step):
                phi = np.maximum(0.0, 1.0 - np.abs(i - ci) / step) * np.maximum(0.0, 1.0 - np.abs(j - cj) / step)
                phi[grid.boundary_mask] = 0.0
                if phi.any():
                    tests.append(phi)
    rng = np.random.default_rng(seed)
    d = grid.dist.values
    dn = d / max(d.max(), 1e-300)
    for _ in range(n_bumps):
        k = rng.uniform(1.0, 6.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        y = grid.y if grid.y is not None else 0.0
        phi = dn * (1.5 + np.sin(k[0] * grid.x + k[1] * y + ph))
        phi[grid.boundary_mask] = 0.0
        tests.append(phi)
    return tests


def residual_vector(prob: PlapProblem, u, eps=1e-8) -> np.ndarray:
    """Nodal weak residual F_i = <-Delta_p u + reaction - h, phi_i> (free nodes only)."""
    u = np.asarray(u.values if isinstance(u, Field) else u, dtype=float)
    disc = _Discretization(prob, SolverConfig(eps_reg=eps))
    F = disc.gradient(u)
    F[~prob.grid.interior] = 0.0
    return F


def weak_residual(prob: PlapProblem, u, test_fields=None, eps=1e-8) -> float:
    """max over test fields phi of |<-Delta_p u - h, phi>| / (1 + sup|grad phi|)."""
    grid = prob.grid
    F = residual_vector(prob, u, eps)
    if test_fields is None:
        test_fields = default_test_fields(grid)
    worst = 0.0
    for phi in test_fields:
        phi = np.asarray(phi.values if isinstance(phi, Field) else phi, dtype=float)
        gphi = grid.gradients(phi)
        gs = float(np.sqrt((gphi * gphi).sum(axis=1)).max())
        worst = max(worst, abs(float(np.dot(F, phi))) / (1.0 + gs))
    return worst


def comparison_check(prob1: PlapProblem, prob2: PlapProblem, cfg: SolverConfig | None = None, name="comparison"):
    """Solve both problems and certify u1 <= u2 + 10 h pointwise."""
    if prob1.grid is not prob2.grid:
        raise ValueError("comparison needs both problems on the same grid")
    if not np.allclose(prob1.p_elem, prob2.p_elem):
        raise ValueError("comparison needs the same exponent p")
    u1, r1 = solve_dirichlet(prob1, cfg)
    u2, r2 = solve_dirichlet(prob2, cfg)
    g = prob1.grid
    cert = min_margin_certificate(
        name,
        u2.values - u1.values,
        g.interior,
        10.0 * g.h,
        converged=bool(r1.converged and r2.converged),
    )
    cert.fields = (u1, u2)
    return cert


# -- algebraic monotonicity inequalities -------------------------------------


def _duality_map(y, r):
    n = np.linalg.norm(y, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(n > 0, n ** (r - 2.0) * y, 0.0)
    return out


def vector_inequality(y1, y2, r):
    """Return ``(lhs, rhs)`` of the monotonicity inequality for |y|^(r-2) y.

    For 1 < r < 2:
        |y1-y2|^r <= 1/(r-1) [(|y1|^(r-2)y1 - |y2|^(r-2)y2).(y1-y2)]^(r/2) (|y1|^r+|y2|^r)^((2-r)/2)
    For r >= 2:
        |y1-y2|^r <= 2^r (|y1|^(r-2)y1 - |y2|^(r-2)y2).(y1-y2)
    Rows of ``y1``, ``y2`` are vectors; ``r`` broadcasts per row.
    """
    y1 = np.atleast_2d(np.asarray(y1, dtype=float))
    y2 = np.atleast_2d(np.asarray(y2, dtype=float))
    r = np.broadcast_to(np.asarray(r, dtype=float), (y1.shape[0],))
    rc = r[:, None]
    inner = ((_duality_map(y1, rc) - _duality_map(y2, rc)) * (y1 - y2)).sum(axis=1)
    lhs = np.linalg.norm(y1 - y2, axis=1) ** r
    n1 = np.linalg.norm(y1, axis=1)
    n2 = np.linalg.norm(y2, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sub = np.maximum(inner, 0.0) ** (r / 2) * (n1**r + n2**r) ** ((2 - r) / 2) / (r - 1)
        sup = 2.0**r * inner
    rhs = np.where(r < 2, sub, sup)
    return lhs, rhs


def constant_p_profile(p, x, a=0.0, b=1.0):
    """Exact solution of -(|u'|^(p-2) u')' = 1 on (a, b) with zero boundary values.

    u(x) = ((p-1)/p) ((L/2)^(p/(p-1)) - |c - x|^(p/(p-1))), c the midpoint.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    x = np.asarray(x, dtype=float)
    c, half = 0.5 * (a + b), 0.5 * (b - a)
    k = p / (p - 1.0)
    return (p - 1.0) / p * (half**k - np.abs(c - x) ** k)
