"""The coupled system, its structural hypotheses, the truncated operators T and Picard iteration.

    -Delta_p u = lam u^alpha1 v^beta1,   -Delta_q v = lam u^alpha2 v^beta2,   u, v > 0,   u = v = 0 on the boundary.

T truncates its arguments into a certified bracket, freezes the right-hand
sides, and solves two decoupled scalar problems. In the competitive regime a
monotone zeroth-order term rho z2 max{d^gamma1, z1^(p-1), u^(p-1)} is added to
the left and rho z2 max{d^gamma1, z1^(p-1)} to the right; the two cancel at a
fixed point.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .brackets import Bracket, _pow, _product_sources, _ratio, sigma_bar_lower_bound
from .expr import ExprField, RangeSummary, as_expr, eval_on_grid, range_on_grid
from .grid import Field, Grid
from .plap import (
    BoundCertificate,
    PlapProblem,
    Reaction,
    SolverConfig,
    Source,
    flag_certificate,
    json_float,
    min_margin_certificate,
    solve_dirichlet,
    weak_residual,
)

log = logging.getLogger(__name__)


class StructureError(ValueError):
    """The exponents violate a gating hypothesis; ``hypothesis`` names it."""

    def __init__(self, message, hypothesis=None, report=None):
        super().__init__(message)
        self.hypothesis = hypothesis
        self.report = report


@dataclass
class ProblemSpec:
    p: ExprField
    q: ExprField
    alpha1: ExprField
    alpha2: ExprField
    beta1: ExprField
    beta2: ExprField
    lam: float | None = None
    N: int = 2
    mode: str = "cooperative"
    sigma: float = 0.5
    sigma_bar: float | None = None
    delta: float = 0.05
    rho: float | None = None
    pad_frac: float = 0.25
    gamma1: ExprField | None = None
    gamma2: ExprField | None = None
    alt_hypothesis: bool = False

    def __post_init__(self):
        for name in ("p", "q", "alpha1", "alpha2", "beta1", "beta2"):
            setattr(self, name, as_expr(getattr(self, name)))
        for name in ("gamma1", "gamma2"):
            if getattr(self, name) is not None:
                setattr(self, name, as_expr(getattr(self, name)))
        if self.mode not in ("cooperative", "competitive"):
            raise ValueError(f"mode must be cooperative or competitive, got {self.mode!r}")
        if int(self.N) < 1:
            raise ValueError("N must be a positive integer")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def exponents(self):
        return {"p": self.p, "q": self.q, "alpha1": self.alpha1, "alpha2": self.alpha2,
                "beta1": self.beta1, "beta2": self.beta2}


@dataclass
class HypothesisCheck:
    name: str
    satisfied: bool
    margin: float
    gating: bool = True
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "satisfied": bool(self.satisfied), "margin": json_float(self.margin),
                "gating": self.gating, "note": self.note}


@dataclass
class StructureReport:
    mode: str
    checks: list
    ranges: dict
    limits: dict = field(default_factory=dict)

    def failures(self, names=None, gating_only=True):
        out = []
        for c in self.checks:
            if c.satisfied or (gating_only and not c.gating):
                continue
            if names is None or c.name in names:
                out.append(c)
        return out

    def raise_for_failures(self, names=None):
        bad = self.failures(names)
        if bad:
            names_txt = ", ".join(f"({c.name})" for c in bad)
            raise StructureError(f"hypothesis {names_txt} violated: {bad[0].note}", bad[0].name, self)

    @property
    def passed(self):
        return not self.failures()

    def to_dict(self):
        return {
            "mode": self.mode,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "ranges": {k: v.to_dict() for k, v in sorted(self.ranges.items())},
            "limits": self.limits,
        }


def _chk(name, margin, note, gating=True):
    return HypothesisCheck(name, bool(margin > 0), float(margin), gating, note)


def _strip_limit(expr, grid, N, delta):
    """N * expr sampled on the boundary strip; the closest-to-boundary value estimates the limit."""
    vals = eval_on_grid(expr, grid).values
    d = grid.dist.values
    m = grid.interior & (d < delta)
    if not m.any():
        m = grid.interior
    idx = np.flatnonzero(m)
    k = idx[np.argmin(d[idx])]
    est = float(N * vals[k])
    lo, hi = float(N * vals[idx].min()), float(N * vals[idx].max())
    return {"estimate": est, "strip_min": lo, "strip_max": hi, "inside_(-1,0)": bool(-1 < lo and hi < 0)}


def check_structure(spec: ProblemSpec, grid: Grid) -> StructureReport:
    """Evaluate the structural hypotheses on the grid and detect the regime."""
    R = {k: range_on_grid(e, grid) for k, e in spec.exponents().items()}
    N = int(spec.N)
    pm, pp, qm, qp = R["p"].inf, R["p"].sup, R["q"].inf, R["q"].sup
    a1, a2, b1, b2 = R["alpha1"], R["alpha2"], R["beta1"], R["beta2"]
    checks = [
        _chk("33_lower", min(pm, qm) - 1.0, f"need 1 < p^-, q^-; got p^-={pm:.4g}, q^-={qm:.4g}"),
        # the upper bound p^+ < N only enters the function-space theory; it is
        # reported but does not gate the desk-scale runs
        _chk("33_upper", N - max(pp, qp), f"p^+={pp:.4g}, q^+={qp:.4g} vs N={N}", gating=False),
    ]
    coop = min(a2.inf, b1.inf)
    comp = -max(a2.sup, b1.sup)
    if coop > 0:
        mode = "cooperative"
    elif comp > 0:
        mode = "competitive"
    else:
        mode = "mixed"
    checks.append(_chk("h3", coop, f"cooperative needs alpha2^-, beta1^- > 0; got {a2.inf:.4g}, {b1.inf:.4g}",
                       gating=spec.mode == "cooperative"))
    checks.append(_chk("h4", comp, f"competitive needs alpha2^+, beta1^+ < 0; got {a2.sup:.4g}, {b1.sup:.4g}",
                       gating=spec.mode == "competitive"))
    limits = {}
    if spec.mode == "cooperative":
        checks.append(_chk(
            "h1",
            min(pm - 1 - a2.sup, qm - 1 - b1.sup, -a1.sup, -b2.sup, a1.inf + 1.0 / N, b2.inf + 1.0 / N),
            f"alpha2^+={a2.sup:.4g} < p^- - 1={pm - 1:.4g}, beta1^+={b1.sup:.4g} < q^- - 1={qm - 1:.4g}, "
            f"alpha1, beta2 in (-1/N, 0) with alpha1=[{a1.inf:.4g}, {a1.sup:.4g}], beta2=[{b2.inf:.4g}, {b2.sup:.4g}]",
        ))
        limits["L1"] = _strip_limit(spec.alpha1, grid, N, spec.delta)
        limits["L2"] = _strip_limit(spec.beta2, grid, N, spec.delta)
    else:
        h2 = min(-a1.sup, a1.inf - max(-1.0 / N, -(pm - 1)), -b2.sup, b2.inf - max(-1.0 / N, -(qm - 1)))
        checks.append(_chk(
            "h2", h2,
            f"0 > alpha1^+ >= alpha1^- > max(-1/N, -(p^- - 1)) = {max(-1.0 / N, -(pm - 1)):.4g}, got "
            f"alpha1=[{a1.inf:.4g}, {a1.sup:.4g}], beta2=[{b2.inf:.4g}, {b2.sup:.4g}]",
        ))
        s1 = a1.inf + b1.inf + 1.0 / N
        s2 = a2.inf + b2.inf + 1.0 / N
        checks.append(_chk(
            "h4**", min(s1, s2),
            f"alpha1^- + beta1^- = {a1.inf + b1.inf:.4g} and alpha2^- + beta2^- = {a2.inf + b2.inf:.4g} must exceed -1/N",
        ))
        limits["L1"] = _strip_limit(as_expr(f"({spec.alpha1.source})+({spec.beta1.source})"), grid, N, spec.delta)
        limits["L2"] = _strip_limit(as_expr(f"({spec.alpha2.source})+({spec.beta2.source})"), grid, N, spec.delta)
    if mode != "mixed" and mode != spec.mode:
        checks.append(HypothesisCheck("mode", False, -1.0, True, f"spec says {spec.mode}, exponents are {mode}"))
    report = StructureReport(mode, checks, R, limits)
    if mode == "mixed":
        raise StructureError(
            "mixed structure: neither (h3) nor (h4) holds "
            f"(alpha2=[{a2.inf:.4g}, {a2.sup:.4g}], beta1=[{b1.inf:.4g}, {b1.sup:.4g}])",
            "h3" if spec.mode == "cooperative" else "h4",
            report,
        )
    return report


def resolve_sigma_bar(spec: ProblemSpec, grid: Grid) -> float:
    pm = range_on_grid(spec.p, grid, probe=False).inf
    qm = range_on_grid(spec.q, grid, probe=False).inf
    a2p = range_on_grid(spec.alpha2, grid, probe=False).sup
    b1p = range_on_grid(spec.beta1, grid, probe=False).sup
    lb = sigma_bar_lower_bound(pm, qm, a2p, b1p)
    if spec.sigma_bar is None:
        return lb + 0.25
    if not spec.sigma_bar > lb:
        raise StructureError(f"sigma_bar = {spec.sigma_bar} must exceed {lb:.6g}", "3")
    return float(spec.sigma_bar)


# -- truncation and operators ------------------------------------------------


def truncate(z, lower, upper) -> Field:
    """Pointwise clamp min(max(z, lower), upper)."""
    lo = np.asarray(lower.values if isinstance(lower, Field) else lower)
    hi = np.asarray(upper.values if isinstance(upper, Field) else upper)
    if np.any(lo > hi):
        k = int(np.argmax(lo - hi))
        raise ValueError(f"truncation bounds are not ordered at node {k}")
    zz = np.asarray(z.values if isinstance(z, Field) else z)
    grid = lower.grid if isinstance(lower, Field) else z.grid
    return Field(grid, np.minimum(np.maximum(zz, lo), hi))


def _problems(spec, grid):
    return PlapProblem(grid, spec.p), PlapProblem(grid, spec.q)


def _coupled_sources(spec, grid, lam, z1, z2):
    """Loads lam z1^alpha1 z2^beta1 and lam z1^alpha2 z2^beta2 in singular-safe form."""
    f = _product_sources(grid, lam, z1, spec.alpha1, z2, spec.beta1, True)
    g = _product_sources(grid, lam, z1, spec.alpha2, z2, spec.beta2, True)
    return f, g


def operator_T_coop(spec, grid, bracket: Bracket, z1, z2, cfg=None, init=None, _problems_cache=None):
    """Solve the decoupled problems with right-hand sides frozen at the truncated pair."""
    cfg = cfg or SolverConfig()
    P, Q = _problems_cache or _problems(spec, grid)
    t1 = truncate(z1, bracket.u_low, bracket.u_high).values
    t2 = truncate(z2, bracket.v_low, bracket.v_high).values
    f, g = _coupled_sources(spec, grid, bracket.lam, t1, t2)
    iu, iv = init if init is not None else (None, None)
    u, ru = solve_dirichlet(P.replace(f), cfg, init=iu)
    v, rv = solve_dirichlet(Q.replace(g), cfg, init=iv)
    if not (ru.converged and rv.converged):
        log.warning("operator T: inner solve did not converge (%s / %s)", ru.message, rv.message)
    return u, v


def default_gammas(spec, grid, bracket):
    """gamma1 = alpha1 + beta1 - theta2 (1 - beta1), gamma2 = alpha2 + beta2 - theta1 (1 - alpha2), clipped to [-1, 0)."""
    th1 = bracket.constants.get("theta1", 1.0)
    th2 = bracket.constants.get("theta2", 1.0)
    ev = lambda e: eval_on_grid(e, grid).values
    if spec.gamma1 is not None:
        g1 = ev(spec.gamma1)
    else:
        g1 = np.clip(ev(spec.alpha1) + ev(spec.beta1) - th2 * (1 - ev(spec.beta1)), -1.0, -1e-12)
    if spec.gamma2 is not None:
        g2 = ev(spec.gamma2)
    else:
        g2 = np.clip(ev(spec.alpha2) + ev(spec.beta2) - th1 * (1 - ev(spec.alpha2)), -1.0, -1e-12)
    return g1, g2, th1, th2


def check_gamma_conditions(spec, grid, bracket):
    """Require gamma1 + theta2 >= -1 and gamma2 + theta1 >= -1, or -1 <= gamma_i < 0 under the alternative hypothesis."""
    g1, g2, th1, th2 = default_gammas(spec, grid, bracket)
    m = grid.inside
    if spec.alt_hypothesis:
        margin = min(g1[m].min() + 1, -g1[m].max(), g2[m].min() + 1, -g2[m].max())
        name = "gamma_range"
    else:
        margin = min((g1 + th2)[m].min() + 1.0, (g2 + th1)[m].min() + 1.0)
        name = "c5**"
    return BoundCertificate(name, float(margin), -1, 0.0, {"theta1": th1, "theta2": th2})


def _aug_threshold(grid, gamma, z, p_nodal):
    d = grid.dist.values
    dd = np.where(grid.interior, d, 1.0)
    return np.maximum(_pow(dd, gamma), _pow(np.maximum(z, 0.0), p_nodal - 1.0))


def rho_estimate(spec, grid, bracket, details=None) -> float:
    """2 max |df/dv| / max{d^gamma1, u0^(p-1)} over interior nodes, and the symmetric g-part; the larger."""
    g1, g2, _, _ = default_gammas(spec, grid, bracket)
    cert = check_gamma_conditions(spec, grid, bracket)
    if not cert.satisfied:
        raise StructureError(
            f"condition {cert.name} fails (gamma1 + theta2 >= -1 needed), margin {cert.margin:.4g}", cert.name
        )
    lam = bracket.lam
    ev = lambda e: eval_on_grid(e, grid).values
    a1, a2, b1, b2 = ev(spec.alpha1), ev(spec.alpha2), ev(spec.beta1), ev(spec.beta2)
    P, Q = _problems(spec, grid)
    m = grid.interior
    u0 = bracket.u_low.values
    v0 = bracket.v_low.values
    # |df/dv| = lam |beta1| u^alpha1 v^(beta1-1) is largest at the lower end of the bracket;
    # boundary nodes (u0 = 0) are excluded
    rf = np.zeros(grid.n)
    rg = np.zeros(grid.n)
    rf[m] = lam * np.abs(b1[m]) * _pow(u0[m], a1[m]) * _pow(v0[m], b1[m] - 1.0)
    rg[m] = lam * np.abs(a2[m]) * _pow(u0[m], a2[m] - 1.0) * _pow(v0[m], b2[m])
    rf /= _aug_threshold(grid, g1, u0, P.p_nodal)
    rg /= _aug_threshold(grid, g2, v0, Q.p_nodal)
    if not (np.all(np.isfinite(rf[m])) and np.all(np.isfinite(rg[m]))):
        raise StructureError("derivative estimate is unbounded; gamma1 + theta2 >= -1 is violated", "c5**")
    rho_f = 2.0 * float(rf[m].max()) if m.any() else 0.0
    rho_g = 2.0 * float(rg[m].max()) if m.any() else 0.0
    if details is not None:
        details.update({"rho_f": rho_f, "rho_g": rho_g, "c5": cert.to_dict()})
    return max(rho_f, rho_g)


def operator_T_comp(spec, grid, bracket: Bracket, z1, z2, rho, cfg=None, init=None, _problems_cache=None):
    """Order-restoring augmented operator for the competitive regime."""
    cfg = cfg or SolverConfig()
    P, Q = _problems_cache or _problems(spec, grid)
    g1, g2, _, _ = default_gammas(spec, grid, bracket)
    t1 = truncate(z1, bracket.u_low, bracket.u_high).values
    t2 = truncate(z2, bracket.v_low, bracket.v_high).values
    f, g = _coupled_sources(spec, grid, bracket.lam, t1, t2)
    iu, iv = init if init is not None else (None, None)
    inner = grid.interior
    if rho > 0:
        A1 = _aug_threshold(grid, g1, t1, P.p_nodal)
        A2 = _aug_threshold(grid, g2, t2, Q.p_nodal)
        c1 = np.where(inner, rho * t2, 0.0)
        c2 = np.where(inner, rho * t1, 0.0)
        rx_u = Reaction(c1, A1, P.p_nodal)
        rx_v = Reaction(c2, A2, Q.p_nodal)
        f = f + [Source(c1 * A1)]
        g = g + [Source(c2 * A2)]
    else:
        rx_u = rx_v = None
    u, ru = solve_dirichlet(P.replace(f, rx_u), cfg, init=iu)
    v, rv = solve_dirichlet(Q.replace(g, rx_v), cfg, init=iv)
    if not (ru.converged and rv.converged):
        log.warning("operator T: inner solve did not converge (%s / %s)", ru.message, rv.message)
    return u, v


# -- outer iteration ---------------------------------------------------------


@dataclass
class FixedPointReport:
    converged: bool
    iterations: int
    sup_changes: list
    bracket_violations: int
    weak_residuals: tuple
    boundary_growth: tuple
    certificates: list = field(default_factory=list)
    rho: float | None = None
    dual_start_gap: float | None = None
    message: str = ""

    @property
    def passed(self):
        return self.converged and all(c.satisfied for c in self.certificates)

    def to_dict(self):
        return {
            "converged": self.converged,
            "passed": self.passed,
            "iterations": self.iterations,
            "final_sup_change": json_float(self.sup_changes[-1]) if self.sup_changes else None,
            "bracket_violations": self.bracket_violations,
            "weak_residuals": [json_float(r) for r in self.weak_residuals],
            "boundary_growth": {"c": json_float(self.boundary_growth[0]), "c_prime": json_float(self.boundary_growth[1])},
            "rho": None if self.rho is None else json_float(self.rho),
            "dual_start_gap": None if self.dual_start_gap is None else json_float(self.dual_start_gap),
            "certificates": [c.to_dict() for c in self.certificates],
            "message": self.message,
        }


def system_residuals(spec, grid, lam, u, v):
    """Weak residuals of both equations of the system at (u, v)."""
    P, Q = _problems(spec, grid)
    f, g = _coupled_sources(spec, grid, lam, np.asarray(u.values), np.asarray(v.values))
    return weak_residual(P.replace(f), u), weak_residual(Q.replace(g), v)


def boundary_growth(grid, u, delta):
    d = grid.dist.values
    m = grid.interior & (d < delta)
    if not m.any():
        return float("nan")
    return float((np.asarray(u)[m] / d[m]).min())


def _picard(T, start, max_iter, tol, plateau):
    u, v = start
    changes = []
    converged = False
    msg = ""
    for k in range(max_iter):
        un, vn = T(u, v, (u, v))
        ch = max(float(np.abs(un.values - u.values).max()), float(np.abs(vn.values - v.values).max()))
        changes.append(ch)
        u, v = un, vn
        if ch < tol:
            converged = True
            break
        if k >= plateau and changes[k] > 0.9 * changes[k - plateau]:
            msg = f"sup change plateaued at {ch:.3e} over {plateau} iterations"
            break
    else:
        msg = f"no convergence in {max_iter} iterations (last change {changes[-1]:.3e})"
    return u, v, changes, converged, msg


def fixed_point_solve(spec, grid, bracket: Bracket, cfg=None, max_iter=200, tol=1e-8, plateau=30,
                      dual_start=True, rho=None):
    """Picard iteration of T from the lower end of the bracket, followed by verification."""
    cfg = cfg or SolverConfig()
    if not bracket.passed:
        raise ValueError(f"bracket certificates failed: {bracket.failed()}")
    cache = _problems(spec, grid)
    if bracket.mode == "competitive":
        if rho is None:
            rho = spec.rho if spec.rho is not None else rho_estimate(spec, grid, bracket)
        T = lambda a, b, init: operator_T_comp(spec, grid, bracket, a, b, rho, cfg, init, cache)
    else:
        rho = None
        T = lambda a, b, init: operator_T_coop(spec, grid, bracket, a, b, cfg, init, cache)
    u, v, changes, converged, msg = _picard(T, (bracket.u_low, bracket.v_low), max_iter, tol, plateau)
    slack = 10.0 * grid.h
    inside = grid.inside
    cont = [
        min_margin_certificate("contain_u_low", u.values - bracket.u_low.values, inside, slack),
        min_margin_certificate("contain_u_high", bracket.u_high.values - u.values, inside, slack),
        min_margin_certificate("contain_v_low", v.values - bracket.v_low.values, inside, slack),
        min_margin_certificate("contain_v_high", bracket.v_high.values - v.values, inside, slack),
    ]
    violations = sum(int(np.sum((np.asarray(m) < -slack) & inside)) for m in (
        u.values - bracket.u_low.values, bracket.u_high.values - u.values,
        v.values - bracket.v_low.values, bracket.v_high.values - v.values))
    ru, rv = system_residuals(spec, grid, bracket.lam, u, v)
    cu = boundary_growth(grid, u.values, spec.delta)
    cv = boundary_growth(grid, v.values, spec.delta)
    certs = cont + [
        BoundCertificate("weak_residual_7", 1e-6 - max(ru, rv), -1, 0.0, {"u": ru, "v": rv}),
        min_margin_certificate("positivity", np.minimum(u.values, v.values), grid.interior, 0.0),
        BoundCertificate("boundary_growth", min(cu, cv) if np.isfinite(min(cu, cv)) else -math.inf, -1, 0.0,
                         {"c": cu, "c_prime": cv}),
        flag_certificate("converged", converged, iterations=len(changes)),
    ]
    gap = None
    if dual_start:
        u2, v2, _, conv2, _ = _picard(T, (bracket.u_high, bracket.v_high), max_iter, tol, plateau)
        gap = max(float(np.abs(u2.values - u.values).max()), float(np.abs(v2.values - v.values).max()))
        if gap > 1e-6:
            log.info("dual-start fixed points differ by %.3e; both are valid outputs", gap)
    report = FixedPointReport(converged, len(changes), changes, violations, (ru, rv), (cu, cv), certs, rho, gap, msg)
    return u, v, report


def random_ordered_pairs(bracket: Bracket, rng, count):
    """Pairs (z, z') inside the bracket with z <= z' componentwise, from smooth random blends."""
    grid = bracket.u_low.grid
    x = grid.x
    y = grid.y if grid.y is not None else 0.0

    def blend():
        k = rng.uniform(0.5, 8.0, size=3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        s = 0.0
        for j in range(3):
            s = s + np.sin(k[j] * x + (k[j] * y if grid.dim == 2 else 0.0) * (j - 1) + ph[j]) / (j + 1)
        return 1.0 / (1.0 + np.exp(-2.0 * s))

    out = []
    for _ in range(count):
        pair = []
        for lo, hi in ((bracket.u_low.values, bracket.u_high.values), (bracket.v_low.values, bracket.v_high.values)):
            z = lo + blend() * (hi - lo)
            zp = z + blend() * (hi - z)
            pair.append((Field(grid, z), Field(grid, zp)))
        (z1, z1p), (z2, z2p) = pair
        out.append(((z1, z2), (z1p, z2p)))
    return out
