"""Explicit sub/supersolution pairs and their discrete certificates.

Every inequality is checked on the grid and recorded as a
:class:`BoundCertificate`. Pointwise orderings use the consistency slack
``10*h``. Differential inequalities are tested in weak form against each
nonnegative hat function phi_i and divided by ``m_i = int phi_i`` so the
margin reads as a strong-form density. Constants that the analysis leaves
unspecified are fitted from the computed fields and then validated at a
second value of lambda.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .expr import as_expr, eval_on_grid, range_on_grid
from .grid import Field, Grid, write_csv
from .plap import (
    BoundCertificate,
    PlapProblem,
    flag_certificate,
    SolverConfig,
    Source,
    min_margin_certificate,
    residual_vector,
    solve_dirichlet,
)

log = logging.getLogger(__name__)

__all__ = [
    "Bracket",
    "BoundCertificate",
    "BracketError",
    "zhang_w",
    "solve_singular_scalar",
    "lemma_L2_check",
    "sigma_bar_lower_bound",
    "cooperative_bracket",
    "competitive_bracket",
    "tune_lambda",
]


class BracketError(RuntimeError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


def combine(name, parts, **details):
    """One certificate from several; the margin is the worst slack-adjusted margin."""
    worst = min(parts, key=lambda c: c.margin + c.slack)
    details["parts"] = [c.to_dict() for c in parts]
    cert = BoundCertificate(name, worst.margin + worst.slack, worst.location, 0.0, details)
    cert.parts = list(parts)
    return cert


@dataclass
class Bracket:
    mode: str
    u_low: Field
    v_low: Field
    u_high: Field
    v_high: Field
    lam: float
    sigma: float
    delta: float
    sigma_bar: float | None = None
    certificates: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    aux: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.satisfied for c in self.certificates)

    def failed(self):
        return [c.name for c in self.certificates if not c.satisfied]

    def certificate(self, name):
        for c in self.certificates:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_csv(self, path):
        write_csv(
            path,
            self.u_low.grid,
            {"u_low": self.u_low.values, "v_low": self.v_low.values,
             "u_high": self.u_high.values, "v_high": self.v_high.values},
        )

    def summary(self):
        return {
            "mode": self.mode,
            "lambda": self.lam,
            "sigma": self.sigma,
            "sigma_bar": self.sigma_bar,
            "delta": self.delta,
            "passed": self.passed,
            "constants": {k: float(v) for k, v in sorted(self.constants.items())},
            "certificates": [c.to_dict() for c in self.certificates],
        }


# -- scalar building blocks ---------------------------------------------------


def _p_minus(grid, p):
    if isinstance(p, Field):
        return float(np.asarray(p.values)[grid.inside].min())
    return range_on_grid(as_expr(p), grid, probe=False).inf


def zhang_w(grid: Grid, p, delta: float) -> Field:
    """Piecewise subsolution: d near the boundary, a smooth cap of height above delta.

    w = d for d < delta, and for d >= delta
    w = delta + int_delta^min(d, 2 delta) ((2 delta - t)/delta)^k dt,  k = 2/(p^- - 1),
    which is constant beyond 2 delta.
    """
    pm = _p_minus(grid, p)
    if pm <= 1.0:
        raise ValueError(f"p^- = {pm:.6g} must exceed 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    if delta > 0.25 * grid.dist.values.max():
        log.warning("delta %.4g exceeds a quarter of the largest distance", delta)
    k = 2.0 / (pm - 1.0)
    d = grid.dist.values
    s = np.clip(d, delta, 2.0 * delta)
    cap = delta + delta / (k + 1.0) * (1.0 - ((2.0 * delta - s) / delta) ** (k + 1.0))
    return Field(grid, np.where(d < delta, d, cap))


def _ratio(u, grid):
    """u/d on interior nodes, 1 elsewhere (boundary loads are never used)."""
    d = grid.dist.values
    out = np.ones(grid.size)
    m = grid.interior
    out[m] = np.asarray(u)[m] / d[m]
    return out


def _pow(base, expo):
    with np.errstate(all="ignore"):
        return np.power(base, expo)


def _sum_expr(*exprs):
    return as_expr("+".join(f"({as_expr(e).source})" for e in exprs))


def solve_singular_scalar(grid, p, gamma, lam, cfg=None, delta=0.05, context=None, tol=1e-8, max_outer=300):
    """Solve -Delta_p u = lam u^gamma, u = 0 on the boundary, with -1 < gamma < 0.

    Floored fixed-point iteration u_{k+1} = S(lam max(u_k, w)^gamma) from
    u_0 = w, where w = zhang_w. Returns ``(u, certificate, info)``.

    The certificate combines the lower bound min(delta, d) <= u (slack 10h)
    and the growth bound max u <= 1.1 C lam^(1/(p^- - 1)). C is fitted at the
    first lambda seen through ``context`` and reused afterwards.
    """
    cfg = cfg or SolverConfig()
    gam = as_expr(gamma)
    gr = range_on_grid(gam, grid, probe=False)
    if not (gr.inf > -1.0 and gr.sup < 0.0):
        raise ValueError(f"singular exponent must lie in (-1, 0), got [{gr.inf:.4g}, {gr.sup:.4g}]")
    base = PlapProblem(grid, p)
    pm = float(base.p_nodal[grid.inside].min())
    gam_nodal = eval_on_grid(gam, grid).values
    w = zhang_w(grid, p if isinstance(p, Field) else as_expr(p), delta).values
    u = w.copy()
    changes = []
    converged = False
    solves = []
    for _ in range(max_outer):
        floor = np.maximum(u, w)
        factor = lam * _pow(_ratio(floor, grid), gam_nodal)
        new, rep = solve_dirichlet(base.replace([Source(factor, gam)]), cfg, init=u)
        solves.append(rep.converged)
        ch = float(np.abs(new.values - u).max())
        changes.append(ch)
        u = new.values
        if ch < tol:
            converged = True
            break
    if not converged:
        log.warning("singular scalar iteration: sup change %.3e after %d sweeps", changes[-1], len(changes))
    uf = Field(grid, u)
    h = grid.h
    d = grid.dist.values
    slack = 10.0 * h
    lower = min_margin_certificate("lower", u - np.minimum(delta, d), grid.interior, slack)
    floor_cert = min_margin_certificate("floor", u - w, grid.interior, slack)
    expo = 1.0 / (pm - 1.0)
    umax = float(u.max())
    if context is not None and "C" in context:
        C = context["C"]
    else:
        C = umax / lam**expo
        if context is not None:
            context["C"] = C
            context["lambda_fit"] = lam
    bound = 1.1 * C * lam**expo
    upper = BoundCertificate("upper", bound - umax, int(np.argmax(u)), 0.0, {"C": C, "bound": bound})
    conv = flag_certificate("converged", converged and all(solves))
    cert = combine("EQU1", [lower, upper, floor_cert, conv], lam=lam, C=C, sweeps=len(changes))
    info = {"changes": changes, "converged": converged, "C": C, "p_minus": pm, "w": Field(grid, w)}
    return uf, cert, info


def sigma_bar_lower_bound(p_minus, q_minus, alpha2_plus, beta1_plus) -> float:
    """max{(p^- - 1)/(p^- - 1 - alpha2^+), (q^- - 1)/(q^- - 1 - beta1^+)}."""
    if not alpha2_plus < p_minus - 1:
        raise ValueError(f"(h1) fails: alpha2^+ = {alpha2_plus:.6g} must be < p^- - 1 = {p_minus - 1:.6g}")
    if not beta1_plus < q_minus - 1:
        raise ValueError(f"(h1) fails: beta1^+ = {beta1_plus:.6g} must be < q^- - 1 = {q_minus - 1:.6g}")
    return max((p_minus - 1) / (p_minus - 1 - alpha2_plus), (q_minus - 1) / (q_minus - 1 - beta1_plus))


# -- stability of the solution under a strip perturbation -------------------


def _as_sources(grid, h, region="all", delta=0.0):
    """Accepts a number/expression, a (factor, exponent) pair, or a list of Sources."""
    if isinstance(h, (list, tuple)) and h and isinstance(h[0], Source):
        return [Source(s.factor, s.exponent, region, delta) for s in h]
    if isinstance(h, tuple):
        fac, expo = h
    else:
        fac, expo = h, None
    vals = fac.values if isinstance(fac, Field) else eval_on_grid(as_expr(fac), grid).values
    return [Source(vals, expo, region, delta)]


def lemma_L2_check(grid, p, h, h_tilde, eps, cfg=None, eps_range=None, bisect_steps=30):
    """Certify u_eps >= u/2, where u_eps uses h_tilde instead of h on the strip d < eps.

    If ``eps_range=(lo, hi)`` is given, also bisect for the largest passing eps;
    it is reported in ``details["eps_star"]``.
    """
    cfg = cfg or SolverConfig()
    base_src = _as_sources(grid, h)
    for s in base_src:
        f = np.asarray(s.factor)[grid.interior]
        if np.any(f < 0) or not np.any(f > 0):
            raise ValueError("strip perturbation check needs h >= 0 and h not identically 0")
    prob = PlapProblem(grid, p, sources=base_src)
    u, _ = solve_dirichlet(prob, cfg)
    slack = 10.0 * grid.h

    def check(e):
        src = _as_sources(grid, h, "bulk", e) + _as_sources(grid, h_tilde, "strip", e)
        ue, _ = solve_dirichlet(prob.replace(src), cfg, init=u)
        return min_margin_certificate("lemma_L2", ue.values - 0.5 * u.values, grid.interior, slack, eps=e), ue

    cert, ue = check(eps)
    cert.fields = (u, ue)
    if eps_range is not None:
        lo, hi = eps_range
        if not check(lo)[0].satisfied:
            cert.details["eps_star"] = None
        elif check(hi)[0].satisfied:
            cert.details["eps_star"] = hi
        else:
            for _ in range(bisect_steps):
                mid = 0.5 * (lo + hi)
                if check(mid)[0].satisfied:
                    lo = mid
                else:
                    hi = mid
                if hi - lo < 0.25 * grid.h:
                    break
            cert.details["eps_star"] = lo
    return cert


# -- weak-form differential inequalities ---------------------------------------


def _weak_check(name, prob0: PlapProblem, u, sources, sense):
    """``sense='sub'``: <-Delta_p u, phi_i> <= <rhs, phi_i>; ``'super'``: >=."""
    grid = prob0.grid
    F = residual_vector(prob0.replace(), u)
    R = prob0.replace(sources).load
    m = grid.hat_mass
    mask = grid.interior & (m > 0)
    dens = np.zeros(grid.size)
    dens[mask] = (R[mask] - F[mask]) / m[mask]
    if sense == "super":
        dens = -dens
    return min_margin_certificate(name, dens, mask, 10.0 * grid.h, sense=sense)


def _product_sources(grid, lam, a_field, a_expr, b_field, b_expr, singular):
    """Load ``lam a^alpha b^beta``; singular fields are split as (a/d)^alpha d^alpha."""
    an = eval_on_grid(a_expr, grid).values
    bn = eval_on_grid(b_expr, grid).values
    a = np.asarray(a_field)
    b = np.asarray(b_field)
    if singular:
        fac = lam * _pow(np.maximum(_ratio(a, grid), 1e-300), an) * _pow(np.maximum(_ratio(b, grid), 1e-300), bn)
        return [Source(np.where(grid.interior, fac, 0.0), _sum_expr(a_expr, b_expr))]
    fac = lam * _pow(np.maximum(a, 1e-300), an) * _pow(np.maximum(b, 1e-300), bn)
    return [Source(np.where(grid.interior, fac, 0.0))]


def _split_sources(grid, bulk_scale, w, expo, strip_sources, delta):
    """lam^s w^expo off the strip (as (w/d)^expo d^expo) plus the given strip sources."""
    en = eval_on_grid(expo, grid).values
    fac = bulk_scale * _pow(_ratio(w, grid), en)
    return [Source(np.where(grid.interior, fac, 0.0), expo, "bulk", delta)] + strip_sources


def _growth_certs(name, w, wcert, lam_eff, pm, context, key, p, gamma, cfg, delta):
    """Lower and growth certificates for w solving -Delta_p w = lam_eff w^gamma.

    The lower bound and convergence come from the solve; the growth constant is
    fitted at the first lambda of the run and checked at the current and a doubled one.
    """
    ctx = context.setdefault(key, {})
    grid = w.grid
    expo = 1.0 / (pm - 1.0)
    umax = float(np.max(w.values))
    if "C" not in ctx:
        ctx["C"] = umax / lam_eff**expo
        ctx["lam"] = lam_eff
        w2, _, _ = solve_singular_scalar(grid, p, gamma, 2.0 * lam_eff, cfg, delta)
        ctx["probe"] = float(np.max(w2.values))
        ctx["probe_lam"] = 2.0 * lam_eff
    C = ctx["C"]
    parts = [
        BoundCertificate("upper", 1.1 * C * lam_eff**expo - umax, int(np.argmax(w.values)), 0.0, {"C": C}),
        BoundCertificate(
            "upper_probe", 1.1 * C * ctx["probe_lam"] ** expo - ctx["probe"], -1, 0.0, {"lambda": ctx["probe_lam"]}
        ),
    ]
    parts += [c for c in wcert.parts if c.name in ("lower", "floor", "converged")]
    return combine(name, parts, C=C)


# -- cooperative regime ------------------------------------------------------


def cooperative_bracket(spec, grid: Grid, cfg=None, lam=None, context=None) -> Bracket:
    """Sub/supersolution pair for the cooperative system at parameter lam."""
    from .system import check_structure, resolve_sigma_bar

    cfg = cfg or SolverConfig()
    context = {} if context is None else context
    lam = float(spec.lam if lam is None else lam)
    report = check_structure(spec, grid)
    if report.mode != "cooperative":
        raise ValueError(f"cooperative bracket requested but structure is {report.mode}")
    report.raise_for_failures(("h3", "h1"))
    sig, delta = spec.sigma, spec.delta
    if not 0 < sig < 1:
        raise ValueError(f"cooperative construction needs sigma in (0, 1), got {sig}")
    sbar = resolve_sigma_bar(spec, grid)
    a1, a2, b1, b2 = spec.alpha1, spec.alpha2, spec.beta1, spec.beta2
    ls = lam**sig
    slack = 10.0 * grid.h
    pm = _p_minus(grid, spec.p)
    qm = _p_minus(grid, spec.q)

    w1, w1cert, _ = solve_singular_scalar(grid, spec.p, a1, ls, cfg, delta)
    w2, w2cert, _ = solve_singular_scalar(grid, spec.q, b2, ls, cfg, delta)
    P = PlapProblem(grid, spec.p)
    Q = PlapProblem(grid, spec.q)

    def strip_neg(w, expo):
        en = eval_on_grid(expo, grid).values
        fac = -_pow(_ratio(w.values, grid), en)
        return [Source(np.where(grid.interior, fac, 0.0), expo, "strip", delta)]

    ul, _ = solve_dirichlet(P.replace(_split_sources(grid, ls, w1.values, a1, strip_neg(w1, a1), delta)), cfg)
    vl, _ = solve_dirichlet(Q.replace(_split_sources(grid, ls, w2.values, b2, strip_neg(w2, b2), delta)), cfg)

    big, idx = grid.padded(spec.pad_frac)

    def supersol(expo_field, level):
        ub, _ = solve_dirichlet(PlapProblem(big, expo_field, rhs=level), cfg)
        return Field(grid, ub.values[idx])

    uh = supersol(spec.p, lam**sbar)
    vh = supersol(spec.q, lam**sbar)

    certs = []
    certs.append(_growth_certs("66", w1, w1cert, ls, pm, context, "w1", spec.p, a1, cfg, delta))
    certs.append(_growth_certs("67", w2, w2cert, ls, qm, context, "w2", spec.q, b2, cfg, delta))
    inner = grid.interior
    certs.append(combine("31", [
        min_margin_certificate("lower", ul.values - 0.5 * w1.values, inner, slack),
        min_margin_certificate("upper", w1.values - ul.values, inner, slack),
    ]))
    certs.append(combine("31*", [
        min_margin_certificate("lower", vl.values - 0.5 * w2.values, inner, slack),
        min_margin_certificate("upper", w2.values - vl.values, inner, slack),
    ]))
    certs.append(min_margin_certificate("positivity", np.minimum(ul.values, vl.values), inner, 0.0))

    # supersolution bounds: c0 and c2 fitted here, validated at 2 lam
    lo_uv = np.minimum(uh.values, vh.values)
    c0 = float(lo_uv.min()) / delta
    e_u = sbar / (pm - 1.0)
    e_v = sbar / (qm - 1.0)
    c2 = float(uh.values.max()) / lam**e_u
    c2p = float(vh.values.max()) / lam**e_v
    uh2 = supersol(spec.p, (2 * lam) ** sbar)
    vh2 = supersol(spec.q, (2 * lam) ** sbar)
    certs.append(combine("2111", [
        BoundCertificate("c0_positive", c0, int(np.argmin(lo_uv)), 0.0, {"c0": c0}),
        min_margin_certificate("lower_2lambda", np.minimum(uh2.values, vh2.values) - c0 * delta,
                               grid.inside, 0.0),
        BoundCertificate("upper_u_2lambda", 1.1 * c2 * (2 * lam) ** e_u - uh2.values.max(), -1, 0.0),
        BoundCertificate("upper_v_2lambda", 1.1 * c2p * (2 * lam) ** e_v - vh2.values.max(), -1, 0.0),
    ], c0=c0, c2=c2, c2_prime=c2p))
    certs.append(combine("EQ1", [
        min_margin_certificate("u", uh.values - ul.values, grid.inside, slack),
        min_margin_certificate("v", vh.values - vl.values, grid.inside, slack),
    ]))
    # differential inequalities: the worst admissible partner is the one that makes each side hardest
    certs.append(_weak_check("L3_sub_u", P, ul, _product_sources(grid, lam, ul.values, a1, vl.values, b1, True), "sub"))
    certs.append(_weak_check("L3_sub_v", Q, vl, _product_sources(grid, lam, ul.values, a2, vl.values, b2, True), "sub"))
    certs.append(_weak_check("L3_super_u", P, uh, _product_sources(grid, lam, uh.values, a1, vh.values, b1, False), "super"))
    certs.append(_weak_check("L3_super_v", Q, vh, _product_sources(grid, lam, uh.values, a2, vh.values, b2, False), "super"))
    return Bracket(
        "cooperative", ul, vl, uh, vh, lam, sig, delta, sbar, certs,
        constants={"c0": c0, "c2": c2, "c2_prime": c2p,
                   "C1": context["w1"]["C"], "C2": context["w2"]["C"]},
        aux={"w1": w1, "w2": w2, "structure": report},
    )


# -- competitive regime ------------------------------------------------------


def fit_theta(u, grid, delta):
    """Slope of log u against log d over strip nodes."""
    d = grid.dist.values
    m = grid.interior & (d < delta) & (np.asarray(u) > 0)
    if m.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(d[m]), np.log(np.asarray(u)[m]), 1)[0])


def competitive_bracket(spec, grid: Grid, cfg=None, lam=None, context=None) -> Bracket:
    from .system import check_structure

    cfg = cfg or SolverConfig()
    context = {} if context is None else context
    lam = float(spec.lam if lam is None else lam)
    report = check_structure(spec, grid)
    if report.mode != "competitive":
        raise ValueError(f"competitive bracket requested but structure is {report.mode}")
    report.raise_for_failures(("h4", "h2", "h4**"))
    sig, delta = spec.sigma, spec.delta
    if not sig > 1:
        raise ValueError(f"competitive construction needs sigma > 1, got {sig}")
    a1, a2, b1, b2 = spec.alpha1, spec.alpha2, spec.beta1, spec.beta2
    ls = lam**sig
    slack = 10.0 * grid.h
    pm = _p_minus(grid, spec.p)
    qm = _p_minus(grid, spec.q)
    P = PlapProblem(grid, spec.p)
    Q = PlapProblem(grid, spec.q)

    w1, w1cert, _ = solve_singular_scalar(grid, spec.p, a1, ls, cfg, delta)
    w2, w2cert, _ = solve_singular_scalar(grid, spec.q, b2, ls, cfg, delta)
    ones = np.where(grid.interior, 1.0, 0.0)
    u1, _ = solve_dirichlet(P.replace(_split_sources(
        grid, ls, w1.values, a1, [Source(ls * ones, _sum_expr(a1, b1), "strip", delta)], delta)), cfg)
    v1, _ = solve_dirichlet(Q.replace(_split_sources(
        grid, ls, w2.values, b2, [Source(ls * ones, _sum_expr(a2, b2), "strip", delta)], delta)), cfg)
    pm_src = [Source(ones, None, "bulk", delta), Source(-ones, None, "strip", delta)]
    u0, _ = solve_dirichlet(P.replace(pm_src), cfg)
    v0, _ = solve_dirichlet(Q.replace(pm_src), cfg)

    inner = grid.interior
    d = grid.dist.values
    certs = []
    certs.append(_growth_certs("66", w1, w1cert, ls, pm, context, "w1", spec.p, a1, cfg, delta))
    certs.append(_growth_certs("67", w2, w2cert, ls, qm, context, "w2", spec.q, b2, cfg, delta))
    certs.append(combine("81", [
        min_margin_certificate("u1", u1.values - 0.5 * w1.values, grid.inside, slack),
        min_margin_certificate("v1", v1.values - 0.5 * w2.values, grid.inside, slack),
    ]))
    md = np.where(inner, np.minimum(delta, d), 1.0)
    r_u = np.where(inner, u0.values / md, np.inf)
    r_v = np.where(inner, v0.values / md, np.inf)
    c3, c3p = float(r_u.min()), float(r_v.min())
    c4, c4p = float(u0.values.max()), float(v0.values.max())
    certs.append(combine("84", [
        BoundCertificate("c3_positive", c3, int(np.argmin(r_u)), 0.0, {"c3": c3}),
        BoundCertificate("c3_prime_positive", c3p, int(np.argmin(r_v)), 0.0, {"c3_prime": c3p}),
        min_margin_certificate("lower_u0", u0.values - c3 * np.minimum(delta, d), inner, slack),
        min_margin_certificate("lower_v0", v0.values - c3p * np.minimum(delta, d), inner, slack),
    ], c3=c3, c3_prime=c3p, c4=c4, c4_prime=c4p))
    certs.append(combine("ordering", [
        min_margin_certificate("u", u1.values - u0.values, grid.inside, slack),
        min_margin_certificate("v", v1.values - v0.values, grid.inside, slack),
    ]))
    th1 = fit_theta(u1.values, grid, delta)
    th2 = fit_theta(v1.values, grid, delta)
    certs.append(combine("82_theta", [
        BoundCertificate("theta1", min(th1 - 0.8, 1.0 - th1) if np.isfinite(th1) else -math.inf, -1, 0.0),
        BoundCertificate("theta2", min(th2 - 0.8, 1.0 - th2) if np.isfinite(th2) else -math.inf, -1, 0.0),
    ], theta1=th1, theta2=th2))
    certs.append(_weak_check("P1_36_u", P, u0, _product_sources(grid, lam, u0.values, a1, v0.values, b1, True), "sub"))
    certs.append(_weak_check("P1_36_v", Q, v0, _product_sources(grid, lam, u0.values, a2, v0.values, b2, True), "sub"))
    certs.append(_weak_check("P1_36*_u", P, u1, _product_sources(grid, lam, u1.values, a1, v1.values, b1, True), "super"))
    certs.append(_weak_check("P1_36*_v", Q, v1, _product_sources(grid, lam, u1.values, a2, v1.values, b2, True), "super"))
    return Bracket(
        "competitive", u0, v0, u1, v1, lam, sig, delta, None, certs,
        constants={"c3": c3, "c3_prime": c3p, "c4": c4, "c4_prime": c4p, "theta1": th1, "theta2": th2,
                   "C1": context["w1"]["C"], "C2": context["w2"]["C"]},
        aux={"w1": w1, "w2": w2, "structure": report},
    )


def tune_lambda(builder, spec, grid, cfg=None, lambda0=1.0, max_doublings=30):
    """Double lambda from lambda0 until every certificate passes."""
    if not lambda0 > 0:
        raise ValueError("lambda0 must be positive")
    context = {}
    lam = float(lambda0)
    history = []
    br = None
    for _ in range(max_doublings + 1):
        br = builder(spec, grid, cfg, lam=lam, context=context)
        history.append((lam, br.failed()))
        log.info("lambda=%.6g failed=%s", lam, br.failed())
        if br.passed:
            br.aux["lambda_history"] = history
            return lam, br
        lam *= 2.0
    counts = {}
    for _, names in history:
        for n in names:
            counts[n] = counts.get(n, 0) + 1
    worst = max(counts, key=counts.get)
    raise BracketError(f"no passing lambda within {max_doublings} doublings; persistently violated: {worst}", br)
