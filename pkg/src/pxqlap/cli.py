"""Scenario runner.

    pxqlap run CONFIG [--out DIR] [--seed S] [--quiet]
    pxqlap refine CONFIG --levels K [--out DIR] [--quiet]

Exit status: 0 when every certificate passes, 1 when one fails, 2 for an
invalid configuration or a violated structural hypothesis.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, _accel
from .brackets import (
    BracketError,
    competitive_bracket,
    cooperative_bracket,
    lemma_L2_check,
    solve_singular_scalar,
    tune_lambda,
)
from .expr import ExprEvalError, ExprSyntaxError, as_expr, eval_on_grid
from .grid import Domain, DomainError, build_grid, write_csv
from .plap import PlapProblem, SolverConfig, Source, constant_p_profile, solve_dirichlet, weak_residual
from .system import (
    ProblemSpec,
    StructureError,
    check_structure,
    fixed_point_solve,
    operator_T_comp,
    operator_T_coop,
    random_ordered_pairs,
    rho_estimate,
)

SCHEMA_VERSION = 1
MODES = ("cooperative", "competitive", "scalar", "lemma-l2", "refine")
EXPONENTS = ("p", "q", "alpha1", "alpha2", "beta1", "beta2")

log = logging.getLogger("pxqlap")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    mode: str
    domain: Domain
    n: int
    source: dict
    exponents: dict = field(default_factory=dict)
    N: int = 2
    lam: float | None = None
    lambda0: float = 1.0
    sigma: float = 0.5
    sigma_bar: float | None = None
    delta: float = 0.05
    rho: float | None = None
    pad_frac: float = 0.25
    gamma1: str | None = None
    gamma2: str | None = None
    alt_hypothesis: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    order_pairs: int = 0
    scalar: dict = field(default_factory=dict)
    lemma_l2: dict = field(default_factory=dict)
    levels: int = 4

    def spec(self) -> ProblemSpec:
        return ProblemSpec(
            lam=self.lam, N=self.N, mode=self.mode, sigma=self.sigma, sigma_bar=self.sigma_bar,
            delta=self.delta, rho=self.rho, pad_frac=self.pad_frac, gamma1=self.gamma1, gamma2=self.gamma2,
            alt_hypothesis=self.alt_hypothesis, **self.exponents,
        )


def _auto(value, cast=float):
    if value is None or (isinstance(value, str) and value.strip().lower() == "auto"):
        return None
    return cast(value)


def _expr_text(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(f"{key}: expected a number or expression, got {value!r}")
    try:
        as_expr(value)
    except (ExprSyntaxError, ExprEvalError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return str(value)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw)


def parse_config(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {"mode", "domain", "n", "N", "exponents", "lambda", "lambda0", "sigma", "sigma_bar", "delta", "rho",
             "pad_frac", "gamma1", "gamma2", "alt_hypothesis", "solver", "seed", "order_pairs", "scalar",
             "lemma_l2", "levels"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    dom = raw.get("domain", {"kind": "interval", "bounds": [0, 1]})
    try:
        domain = Domain(dom["kind"], tuple(dom["bounds"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"domain needs 'kind' and 'bounds': {exc}") from exc
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        n = int(raw.get("n", 129))
        solver = SolverConfig(**(raw.get("solver") or {}))
        cfg = RunConfig(
            mode=mode, domain=domain, n=n, source=raw, N=int(raw.get("N", 2)),
            lam=_auto(raw.get("lambda")), lambda0=float(raw.get("lambda0", 1.0)),
            sigma=float(raw.get("sigma", 0.5)), sigma_bar=_auto(raw.get("sigma_bar")),
            delta=float(raw.get("delta", 0.05)), rho=_auto(raw.get("rho")),
            pad_frac=float(raw.get("pad_frac", 0.25)),
            gamma1=None if raw.get("gamma1") is None else _expr_text(raw["gamma1"], "gamma1"),
            gamma2=None if raw.get("gamma2") is None else _expr_text(raw["gamma2"], "gamma2"),
            alt_hypothesis=bool(raw.get("alt_hypothesis", False)), solver=solver,
            seed=int(raw.get("seed", 0)), order_pairs=int(raw.get("order_pairs", 0)),
            scalar=dict(raw.get("scalar") or {}), lemma_l2=dict(raw.get("lemma_l2") or {}),
            levels=int(raw.get("levels", 4)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config value: {exc}") from exc
    if n < 3:
        raise ConfigError("n must be at least 3")
    if mode in ("cooperative", "competitive"):
        ex = raw.get("exponents")
        if not isinstance(ex, dict) or set(ex) != set(EXPONENTS):
            raise ConfigError(f"exponents must define exactly {EXPONENTS}")
        cfg.exponents = {k: _expr_text(ex[k], k) for k in EXPONENTS}
        try:
            cfg.spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if mode in ("scalar", "refine"):
        sc = cfg.scalar
        if "p" not in sc:
            raise ConfigError("scalar section needs 'p'")
        for k in ("p", "rhs", "rhs_exponent", "gamma"):
            if sc.get(k) is not None:
                _expr_text(sc[k], f"scalar.{k}")
        if sc.get("gamma") is not None and sc.get("lambda") is None:
            raise ConfigError("scalar.gamma needs scalar.lambda")
    if mode == "lemma-l2":
        l2 = cfg.lemma_l2
        for k in ("p", "h", "h_tilde", "eps"):
            if k not in l2:
                raise ConfigError(f"lemma_l2 section needs {k!r}")
        for k in ("p", "h", "h_tilde"):
            _expr_text(l2[k], f"lemma_l2.{k}")
    return cfg


# -- JSON helpers ------------------------------------------------------------


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _clean(obj.to_dict())
    return str(obj)


def dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- pipelines ---------------------------------------------------------------


def _scalar_problem(grid, sc):
    p = sc["p"]
    rhs = sc.get("rhs", 1)
    expo = sc.get("rhs_exponent")
    fac = eval_on_grid(as_expr(rhs), grid).values
    src = [Source(np.where(grid.interior, fac, 0.0), None if expo is None else as_expr(expo))]
    return PlapProblem(grid, p, sources=src)


def _oracle(grid, sc):
    """Closed-form profile when the scalar case is constant p with unit load on an interval."""
    if grid.dim != 1 or sc.get("gamma") is not None or sc.get("rhs_exponent") is not None:
        return None
    p, rhs = as_expr(sc["p"]), as_expr(sc.get("rhs", 1))
    if not (p.is_constant and rhs.is_constant and rhs.constant_value() == 1.0):
        return None
    a, b = grid.domain.bounds
    pv = p.constant_value()
    return lambda x: constant_p_profile(pv, x, a, b)


def _solve_scalar(grid, cfg: RunConfig):
    sc = cfg.scalar
    if sc.get("gamma") is not None:
        u, cert, info = solve_singular_scalar(grid, sc["p"], sc["gamma"], float(sc["lambda"]), cfg.solver,
                                              float(sc.get("delta", cfg.delta)))
        return u, {"certificates": [cert], "sweeps": len(info["changes"]), "converged": info["converged"]}
    prob = _scalar_problem(grid, sc)
    u, rep = solve_dirichlet(prob, cfg.solver)
    res = weak_residual(prob, u)
    conv = rep.converged
    return u, {"solve": rep.to_dict(), "weak_residual": res, "converged": conv, "certificates": []}


def run_scalar(cfg, grid, out):
    u, info = _solve_scalar(grid, cfg)
    report = {"max_u": float(u.values.max()), "argmax": grid.describe_node(int(np.argmax(u.values)))}
    report.update({k: v for k, v in info.items() if k != "certificates"})
    report["certificates"] = [c.to_dict() for c in info["certificates"]]
    oracle = _oracle(grid, cfg.scalar)
    if oracle is not None:
        exact = oracle(grid.x)
        report["oracle"] = {"max_u_exact": float(exact.max()), "max_error": float(np.abs(u.values - exact).max())}
    write_csv(out / "fields" / "solution.csv", grid, {"u": u.values})
    ok = bool(info["converged"]) and all(c.satisfied for c in info["certificates"])
    failed = [c.name for c in info["certificates"] if not c.satisfied]
    if not info["converged"]:
        failed.append("converged")
    return report, ok, failed, []


def run_lemma_l2(cfg, grid, out):
    l2 = cfg.lemma_l2
    rng = l2.get("eps_range")
    cert = lemma_L2_check(grid, l2["p"], l2["h"], l2["h_tilde"], float(l2["eps"]), cfg.solver,
                          eps_range=None if rng is None else tuple(float(v) for v in rng))
    u, ue = cert.fields
    write_csv(out / "fields" / "lemma_l2.csv", grid, {"u": u.values, "u_eps": ue.values})
    report = {"lemma_L2": cert.to_dict(), "eps_star": cert.details.get("eps_star")}
    return report, cert.satisfied, [] if cert.satisfied else [cert.name], []


def _order_check(spec, grid, br, cfg, rho):
    rng = np.random.default_rng(cfg.seed)
    pairs = random_ordered_pairs(br, rng, cfg.order_pairs)
    slack = 10.0 * grid.h
    ok = 0
    worst = math.inf
    for z, zp in pairs:
        if br.mode == "competitive":
            a = operator_T_comp(spec, grid, br, *z, rho, cfg.solver)
            b = operator_T_comp(spec, grid, br, *zp, rho, cfg.solver)
        else:
            a = operator_T_coop(spec, grid, br, *z, cfg.solver)
            b = operator_T_coop(spec, grid, br, *zp, cfg.solver)
        m = min(float((b[0].values - a[0].values).min()), float((b[1].values - a[1].values).min()))
        worst = min(worst, m)
        ok += m >= -slack
    return {"pairs": len(pairs), "ordered": ok, "worst_margin": worst, "slack": slack, "passed": ok == len(pairs)}


def run_system(cfg, grid, out):
    spec = cfg.spec()
    structure = check_structure(spec, grid)
    gate = ("h3", "h1", "33_lower", "mode") if spec.mode == "cooperative" else ("h4", "h2", "h4**", "33_lower", "mode")
    structure.raise_for_failures(gate)
    builder = cooperative_bracket if spec.mode == "cooperative" else competitive_bracket
    if spec.lam is None:
        lam, br = tune_lambda(builder, spec, grid, cfg.solver, lambda0=cfg.lambda0)
    else:
        lam = spec.lam
        br = builder(spec, grid, cfg.solver, lam=lam)
    report = {
        "structure": structure.to_dict(),
        "lambda_star": lam,
        "lambda_history": [{"lambda": l, "failed": f} for l, f in br.aux.get("lambda_history", [(lam, br.failed())])],
        "bracket": br.summary(),
    }
    group = "lemma_L3" if spec.mode == "cooperative" else "proposition_P1"
    prefix = "L3_" if spec.mode == "cooperative" else "P1_"
    group_certs = {c.name: c.satisfied for c in br.certificates if c.name.startswith(prefix)}
    report[group] = {"all_pass": all(group_certs.values()), "certificates": group_certs}
    fields = {"u_low": br.u_low.values, "v_low": br.v_low.values,
              "u_high": br.u_high.values, "v_high": br.v_high.values}
    failed = br.failed()
    history = []
    if not br.passed:
        write_csv(out / "fields" / "bracket.csv", grid, fields)
        return report, False, failed, history
    rho = None
    if spec.mode == "competitive":
        details = {}
        rho = spec.rho if spec.rho is not None else rho_estimate(spec, grid, br, details)
        report["rho"] = {"value": rho, "estimate": details or None}
    u, v, fp = fixed_point_solve(spec, grid, br, cfg.solver, rho=rho)
    report["fixed_point"] = fp.to_dict()
    history = fp.sup_changes
    fields.update({"u": u.values, "v": v.values})
    write_csv(out / "fields" / "solution.csv", grid, fields)
    consts = dict(br.constants)
    consts.update({"c": fp.boundary_growth[0], "c_prime": fp.boundary_growth[1]})
    report["constants"] = {k: consts[k] for k in sorted(consts)}
    failed += [c.name for c in fp.certificates if not c.satisfied]
    if cfg.order_pairs > 0:
        op = _order_check(spec, grid, br, cfg, rho)
        report["order_preservation"] = op
        if not op["passed"]:
            failed.append("order_preservation")
    return report, not failed, failed, history


# -- refinement study ----------------------------------------------------------


def _sup_with_midpoints(grid, u, ref):
    """sup |u - ref| over nodes and (in 1D) cell midpoints; ``ref`` is a callable or fine nodal values."""
    x = grid.x
    if callable(ref):
        err = np.abs(u - ref(x)).max()
        if grid.dim == 1:
            xm = 0.5 * (x[1:] + x[:-1])
            err = max(err, np.abs(0.5 * (u[1:] + u[:-1]) - ref(xm)).max())
        return float(err)
    fine_nodes, fine_mid = ref
    err = np.abs(u - fine_nodes).max()
    if fine_mid is not None:
        err = max(err, np.abs(0.5 * (u[1:] + u[:-1]) - fine_mid).max())
    return float(err)


def refine_study(cfg: RunConfig, levels: int):
    if levels < 2:
        raise ConfigError("refine needs at least 2 levels")
    if not cfg.scalar:
        raise ConfigError("refinement studies run on the scalar section of a config")
    base = build_grid(cfg.domain, cfg.n)
    grids = [base] + [base.refined(2**k) for k in range(1, levels)]
    sols = []
    for g in grids:
        u, info = _solve_scalar(g, cfg)
        sols.append(u.values)
    oracle = _oracle(base, cfg.scalar)
    rows = []
    if oracle is not None:
        errs = [_sup_with_midpoints(g, u, oracle) for g, u in zip(grids, sols)]
        reference = "closed form"
    else:
        if base.dim != 1 and levels < 3:
            raise ConfigError("self-convergence needs at least 3 levels")
        fine = sols[-1]
        errs = []
        for k, (g, u) in enumerate(zip(grids[:-1], sols[:-1])):
            step = 2 ** (levels - 1 - k)
            nodes = fine[::step] if g.dim == 1 else fine.reshape(grids[-1].shape)[::step, ::step].ravel()
            mid = fine[step // 2::step] if g.dim == 1 else None
            errs.append(_sup_with_midpoints(g, u, (nodes, mid)))
        reference = "finest grid"
    orders = [math.log2(errs[k] / errs[k + 1]) if errs[k + 1] > 0 and errs[k] > 0 else math.inf
              for k in range(len(errs) - 1)]
    for k, e in enumerate(errs):
        rows.append({"n": grids[k].shape[0], "h": grids[k].h, "error": e,
                     "order": orders[k - 1] if k > 0 else None})
    monotone = all(errs[k + 1] < errs[k] for k in range(len(errs) - 1))
    threshold = 0.9 if oracle is not None else 1.0
    passed = monotone and bool(orders) and min(orders) >= threshold
    return {"reference": reference, "levels": levels, "table": rows, "orders": orders,
            "monotone": monotone, "order_threshold": threshold, "passed": passed}


# -- entry point -------------------------------------------------------------


def _write_outputs(out, report, history, meta):
    dump_json(out / "report.json", report)
    dump_json(out / "metadata.json", meta)
    with open(out / "iterations.csv", "w") as fh:
        fh.write("iteration,sup_change\n")
        for k, ch in enumerate(history, 1):
            fh.write(f"{k},{float(ch)!r}\n")


def _execute(args):
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    out = Path(args.out) if args.out else Path("pxqlap-out") / Path(args.config).stem
    (out / "fields").mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    history = []
    if args.command == "refine" or cfg.mode == "refine":
        levels = args.levels if getattr(args, "levels", None) is not None else cfg.levels
        body = {"refine": refine_study(cfg, int(levels))}
        ok = body["refine"]["passed"]
        failed = [] if ok else ["refine_order"]
        mode = "refine"
    else:
        grid = build_grid(cfg.domain, cfg.n)
        mode = cfg.mode
        runner = {"scalar": run_scalar, "lemma-l2": run_lemma_l2}.get(mode, run_system)
        body, ok, failed, history = runner(cfg, grid, out)
    report = {
        "schema_version": SCHEMA_VERSION,
        "mode": mode,
        "config": cfg.source,
        "seed": cfg.seed,
        "passed": bool(ok),
        "failed_certificates": failed,
    }
    report.update(body)
    meta = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "runtime_s": time.time() - t0,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba_kernels": _accel.HAVE_NUMBA,
        "config_path": os.path.abspath(args.config),
    }
    _write_outputs(out, report, history, meta)
    return report, out


def build_parser():
    ap = argparse.ArgumentParser(prog="pxqlap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "refine"):
        sp = sub.add_parser(name)
        sp.add_argument("config")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--quiet", action="store_true")
        if name == "run":
            sp.add_argument("--seed", type=int, default=None)
        else:
            sp.add_argument("--levels", type=int, default=None)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    say = (lambda *a: None) if args.quiet else (lambda *a: print(*a, file=sys.stderr))
    try:
        report, out = _execute(args)
    except StructureError as exc:
        print(f"error: hypothesis ({exc.hypothesis}) fails: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, DomainError, ExprSyntaxError, ExprEvalError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2
    except BracketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if report["passed"]:
        say(f"all certificates passed; report in {out / 'report.json'}")
        return 0
    print(f"certificate failure: {', '.join(report['failed_certificates'])}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
