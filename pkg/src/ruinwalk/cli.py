"""Experiment driver: config-file based runner for the estimators and
approximation formulas, emitting versioned, machine-readable reports.

A run is one task described by a YAML config; outputs are written atomically
(temp file, then rename) as CSV (12 significant digits) or JSON, with the
report schema version embedded.  Exit codes: 0 success, 1 hard error,
2 completed with warnings (capped paths, low effective sample size).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from typing import Any, Callable, Optional

import numpy as np
import yaml

from . import approx as ap
from . import models as md
from . import montecarlo as mc
from .chain import estimate_renewal_measure, simulate_path
from .laws import Gaussian, PointMass, ShiftedExponential, TwoPoint
from .spectral import (FiniteModel, cumulants, lambda_derivatives,
                       solve_poisson, tail_root)

SCHEMA_VERSION = "ruinwalk-report-1"

TASKS = ("simulate", "moments", "ladder", "approx", "mc", "compare",
         "renewal", "tail", "rca-test")

LAW_KINDS = {"point", "gaussian", "exponential", "two_point"}


# ---------------------------------------------------------------------------
# config parsing and validation
# ---------------------------------------------------------------------------

class ConfigError(ValueError):
    """Invalid experiment config; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _parse_law(spec, where: str, errors: list):
    if not isinstance(spec, dict) or "kind" not in spec:
        errors.append(f"{where}: law must be a mapping with a 'kind' key")
        return None
    kind = spec.get("kind")
    try:
        if kind == "point":
            return PointMass(float(spec["value"]))
        if kind == "gaussian":
            return Gaussian(float(spec["mean"]), float(spec["sd"]))
        if kind == "exponential":
            return ShiftedExponential(float(spec["rate"]),
                                      float(spec.get("shift", 0.0)))
        if kind == "two_point":
            return TwoPoint(float(spec["v1"]), float(spec["p1"]),
                            float(spec["v2"]))
        errors.append(f"{where}: unknown law kind {kind!r} "
                      f"(valid: {sorted(LAW_KINDS)})")
    except KeyError as e:
        errors.append(f"{where}: law kind {kind!r} missing field {e.args[0]!r}")
    except (TypeError, ValueError) as e:
        errors.append(f"{where}: {e}")
    return None


def _build_model(cfg: dict, errors: list):
    spec = cfg.get("model")
    if not isinstance(spec, dict):
        errors.append("model: required mapping missing")
        return None
    mtype = spec.get("type")
    try:
        if mtype == "finite":
            P = np.asarray(spec.get("P", []), dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or P.size == 0:
                errors.append("model.P: must be a nonempty square matrix")
                return None
            for i, row in enumerate(P):
                if abs(row.sum() - 1.0) > 1e-9 or (row < 0).any():
                    errors.append(f"model.P: row {i} is not a probability "
                                  f"vector (sum {row.sum():.12g})")
            raw = spec.get("laws")
            K = P.shape[0]
            if not (isinstance(raw, list) and len(raw) == K
                    and all(isinstance(r, list) and len(r) == K for r in raw)):
                errors.append(f"model.laws: must be a {K}x{K} grid of laws")
                return None
            laws = [[_parse_law(raw[i][j], f"model.laws[{i}][{j}]", errors)
                     for j in range(K)] for i in range(K)]
            if errors:
                return None
            return FiniteModel(P, laws)
        if mtype == "iid":
            law = _parse_law(spec.get("law"), "model.law", errors)
            return None if law is None else md.iid_model(law)
        if mtype == "rca":
            return md.build_rca(float(spec.get("beta", 0.0)),
                                float(spec.get("sigma", 0.0)))
        if mtype == "matproduct":
            return _build_matproduct(spec, errors)
        errors.append(f"model.type: unknown type {mtype!r} "
                      "(valid: finite, iid, rca, matproduct)")
    except (TypeError, ValueError) as e:
        errors.append(f"model: {e}")
    return None


def _build_matproduct(spec: dict, errors: list):
    samp = spec.get("sampler")
    if not isinstance(samp, dict):
        errors.append("model.sampler: required mapping missing")
        return None
    stype = samp.get("type")
    if stype == "fixed":
        sampler = md.FixedListSampler(samp["matrices"], samp.get("probs"))
    elif stype == "gaussian":
        sampler = md.GaussianEnsembleSampler(int(samp["k"]),
                                             float(samp.get("scale", 1.0)))
    elif stype == "rotation_scaling":
        sampler = md.RotationScalingSampler(samp["diag"])
    else:
        errors.append(f"model.sampler.type: unknown type {stype!r} "
                      "(valid: fixed, gaussian, rotation_scaling)")
        return None
    return md.MatrixProductModel(
        sampler, u0=spec.get("u0"),
        singular_policy=spec.get("singular_policy", "fail"))


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ConfigError(["config root must be a mapping"])
    return cfg


def validate_config(path: str) -> list:
    """Full validation without execution; returns every violation found."""
    try:
        cfg = load_config(path)
    except ConfigError as e:
        return e.errors
    except (OSError, yaml.YAMLError) as e:
        return [f"config unreadable: {e}"]
    errors: list = []
    task = cfg.get("task")
    if task not in TASKS:
        errors.append(f"task: unknown task {task!r} (valid: {', '.join(TASKS)})")
    _build_model(cfg, errors)
    params = cfg.get("params", {})
    if params is not None and not isinstance(params, dict):
        errors.append("params: must be a mapping")
    for key in ("seed", "workers"):
        v = cfg.get(key)
        if v is not None and (not isinstance(v, int) or v < 0):
            errors.append(f"{key}: must be a nonnegative integer, got {v!r}")
    fmt = cfg.get("format", "csv")
    if fmt not in ("csv", "json"):
        errors.append(f"format: must be csv or json, got {fmt!r}")
    return errors


# ---------------------------------------------------------------------------
# report writing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".report-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(path: str, task: str, rows: list, fmt: str) -> None:
    """Write rows (list of dicts with a shared key order) atomically."""
    if fmt == "json":
        doc = {"schema": SCHEMA_VERSION, "task": task, "rows": rows}
        _atomic_write(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")
        return
    cols = ["schema"] + list(rows[0].keys()) if rows else ["schema"]
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join([SCHEMA_VERSION] + [_fmt(row[c]) for c in cols[1:]]))
    _atomic_write(path, "\n".join(lines) + "\n")


def validate_report(doc: dict) -> list:
    """Check a parsed JSON report against the versioned schema; returns
    violations."""
    errs = []
    if doc.get("schema") != SCHEMA_VERSION:
        errs.append(f"schema: expected {SCHEMA_VERSION!r}, got {doc.get('schema')!r}")
    if doc.get("task") not in TASKS:
        errs.append(f"task: unknown task {doc.get('task')!r}")
    rows = doc.get("rows")
    if not isinstance(rows, list):
        errs.append("rows: must be a list")
        return errs
    keys = None
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            errs.append(f"rows[{i}]: must be a mapping")
            continue
        if keys is None:
            keys = list(row.keys())
        elif list(row.keys()) != keys:
            errs.append(f"rows[{i}]: column set differs from rows[0]")
    return errs


# ---------------------------------------------------------------------------
# task runners
# ---------------------------------------------------------------------------

def _require(params: dict, task: str, *names):
    missing = [n for n in names if params.get(n) is None]
    if missing:
        raise ConfigError([f"params: task {task!r} requires {n!r}"
                           for n in missing])
    return [params[n] for n in names]


def _task_simulate(model, params, seed, workers, warnings):
    (n,) = _require(params, "simulate", "n")
    traj = simulate_path(model, params.get("x0"), int(n), seed)
    return [{"step": k, "state": str(traj.states[k]),
             "sum": float(traj.sums[k]), "seed": seed}
            for k in range(len(traj) + 1)]


def _task_moments(model, params, seed, workers, warnings):
    if not isinstance(model, FiniteModel):
        raise ConfigError(["task moments requires a finite model"])
    cs = cumulants(model, truncation=int(params.get("truncation", 500)))
    d, err = lambda_derivatives(model)
    return [{"mu": cs.mu, "sigma2": cs.sigma2, "kappa": cs.kappa,
             "kappa_nu": cs.kappa_nu, "truncation": cs.truncation,
             "lambda_d1": d[0], "lambda_d2": d[1], "lambda_d3": d[2],
             "lambda_d1_err": err[0], "lambda_d2_err": err[1],
             "lambda_d3_err": err[2]}]


def _task_ladder(model, params, seed, workers, warnings):
    (count,) = _require(params, "ladder", "count")
    stats = mc.mc_ladder_moments(
        model, count=int(count), seed=seed,
        burn_in=int(params.get("burn_in", 1000)),
        step_cap=int(params.get("step_cap", 10 ** 8)))
    if not stats.reliable:
        warnings.append(f"ladder: {stats.capped_count} capped epochs")
    return [{"count": stats.count, "mean_s": stats.mean_s, "se_s": stats.se_s,
             "mean_s2": stats.mean_s2, "se_s2": stats.se_s2,
             "mean_s3": stats.mean_s3, "se_s3": stats.se_s3,
             "rho_plus": stats.rho_plus, "capped": stats.capped_count,
             "reliable": stats.reliable, "seed": seed}]


def _approx_value(formula: str, params: dict) -> dict:
    """Evaluate one closed-form value; returns it with its input constants."""
    rho = float(params.get("rho_plus", 0.0))
    kappa = float(params.get("kappa", 0.0))
    if formula == "bridge":
        p = ap.ZeroDriftParams(float(params["b"]), float(params["s"]),
                               float(params["m"]), rho, kappa)
        val = ap.bridge_crossing_approx(p)
        delta, rf = 0.0, 1.0
    elif formula == "joint":
        p = ap.ZeroDriftParams(float(params["b"]), float(params["c"]),
                               float(params["m"]), rho, kappa)
        val = ap.joint_ruin_approx(p)
        delta, rf = 0.0, 1.0
    elif formula == "corrected":
        delta = float(params.get("delta_gap", 0.0))
        rf = float(params.get("r_factor", 1.0))
        p = ap.CorrectedParams(float(params["b"]), float(params["c"]),
                               float(params["m"]), delta, rho, kappa,
                               rf, int(params.get("j", 0)))
        val = ap.corrected_joint_approx(p)
    else:
        raise ConfigError([f"params.formula: unknown formula {formula!r} "
                           "(valid: bridge, joint, corrected)"])
    return {"approx_value": val, "rho_plus": rho, "kappa": kappa,
            "delta_gap": delta, "r_factor": rf}


def _task_approx(model, params, seed, workers, warnings):
    (formula,) = _require(params, "approx", "formula")
    row = _approx_value(formula, params)
    row["formula"] = formula
    return [row]


def _task_mc(model, params, seed, workers, warnings):
    b, m, reps = _require(params, "mc", "b", "m", "reps")
    c = params.get("c")
    alpha = params.get("alpha")
    if alpha is not None:
        e1, e2 = mc.mc_importance_sampled(
            model, float(alpha), float(b), int(m), int(reps), seed,
            c=None if c is None else float(c), workers=workers)
        if e1.effective_sample_size is not None \
                and e1.effective_sample_size < 0.01 * int(reps):
            warnings.append(
                f"mc: effective sample size {e1.effective_sample_size:.3g} "
                f"below 1% of reps")
    else:
        e1, e2 = mc.mc_first_passage(
            model, params.get("x0", "stationary"), float(b), int(m),
            int(reps), seed, c=None if c is None else float(c),
            workers=workers)
    row = {"b": float(b), "c": float("nan") if c is None else float(c),
           "m": int(m), "reps": int(reps), "seed": seed,
           "p_tau": e1.value, "se_tau": e1.std_error,
           "p_joint": float("nan") if e2 is None else e2.value,
           "se_joint": float("nan") if e2 is None else e2.std_error,
           "alpha": float("nan") if alpha is None else float(alpha),
           "ess": (float("nan") if e1.effective_sample_size is None
                   else e1.effective_sample_size)}
    return [row]


def _task_compare(model, params, seed, workers, warnings):
    """Per-horizon comparison of the MC estimate against a closed form.

    Emits one row per m with the error scaled by sqrt(m), the quantity the
    limit theory sends to zero."""
    (formula, m_grid, reps) = _require(params, "compare", "formula",
                                       "m_grid", "reps")
    rows = []
    for mi, m in enumerate(m_grid):
        m = int(m)
        p = dict(params)
        p["m"] = m
        for key in ("b", "c", "s"):
            scale_key = f"{key}_of_m"
            if scale_key in params:
                p[key] = float(params[scale_key]) * math.sqrt(m)
        arow = _approx_value(formula, p)
        sub_seed = seed + mi
        if formula == "bridge":
            est = mc.mc_bridge_conditional(model, float(p["b"]), float(p["s"]),
                                           m, int(reps), sub_seed,
                                           workers=workers)
            mc_value, mc_se = est.value, est.std_error
        else:
            _, e2 = mc.mc_first_passage(model, params.get("x0", "stationary"),
                                        float(p["b"]), m, int(reps), sub_seed,
                                        c=float(p["c"]), workers=workers)
            mc_value, mc_se = e2.value, e2.std_error
        err = abs(mc_value - arow["approx_value"])
        rows.append({"m": m, "mc_value": mc_value, "mc_se": mc_se,
                     "approx_value": arow["approx_value"], "abs_err": err,
                     "err_times_sqrt_m": err * math.sqrt(m),
                     "rho_plus": arow["rho_plus"], "kappa": arow["kappa"],
                     "delta_gap": arow["delta_gap"],
                     "r_factor": arow["r_factor"], "seed": sub_seed})
    return rows


def _task_renewal(model, params, seed, workers, warnings):
    s, h, reps = _require(params, "renewal", "s", "h", "reps")
    target = params.get("states")          # list of chain states in A
    if target is None:
        pred = lambda st: np.ones(np.asarray(st).shape[0], dtype=bool)
    else:
        tset = np.asarray(target, dtype=np.int64)
        pred = lambda st: np.isin(np.asarray(st), tset)
    est = estimate_renewal_measure(model, params.get("x0"), float(s), float(h),
                                   pred, int(reps), seed)
    if est.capped_paths:
        warnings.append(f"renewal: {est.capped_paths} capped paths")
    row = {"s": est.s, "h": est.h, "u_hat": est.u_hat,
           "std_error": est.std_error, "reps": est.reps,
           "capped": est.capped_paths, "seed": seed}
    if isinstance(model, FiniteModel):
        pi_a = float(model.pi.sum()) if target is None else \
            float(model.pi[np.asarray(target, dtype=np.int64)].sum())
        row["limit_value"] = float(h) * pi_a / model.drift
    return [row]


def _task_tail(model, params, seed, workers, warnings):
    levels, reps = _require(params, "tail", "levels", "reps")
    curve = mc.mc_max_tail(model, [float(x) for x in levels], int(reps), seed,
                           workers=workers)
    rows = [{"level": float(B), "probability": float(p), "std_error": float(se),
             "slope": curve.slope, "seed": seed + i}
            for i, (B, p, se) in enumerate(
                zip(curve.levels, curve.probabilities, curve.std_errors))]
    if isinstance(model, FiniteModel):
        root = tail_root(model)
        for row in rows:
            row["tail_root"] = root
    return rows


def _task_rca_test(model, params, seed, workers, warnings):
    mu0, mu1, lam, m, reps = _require(params, "rca-test", "mu0", "mu1",
                                      "lambda", "m", "reps")
    if not isinstance(model, md.RcaModel):
        raise ConfigError(["task rca-test requires an rca model"])
    spec = md.RcaTestSpec(float(mu0), float(mu1), float(lam), int(m),
                          params.get("sign_convention", "as_printed"))
    res = md.rca_truncated_test(model, spec, int(reps), seed, workers=workers)
    return [{"mu0": spec.mu0, "mu1": spec.mu1, "lambda": spec.lambda_threshold,
             "m": spec.m, "reps": res.reps, "probability": res.probability,
             "std_error": res.std_error, "approx_value": res.approx_value,
             "seed": seed}]


_RUNNERS: dict = {
    "simulate": _task_simulate,
    "moments": _task_moments,
    "ladder": _task_ladder,
    "approx": _task_approx,
    "mc": _task_mc,
    "compare": _task_compare,
    "renewal": _task_renewal,
    "tail": _task_tail,
    "rca-test": _task_rca_test,
}


def _render_figures(task: str, rows: list, out_path: str) -> list:
    """Optional plots for the curve-producing tasks, written next to the
    report; returns the files created."""
    if task not in ("compare", "tail") or not rows:
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base, _ = os.path.splitext(out_path)
    fig, axis = plt.subplots(figsize=(6, 4))
    if task == "compare":
        ms = [r["m"] for r in rows]
        axis.errorbar(ms, [r["mc_value"] for r in rows],
                      yerr=[r["mc_se"] for r in rows], marker="o",
                      label="Monte Carlo")
        axis.plot(ms, [r["approx_value"] for r in rows], marker="s",
                  label="closed form")
        axis.set_xscale("log")
        axis.set_xlabel("horizon m")
        axis.set_ylabel("probability")
    else:
        axis.loglog([r["level"] for r in rows],
                    [max(r["probability"], 1e-300) for r in rows], marker="o",
                    label=f"slope {rows[0]['slope']:.3f}")
        axis.set_xlabel("level B")
        axis.set_ylabel("tail probability")
    axis.legend()
    fig.tight_layout()
    path = base + ".png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def run_experiment(config_path: str, overrides: Optional[dict] = None,
                   figures: bool = False) -> int:
    """Run one experiment config; returns the process exit code."""
    overrides = overrides or {}
    errors = validate_config(config_path)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    cfg = load_config(config_path)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    task = cfg["task"]
    params = dict(cfg.get("params") or {})
    for k in ("reps",):
        if overrides.get(k) is not None:
            params[k] = overrides[k]
    seed = int(cfg.get("seed", 0))
    workers = int(cfg.get("workers", 1))
    out = cfg.get("out", "report.csv")
    fmt = cfg.get("format", "csv")
    model = _build_model(cfg, [])
    warnings: list = []
    try:
        rows = _RUNNERS[task](model, params, seed, workers, warnings)
    except ConfigError as e:
        for msg in e.errors:
            print(f"error: {msg}", file=sys.stderr)
        return 1
    write_report(out, task, rows, fmt)
    if figures:
        for p in _render_figures(task, rows, out):
            print(f"figure: {p}")
    print(f"report: {out} ({len(rows)} rows)")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 2 if warnings else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ruinwalk",
        description="First-passage probabilities of Markov random walks: "
                    "Monte Carlo estimators vs. closed-form approximations.")
    parser.add_argument("--config", required=True, help="experiment config (YAML)")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--reps", type=int, help="override replication count")
    parser.add_argument("--workers", type=int, help="override worker count")
    parser.add_argument("--out", help="override output path")
    parser.add_argument("--format", choices=("csv", "json"),
                        help="override output format")
    parser.add_argument("--validate-only", action="store_true",
                        help="validate the config and exit")
    parser.add_argument("--figures", action="store_true",
                        help="also render plots for curve tasks")
    args = parser.parse_args(argv)

    if args.validate_only:
        errors = validate_config(args.config)
        if errors:
            for e in errors:
                print(f"error: {e}", file=sys.stderr)
            return 1
        print("ok")
        return 0
    overrides = {"seed": args.seed, "reps": args.reps, "workers": args.workers,
                 "out": args.out, "format": args.format}
    try:
        return run_experiment(args.config, overrides, figures=args.figures)
    except (OSError, ValueError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
