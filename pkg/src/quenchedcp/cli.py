"""Command line harness: ``quenchedcp <command> --config FILE``.

Exit codes: 0 success, 1 validation failure, 2 runtime or numeric failure,
3 refusal because the system's periods are not certified bounded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import BlockPlan, JointSample, approximation_gap
from .config import ConfigError, ExperimentConfig, load_config
from .cpd import CpdParams, cpd_pmf_recursive, total_variation
from .hitting import (
    EmpiricalLaw,
    ExperimentPlan,
    annealed_entry_ratio,
    empirical_quenched_law,
    fixed_word,
    interval_count_matrix,
    pooled_noise_bound,
    simulate_hits,
)
from .maps import validate_family
from .targets import (
    AlphaLambda,
    UncertifiedError,
    alpha_from_theory,
    classify_target,
    mean_cluster_identity_check,
    verify_M_Gamma,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_UNCERTIFIED = 0, 1, 2, 3


class ValidationFailure(Exception):
    pass


# -- helpers -------------------------------------------------------------------


def _fmt(x) -> str:
    """Deterministic text for numbers in CSV and JSON."""
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _provenance(cfg: ExperimentConfig, command: str) -> dict:
    return {"tool": "quenchedcp", "version": __version__, "command": command,
            "config_sha256": cfg.digest, "seed": cfg.seed}


def _write_csv(path: Path, header: list[str], rows: list[list], prov: dict) -> None:
    buf = io.StringIO()
    for k, v in prov.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    path.write_text(buf.getvalue())


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")


def _plan(cfg: ExperimentConfig, threads: int) -> ExperimentPlan:
    s = cfg.simulation
    return ExperimentPlan(
        family=cfg.family, target=cfg.target, noise=cfg.noise, t=s["t"], rho0=s["rho0"], gamma=s["gamma"],
        schedule_length=s["schedule_length"], samples=s["samples"], L=s["L"], q=s["q"], seed=s["seed"],
        omega_mode=s["omega_mode"], n_max=s["n_max"], ell_max=cfg.analysis["ell_max"], threads=threads,
    )


def _require_valid(cfg: ExperimentConfig) -> None:
    if cfg.problems:
        raise ValidationFailure("\n".join(cfg.problems))


def _certificate(cfg: ExperimentConfig):
    a = cfg.analysis
    return verify_M_Gamma(cfg.family, cfg.target, a["period_horizon"], a["word_horizon"], a["enumeration_cap"])


def _theory(cfg: ExperimentConfig):
    """Certificate, classification and exact limit parameters; raises `UncertifiedError`."""
    cert = _certificate(cfg)
    if not cert.bounded:
        raise UncertifiedError(cert.reason or "M_Gamma is not certified")
    a = cfg.analysis
    result = alpha_from_theory(cfg.family, cfg.target, cfg.noise, a["ell_max"], method=a["method"], cert=cert,
                               cap=a["enumeration_cap"])
    return cert, classify_target(cfg.family, cfg.target, cert), result


def _polya_aeppli_D(res: AlphaLambda):
    """``D`` when ``alpha_l = (D - 1) D^-l`` holds on every computed term."""
    al = res.alpha
    if not res.exact or len(al) < 2 or al[1] == 0:
        return None
    r = al[1] / al[0]
    if all(al[i + 1] == r * al[i] for i in range(len(al) - 1)) and al[0] == 1 - r:
        return 1 / r
    return None


def _predicted(cfg: ExperimentConfig, res: AlphaLambda, scale: float, n_max: int) -> np.ndarray:
    law = res.multiplicity()
    return cpd_pmf_recursive(CpdParams(scale * float(res.extremal_index), law), n_max)


def _numbers(xs, exact: bool):
    return [str(x) for x in xs] if exact else None


# -- commands ---------------------------------------------------------------------


def cmd_validate(cfg: ExperimentConfig, args) -> int:
    """Check the config: family, noise, target and schedule."""
    report = validate_family(cfg.family)
    print(f"maps: {cfg.family.u}  branches: {list(report.branch_counts)}")
    if report.ok:
        print(f"d_min: {report.d_min}")
        print(f"lebesgue_preserving: {report.lebesgue_preserving}")
    if cfg.problems:
        print("INVALID")
        for p in cfg.problems:
            print(f"  - {p}")
        return EXIT_INVALID
    cert = _certificate(cfg)
    if cert.certified and cert.m_gamma is not None and cert.m_gamma != float("inf"):
        verdict = f"M_Gamma={cert.m_gamma} certified (closure of {cert.closure_size} points)"
        if not cert.bounded:
            verdict += f", exceeds period bound {cert.period_bound}"
    elif cert.m_gamma == float("inf"):
        verdict = f"M_Gamma unbounded; counterexample word {cert.counterexample}"
    else:
        verdict = f"uncertified: {cert.reason}"
    print(f"M_Gamma: {verdict}")
    print(f"classification: {classify_target(cfg.family, cfg.target, cert)}")
    print("VALID")
    return EXIT_OK


def cmd_theory(cfg: ExperimentConfig, args) -> int:
    """Certify M_Gamma and compute exact alpha, lambda and the extremal index."""
    _require_valid(cfg)
    cert, cls, res = _theory(cfg)
    law = res.multiplicity()
    D = _polya_aeppli_D(res)
    doc = {
        "provenance": _provenance(cfg, "theory"),
        "classification": str(cls),
        "M_Gamma": cert.m_gamma,
        "method": res.method,
        "extremal_index": float(res.extremal_index),
        "extremal_index_exact": str(res.extremal_index) if res.exact else None,
        "alpha": [float(x) for x in res.alpha],
        "alpha_exact": _numbers(res.alpha, res.exact),
        "lambda": [float(x) for x in res.lam],
        "lambda_exact": _numbers(res.lam, res.exact),
        "polya_aeppli_D": str(D) if D is not None else None,
        "multiplicity_tail": law.tail_kind,
        "tail_bound": float(res.tail_bound),
        "tail_mass": float(res.tail_mass),
        "lambda_mass_residual": abs(law.total_mass() - 1.0),
        "mean_cluster_residual": mean_cluster_identity_check(res.alpha, law),
        "alpha1_lower_bound": float(1 - 1 / Fraction(validate_family(cfg.family).d_min)),
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "theory.json", doc)
    print(f"classification: {cls}   M_Gamma: {cert.m_gamma}   method: {res.method}")
    print(f"extremal index: {doc['extremal_index_exact'] or doc['extremal_index']}")
    for ell, (a, lam) in enumerate(zip(res.alpha, res.lam), 1):
        print(f"  l={ell:2d}  alpha={str(a):>24s}  lambda={str(lam):>24s}")
    if D is not None:
        print(f"Polya-Aeppli D = {D}")
    print(f"mean cluster residual: {doc['mean_cluster_residual']:.3g}")
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    """Empirical quenched hit-count laws along the rho schedule versus the CPD limit."""
    _require_valid(cfg)
    _, _, res = _theory(cfg)
    plan = _plan(cfg, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "simulate")
    repeats = cfg.simulation["omega_repeats"] if plan.omega_mode == "fixed_word" else 1
    pred = _predicted(cfg, res, plan.t, plan.n_max)
    runs, spread = [], []
    for m, rho in enumerate(plan.rho_schedule(), 1):
        N = plan.horizon(rho)
        laws = []
        for r in range(repeats):
            omega = fixed_word(plan, N, r) if plan.omega_mode == "fixed_word" else None
            law = empirical_quenched_law(plan, omega, rho, N, tag=f"simulate/{r}")
            tv = law.tv_to(pred)
            rows = [[n, law.probs[n], law.stderr[n], pred[n], abs(law.probs[n] - pred[n])]
                    for n in range(plan.n_max + 1)]
            name = f"simulate_rho{m}" + (f"_omega{r}" if repeats > 1 else "") + ".csv"
            _write_csv(out / name, ["n", "empirical_prob", "stderr", "predicted_cpd_prob", "abs_diff"], rows, prov)
            runs.append({
                "alpha": [float(x) for x in res.alpha], "lambda": [float(x) for x in res.lam],
                "extremal_index": float(res.extremal_index), "t": plan.t, "rho": rho, "N": N, "M": law.M,
                "tv_distance": tv, "seed": plan.seed, "omega": r if omega is not None else None,
                "overflow": law.overflow,
            })
            print(f"rho={rho:g}  N={N}  M={law.M}  TV={tv:.4f}" + (f"  omega#{r}" if repeats > 1 else ""))
            laws.append(law)
        if len(laws) > 1:
            pair = max(a.tv_to(b.probs) for i, a in enumerate(laws) for b in laws[i + 1:])
            bound = pooled_noise_bound(laws)
            spread.append({"rho": rho, "max_pairwise_tv": pair, "pooled_noise_bound": bound,
                           "within_twice_bound": pair <= 2 * bound})
    doc = {"provenance": prov, "runs": runs}
    if spread:
        doc["noise_independence"] = spread
    _write_json(out / "simulate_summary.json", doc)
    return EXIT_OK


def cmd_pointprocess(cfg: ExperimentConfig, args) -> int:
    """Per-interval count laws of the marked hit process and their correlation."""
    _require_valid(cfg)
    _, _, res = _theory(cfg)
    plan = _plan(cfg, args.threads)
    t = cfg.pointprocess["t"]
    part = cfg.pointprocess["partition"]
    plan = ExperimentPlan(**{**plan.__dict__, "t": t})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "pointprocess")
    runs = []
    for m, rho in enumerate(plan.rho_schedule(), 1):
        N = plan.horizon(rho)
        omega = fixed_word(plan, N) if plan.omega_mode == "fixed_word" else None
        counts = np.concatenate(simulate_hits(plan, rho, N, omega, f"pointprocess/{rho!r}",
                                              lambda h, s: interval_count_matrix(h, part)))
        rows, tvs = [], []
        for q, (a, b) in enumerate(part):
            law = EmpiricalLaw.from_values(counts[:, q], plan.n_max)
            pred = _predicted(cfg, res, t * float(b - a), plan.n_max)
            tvs.append(law.tv_to(pred))
            rows += [[q, str(a), str(b), n, law.probs[n], law.stderr[n], pred[n], abs(law.probs[n] - pred[n])]
                     for n in range(plan.n_max + 1)]
        Q = len(part)
        corr = np.corrcoef(counts.T.astype(float)) if Q > 1 else np.ones((1, 1))
        corr = np.nan_to_num(corr)
        off = [float(corr[i, j]) for i in range(Q) for j in range(i + 1, Q)]
        _write_csv(out / f"pointprocess_rho{m}.csv",
                   ["interval", "a", "b", "n", "empirical_prob", "stderr", "predicted_cpd_prob", "abs_diff"], rows,
                   prov)
        runs.append({"t": t, "rho": rho, "N": N, "M": int(counts.shape[0]), "partition": [[str(a), str(b)]
                     for a, b in part], "tv_distance": tvs, "correlation": [[float(x) for x in r] for r in corr],
                     "max_abs_correlation": max((abs(x) for x in off), default=0.0),
                     "extremal_index": float(res.extremal_index), "seed": plan.seed})
        print(f"rho={rho:g}  N={N}  TV per interval={[round(x, 4) for x in tvs]}  "
              f"max|r|={runs[-1]['max_abs_correlation']:.4f}")
    _write_json(out / "pointprocess_summary.json", {"provenance": prov, "runs": runs})
    return EXIT_OK


def _trend(values: list[float]) -> float | None:
    """Least-squares slope of the values against their index."""
    if len(values) < 2:
        return None
    x = np.arange(len(values), dtype=float)
    return float(np.polyfit(x, np.asarray(values, dtype=float), 1)[0])


def cmd_blockcheck(cfg: ExperimentConfig, args) -> int:
    """Block approximation gap and error functionals on simulated hit series."""
    _require_valid(cfg)
    bc = cfg.blockcheck
    plan = _plan(cfg, args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "blockcheck")
    header = ["L", "Delta", "n", "gap", "gap_ci_lo", "gap_ci_hi", "R1t", "R1", "R2", "R3"]
    runs = []
    for m, rho in enumerate(plan.rho_schedule(), 1):
        N = plan.horizon(rho)
        omega = fixed_word(plan, N) if plan.omega_mode == "fixed_word" else None
        X = np.concatenate(simulate_hits(plan, rho, N, omega, f"blockcheck/{rho!r}", lambda h, s: h,
                                         samples=bc["samples"]))
        sample = JointSample(X)
        Ls = [max(1, math.isqrt(N))] if bc["L"] == "sqrt" else bc["L"]
        rows = []
        for L in Ls:
            for D in bc["Delta"]:
                try:
                    bp = BlockPlan(N, L, D)
                except ValueError as err:
                    print(f"rho={rho:g}: skipping L={L}, Delta={D} ({err})")
                    continue
                results = approximation_gap(sample, bp, n_max=bc["n_max"], bootstrap=bc["bootstrap"],
                                            seed=plan.seed)
                e = results[0].errors
                for g in results:
                    lo, hi = g.gap_ci
                    rows.append([L, D, g.n, g.gap, lo, hi, e.R1t, e.R1, e.R2, e.R3])
                runs.append({"rho": rho, "N": N, "L": L, "Delta": D, "dropped": bp.dropped,
                             "max_gap": max(g.gap for g in results), "R1t": e.R1t, "R1": e.R1, "R2": e.R2,
                             "R3": e.R3, "error_sum": e.total, "low_confidence": e.low_confidence})
                print(f"rho={rho:g}  N={N}  L={L}  Delta={D}  max gap={runs[-1]['max_gap']:.5f}  "
                      f"R~1={e.R1t:.4f} R1={e.R1:.4f} R2={e.R2:.4f} R3={e.R3:.4f}")
        _write_csv(out / f"blockcheck_rho{m}.csv", header, rows, prov)
    trends = {}
    for D in bc["Delta"]:
        seq = [r["max_gap"] for r in runs if r["Delta"] == D]
        trends[str(D)] = _trend(seq)
    _write_json(out / "blockcheck_summary.json", {"provenance": prov, "runs": runs, "gap_trend_slope": trends,
                                                 "seed": plan.seed})
    return EXIT_OK


def cmd_entryratio(cfg: ExperimentConfig, args) -> int:
    """Annealed entry ratio over the (L, rho) grid against the predicted alpha_1."""
    _require_valid(cfg)
    _, _, res = _theory(cfg)
    plan = _plan(cfg, args.threads)
    er = cfg.entryratio
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(cfg, "entryratio")
    a1 = float(res.extremal_index)
    rows, runs = [], []
    for L in er["L"]:
        for rho in er["rho"]:
            ratio, se = annealed_entry_ratio(plan, L, rho, method=er["method"])
            rows.append([L, rho, ratio, se, a1, abs(ratio - a1)])
            runs.append({"L": L, "rho": rho, "ratio": ratio, "stderr": se, "predicted_alpha1": a1,
                         "M": plan.samples, "seed": plan.seed})
            print(f"L={L:4d}  rho={rho:g}  ratio={ratio:.4f} +- {se:.4f}  alpha1={a1:.4f}")
    _write_csv(out / "entryratio.csv", ["L", "rho", "ratio", "stderr", "predicted_alpha1", "abs_diff"], rows, prov)
    _write_json(out / "entryratio_summary.json", {"provenance": prov, "runs": runs})
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "theory": cmd_theory,
    "simulate": cmd_simulate,
    "pointprocess": cmd_pointprocess,
    "blockcheck": cmd_blockcheck,
    "entryratio": cmd_entryratio,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quenchedcp", description="Quenched compound Poisson hitting statistics for random interval maps.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip() or None)
        p.add_argument("--config", required=True, help="experiment config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override simulation.seed")
        p.add_argument("--out", default=None, help="output directory (default: output.directory)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for sampling")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_seed(args.seed)
    except ConfigError as err:
        print("INVALID", file=sys.stderr)
        for p in err.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_INVALID
    if args.out is None:
        args.out = cfg.output["directory"]
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return COMMANDS[args.command](cfg, args)
    except ValidationFailure as err:
        print("INVALID", file=sys.stderr)
        for line in str(err).splitlines():
            print(f"  - {line}", file=sys.stderr)
        return EXIT_INVALID
    except UncertifiedError as err:
        print(f"refused: {err}", file=sys.stderr)
        return EXIT_UNCERTIFIED
    except (ArithmeticError, ValueError, RuntimeError, MemoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
