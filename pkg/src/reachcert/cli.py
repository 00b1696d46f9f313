"""Command-line interface: run, plan, oracle, certify, policy.

Every command reads a JSON configuration (except `plan`, which is pure
arithmetic), writes its artifacts into --out, and exits 0 exactly when no
error occurred; failures emit a machine-readable JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (BoundBudget, global_apriori_certificate, plan_sample_sizes,
                     pollard_delta, hoeffding_delta, scaling_B0,
                     scaling_B_analytic_linear_gaussian, scaling_B_numeric)
from .certify import draw_holdout, estimate_errors, policy_performance_bound, sample_certificate
from .config import build_run_config, load_config
from .errors import ConfigError, ReachcertError
from .fvi import FviConfig, FviResult, extract_policy, run_fvi
from .model import THERMAL_ACTIONS
from .oracle import Grid, dp_fixed_policy, dp_optimal, monte_carlo_reach_avoid
from . import report as rpt


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("REACHCERT_WORKERS")
    return max(1, int(env)) if env else 1


def _action_label(process, index) -> str:
    action = process.actions[index]
    if tuple(action) in THERMAL_ACTIONS:
        return "(" + ",".join("ON" if int(h) else "OFF" for h in action) + ")"
    return str(action)


def _keep_mask(grid: Grid, spec):
    centers = grid.centers
    return (spec.in_safe(centers) & ~spec.in_target(centers)).reshape(grid.shape)


def _scaling_factors(cfg, resolution):
    B = scaling_B_numeric(cfg.process, cfg.spec, cfg.eta, resolution)
    B0 = scaling_B0(cfg.process, cfg.spec, cfg.eta, cfg.spec.initial_state, resolution)
    payload = {
        "B": B.value, "B_refinement_delta": B.refinement_delta,
        "B0": B0.value, "B0_refinement_delta": B0.refinement_delta,
        "resolution": resolution, "method": "numeric",
    }
    if cfg.process.gaussian is not None:
        payload["B_analytic_upper_bound"] = scaling_B_analytic_linear_gaussian(
            cfg.process.gaussian.dynamics, cfg.process.n_actions)
    return B, B0, payload


def _serialize_fvi(result: FviResult, config: FviConfig) -> dict:
    return {
        "seed": result.seed,
        "horizon": result.horizon,
        "r_hat": result.r_hat,
        "w0_hat": result.w0_hat,
        "initial_action": result.initial_action,
        "fit_residuals": list(result.fit_residuals),
        "n_base": config.n_base,
        "m_succ": config.m_succ,
        "m_init": config.m_init,
        "p": config.p,
        "rbf": rpt.serialize_rbf(config.rbf),
        "value_functions": rpt.serialize_value_stack(result.value_functions),
    }


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw = load_config(args.config)
    cfg = build_run_config(raw)
    if cfg.fvi is None:
        raise ConfigError("fvi: section required by the run command")
    if args.seed is not None:
        cfg.fvi = FviConfig(**{**cfg.fvi.__dict__, "seed": args.seed})
        if cfg.certify is not None and cfg.certify["seed"] == args.seed:
            raise ConfigError("certify.seed: must differ from the overridden fvi seed")
    workers = _workers(args)
    timing = {}

    t0 = time.perf_counter()
    result = run_fvi(cfg.process, cfg.spec, cfg.fvi)
    timing["fvi_seconds"] = time.perf_counter() - t0
    payload = {
        "tool": "reachcert",
        "version": __version__,
        "config": raw,
        "workers": workers,
        "fvi": _serialize_fvi(result, cfg.fvi),
        "r_hat": result.r_hat,
    }
    if result.initial_action is not None:
        payload["initial_action_label"] = _action_label(cfg.process, result.initial_action)

    # value-function CSV + figure (skipped when the run short-circuited)
    if result.value_functions:
        grid, values = rpt.fitted_grid(
            {k + 1: f for k, f in enumerate(result.value_functions)},
            cfg.spec.safe, resolution=90)
        keep = _keep_mask(grid, cfg.spec)
        rpt.write_csv(out / "values_k.csv", ("x1", "x2", "k", "value"),
                      rpt.value_grid_rows(grid, values, keep), seed=result.seed)
        shown = sorted({min(values), max(values), (1 + max(values)) // 2}, reverse=True)
        rpt.plot_value_functions(grid, {k: values[k] for k in shown},
                                 cfg.spec.target, out / "values.png")

    needs_scaling = cfg.certify is not None or "bounds" in raw
    if needs_scaling:
        t0 = time.perf_counter()
        B, B0, scaling_payload = _scaling_factors(cfg, args.resolution or cfg.bounds_resolution)
        timing["scaling_seconds"] = time.perf_counter() - t0
        payload["scaling"] = scaling_payload
        budget_raw = raw.get("bounds", {}).get("budget")
        if budget_raw is not None:
            budget = BoundBudget(p=cfg.fvi.p, d=cfg.fvi.rbf.n_basis,
                                 n_actions=cfg.process.n_actions,
                                 horizon=cfg.spec.horizon, **budget_raw)
            apriori = global_apriori_certificate(budget, B.value, B0.value)
            payload["apriori_certificate"] = {
                "Delta_quantified": apriori.delta_quantified,
                "delta_total": apriori.confidence_loss,
                "bias_symbolic": apriori.bias_symbolic,
                "B": apriori.B, "B0": apriori.B0,
                "method": "numeric", "vacuous": apriori.vacuous,
            }

    if cfg.certify is not None and result.value_functions:
        t0 = time.perf_counter()
        holdout = draw_holdout(cfg.process, cfg.spec, cfg.eta,
                               cfg.certify["n_base"], cfg.certify["m_succ"],
                               cfg.certify["seed"])
        estimates = estimate_errors(holdout, result, cfg.spec, n_workers=workers)
        cert = sample_certificate(estimates, B, B0, eps=cfg.certify["eps"],
                                  delta0=cfg.certify["delta0"],
                                  m_init=cfg.fvi.m_init)
        timing["certify_seconds"] = time.perf_counter() - t0
        payload["sample_certificate"] = _certificate_payload(cert)
        rpt.write_csv(out / "certificate.csv",
                      ("k", "single_step", "bias", "accuracy"),
                      [(int(k), f"{s:.8f}", f"{b:.8f}", f"{a:.8g}")
                       for k, s, b, a in zip(cert.steps, cert.per_k_single_step,
                                             cert.per_k_bias, cert.per_k_accuracy)],
                      seed=cfg.certify["seed"])
        rpt.plot_per_step_estimates(cert.steps, cert.per_k_single_step,
                                    cert.per_k_bias, out / "estimates.png")
        rpt.plot_accuracy_growth(cert.steps, cert.per_k_accuracy, out / "accuracy.png")

    if cfg.policy is not None and result.value_functions:
        t0 = time.perf_counter()
        policy = extract_policy(cfg.process, cfg.spec, result, cfg.fvi)
        mc_seed = cfg.policy["seed"] if cfg.policy["seed"] is not None else cfg.fvi.seed + 1
        mc_est, mc_hw = monte_carlo_reach_avoid(cfg.process, cfg.spec, policy,
                                                cfg.policy["evaluate_runs"], mc_seed)
        timing["policy_seconds"] = time.perf_counter() - t0
        summary = {
            "mc_estimate": mc_est, "mc_half_width": mc_hw,
            "evaluate_runs": cfg.policy["evaluate_runs"], "mc_seed": mc_seed,
            "value_lower_bound": max(0.0, mc_est - mc_hw),
        }
        if "sample_certificate" in payload:
            bound = policy_performance_bound(cert, result.r_hat, mc_est, mc_hw)
            summary["performance_bound"] = bound.bound
            summary["performance_bound_raw"] = bound.raw
            summary["performance_bound_vacuous"] = bound.vacuous
        payload["policy"] = summary
        grid = Grid.regular(cfg.spec.safe, cfg.policy["resolution"])
        keep = _keep_mask(grid, cfg.spec)
        rpt.write_csv(out / "policy.csv", ("x1", "x2", "k", "action_index"),
                      rpt.policy_rows(grid, policy, keep), seed=cfg.fvi.seed)
        labels = [_action_label(cfg.process, a) for a in range(cfg.process.n_actions)]
        rpt.plot_policy(grid, policy, cfg.spec.target, out / "policy.png",
                        action_labels=labels)

    payload["timing"] = timing
    rpt.write_json(out / "report.json", payload)
    print(f"r_hat = {result.r_hat:.4f}  (report in {out})")
    return 0


def _certificate_payload(cert) -> dict:
    return {
        "per_k": [{"k": int(k), "single_step": float(s), "bias": float(b),
                   "accuracy": float(a)}
                  for k, s, b, a in zip(cert.steps, cert.per_k_single_step,
                                        cert.per_k_bias, cert.per_k_accuracy)],
        "Delta": cert.Delta, "delta_Delta": cert.delta_Delta, "L": cert.L,
        "B": cert.B, "B0": cert.B0, "eps": cert.eps, "eps0": cert.eps0,
        "delta0": cert.delta0, "n_base": cert.n_base,
        "valid": cert.valid, "vacuous": cert.vacuous,
    }


def cmd_plan(args) -> int:
    if not 0 <= args.alpha < 1:
        raise ConfigError("alpha: confidence target must lie in [0, 1)")
    loss = 1.0 - args.alpha
    share = loss / (2.0 * (args.horizon - 1) + 1.0) if args.horizon > 1 else loss
    delta0 = delta1 = delta2 = share
    n_base, m_succ, m_init = plan_sample_sizes(
        args.eps0, args.eps1, args.eps2, delta0, delta1, delta2,
        args.d, args.p, args.n_actions)
    achieved = {
        "delta1": hoeffding_delta(m_succ, args.eps1, args.n_actions, n_base),
        "delta2": pollard_delta(n_base, args.eps2, args.p, args.d),
        "delta0": hoeffding_delta(m_init, args.eps0, args.n_actions, 1),
    }
    print(f"confidence target alpha = {args.alpha}  (total loss {loss:.6g}, "
          f"even split {share:.6g} per term)")
    print(f"  N  (base points / iteration) = {n_base}")
    print(f"  M  (successors / point-action) = {m_succ}")
    print(f"  M0 (successors / action at x0) = {m_init}")
    for name, value in achieved.items():
        print(f"  achieved {name} = {value:.6g}  (target {share:.6g})")
    if args.out:
        rpt.write_json(Path(args.out) / "plan.json", {
            "inputs": {"eps0": args.eps0, "eps1": args.eps1, "eps2": args.eps2,
                       "alpha": args.alpha, "d": args.d, "p": args.p,
                       "n_actions": args.n_actions, "horizon": args.horizon},
            "N": n_base, "M": m_succ, "M0": m_init,
            "targets": {"delta0": delta0, "delta1": delta1, "delta2": delta2},
            "achieved": achieved,
        })
    return 0


def cmd_oracle(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = build_run_config(load_config(args.config))
    resolution = args.resolution or 200
    t0 = time.perf_counter()
    grid_value, policy, r_star = dp_optimal(cfg.process, cfg.spec, resolution)
    elapsed = time.perf_counter() - t0
    _, _, r_coarse = dp_optimal(cfg.process, cfg.spec, max(2, resolution // 2))
    convergence = abs(r_star - r_coarse)
    if resolution < 10:
        print("warning: very coarse grid; values are indicative only", file=sys.stderr)

    mc_runs = args.mc_runs
    mc_est, mc_hw = monte_carlo_reach_avoid(cfg.process, cfg.spec, policy, mc_runs,
                                            seed=args.seed if args.seed is not None else 0)
    keep = _keep_mask(grid_value.grid, cfg.spec)
    values = {k: grid_value.values[k] for k in range(cfg.spec.horizon + 1)}
    rpt.write_csv(out / "oracle_values.csv", ("x1", "x2", "k", "value"),
                  rpt.value_grid_rows(grid_value.grid, values, keep),
                  seed=args.seed if args.seed is not None else 0)
    shown = sorted({1, cfg.spec.horizon - 1, max(1, cfg.spec.horizon // 2)}, reverse=True)
    rpt.plot_value_functions(grid_value.grid, {k: grid_value.values[k] for k in shown},
                             cfg.spec.target, out / "oracle_values.png")
    payload = {
        "tool": "reachcert", "version": __version__,
        "r_star": r_star, "resolution": resolution,
        "convergence_delta_vs_half_resolution": convergence,
        "mass_diagnostics": grid_value.diagnostics,
        "mc_cross_check": {"estimate": mc_est, "half_width": mc_hw, "runs": mc_runs},
        "timing": {"dp_seconds": elapsed},
    }
    rpt.write_json(out / "oracle_report.json", payload)
    print(f"r* = {r_star:.5f} at resolution {resolution} "
          f"(half-resolution delta {convergence:.2e})")
    print(f"MC under the grid policy: {mc_est:.5f} +- {mc_hw:.5f}")
    return 0


def _load_run(path):
    payload = json.loads(Path(path).read_text())
    section = payload["fvi"]
    config, functions = rpt.load_value_stack(section)
    result = FviResult(
        value_functions=tuple(functions),
        horizon=int(section["horizon"]),
        seed=int(section["seed"]),
        r_hat=float(section["r_hat"]),
        w0_hat=section["w0_hat"],
        initial_action=section["initial_action"],
        fit_residuals=tuple(section["fit_residuals"]),
    )
    return payload, config, result


def cmd_certify(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = build_run_config(load_config(args.config))
    if cfg.certify is None:
        raise ConfigError("certify: section required by the certify command")
    run_payload, _, result = _load_run(args.from_run)
    workers = _workers(args)
    B, B0, scaling_payload = _scaling_factors(cfg, args.resolution or cfg.bounds_resolution)
    holdout = draw_holdout(cfg.process, cfg.spec, cfg.eta,
                           cfg.certify["n_base"], cfg.certify["m_succ"],
                           cfg.certify["seed"])
    estimates = estimate_errors(holdout, result, cfg.spec, n_workers=workers)
    m_init = run_payload["fvi"]["m_init"]
    cert = sample_certificate(estimates, B, B0, eps=cfg.certify["eps"],
                              delta0=cfg.certify["delta0"], m_init=m_init)
    rpt.write_csv(out / "certificate.csv", ("k", "single_step", "bias", "accuracy"),
                  [(int(k), f"{s:.8f}", f"{b:.8f}", f"{a:.8g}")
                   for k, s, b, a in zip(cert.steps, cert.per_k_single_step,
                                         cert.per_k_bias, cert.per_k_accuracy)],
                  seed=cfg.certify["seed"])
    rpt.plot_per_step_estimates(cert.steps, cert.per_k_single_step, cert.per_k_bias,
                                out / "estimates.png")
    rpt.plot_accuracy_growth(cert.steps, cert.per_k_accuracy, out / "accuracy.png")
    rpt.write_json(out / "certify_report.json", {
        "tool": "reachcert", "version": __version__,
        "from_run": str(args.from_run),
        "scaling": scaling_payload,
        "sample_certificate": _certificate_payload(cert),
    })
    state = "valid" if cert.valid else "INVALID"
    extra = " (vacuous)" if cert.vacuous else ""
    print(f"Delta = {cert.Delta:.4g}, delta_Delta = {cert.delta_Delta:.4g} "
          f"[{state}{extra}]")
    return 0


def cmd_policy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = build_run_config(load_config(args.config))
    if cfg.fvi is None:
        raise ConfigError("fvi: section required by the policy command")
    run_payload, _, result = _load_run(args.from_run)
    policy = extract_policy(cfg.process, cfg.spec, result, cfg.fvi)
    pol_cfg = cfg.policy or {"evaluate_runs": 100000, "seed": None, "resolution": 180}
    mc_seed = pol_cfg["seed"] if pol_cfg["seed"] is not None else result.seed + 1
    mc_est, mc_hw = monte_carlo_reach_avoid(cfg.process, cfg.spec, policy,
                                            pol_cfg["evaluate_runs"], mc_seed)
    grid = Grid.regular(cfg.spec.safe, pol_cfg["resolution"])
    keep = _keep_mask(grid, cfg.spec)
    rpt.write_csv(out / "policy.csv", ("x1", "x2", "k", "action_index"),
                  rpt.policy_rows(grid, policy, keep), seed=result.seed)
    labels = [_action_label(cfg.process, a) for a in range(cfg.process.n_actions)]
    rpt.plot_policy(grid, policy, cfg.spec.target, out / "policy.png",
                    action_labels=labels)
    rpt.write_json(out / "policy_report.json", {
        "tool": "reachcert", "version": __version__,
        "from_run": str(args.from_run),
        "mc_estimate": mc_est, "mc_half_width": mc_hw,
        "evaluate_runs": pol_cfg["evaluate_runs"], "mc_seed": mc_seed,
        "value_lower_bound": max(0.0, mc_est - mc_hw),
    })
    print(f"policy value (MC): {mc_est:.5f} +- {mc_hw:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reachcert",
        description="Reach-avoid probabilities with probabilistic error certificates")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: REACHCERT_WORKERS or 1)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--resolution", type=int, default=None, help="grid resolution override")

    p_run = sub.add_parser("run", help="full pipeline: FVI, certificates, artifacts")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_plan = sub.add_parser("plan", help="a-priori sample sizes for a confidence target")
    p_plan.add_argument("--eps0", type=float, required=True)
    p_plan.add_argument("--eps1", type=float, required=True)
    p_plan.add_argument("--eps2", type=float, required=True)
    p_plan.add_argument("--alpha", type=float, required=True,
                        help="confidence target in [0, 1)")
    p_plan.add_argument("--d", type=int, required=True, help="pseudo-dimension")
    p_plan.add_argument("--p", type=int, default=2, help="norm order")
    p_plan.add_argument("--n-actions", type=int, required=True)
    p_plan.add_argument("--horizon", type=int, required=True)
    p_plan.add_argument("--out", default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_oracle = sub.add_parser("oracle", help="grid-quadrature ground truth")
    common(p_oracle)
    p_oracle.add_argument("--mc-runs", type=int, default=50000,
                          help="Monte-Carlo cross-check trajectories")
    p_oracle.set_defaults(func=cmd_oracle)

    p_cert = sub.add_parser("certify", help="sample-based certificate for a stored run")
    common(p_cert)
    p_cert.add_argument("--from-run", required=True, help="report.json of the run to certify")
    p_cert.set_defaults(func=cmd_certify)

    p_pol = sub.add_parser("policy", help="extract and evaluate a policy from a stored run")
    common(p_pol)
    p_pol.add_argument("--from-run", required=True, help="report.json of the source run")
    p_pol.set_defaults(func=cmd_policy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ReachcertError, OSError, KeyError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
