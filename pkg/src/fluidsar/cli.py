"""Command-line harness: single solves, baselines, sweeps and traces."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .balance import BalanceConfig, solve_sinr_balance
from .baselines import BaselineConfig, adaptive_backoff, solve_aps, solve_fpa, solve_without_sar
from .channel import DEFAULT_NOISE_W, ChannelRealization, Region, dbm_to_watts, sample_channel
from .exposure import SarModel, paper_sar_matrix, synthesize_sar_matrix
from .harness import ExperimentPlan, convergence_trace, run_sweep
from .solver import SinrTargets, SolverConfig, solve_sar_min


def _load_channel(args) -> ChannelRealization:
    spec = args.channel
    if spec.startswith("seed:"):
        spec = spec[len("seed:"):]
    if spec.lstrip("+-").isdigit():
        noise = dbm_to_watts(args.noise_dbm) if args.noise_dbm is not None else DEFAULT_NOISE_W
        return sample_channel(int(spec), args.m, args.k, args.paths, noise)
    with open(spec) as fh:
        return ChannelRealization.from_json(fh.read())


def _load_sar(args, m: int) -> SarModel:
    spec = args.sar
    budget = args.q0 if getattr(args, "q0", None) is not None else 1.6
    if spec == "paper4":
        if m != 4:
            raise SystemExit("--sar paper4 requires 4 antennas")
        return paper_sar_matrix(budget=budget)
    if spec.startswith("file:"):
        with open(spec[len("file:"):]) as fh:
            model = SarModel.from_json(fh.read())
        if budget != model.budget and getattr(args, "q0", None) is not None:
            model = SarModel(model.matrix, budget, model.synthetic)
        return model
    if spec.startswith("synth:"):
        return synthesize_sar_matrix(int(spec[len("synth:"):]), rng_seed=0, budget=budget)
    raise SystemExit(f"unknown --sar spec {spec!r}")


def _solver_config(args) -> SolverConfig:
    region = Region(half_width=args.half_width, wavelength=args.wavelength)
    kw = {}
    for name in ("mu0", "a", "eps_inner", "eps_outer", "eps_position",
                 "eps_inner_rel", "eps_position_rel",
                 "max_outer", "max_inner", "max_sca_iter"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return SolverConfig(region=region, **kw)


def _write_report(args, doc: dict):
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        print(text)


def _add_common(p):
    p.add_argument("--channel", required=True,
                   help="channel JSON path, or an integer seed (sampled on the fly)")
    p.add_argument("--m", type=int, default=4, help="number of transmit antennas")
    p.add_argument("--k", type=int, default=4, help="number of users")
    p.add_argument("--paths", type=int, default=15, help="propagation paths per user")
    p.add_argument("--noise-dbm", type=float, default=None, help="noise power in dBm")
    p.add_argument("--half-width", type=float, default=1.0,
                   help="region half-width in wavelengths")
    p.add_argument("--wavelength", type=float, default=0.01)
    p.add_argument("--weights", default=None, help="comma-separated SINR weights")
    p.add_argument("--mu0", type=float, default=None)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--eps-inner", type=float, default=None)
    p.add_argument("--eps-outer", type=float, default=None)
    p.add_argument("--eps-position", type=float, default=None)
    p.add_argument("--eps-inner-rel", type=float, default=None)
    p.add_argument("--eps-position-rel", type=float, default=None)
    p.add_argument("--max-outer", type=int, default=None)
    p.add_argument("--max-inner", type=int, default=None)
    p.add_argument("--max-sca-iter", type=int, default=None)
    p.add_argument("--save-channel", default=None, help="also write the channel JSON here")
    p.add_argument("--out", default=None, help="write the report JSON here")


def _weights(args, k: int) -> np.ndarray:
    if args.weights is None:
        return np.ones(k)
    return np.array([float(x) for x in args.weights.split(",")])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fluidsar",
                                     description="SAR-aware fluid-antenna precoding designs")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run the proposed designs")
    solve_sub = solve.add_subparsers(dest="problem", required=True)

    p_min = solve_sub.add_parser("sar-min", help="minimize exposure under SINR floors")
    _add_common(p_min)
    p_min.add_argument("--beta0", type=float, required=True, help="SINR target scale")
    p_min.add_argument("--sar", default="paper4")
    p_min.add_argument("--q0", type=float, default=None,
                       help="budget recorded on the model (reports only)")

    p_bal = solve_sub.add_parser("sinr-balance", help="max-min SINR under the SAR budget")
    _add_common(p_bal)
    p_bal.add_argument("--q0", type=float, default=1.6, help="SAR budget (W/kg)")
    p_bal.add_argument("--sar", default="paper4")
    p_bal.add_argument("--eps1", type=float, default=1e-4, help="bisection accuracy")

    base = sub.add_parser("baseline", help="comparison schemes")
    base_sub = base.add_subparsers(dest="scheme", required=True)
    for name in ("no-sar", "backoff", "aps", "fpa"):
        p = base_sub.add_parser(name)
        _add_common(p)
        p.add_argument("--q0", type=float, default=1.6)
        p.add_argument("--sar", default="paper4")
        p.add_argument("--eps1", type=float, default=1e-4)
        p.add_argument("--power-budget", type=float, default=2.0)
        if name in ("aps", "fpa"):
            p.add_argument("--objective", choices=("balance", "sar-min"), default="balance")
            p.add_argument("--beta0", type=float, default=None)
        if name == "aps":
            p.add_argument("--aps-cap", type=int, default=20000)
            p.add_argument("--grid-spacing", type=float, default=None)
            p.add_argument("--method", choices=("alternating", "combinations"),
                           default="alternating")

    p_sweep = sub.add_parser("sweep", help="run a Monte Carlo sweep plan")
    p_sweep.add_argument("--plan", required=True, help="plan JSON path")

    p_trace = sub.add_parser("trace", help="stopping-indicator trajectories")
    p_trace.add_argument("--seed", type=int, required=True)
    p_trace.add_argument("--beta0", required=True, help="comma-separated targets")
    p_trace.add_argument("--m", type=int, default=4)
    p_trace.add_argument("--k", type=int, default=4)
    p_trace.add_argument("--paths", type=int, default=15)
    p_trace.add_argument("--noise-dbm", type=float, default=None)
    p_trace.add_argument("--mu0", type=float, default=None)
    p_trace.add_argument("--a", type=float, default=None)
    p_trace.add_argument("--out", default=None, help="write the trace CSV here")

    args = parser.parse_args(argv)

    if args.command == "sweep":
        with open(args.plan) as fh:
            plan = ExperimentPlan.from_json(fh.read())
        record = run_sweep(plan)
        sys.stdout.write(record.to_csv())
        return 0

    if args.command == "trace":
        noise = dbm_to_watts(args.noise_dbm) if args.noise_dbm is not None else DEFAULT_NOISE_W
        kw = {}
        if args.mu0 is not None:
            kw["mu0"] = args.mu0
        if args.a is not None:
            kw["a"] = args.a
        cfg = SolverConfig(**kw)
        result = convergence_trace(args.seed, [float(x) for x in args.beta0.split(",")],
                                   m=args.m, k=args.k, paths=args.paths,
                                   noise_variance=noise, solver_config=cfg, strict=False)
        lines = ["beta0,iteration,xi"]
        for tr in result["traces"]:
            for it, _, xi in tr["trace"]:
                lines.append(f"{tr['beta0']:.12g},{it},{xi:.12g}")
        text = "\n".join(lines) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0

    realization = _load_channel(args)
    if args.save_channel:
        with open(args.save_channel, "w") as fh:
            fh.write(realization.to_json())
    cfg = _solver_config(args)
    k = realization.num_users
    weights = _weights(args, k)

    if args.command == "solve" and args.problem == "sar-min":
        model = _load_sar(args, args.m)
        rep = solve_sar_min(realization, SinrTargets(weights, args.beta0), model, cfg)
        _write_report(args, {"kind": "sar-min", **rep.to_json_dict()})
        return 0 if rep.converged else 1

    if args.command == "solve" and args.problem == "sinr-balance":
        model = _load_sar(args, args.m)
        bal = BalanceConfig(accuracy=args.eps1, weights=weights)
        res = solve_sinr_balance(realization, model, bal, cfg)
        _write_report(args, {"kind": "sinr-balance", **res.to_json_dict()})
        return 0

    if args.command == "baseline":
        bal = BalanceConfig(accuracy=args.eps1, weights=weights)
        bcfg = BaselineConfig(power_budget=args.power_budget,
                              grid_spacing=getattr(args, "grid_spacing", None),
                              aps_cap=getattr(args, "aps_cap", 20000))
        if args.scheme == "no-sar":
            res = solve_without_sar(realization, args.m, bcfg, cfg, bal)
            _write_report(args, {"kind": "baseline-no-sar", **res.to_json_dict()})
            return 0
        model = _load_sar(args, args.m)
        if args.scheme == "backoff":
            res = adaptive_backoff(realization, model, bcfg, cfg, bal)
            _write_report(args, {"kind": "baseline-backoff", **res.to_json_dict()})
            return 0
        objective = getattr(args, "objective", "balance")
        targets = SinrTargets(weights, args.beta0) if args.beta0 is not None else None
        if objective == "sar-min" and targets is None:
            raise SystemExit("--beta0 is required for the sar-min objective")
        if args.scheme == "aps":
            res = solve_aps(realization, model, objective, bcfg, cfg, bal, targets,
                            method=getattr(args, "method", "alternating"))
            _write_report(args, {"kind": "baseline-aps", **res.to_json_dict()})
            return 0
        if args.scheme == "fpa":
            res = solve_fpa(realization, model, objective, cfg, bal, targets)
            doc = res.to_json_dict()
            _write_report(args, {"kind": "baseline-fpa", "orientation": "x-axis", **doc})
            return 0
    raise SystemExit("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
