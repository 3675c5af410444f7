"""Seeded Monte Carlo sweeps over budgets, targets, region sizes and schemes.

Per-trial seeds derive deterministically from (master seed, point index,
trial index), all schemes at one (point, trial) share the same channel, and
the reduction order is fixed, so aggregates do not depend on how many workers
execute the trials.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .balance import BalanceConfig, solve_sinr_balance
from .baselines import BaselineConfig, adaptive_backoff, solve_aps, solve_fpa, solve_without_sar
from .channel import DEFAULT_NOISE_W, ConfigurationError, Region, sample_channel
from .exposure import SarModel, paper_sar_matrix, synthesize_sar_matrix
from .solver import SinrTargets, SolverConfig, SolverError, solve_sar_min

__all__ = [
    "ExperimentPlan",
    "RunRecord",
    "run_sweep",
    "convergence_trace",
    "derive_seed",
    "worker_count",
]

VALID_SWEEPS = ("q0", "beta0", "half_width", "paths", "scheme")
VALID_SCHEMES = ("fas", "aps", "fpa", "no-sar", "backoff")
BALANCE_ONLY = ("no-sar", "backoff")


@dataclass(frozen=True)
class ExperimentPlan:
    objective: str                      # "balance" or "sar-min"
    sweep: str                          # one of VALID_SWEEPS
    values: tuple
    trials: int
    master_seed: int
    schemes: tuple = ("fas",)
    m: int = 4
    k: int = 4
    paths: int = 15
    noise_variance: float = DEFAULT_NOISE_W
    wavelength: float = 0.01
    half_width: float = 1.0             # region half-width in wavelengths
    q0: float = 1.6
    beta0: float | None = None
    power_budget: float = 2.0
    aps_cap: int = 20000
    grid_spacing: float | None = None
    accuracy: float = 1e-4              # bisection accuracy for balance sweeps
    # optional initial upper bracket for the target bisection, quoted at the
    # reference budget 1.6 and scaled with the point's budget; the balance
    # solver doubles it (up to 3 times) if a probe shows it is attainable
    beta_bracket: float | None = None
    solver: dict = field(default_factory=dict)
    out_csv: str | None = None
    out_json: str | None = None

    def __post_init__(self):
        if self.objective not in ("balance", "sar-min"):
            raise ConfigurationError("objective must be 'balance' or 'sar-min'")
        if self.sweep not in VALID_SWEEPS:
            raise ConfigurationError(f"sweep must be one of {VALID_SWEEPS}")
        if not self.values:
            raise ConfigurationError("sweep value list must be non-empty")
        if self.trials < 1:
            raise ConfigurationError("need at least one trial per point")
        schemes = self.values if self.sweep == "scheme" else self.schemes
        for s in schemes:
            if s not in VALID_SCHEMES:
                raise ConfigurationError(f"unknown scheme {s!r}")
            if self.objective == "sar-min" and s in BALANCE_ONLY:
                raise ConfigurationError(f"{s} only applies to the balance objective")
        if self.objective == "sar-min" and self.beta0 is None:
            raise ConfigurationError("sar-min sweeps need a beta0 target")
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "schemes", tuple(self.schemes))

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["values"] = list(self.values)
        d["schemes"] = list(self.schemes)
        return d

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ExperimentPlan":
        doc = dict(doc)
        doc["values"] = tuple(doc["values"])
        if "schemes" in doc:
            doc["schemes"] = tuple(doc["schemes"])
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        return cls.from_json_dict(json.loads(text))


def derive_seed(master_seed: int, trial_index: int) -> int:
    """Channel seed for one trial. Sweep points share trials' channels
    (common random numbers along the sweep axis as well as across schemes);
    the paths sweep still changes the realization through the path count."""
    return int(np.random.SeedSequence([master_seed, trial_index])
               .generate_state(1)[0])


def worker_count() -> int:
    cap = os.environ.get("FAS_THREADS", "").strip()
    cpus = os.cpu_count() or 1
    if not cap:
        return 1
    return max(1, min(int(cap), cpus * 4))


def _point_params(plan: ExperimentPlan, value):
    """Effective (q0, beta0, half_width, paths, schemes) at one sweep point."""
    q0, beta0, a, paths = plan.q0, plan.beta0, plan.half_width, plan.paths
    schemes = list(plan.schemes)
    if plan.sweep == "q0":
        q0 = float(value)
    elif plan.sweep == "beta0":
        beta0 = float(value)
    elif plan.sweep == "half_width":
        a = float(value)
    elif plan.sweep == "paths":
        paths = int(value)
    else:  # scheme sweep
        schemes = [value]
    return q0, beta0, a, paths, schemes


def _sar_model(plan: ExperimentPlan, q0: float) -> SarModel:
    if plan.m == 4:
        return paper_sar_matrix(budget=q0)
    return synthesize_sar_matrix(plan.m, rng_seed=0, budget=q0)


def _solver_config(plan: ExperimentPlan, half_width: float) -> SolverConfig:
    region = Region(half_width=half_width, wavelength=plan.wavelength)
    return SolverConfig(region=region, **plan.solver)


def _run_bundle(plan: ExperimentPlan, point_index: int, value, trial: int) -> list[dict]:
    """All schemes of one (sweep point, trial): shared channel, shared seed."""
    q0, beta0, half_width, paths, schemes = _point_params(plan, value)
    seed = derive_seed(plan.master_seed, trial)
    realization = sample_channel(seed, plan.m, plan.k, paths, plan.noise_variance)
    model = _sar_model(plan, q0)
    solver_config = _solver_config(plan, half_width)
    balance_config = BalanceConfig(accuracy=plan.accuracy)
    nosar_config = balance_config
    if plan.beta_bracket is not None:
        balance_config = BalanceConfig(
            accuracy=plan.accuracy, bracket=(0.0, plan.beta_bracket * q0 / 1.6))
        # the power-only design is budgeted in watts, not exposure: unscaled
        nosar_config = BalanceConfig(accuracy=plan.accuracy,
                                     bracket=(0.0, plan.beta_bracket))
    base_config = BaselineConfig(power_budget=plan.power_budget,
                                 grid_spacing=plan.grid_spacing,
                                 aps_cap=plan.aps_cap, aps_seed=seed)
    targets = SinrTargets.uniform(plan.k, beta0) if beta0 is not None else None

    rows = []
    nosar_cache = None
    for scheme in schemes:
        row = {
            "point_index": point_index,
            "sweep_value": value,
            "scheme": scheme,
            "trial": trial,
            "seed": seed,
            "status": "ok",
        }
        try:
            if plan.objective == "balance":
                if scheme == "fas":
                    res = solve_sinr_balance(realization, model, balance_config, solver_config)
                    row.update(value_metric=res.beta_star, beta=res.beta_star, sar=res.sar)
                elif scheme == "fpa":
                    res = solve_fpa(realization, model, "balance", solver_config, balance_config)
                    row.update(value_metric=res.beta_star, beta=res.beta_star, sar=res.sar)
                elif scheme == "aps":
                    res = solve_aps(realization, model, "balance", base_config,
                                    solver_config, balance_config,
                                    method="alternating")
                    row.update(value_metric=res.beta, beta=res.beta, sar=res.sar,
                               aps_coverage=res.coverage, aps_subsampled=res.subsampled)
                elif scheme == "no-sar":
                    if nosar_cache is None:
                        nosar_cache = solve_without_sar(realization, plan.m, base_config,
                                                        solver_config, nosar_config)
                    res = nosar_cache
                    row.update(value_metric=res.beta_star, beta=res.beta_star,
                               sar=None)
                elif scheme == "backoff":
                    if nosar_cache is None:
                        nosar_cache = solve_without_sar(realization, plan.m, base_config,
                                                        solver_config, nosar_config)
                    res = adaptive_backoff(realization, model, base_config, solver_config,
                                           balance_config, unconstrained=nosar_cache)
                    row.update(value_metric=res.beta, beta=res.beta, sar=res.sar,
                               alpha=res.alpha)
            else:  # sar-min
                if scheme == "fas":
                    rep = solve_sar_min(realization, targets, model, solver_config)
                    if not (rep.converged and rep.feasible):
                        row["status"] = "nonconverged"
                    row.update(value_metric=rep.sar, beta=rep.beta_achieved, sar=rep.sar)
                elif scheme == "fpa":
                    rep = solve_fpa(realization, model, "sar-min", solver_config,
                                    targets=targets)
                    if not (rep.converged and rep.feasible):
                        row["status"] = "nonconverged"
                    row.update(value_metric=rep.sar, beta=rep.beta_achieved, sar=rep.sar)
                elif scheme == "aps":
                    res = solve_aps(realization, model, "sar-min", base_config,
                                    solver_config, targets=targets,
                                    method="alternating")
                    row.update(value_metric=res.value, beta=res.beta, sar=res.sar,
                               aps_coverage=res.coverage, aps_subsampled=res.subsampled)
        except Exception as exc:  # per-trial failures never abort the sweep
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
            row.setdefault("value_metric", None)
        rows.append(row)
    return rows


@dataclass
class RunRecord:
    plan: dict
    rows: list
    aggregates: list
    version: str = "fluidsar-0.1.0"

    def to_json_dict(self) -> dict:
        return {"plan": self.plan, "rows": self.rows,
                "aggregates": self.aggregates, "version": self.version}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunRecord":
        return cls(plan=doc["plan"], rows=doc["rows"],
                   aggregates=doc["aggregates"], version=doc["version"])

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls.from_json_dict(json.loads(text))

    def to_csv(self) -> str:
        lines = ["sweep_value,scheme,mean,stderr,trials"]
        for agg in self.aggregates:
            lines.append("{},{},{},{},{}".format(
                _csv_number(agg["sweep_value"]), agg["scheme"],
                _csv_number(agg["mean"]), _csv_number(agg["stderr"]), agg["trials"]))
        return "\n".join(lines) + "\n"

    def aggregate(self, sweep_value, scheme: str) -> dict | None:
        for agg in self.aggregates:
            if agg["sweep_value"] == sweep_value and agg["scheme"] == scheme:
                return agg
        return None


def _csv_number(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{v:.12g}"


def _aggregate(plan: ExperimentPlan, rows: list[dict]) -> list[dict]:
    out = []
    for pi, value in enumerate(plan.values):
        schemes = [value] if plan.sweep == "scheme" else plan.schemes
        for scheme in schemes:
            vals = [r["value_metric"] for r in rows
                    if r["point_index"] == pi and r["scheme"] == scheme
                    and r["status"] == "ok" and r.get("value_metric") is not None]
            n = len(vals)
            mean = float(np.mean(vals)) if n else None
            stderr = float(np.std(vals, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            out.append({
                "sweep_value": value,
                "scheme": scheme,
                "mean": mean,
                "stderr": stderr,
                "trials": n,
                "failures": sum(1 for r in rows
                                if r["point_index"] == pi and r["scheme"] == scheme
                                and r["status"] != "ok"),
            })
    return out


def run_sweep(plan: ExperimentPlan) -> RunRecord:
    """Execute the plan; per-trial isolation, order-independent reduction."""
    bundles = [(pi, value, trial)
               for pi, value in enumerate(plan.values)
               for trial in range(plan.trials)]
    workers = worker_count()
    if workers > 1 and len(bundles) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(_run_bundle_star,
                                   [(plan, pi, value, trial) for pi, value, trial in bundles]))
    else:
        nested = [_run_bundle(plan, pi, value, trial) for pi, value, trial in bundles]
    rows = [row for bundle in nested for row in bundle]
    record = RunRecord(plan=plan.to_json_dict(), rows=rows,
                       aggregates=_aggregate(plan, rows))
    if plan.out_csv:
        with open(plan.out_csv, "w") as fh:
            fh.write(record.to_csv())
    if plan.out_json:
        with open(plan.out_json, "w") as fh:
            fh.write(record.to_json())
    return record


def _run_bundle_star(args):
    return _run_bundle(*args)


def convergence_trace(channel_seed: int, beta0_list, m: int = 4, k: int = 4,
                      paths: int = 15, noise_variance: float = DEFAULT_NOISE_W,
                      q0: float = 1.6, solver_config: SolverConfig | None = None,
                      strict: bool = True) -> dict:
    """Stopping-indicator trajectories of the penalty loop, one per target.

    Checks the decay trend xi(2i) <= xi(i) for i >= 10 on every trajectory and
    (when strict) raises if it fails.
    """
    solver_config = solver_config or SolverConfig()
    realization = sample_channel(channel_seed, m, k, paths, noise_variance)
    model = paper_sar_matrix(budget=q0) if m == 4 else synthesize_sar_matrix(m, 0, budget=q0)
    traces = []
    for beta0 in beta0_list:
        rep = solve_sar_min(realization, SinrTargets.uniform(k, float(beta0)), model,
                            solver_config)
        xi_path = [(it, mu, xi) for it, mu, xi, _, _ in rep.outer_trace]
        xis = [xi for _, _, xi in xi_path]
        trend_ok = all(xis[2 * i] <= xis[i]
                       for i in range(10, len(xis)) if 2 * i < len(xis))
        if strict and not trend_ok:
            raise SolverError(
                f"stopping indicator not decaying for beta0={beta0}")
        traces.append({
            "beta0": float(beta0),
            "trace": xi_path,
            "outer_iterations": rep.outer_iterations,
            "converged": rep.converged,
            "final_xi": rep.xi,
            "trend_ok": trend_ok,
        })
    return {"seed": channel_seed, "traces": traces}
