"""Comparison schemes: power-only design, backoff scaling, grid search, fixed array."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .balance import BalanceConfig, BalanceResult, solve_sinr_balance
from .channel import (
    ChannelRealization,
    ConfigurationError,
    channel_matrix,
    min_pairwise_distance,
    sinr_all,
    uniform_line_layout,
)
from .exposure import SarModel, identity_sar_model, sar_value
from .solver import SinrTargets, SolveReport, SolverConfig, solve_sar_min

__all__ = [
    "BaselineConfig",
    "ApsResult",
    "BackoffResult",
    "solve_without_sar",
    "adaptive_backoff",
    "solve_aps",
    "solve_fpa",
    "aps_grid",
]


@dataclass(frozen=True)
class BaselineConfig:
    power_budget: float = 2.0
    grid_spacing: float | None = None  # defaults to wavelength / 2
    aps_cap: int = 20000
    aps_seed: int = 0

    def __post_init__(self):
        if self.power_budget <= 0:
            raise ConfigurationError("power budget must be positive")
        if self.grid_spacing is not None and self.grid_spacing <= 0:
            raise ConfigurationError("grid spacing must be positive")


def solve_without_sar(realization: ChannelRealization, num_antennas: int,
                      config: BaselineConfig | None = None,
                      solver_config: SolverConfig | None = None,
                      balance_config: BalanceConfig | None = None) -> BalanceResult:
    """Balancing under a total power budget only: identity coupling matrix."""
    config = config or BaselineConfig()
    model = identity_sar_model(num_antennas, budget=config.power_budget)
    return solve_sinr_balance(realization, model, balance_config, solver_config)


@dataclass
class BackoffResult:
    beta: float
    precoder: np.ndarray
    layout: np.ndarray
    sar: float
    alpha: float
    unconstrained: BalanceResult

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "precoder": [[[v.real, v.imag] for v in row] for row in self.precoder],
            "layout": self.layout.tolist(),
            "sar": self.sar,
            "alpha": self.alpha,
            "unconstrained_beta": self.unconstrained.beta_star,
        }


def adaptive_backoff(realization: ChannelRealization, model: SarModel,
                     config: BaselineConfig | None = None,
                     solver_config: SolverConfig | None = None,
                     balance_config: BalanceConfig | None = None,
                     unconstrained: BalanceResult | None = None) -> BackoffResult:
    """Scale the power-only design down until it meets the exposure budget.

    alpha = min{1, Q0 / sum_k p_k^H R p_k} applied to the whole precoder; the
    attained worst weighted SINR is then re-evaluated at the scaled precoder.
    """
    config = config or BaselineConfig()
    solver_config = solver_config or SolverConfig()
    if unconstrained is None:
        unconstrained = solve_without_sar(realization, model.n_antennas, config,
                                          solver_config, balance_config)
    P_bar = unconstrained.precoder
    layout = unconstrained.layout
    sar_bar = sar_value(P_bar, model)
    alpha = 1.0 if sar_bar <= 0 else min(1.0, model.budget / sar_bar)
    P = alpha * P_bar
    H = channel_matrix(layout, realization, solver_config.wavelength)
    weights = np.ones(realization.num_users) if balance_config is None or \
        balance_config.weights is None else np.asarray(balance_config.weights, dtype=float)
    beta = float(np.min(sinr_all(P, H, realization.noise_variance) / weights))
    return BackoffResult(beta=beta, precoder=P, layout=layout,
                         sar=sar_value(P, model), alpha=alpha, unconstrained=unconstrained)


def aps_grid(region, spacing: float) -> np.ndarray:
    """Candidate positions: a centered square lattice inside the region."""
    a = region.half_width_m
    n_side = int(math.floor(2.0 * a / spacing + 1e-9)) + 1
    offset = (2.0 * a - (n_side - 1) * spacing) / 2.0
    coords = -a + offset + spacing * np.arange(n_side)
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def central_grid_layout(grid: np.ndarray, m: int, min_distance: float) -> np.ndarray:
    """Deterministic starting placement for lattice search: the m innermost
    grid points that keep pairwise spacing, in (radius, x, y) order."""
    order = np.lexsort((grid[:, 1], grid[:, 0], (grid ** 2).sum(axis=1)))
    chosen: list[np.ndarray] = []
    for idx in order:
        p = grid[idx]
        if all(np.linalg.norm(p - q) >= min_distance - 1e-12 for q in chosen):
            chosen.append(p)
            if len(chosen) == m:
                return np.array(chosen)
    raise ConfigurationError("lattice cannot host this many antennas")


def _sample_combinations(n_points: int, m: int, total: int, cap: int, seed: int):
    """Deterministic uniform subsample of m-subsets when enumeration is too big."""
    rng = np.random.default_rng(seed)
    seen = set()
    out = []
    # rejection sampling over sorted index tuples; cap << total keeps this fast
    while len(out) < cap:
        combo = tuple(sorted(rng.choice(n_points, size=m, replace=False).tolist()))
        if combo in seen:
            continue
        seen.add(combo)
        out.append(combo)
    return out


@dataclass
class ApsResult:
    value: float
    objective: str
    precoder: np.ndarray
    layout: np.ndarray
    sar: float
    beta: float
    evaluated: int
    total_combinations: int
    coverage: float
    subsampled: bool
    best: SolveReport | BalanceResult | None
    wall_time_s: float

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "objective": self.objective,
            "layout": self.layout.tolist(),
            "sar": self.sar,
            "beta": self.beta,
            "evaluated": self.evaluated,
            "total_combinations": self.total_combinations,
            "coverage": self.coverage,
            "subsampled": self.subsampled,
            "wall_time_s": self.wall_time_s,
        }


def solve_aps(realization: ChannelRealization, model: SarModel, objective: str,
              config: BaselineConfig | None = None,
              solver_config: SolverConfig | None = None,
              balance_config: BalanceConfig | None = None,
              targets: SinrTargets | None = None,
              method: str = "combinations") -> ApsResult:
    """Antenna placement restricted to a half-wavelength lattice.

    objective "sar-min" minimizes exposure at fixed targets; "balance"
    maximizes the worst weighted SINR under the budget.

    method "combinations" enumerates M-subsets of the lattice (seeded uniform
    subsample above ``aps_cap``) and runs the solver with the position block
    disabled on each; method "alternating" runs one solve whose position block
    does an exact per-antenna exhaustive search over the lattice.
    """
    t0 = time.perf_counter()
    if objective not in ("sar-min", "balance"):
        raise ConfigurationError("objective must be 'sar-min' or 'balance'")
    if method not in ("combinations", "alternating"):
        raise ConfigurationError("method must be 'combinations' or 'alternating'")
    config = config or BaselineConfig()
    solver_config = solver_config or SolverConfig()
    fixed = replace(solver_config, optimize_positions=False)
    spacing = config.grid_spacing if config.grid_spacing is not None \
        else solver_config.wavelength / 2.0
    M = model.n_antennas
    grid = aps_grid(solver_config.region, spacing)
    n_points = grid.shape[0]
    if n_points < M:
        raise ConfigurationError("grid too coarse: fewer candidate points than antennas")

    if method == "alternating":
        discrete = replace(solver_config, optimize_positions=True,
                           position_grid=tuple(map(tuple, grid)))
        # two deterministic starts: the line array and the innermost lattice
        # cluster; the per-antenna lattice descent refines each, keep the best
        starts = [uniform_line_layout(M, discrete.region),
                  central_grid_layout(grid, M, discrete.distance)]
        if balance_config is None:
            balance_config = BalanceConfig()
        # cold probes: the discrete reconfiguration happens in the low-penalty
        # phase, which warm-started probes skip
        cold = replace(balance_config, warm_start=False)
        best = None
        best_key = None
        for start in starts:
            if objective == "sar-min":
                rep = solve_sar_min(realization, targets, model, discrete,
                                    initial_layout=start)
                if not (rep.converged and rep.feasible):
                    continue
                key = (rep.sar, rep.layout.tolist())
            else:
                rep = solve_sinr_balance(realization, model, cold, discrete,
                                         initial_layout=start)
                key = (-rep.beta_star, rep.layout.tolist())
            if best_key is None or key < best_key:
                best, best_key = rep, key
        if best is None:
            raise ConfigurationError("no lattice start produced a feasible solution")
        if objective == "sar-min":
            return ApsResult(value=best.sar, objective=objective, precoder=best.precoder,
                             layout=best.layout, sar=best.sar, beta=best.beta_achieved,
                             evaluated=len(starts), total_combinations=len(starts),
                             coverage=1.0, subsampled=False, best=best,
                             wall_time_s=time.perf_counter() - t0)
        return ApsResult(value=best.beta_star, objective=objective, precoder=best.precoder,
                         layout=best.layout, sar=best.sar, beta=best.beta_star,
                         evaluated=len(starts), total_combinations=len(starts),
                         coverage=1.0, subsampled=False, best=best,
                         wall_time_s=time.perf_counter() - t0)

    total = math.comb(n_points, M)
    subsampled = total > config.aps_cap
    if subsampled:
        combos = _sample_combinations(n_points, M, total, config.aps_cap, config.aps_seed)
    else:
        combos = list(itertools.combinations(range(n_points), M))

    dmin = fixed.distance
    best = None
    best_key = None
    evaluated = 0
    for combo in combos:
        layout = grid[list(combo)]
        if min_pairwise_distance(layout) < dmin - 1e-12:
            continue
        evaluated += 1
        if objective == "sar-min":
            rep = solve_sar_min(realization, targets, model, fixed, initial_layout=layout)
            if not (rep.converged and rep.feasible):
                continue
            value = rep.sar
            key = (value, layout.tolist())
            if best_key is None or key < best_key:
                best, best_key = rep, key
        else:
            res = solve_sinr_balance(realization, model, balance_config, fixed,
                                     initial_layout=layout)
            value = res.beta_star
            key = (-value, layout.tolist())
            if best_key is None or key < best_key:
                best, best_key = res, key

    if best is None:
        raise ConfigurationError("no feasible lattice placement was found")
    if objective == "sar-min":
        value, sar, beta = best.sar, best.sar, best.beta_achieved
        precoder, layout = best.precoder, best.layout
    else:
        value, sar, beta = best.beta_star, best.sar, best.beta_star
        precoder, layout = best.precoder, best.layout
    return ApsResult(value=value, objective=objective, precoder=precoder, layout=layout,
                     sar=sar, beta=beta, evaluated=evaluated, total_combinations=total,
                     coverage=evaluated / total if total else 1.0,
                     subsampled=subsampled, best=best,
                     wall_time_s=time.perf_counter() - t0)


def solve_fpa(realization: ChannelRealization, model: SarModel, objective: str,
              solver_config: SolverConfig | None = None,
              balance_config: BalanceConfig | None = None,
              targets: SinrTargets | None = None):
    """Fixed half-wavelength line array: precoder-only optimization."""
    if objective not in ("sar-min", "balance"):
        raise ConfigurationError("objective must be 'sar-min' or 'balance'")
    solver_config = solver_config or SolverConfig()
    fixed = replace(solver_config, optimize_positions=False)
    layout = uniform_line_layout(model.n_antennas, fixed.region)
    if objective == "sar-min":
        return solve_sar_min(realization, targets, model, fixed, initial_layout=layout)
    return solve_sinr_balance(realization, model, balance_config, fixed,
                              initial_layout=layout)
