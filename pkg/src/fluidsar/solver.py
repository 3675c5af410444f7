"""Two-layer penalty solver for QoS-constrained exposure minimization.

Outer layer grows the penalty factor mu geometrically (mu <- mu/a); the inner
layer alternates three block updates on the penalized objective

    sum_k p_k^H R p_k + mu * sum_{k,j} |h_k(t)^H p_j - z_{k,j}|^2

  1. precoder columns p_k from the closed-form stationarity system,
  2. auxiliary variables z_{k,j} from K independent dual problems, each a
     single-multiplier bisection,
  3. antenna positions t_m one at a time by majorize-minimize steps, with a
     tiny 2-D active-set QP when the free step leaves the feasible set.

The coupling residual xi = sum |h_k^H p_j - z_{k,j}|^2 is the outer stopping
indicator; the emitted solution is rescaled so the worst SINR constraint holds
with equality.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelRealization,
    ConfigurationError,
    Region,
    channel_matrix,
    layout_is_feasible,
    min_pairwise_distance,
    sinr_all,
    uniform_line_layout,
)
from .exposure import SarModel, sar_value

__all__ = [
    "SinrTargets",
    "SolverConfig",
    "SolveReport",
    "SolverError",
    "DegenerateUserError",
    "solve_precoder",
    "solve_auxiliary",
    "position_objective",
    "position_gradient",
    "position_majorizer",
    "position_qp",
    "update_position",
    "inner_loop",
    "solve_sar_min",
    "coupling_residual",
    "polish_scale",
]


class SolverError(RuntimeError):
    pass


class DegenerateUserError(SolverError):
    """A user has h_k^H p_k = 0 while its SINR constraint is violated."""

    def __init__(self, users):
        self.users = list(users)
        super().__init__(
            f"degenerate auxiliary step for users {self.users}: "
            "h_k^H p_k = 0 with an infeasible unconstrained point")


@dataclass(frozen=True)
class SinrTargets:
    """Per-user weighted SINR floors: threshold_k = beta0 * weight_k."""

    weights: np.ndarray
    beta0: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w <= 0):
            raise ConfigurationError("SINR weights must be positive")
        if self.beta0 < 0:
            raise ConfigurationError("beta0 must be non-negative")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, num_users: int, beta0: float) -> "SinrTargets":
        return cls(weights=np.ones(num_users), beta0=float(beta0))

    @property
    def thresholds(self) -> np.ndarray:
        return self.beta0 * self.weights

    @property
    def num_users(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances, caps and geometry for one exposure-minimization solve."""

    region: Region = field(default_factory=Region)
    min_distance: float | None = None  # defaults to wavelength / 2
    mu0: float = 1e-3
    a: float = 0.9
    eps_inner: float = 1e-4       # inner-loop objective decrease threshold
    eps_outer: float = 1e-7       # stopping-indicator threshold on xi
    eps_position: float = 1e-4    # per-antenna SCA decrease threshold
    # optional scale-relative floors on the two decrease thresholds; at large
    # constraint scales the absolute thresholds above force full-cap sweeps
    eps_inner_rel: float = 0.0
    eps_position_rel: float = 0.0
    feasibility_slack: float = 1e-5
    max_outer: int = 500
    max_inner: int = 200
    max_sca_iter: int = 30
    plateau_window: int = 20
    plateau_rel_decrease: float = 0.01
    optimize_positions: bool = True
    # when set, the position block picks each antenna's best point from this
    # (n, 2) lattice instead of taking continuous majorize-minimize steps
    position_grid: tuple | None = None
    polish: bool = True

    def __post_init__(self):
        if not (0.0 < self.a < 1.0):
            raise ConfigurationError("penalty scaling a must lie in (0, 1)")
        if self.mu0 <= 0:
            raise ConfigurationError("initial penalty factor must be positive")

    @property
    def wavelength(self) -> float:
        return self.region.wavelength

    @property
    def distance(self) -> float:
        return self.min_distance if self.min_distance is not None else self.wavelength / 2.0

    def to_dict(self) -> dict:
        return {
            "half_width": self.region.half_width,
            "wavelength": self.region.wavelength,
            "min_distance": self.distance,
            "mu0": self.mu0,
            "a": self.a,
            "eps_inner": self.eps_inner,
            "eps_outer": self.eps_outer,
            "eps_position": self.eps_position,
            "eps_inner_rel": self.eps_inner_rel,
            "eps_position_rel": self.eps_position_rel,
            "feasibility_slack": self.feasibility_slack,
            "max_outer": self.max_outer,
            "max_inner": self.max_inner,
            "max_sca_iter": self.max_sca_iter,
            "optimize_positions": self.optimize_positions,
            "discrete_positions": self.position_grid is not None,
        }


# ---------------------------------------------------------------------------
# geometry cache: per-user direction cosines and conjugated gains, stacked
# ---------------------------------------------------------------------------

class _GeoCache:
    def __init__(self, realization: ChannelRealization, wavelength: float):
        self.kappa = 2.0 * np.pi / wavelength
        self.ax = np.stack([ps.direction_cosines[0] for ps in realization.paths])  # (K, L)
        self.ay = np.stack([ps.direction_cosines[1] for ps in realization.paths])
        self.fbar = np.stack([ps.path_gains.conj() for ps in realization.paths])
        self.abs_gain_sum = np.abs(self.fbar).sum(axis=1)  # (K,)

    def phase_terms(self, t) -> np.ndarray:
        """Per-path terms of conj(h_k) for one antenna at t, shape (K, L)."""
        return self.fbar * np.exp(1j * self.kappa * (t[0] * self.ax + t[1] * self.ay))

    def conj_column(self, t):
        """conj(h_k) values and their position derivatives for one antenna at t."""
        q = self.phase_terms(t)
        hbar = q.sum(axis=1)
        jk = 1j * self.kappa
        return hbar, jk * (self.ax * q).sum(axis=1), jk * (self.ay * q).sum(axis=1)


def _ragged(realization: ChannelRealization) -> bool:
    counts = {ps.count for ps in realization.paths}
    return len(counts) > 1


def _geo(realization: ChannelRealization, wavelength: float) -> _GeoCache:
    if _ragged(realization):
        raise ConfigurationError("per-user path counts must match")
    return _GeoCache(realization, wavelength)


# ---------------------------------------------------------------------------
# block 1: precoder update
# ---------------------------------------------------------------------------

def solve_precoder(H: np.ndarray, Z: np.ndarray, model: SarModel, mu: float) -> np.ndarray:
    """Minimizer of the penalized objective over the precoder columns.

    Solves (R + R^H + 2 mu sum_i h_i h_i^H) p_k = 2 mu sum_i z_{i,k} h_i for
    every k at once. Adds a tiny ridge only if the system reports singular.
    """
    if mu <= 0:
        raise SolverError("precoder step requires a positive penalty factor")
    R = model.matrix
    A = R + R.conj().T + 2.0 * mu * (H.T @ H.conj())
    B = 2.0 * mu * (H.T @ Z)
    try:
        P = np.linalg.solve(A, B)
    except np.linalg.LinAlgError:
        P = None
    scale = max(1.0, float(np.linalg.norm(B)))
    if P is None or np.linalg.norm(A @ P - B) > 1e-8 * scale:
        ridge = 1e-12
        try:
            P = np.linalg.solve(A + ridge * np.eye(A.shape[0]), B)
        except np.linalg.LinAlgError as exc:
            raise SolverError(
                "singular precoder system; increase mu or regularize the SAR matrix") from exc
        if np.linalg.norm(A @ P - B) > 1e-8 * scale:
            raise SolverError(
                "precoder stationarity residual too large; increase mu or regularize")
    return P


# ---------------------------------------------------------------------------
# block 2: auxiliary variables via per-user duals
# ---------------------------------------------------------------------------

def solve_auxiliary(H: np.ndarray, P: np.ndarray, targets: SinrTargets,
                    noise_variance: float):
    """Project the couplings h_k^H p_j onto the SINR-feasible set, per user.

    Returns (Z, zeta, gap): for users already satisfying their constraint
    zeta_k = 0 and the row of Z equals the raw couplings; otherwise zeta_k in
    (0, 1) is the multiplier that puts the constraint on its boundary, found
    by bisection on the monotone root function. The returned multiplier is the
    feasible end of the final bracket, so Z always satisfies the constraints;
    ``gap`` certifies how far the projection value can sit above the true
    minimum (the objective difference across the final bracket).
    """
    C = H.conj() @ P  # (K, K), row k holds h_k^H p_j
    K = C.shape[0]
    gbar = targets.thresholds
    abs2 = np.abs(C) ** 2
    sig = np.diag(abs2).copy()
    # sum interference off-diagonal directly: subtracting the diagonal from the
    # row sum cancels catastrophically when the signal dominates by ~1/eps
    off = abs2.copy()
    np.fill_diagonal(off, 0.0)
    interf = off.sum(axis=1)
    y0 = sig - gbar * (interf + noise_variance)

    Z = C.copy()
    zeta = np.zeros(K)
    need = y0 < 0
    if not np.any(need):
        return Z, zeta, 0.0

    idx = np.where(need)[0]
    s = sig[idx]
    w = interf[idx] * gbar[idx]
    g = gbar[idx]
    gn = g * noise_variance

    def rootfun(z):
        return s / (1.0 - z) ** 2 - w / (1.0 + z * g) ** 2 - gn

    def value(z):
        # squared projection distance along the dual path at multiplier z
        return s * (z / (1.0 - z)) ** 2 + (interf[idx] * (z * g / (1.0 + z * g)) ** 2)

    hi0 = 1.0 - 1e-9
    y_hi = rootfun(np.full(idx.size, hi0))
    if np.any(y_hi <= 0.0):
        raise DegenerateUserError(idx[y_hi <= 0.0].tolist())

    lo = np.zeros(idx.size)
    hi = np.full(idx.size, hi0)
    tol_y = 1e-10 * gn
    for _ in range(60):
        if np.all((y_hi <= tol_y) | (hi - lo < 1e-14)):
            break
        mid = 0.5 * (lo + hi)
        ym = rootfun(mid)
        below = ym < 0.0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        y_hi = np.where(below, y_hi, ym)
    z_opt = hi  # feasible side of the bracket
    gap = float(np.sum(value(hi) - value(lo)))

    zeta[idx] = z_opt
    Z[idx, :] = C[idx, :] / (1.0 + z_opt * g)[:, None]
    Z[idx, idx] = np.diag(C)[idx] / (1.0 - z_opt)
    return Z, zeta, gap


# ---------------------------------------------------------------------------
# block 3: antenna position step
# ---------------------------------------------------------------------------

def coupling_residual(positions: np.ndarray, realization: ChannelRealization,
                      P: np.ndarray, Z: np.ndarray, wavelength: float) -> float:
    """Total squared coupling residual sum |h_k^H p_j - z_{k,j}|^2 (the xi indicator)."""
    H = channel_matrix(positions, realization, wavelength)
    E = H.conj() @ P - Z
    return float(np.vdot(E, E).real)


# the position objective is the same residual, read as a function of one antenna
position_objective = coupling_residual


def _gradient_from_terms(q: np.ndarray, geo: _GeoCache, P: np.ndarray,
                         E: np.ndarray, m: int) -> np.ndarray:
    s = E.conj() @ P[m, :]
    sq = s[:, None] * q
    gx = -2.0 * geo.kappa * np.imag(np.sum(geo.ax * sq))
    gy = -2.0 * geo.kappa * np.imag(np.sum(geo.ay * sq))
    return np.array([gx, gy])


def _gradient_at(m: int, positions: np.ndarray, geo: _GeoCache,
                 P: np.ndarray, E: np.ndarray) -> np.ndarray:
    return _gradient_from_terms(geo.phase_terms(positions[m]), geo, P, E, m)


def position_gradient(m: int, positions: np.ndarray, realization: ChannelRealization,
                      P: np.ndarray, Z: np.ndarray, wavelength: float) -> np.ndarray:
    """Exact gradient of the coupling residual with respect to t_m."""
    geo = _geo(realization, wavelength)
    H = channel_matrix(positions, realization, wavelength)
    E = H.conj() @ P - Z
    return _gradient_at(m, positions, geo, P, E)


def _majorizers(geo: _GeoCache, P: np.ndarray, Z: np.ndarray, wavelength: float) -> np.ndarray:
    """Curvature bounds tau_m for all antennas (position-independent)."""
    absP = np.abs(P)              # (M, K)
    colsum = absP.sum(axis=0)     # (K,)
    s2 = float((geo.abs_gain_sum ** 2).sum())
    u = geo.abs_gain_sum @ np.abs(Z)  # (K,): sum_k S_k |z_{k,j}|
    per_antenna = (
        s2 * (2.0 * absP * (colsum[None, :] - absP) + absP ** 2).sum(axis=1)
        + 2.0 * (absP * u[None, :]).sum(axis=1)
    )
    return (8.0 * np.pi ** 2 / wavelength ** 2) * per_antenna


def position_majorizer(m: int, positions: np.ndarray, realization: ChannelRealization,
                       P: np.ndarray, Z: np.ndarray, wavelength: float) -> float:
    """Scalar tau_m with tau_m * I >= Hessian of the per-antenna objective."""
    geo = _geo(realization, wavelength)
    return float(_majorizers(geo, P, Z, wavelength)[m])


_TRIU_CACHE: dict = {}


def _triu_pairs(n: int):
    pair = _TRIU_CACHE.get(n)
    if pair is None:
        pair = np.triu_indices(n, k=1)
        _TRIU_CACHE[n] = pair
    return pair


def _qp_constraints(t_old: np.ndarray, region: Region, others: np.ndarray,
                    min_distance: float):
    """Rows (a, b) of a.t >= b: the four box faces plus one linearized spacing
    constraint per neighbor; every row is unit-norm."""
    a_m = region.half_width_m
    others = np.atleast_2d(others) if others.size else np.empty((0, 2))
    n = others.shape[0]
    A = np.empty((4 + n, 2))
    b = np.empty(4 + n)
    A[0] = (1.0, 0.0)
    A[1] = (-1.0, 0.0)
    A[2] = (0.0, 1.0)
    A[3] = (0.0, -1.0)
    b[:4] = -a_m
    if n:
        d = t_old[None, :] - others
        nrm = np.sqrt((d ** 2).sum(axis=1))
        if np.any(nrm <= 0.0):
            return None, None
        N = d / nrm[:, None]
        A[4:] = N
        b[4:] = min_distance + (N * others).sum(axis=1)
    return A, b


def position_qp(tau: float, grad: np.ndarray, t_old: np.ndarray, region: Region,
                others: np.ndarray, min_distance: float) -> np.ndarray | None:
    """Minimize the quadratic surrogate under box and linearized spacing constraints.

    The problem is two-dimensional and strictly convex, so the optimum is found
    exactly by enumerating active sets: the free minimum, every single
    constraint, and every constraint pair. Returns None if nothing is feasible.
    """
    others = np.asarray(others, dtype=float)
    A, b = _qp_constraints(t_old, region, np.atleast_2d(others) if others.size else others,
                           min_distance)
    if A is None:
        return None
    c = grad - tau * t_old
    tol = 1e-11 * np.maximum(1.0, np.abs(b))

    t_free = -c / tau
    if np.all(A @ t_free >= b - tol):
        return region.clip(t_free)

    n = A.shape[0]
    ii, jj = _triu_pairs(n)
    cand = np.empty((n + ii.size, 2))

    # single-constraint minimizers: project the free minimum onto each line
    base = b[:, None] * A
    dirs = np.empty_like(A)
    dirs[:, 0] = -A[:, 1]
    dirs[:, 1] = A[:, 0]
    s = -(dirs @ c + tau * (dirs * base).sum(axis=1)) / tau
    cand[:n] = base + s[:, None] * dirs

    # pairwise vertices; parallel pairs get a far-outside sentinel point
    det = A[ii, 0] * A[jj, 1] - A[ii, 1] * A[jj, 0]
    parallel = np.abs(det) <= 1e-14
    safe = np.where(parallel, 1.0, det)
    cand[n:, 0] = (b[ii] * A[jj, 1] - b[jj] * A[ii, 1]) / safe
    cand[n:, 1] = (A[ii, 0] * b[jj] - A[jj, 0] * b[ii]) / safe
    if np.any(parallel):
        cand[n:][parallel] = 1e30
    feas = np.all(cand @ A.T >= b[None, :] - tol[None, :], axis=1)
    if not np.any(feas):
        return None
    cand = cand[feas]
    vals = 0.5 * tau * (cand ** 2).sum(axis=1) + cand @ c
    vmin = vals.min()
    ties = vals <= vmin + 1e-14 * max(1.0, abs(vmin))
    cand = cand[ties]
    best = cand[np.lexsort((cand[:, 1], cand[:, 0]))[0]]
    return region.clip(best)


def _step_from_gradient(t_old: np.ndarray, grad: np.ndarray, tau: float,
                        region: Region, min_distance: float, others: np.ndarray):
    """Free majorize-minimize step with QP fallback. Returns (t_new, status)."""
    cand = t_old - grad / tau
    dist_ok = others.size == 0 or np.all(
        ((others - cand[None, :]) ** 2).sum(axis=1) >= min_distance ** 2)
    if dist_ok and region.contains(cand):
        return cand, "free"
    cand = position_qp(tau, grad, t_old, region, others, min_distance)
    if cand is None:
        return t_old, "stuck"
    return cand, "qp"


def _step_antenna(m: int, positions: np.ndarray, geo: _GeoCache, P: np.ndarray,
                  E: np.ndarray, tau: float, region: Region, min_distance: float,
                  others: np.ndarray | None = None):
    """One majorize-minimize step for antenna m. Returns (t_new, status)."""
    t_old = positions[m]
    if others is None:
        others = np.delete(positions, m, axis=0)
    if tau <= 0.0:
        return t_old, "skipped"
    grad = _gradient_at(m, positions, geo, P, E)
    return _step_from_gradient(t_old, grad, tau, region, min_distance, others)


def update_position(m: int, positions: np.ndarray, realization: ChannelRealization,
                    P: np.ndarray, Z: np.ndarray, region: Region, min_distance: float,
                    wavelength: float):
    """Single position update for antenna m (free step, QP fallback).

    Returns (t_new, status) with status in {"free", "qp", "stuck", "skipped"}.
    """
    geo = _geo(realization, wavelength)
    H = channel_matrix(positions, realization, wavelength)
    E = H.conj() @ P - Z
    tau = float(_majorizers(geo, P, Z, wavelength)[m])
    return _step_antenna(m, positions, geo, P, E, tau, region, min_distance)


def _select_positions_on_grid(positions, geo, P, Z, region, min_distance, config, Hbar):
    """Per-antenna exhaustive search over the lattice: each antenna moves to
    the candidate that minimizes the coupling residual exactly (its current
    point included, so the objective never increases). Mutates positions/Hbar.
    """
    grid = np.asarray(config.position_grid, dtype=float)
    M = positions.shape[0]
    E = Hbar @ P - Z
    obj = float(np.vdot(E, E).real)
    pnorm2 = (np.abs(P) ** 2).sum(axis=1)  # ||P[m, :]||^2 per antenna
    for m in range(M):
        others = np.delete(positions, m, axis=0)
        dist2 = ((grid[:, None, :] - others[None, :, :]) ** 2).sum(axis=-1)
        ok = np.all(dist2 >= min_distance ** 2, axis=1) if others.size else \
            np.ones(len(grid), dtype=bool)
        ok &= np.all(np.abs(grid) <= region.half_width_m, axis=1)
        if not np.any(ok):
            continue
        cand = np.vstack([positions[m][None, :], grid[ok]])
        # conj-channel values for all candidates at once: (n_c, K)
        phase = np.exp(1j * geo.kappa * (cand[:, 0, None, None] * geo.ax[None, :, :]
                                         + cand[:, 1, None, None] * geo.ay[None, :, :]))
        hbar_c = (geo.fbar[None, :, :] * phase).sum(axis=2)
        delta = hbar_c - Hbar[:, m][None, :]
        s = E.conj() @ P[m, :]
        obj_c = obj + 2.0 * np.real(delta @ s) + (np.abs(delta) ** 2).sum(axis=1) * pnorm2[m]
        best = int(np.lexsort((cand[:, 1], cand[:, 0], obj_c))[0])
        if obj_c[best] >= obj:
            continue
        positions[m] = cand[best]
        Hbar[:, m] = hbar_c[best]
        E = E + delta[best][:, None] * P[m, :][None, :]
        obj = float(np.vdot(E, E).real)
    E = Hbar @ P - Z
    return E, float(np.vdot(E, E).real), False


def _sweep_positions(positions, geo, P, Z, region, min_distance, config, Hbar):
    """Sequential per-antenna SCA descents; mutates positions/Hbar, returns (E, obj, stuck)."""
    if config.position_grid is not None:
        return _select_positions_on_grid(positions, geo, P, Z, region, min_distance,
                                         config, Hbar)
    M = positions.shape[0]
    taus = _majorizers(geo, P, Z, region.wavelength)
    any_stuck = False
    step_tol = 1e-8 * region.wavelength  # moves below this cannot matter
    for m in range(M):
        tau = float(taus[m])
        if tau <= 0.0:
            continue
        # refresh exactly per antenna so rank-1 update drift cannot accumulate
        E = Hbar @ P - Z
        obj = float(np.vdot(E, E).real)
        others = np.delete(positions, m, axis=0)
        q = geo.phase_terms(positions[m])
        for _ in range(config.max_sca_iter):
            grad = _gradient_from_terms(q, geo, P, E, m)
            if np.abs(grad).max() / tau < step_tol:
                break
            t_new, status = _step_from_gradient(positions[m], grad, tau, region,
                                                min_distance, others)
            if status == "stuck":
                any_stuck = True
                break
            q_new = geo.phase_terms(t_new)
            hbar_new = q_new.sum(axis=1)
            delta = hbar_new - Hbar[:, m]
            E_new = E + delta[:, None] * P[m, :][None, :]
            obj_new = float(np.vdot(E_new, E_new).real)
            # the tolerance must stay relative: any absolute slack here gets
            # amplified by mu in the penalized objective the caller tracks
            if obj_new > obj * (1.0 + 1e-12):
                break  # numerically flat; keep the current point
            positions[m] = t_new
            Hbar[:, m] = hbar_new
            E = E_new
            q = q_new
            decrease = obj - obj_new
            obj = obj_new
            if decrease < max(config.eps_position, config.eps_position_rel * abs(obj)):
                break
    E = Hbar @ P - Z
    return E, float(np.vdot(E, E).real), any_stuck


# ---------------------------------------------------------------------------
# inner alternating loop and the full two-layer solve
# ---------------------------------------------------------------------------

def _matched_filter(H: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1)
    norms = np.where(norms > 0, norms, 1.0)
    return (H / norms[:, None]).T.conj()


def _penalized_objective(P, E, model, mu):
    return sar_value(P, model) + mu * float(np.vdot(E, E).real)


def inner_loop(realization: ChannelRealization, positions: np.ndarray, P: np.ndarray,
               Z: np.ndarray, model: SarModel, targets: SinrTargets, mu: float,
               config: SolverConfig, trace: list | None = None, outer_index: int = 0):
    """Alternate precoder / auxiliary / position blocks until the penalized
    objective decrease falls below eps_inner. Returns (P, Z, positions, Hbar, sweeps).
    """
    geo = _geo(realization, config.wavelength)
    noise = realization.noise_variance
    positions = np.array(positions, dtype=float)
    Hbar = channel_matrix(positions, realization, config.wavelength).conj()
    prev = None
    last_value = None
    recovered = False
    sweeps = 0

    def record(label, value, extra_slack=0.0):
        nonlocal prev
        if trace is not None:
            trace.append((outer_index, label, value))
        if prev is not None and value > prev + 1e-9 * max(1.0, abs(prev)) + extra_slack:
            raise SolverError(
                f"inner objective increased at {label}: {prev!r} -> {value!r}")
        prev = value

    for _ in range(config.max_inner):
        sweeps += 1
        P = solve_precoder(Hbar.conj(), Z, model, mu)
        E = Hbar @ P - Z
        record("precoder", _penalized_objective(P, E, model, mu))

        try:
            Z, _, gap = solve_auxiliary(Hbar.conj(), P, targets, noise)
        except DegenerateUserError as err:
            if recovered:
                raise
            recovered = True
            for k in err.users:
                h = Hbar[k].conj()
                P[:, k] = h / max(np.linalg.norm(h), 1e-300)
            Z, _, gap = solve_auxiliary(Hbar.conj(), P, targets, noise)
            prev = None  # objective baseline is void after re-initialization
            if trace is not None:
                trace.append((outer_index, "recovered", None))
        E = Hbar @ P - Z
        # the projection is certified optimal only to within mu * gap
        record("auxiliary", _penalized_objective(P, E, model, mu), extra_slack=mu * gap)

        if config.optimize_positions:
            E, _, _ = _sweep_positions(positions, geo, P, Z, config.region,
                                       config.distance, config, Hbar)
            record("positions", _penalized_objective(P, E, model, mu))

        value = prev
        threshold = max(config.eps_inner, config.eps_inner_rel * abs(value))
        if last_value is not None and last_value - value < threshold:
            break
        last_value = value
    return P, Z, positions, Hbar, sweeps


def polish_scale(P: np.ndarray, H: np.ndarray, targets: SinrTargets,
                 noise_variance: float) -> float | None:
    """Scale factor c putting the most-violated SINR constraint exactly on its
    boundary; None when no scaling can reach feasibility."""
    gbar = targets.thresholds
    active = gbar > 0
    if not np.any(active):
        return 0.0
    abs2 = np.abs(H.conj() @ P) ** 2
    sig = np.diag(abs2).copy()
    off = abs2.copy()
    np.fill_diagonal(off, 0.0)
    interf = off.sum(axis=1)
    denom = sig[active] / gbar[active] - interf[active]
    if np.any(denom <= 0.0):
        return None
    return float(np.sqrt(np.max(noise_variance / denom)))


@dataclass
class SolveReport:
    """Full trajectory and the emitted solution of one solve."""

    precoder: np.ndarray
    layout: np.ndarray
    sar: float
    sinr: np.ndarray
    sinr_slack: np.ndarray
    beta_achieved: float
    min_distance: float
    in_region: bool
    feasible: bool
    converged: bool
    status: str
    xi: float
    outer_iterations: int
    inner_sweeps_total: int
    outer_trace: list
    inner_objective_trace: list
    polish_factor: float
    wall_time_s: float
    warnings: list
    config: dict
    aux: np.ndarray | None = None
    final_mu: float = 0.0

    def to_json_dict(self) -> dict:
        return {
            "precoder": [[[v.real, v.imag] for v in row] for row in self.precoder],
            "layout": self.layout.tolist(),
            "sar": self.sar,
            "sinr": self.sinr.tolist(),
            "sinr_slack": self.sinr_slack.tolist(),
            "beta_achieved": self.beta_achieved,
            "min_distance": self.min_distance,
            "in_region": self.in_region,
            "feasible": self.feasible,
            "converged": self.converged,
            "status": self.status,
            "xi": self.xi,
            "outer_iterations": self.outer_iterations,
            "inner_sweeps_total": self.inner_sweeps_total,
            "outer_trace": [list(row) for row in self.outer_trace],
            "inner_objective_trace": [list(row) for row in self.inner_objective_trace],
            "polish_factor": self.polish_factor,
            "wall_time_s": self.wall_time_s,
            "warnings": list(self.warnings),
            "config": dict(self.config),
            "final_mu": self.final_mu,
        }


def solve_sar_min(realization: ChannelRealization, targets: SinrTargets, model: SarModel,
                  config: SolverConfig | None = None,
                  initial_layout: np.ndarray | None = None,
                  initial_precoder: np.ndarray | None = None) -> SolveReport:
    """Minimize exposure subject to per-user SINR floors, spacing and region
    constraints, via the two-layer penalty algorithm."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    M = model.n_antennas
    K = realization.num_users
    if targets.num_users != K:
        raise ConfigurationError("targets and channel disagree on the user count")
    noise = realization.noise_variance
    region = config.region
    dmin = config.distance

    if initial_layout is None:
        positions = uniform_line_layout(M, region)
    else:
        positions = np.array(initial_layout, dtype=float)
        if positions.shape != (M, 2):
            raise ConfigurationError("initial layout must have shape (M, 2)")
    if not layout_is_feasible(positions, region, dmin):
        raise ConfigurationError("initial antenna layout violates region or spacing")

    H = channel_matrix(positions, realization, config.wavelength)
    P = np.array(initial_precoder, dtype=complex) if initial_precoder is not None \
        else _matched_filter(H)
    warnings: list[str] = []
    status = "max_outer"
    converged = False
    outer_trace: list[tuple] = []
    inner_trace: list[tuple] = []
    xi_hist: list[float] = []
    xi = np.inf
    mu = config.mu0
    sweeps_total = 0
    outer_done = 0

    try:
        Z, _, _ = solve_auxiliary(H, P, targets, noise)
    except DegenerateUserError as err:
        for k in err.users:
            P[:, k] = H[k] / max(np.linalg.norm(H[k]), 1e-300)
        try:
            Z, _, _ = solve_auxiliary(H, P, targets, noise)
        except DegenerateUserError:
            warnings.append("degenerate_user")
            Z = np.zeros((K, K), dtype=complex)
            status = "degenerate"

    if status != "degenerate":
        for outer in range(config.max_outer):
            try:
                P, Z, positions, Hbar, sweeps = inner_loop(
                    realization, positions, P, Z, model, targets, mu, config,
                    trace=inner_trace, outer_index=outer)
            except DegenerateUserError:
                warnings.append("degenerate_user")
                status = "degenerate"
                break
            sweeps_total += sweeps
            outer_done = outer + 1
            H = Hbar.conj()
            E = Hbar @ P - Z
            xi = float(np.vdot(E, E).real)
            obj = sar_value(P, model) + mu * xi
            outer_trace.append((outer, mu, xi, obj, sweeps))
            xi_hist.append(xi)

            gbar = targets.thresholds
            sinrs = sinr_all(P, H, noise)
            with np.errstate(divide="ignore", invalid="ignore"):
                slack = np.where(gbar > 0, sinrs / np.where(gbar > 0, gbar, 1.0) - 1.0, np.inf)
            if xi < config.eps_outer and np.min(slack) >= -config.feasibility_slack:
                converged = True
                status = "converged"
                break

            w = config.plateau_window
            if len(xi_hist) > w and xi_hist[-w - 1] > 0:
                rel = (xi_hist[-w - 1] - xi_hist[-1]) / xi_hist[-w - 1]
                if rel < config.plateau_rel_decrease:
                    status = "plateau"
                    break
            mu = mu / config.a

    polish_factor = 1.0
    if config.polish and status in ("converged", "plateau", "max_outer"):
        c = polish_scale(P, H, targets, noise)
        if c is None:
            warnings.append("polish_unreachable")
        else:
            P = c * P
            Z = c * Z
            polish_factor = c
            if converged and abs(c - 1.0) > 1e-2:
                warnings.append("large_polish")
            E = H.conj() @ P - Z
            xi = float(np.vdot(E, E).real)

    sinrs = sinr_all(P, H, noise)
    gbar = targets.thresholds
    slack = np.where(gbar > 0, sinrs / np.where(gbar > 0, gbar, 1.0) - 1.0, 1.0)
    mind = min_pairwise_distance(positions)
    in_region = region.contains(positions, tol=1e-9)
    feasible = bool(np.min(slack) >= -config.feasibility_slack
                    and mind >= dmin - 1e-9 and in_region)
    beta = float(np.min(sinrs / targets.weights))
    return SolveReport(
        precoder=P,
        layout=positions,
        sar=sar_value(P, model),
        sinr=sinrs,
        sinr_slack=slack,
        beta_achieved=beta,
        min_distance=mind,
        in_region=in_region,
        feasible=feasible,
        converged=converged,
        status=status,
        xi=float(xi),
        outer_iterations=outer_done,
        inner_sweeps_total=sweeps_total,
        outer_trace=outer_trace,
        inner_objective_trace=inner_trace,
        polish_factor=polish_factor,
        wall_time_s=time.perf_counter() - t0,
        warnings=warnings,
        config={**config.to_dict(), "beta0": targets.beta0,
                "weights": targets.weights.tolist(), "budget": model.budget},
        aux=Z,
        final_mu=mu,
    )
