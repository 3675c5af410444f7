import numpy as np
import pytest

from fluidsar.channel import Region, channel_matrix, sample_channel, uniform_line_layout
from fluidsar.exposure import paper_sar_matrix, sar_value, synthesize_sar_matrix
from fluidsar.solver import (
    DegenerateUserError,
    SinrTargets,
    position_gradient,
    position_majorizer,
    position_objective,
    position_qp,
    solve_auxiliary,
    solve_precoder,
    update_position,
)

from conftest import NOISE_W, WAVELENGTH, random_complex


# ----------------------------------------------------------- precoder step

def test_precoder_scalar_closed_form(rng):
    # M=K=1: p = mu z h / (r + mu |h|^2)
    r = 1.6
    model = synthesize_sar_matrix(1)
    h = random_complex(rng, 1)
    z = random_complex(rng, (1, 1))
    mu = 0.37
    H = h[None, :]
    P = solve_precoder(H, z, model, mu)
    expected = mu * z[0, 0] * h[0] / (r + mu * abs(h[0]) ** 2)
    assert P[0, 0] == pytest.approx(expected, rel=1e-12)


def test_precoder_zero_aux_gives_zero(rng):
    model = paper_sar_matrix()
    H = random_complex(rng, (4, 4))
    P = solve_precoder(H, np.zeros((4, 4), dtype=complex), model, 1.0)
    assert np.allclose(P, 0.0)


def test_precoder_matches_lstsq_oracle(rng):
    # independent dense construction of the stationarity system, entry by entry
    model = paper_sar_matrix()
    for _ in range(5):
        H = random_complex(rng, (4, 4))
        Z = random_complex(rng, (4, 4))
        mu = rng.uniform(0.05, 5.0)
        P = solve_precoder(H, Z, model, mu)
        R = model.matrix
        A = np.zeros((4, 4), dtype=complex)
        A += R + R.conj().T
        for i in range(4):
            A += 2 * mu * np.outer(H[i], H[i].conj())
        for k in range(4):
            b = np.zeros(4, dtype=complex)
            for i in range(4):
                b += 2 * mu * Z[i, k] * H[i]
            oracle, *_ = np.linalg.lstsq(A, b, rcond=None)
            assert np.allclose(P[:, k], oracle, rtol=1e-8, atol=1e-12)
            # residual of the stationarity condition
            assert np.linalg.norm(A @ P[:, k] - b) < 1e-8 * max(1.0, np.linalg.norm(b))


def test_precoder_is_block_minimizer(rng):
    # perturbing any column must not lower the penalized objective
    model = paper_sar_matrix()
    H = random_complex(rng, (4, 4))
    Z = random_complex(rng, (4, 4))
    mu = 0.8

    def objective(P):
        return sar_value(P, model) + mu * np.linalg.norm(H.conj() @ P - Z) ** 2

    P = solve_precoder(H, Z, model, mu)
    base = objective(P)
    for _ in range(20):
        assert objective(P + 1e-4 * random_complex(rng, (4, 4))) >= base - 1e-12


# ----------------------------------------------------------- auxiliary step

def aux_objective(c_row, z_row):
    return float(np.sum(np.abs(c_row - z_row) ** 2))


def zeta_grid_oracle(c_row, k, gbar, noise, grid=200000):
    """Fine grid search over the dual path, restricted to feasible points.

    Two-stage refinement keeps the grid's own resolution error far below the
    comparison tolerance.
    """
    s = abs(c_row[k]) ** 2
    interf = float(np.sum(np.abs(np.delete(c_row, k)) ** 2))

    def scan(lo, hi):
        zs = np.linspace(lo, hi, grid)
        feas = s / (1 - zs) ** 2 - gbar * interf / (1 + zs * gbar) ** 2 - gbar * noise >= 0
        vals = s * (zs / (1 - zs)) ** 2 + interf * (zs * gbar / (1 + zs * gbar)) ** 2
        vals = np.where(feas, vals, np.inf)
        i = int(np.argmin(vals))
        return zs, vals, i

    zs, vals, i = scan(0.0, 1.0 - 1e-6)
    if not np.isfinite(vals[i]):
        return np.inf
    step = zs[1] - zs[0]
    zs, vals, i = scan(max(0.0, zs[i] - 2 * step), min(1.0 - 1e-6, zs[i] + 2 * step))
    return float(vals[i])


def test_aux_feasible_point_passes_through(rng):
    # already-feasible couplings come back exactly, zeta = 0
    H = random_complex(rng, (4, 3))
    P = H.conj().T * 10.0  # strong matched filter: feasible at modest targets
    targets = SinrTargets.uniform(4, 1e-3)
    Z, zeta, gap = solve_auxiliary(H, P, targets, NOISE_W)
    C = H.conj() @ P
    assert np.array_equal(Z, C)
    assert np.all(zeta == 0.0) and gap == 0.0


def test_aux_k1_closed_form_projection(rng):
    # single user, infeasible: magnitude lifted to the boundary, phase kept
    for _ in range(10):
        h = random_complex(rng, 2)
        p = random_complex(rng, (2, 1), scale=1e-4)
        gbar = rng.uniform(0.5, 4.0)
        targets = SinrTargets(np.ones(1), gbar)
        Z, zeta, _ = solve_auxiliary(h[None, :], p, targets, 1.0)
        c = np.vdot(h, p[:, 0])
        expected = np.sqrt(gbar * 1.0) * np.exp(1j * np.angle(c))
        assert zeta[0] > 0
        assert Z[0, 0] == pytest.approx(expected, rel=1e-6)


def test_aux_matches_grid_oracle(rng):
    # per-user objective within 1e-6 relative of a fine zeta grid search
    K = 4
    for _ in range(12):
        H = random_complex(rng, (K, 4))
        P = random_complex(rng, (4, K), scale=0.3)
        beta0 = rng.uniform(0.5, 3.0)
        targets = SinrTargets.uniform(K, beta0)
        Z, zeta, _ = solve_auxiliary(H, P, targets, 1.0)
        C = H.conj() @ P
        for k in range(K):
            got = aux_objective(C[k], Z[k])
            want = zeta_grid_oracle(C[k], k, beta0, 1.0)
            assert got <= want + 1e-6 * max(1.0, want)
            assert got >= want - 1e-6 * max(1.0, want) - 1e-9


def test_aux_returned_point_is_feasible_and_active(rng):
    K = 3
    for _ in range(20):
        H = random_complex(rng, (K, 4))
        P = random_complex(rng, (4, K), scale=0.2)
        beta0 = rng.uniform(0.5, 5.0)
        targets = SinrTargets.uniform(K, beta0)
        Z, zeta, _ = solve_auxiliary(H, P, targets, 1.0)
        for k in range(K):
            lhs = abs(Z[k, k]) ** 2
            rhs = beta0 * (np.sum(np.abs(np.delete(Z[k], k)) ** 2) + 1.0)
            assert lhs >= rhs * (1 - 1e-12)  # feasible
            if zeta[k] > 0:
                # dual activity: boundary within 1e-8 relative
                assert lhs - rhs <= 1e-8 * rhs


def test_aux_degenerate_user_raises():
    H = np.ones((2, 3), dtype=complex)
    P = np.zeros((3, 2), dtype=complex)  # h^H p = 0 while targets are positive
    with pytest.raises(DegenerateUserError):
        solve_auxiliary(H, P, SinrTargets.uniform(2, 1.0), 1.0)


# ----------------------------------------------------------- position step

def setup_position_instance(rng, M=4, K=4, L=15, scale=1.0):
    real = sample_channel(int(rng.integers(1 << 30)), M, K, L, NOISE_W)
    region = Region(1.0, WAVELENGTH)
    pos = rng.uniform(-region.half_width_m, region.half_width_m, (M, 2))
    P = random_complex(rng, (M, K), scale=scale)
    Z = random_complex(rng, (K, K), scale=scale)
    return real, region, pos, P, Z


def test_position_objective_zero_cases(rng):
    real, region, pos, P, Z = setup_position_instance(rng)
    H = channel_matrix(pos, real, WAVELENGTH)
    exact = H.conj() @ P
    assert position_objective(pos, real, P, exact, WAVELENGTH) == pytest.approx(0.0, abs=1e-20)
    zero = np.zeros_like(P)
    assert position_objective(pos, real, zero, np.zeros_like(Z), WAVELENGTH) == 0.0


def test_position_objective_matches_bruteforce(rng):
    real, region, pos, P, Z = setup_position_instance(rng, M=3, K=2, L=4)
    H = channel_matrix(pos, real, WAVELENGTH)
    acc = 0.0
    for k in range(2):
        for j in range(2):
            acc += abs(np.vdot(H[k], P[:, j]) - Z[k, j]) ** 2
    assert position_objective(pos, real, P, Z, WAVELENGTH) == pytest.approx(acc, rel=1e-12)


def fd_gradient(m, pos, real, P, Z, step):
    g = np.zeros(2)
    for d in range(2):
        up = pos.copy()
        up[m, d] += step
        dn = pos.copy()
        dn[m, d] -= step
        g[d] = (position_objective(up, real, P, Z, WAVELENGTH)
                - position_objective(dn, real, P, Z, WAVELENGTH)) / (2 * step)
    return g


def test_gradient_zero_when_data_zero(rng):
    real, region, pos, _, _ = setup_position_instance(rng, M=2, K=2, L=3)
    zeroP = np.zeros((2, 2), dtype=complex)
    zeroZ = np.zeros((2, 2), dtype=complex)
    g = position_gradient(0, pos, real, zeroP, zeroZ, WAVELENGTH)
    assert np.allclose(g, 0.0)


def test_gradient_matches_finite_differences(rng):
    step = 1e-6 * WAVELENGTH
    for _ in range(15):
        real, region, pos, P, Z = setup_position_instance(rng, M=2, K=2, L=3)
        for m in range(2):
            g = position_gradient(m, pos, real, P, Z, WAVELENGTH)
            fd = fd_gradient(m, pos, real, P, Z, step)
            assert np.linalg.norm(g - fd) / (np.linalg.norm(fd) + 1e-12) <= 1e-5


def test_gradient_single_path_symbolic(rng):
    # one user, one path, one interferer-free column: the objective reduces to
    # |f p e^{-j kappa rho} - z|^2 whose gradient is available symbolically
    L = 1
    theta, phi = rng.uniform(0, np.pi, 2)
    f = random_complex(rng, 1)[0]
    p = random_complex(rng, 1)[0]
    z = random_complex(rng, 1)[0]
    from fluidsar.channel import PathSet, ChannelRealization
    real = ChannelRealization(
        paths=(PathSet(np.array([theta]), np.array([phi]), np.array([f])),),
        noise_variance=NOISE_W)
    pos = rng.uniform(-WAVELENGTH, WAVELENGTH, (1, 2))
    kap = 2 * np.pi / WAVELENGTH
    ax = np.sin(theta) * np.cos(phi)
    ay = np.cos(theta)
    rho = pos[0, 0] * ax + pos[0, 1] * ay
    c = np.conj(f) * np.exp(1j * kap * rho) * p
    # d/dx |c(x) - z|^2 = 2 Re{ conj(c - z) * j kap ax c }
    expected = np.array([
        2 * np.real(np.conj(c - z) * 1j * kap * ax * c),
        2 * np.real(np.conj(c - z) * 1j * kap * ay * c),
    ])
    g = position_gradient(0, pos, real, np.array([[p]]), np.array([[z]]), WAVELENGTH)
    assert np.allclose(g, expected, rtol=1e-9, atol=1e-9)


def test_majorizer_scalar_specialization(rng):
    # M=K=L=1: tau = (8 pi^2 / lambda^2)(|p|^2 |f|^2 + 2 |f| |p z|)
    from fluidsar.channel import PathSet, ChannelRealization
    f = random_complex(rng, 1)[0]
    p = random_complex(rng, 1)[0]
    z = random_complex(rng, 1)[0]
    real = ChannelRealization(
        paths=(PathSet(np.array([0.3]), np.array([1.1]), np.array([f])),),
        noise_variance=NOISE_W)
    pos = np.zeros((1, 2))
    tau = position_majorizer(0, pos, real, np.array([[p]]), np.array([[z]]), WAVELENGTH)
    expected = (8 * np.pi ** 2 / WAVELENGTH ** 2) * (
        abs(p) ** 2 * abs(f) ** 2 + 2 * abs(f) * abs(p * np.conj(z)))
    assert tau == pytest.approx(expected, rel=1e-12)


def test_majorizer_zero_case(rng):
    real, region, pos, _, _ = setup_position_instance(rng, M=2, K=2, L=3)
    zero = np.zeros((2, 2), dtype=complex)
    assert position_majorizer(0, pos, real, zero, zero, WAVELENGTH) == 0.0


def test_majorizer_dominates_fd_hessian(rng):
    step = 1e-5 * WAVELENGTH
    for _ in range(15):
        real, region, pos, P, Z = setup_position_instance(rng, M=3, K=2, L=4)
        for m in range(3):
            tau = position_majorizer(m, pos, real, P, Z, WAVELENGTH)
            # FD Hessian of the objective in t_m
            Hm = np.zeros((2, 2))
            for d in range(2):
                up = pos.copy()
                up[m, d] += step
                dn = pos.copy()
                dn[m, d] -= step
                gu = position_gradient(m, up, real, P, Z, WAVELENGTH)
                gd = position_gradient(m, dn, real, P, Z, WAVELENGTH)
                Hm[:, d] = (gu - gd) / (2 * step)
            lam_max = np.linalg.eigvalsh((Hm + Hm.T) / 2).max()
            assert tau >= lam_max


def test_majorization_upper_bound_property(rng):
    # q(t) <= q(t0) + g.(t - t0) + tau/2 |t - t0|^2 for |t - t0| <= lambda
    for _ in range(25):
        real, region, pos, P, Z = setup_position_instance(rng, M=2, K=2, L=4)
        m = int(rng.integers(2))
        base = position_objective(pos, real, P, Z, WAVELENGTH)
        g = position_gradient(m, pos, real, P, Z, WAVELENGTH)
        tau = position_majorizer(m, pos, real, P, Z, WAVELENGTH)
        delta = rng.uniform(-1, 1, 2)
        delta *= rng.uniform(0, WAVELENGTH) / max(np.linalg.norm(delta), 1e-12)
        moved = pos.copy()
        moved[m] += delta
        lhs = position_objective(moved, real, P, Z, WAVELENGTH)
        rhs = base + g @ delta + 0.5 * tau * (delta @ delta)
        assert lhs <= rhs + 1e-9
        # equality at the expansion point
        assert position_objective(pos, real, P, Z, WAVELENGTH) == pytest.approx(base)


# ----------------------------------------------------------- QP and update

def qp_objective(tau, grad, t_old, t):
    c = grad - tau * t_old
    return 0.5 * tau * float(t @ t) + float(c @ t)


def test_qp_box_clip_without_neighbors(rng, region):
    # gradient pushing outside the box, no neighbors: exact clipped minimum
    tau = 3.0
    t_old = np.array([0.8, -0.3]) * region.half_width_m
    grad = np.array([-1.0, 0.2]) * tau * region.half_width_m
    free = t_old - grad / tau
    assert not region.contains(free)
    sol = position_qp(tau, grad, t_old, region, np.empty((0, 2)), WAVELENGTH / 2)
    assert np.allclose(sol, region.clip(free), atol=1e-12)


def test_qp_matches_grid_oracle(rng, region):
    # dense grid over the linearized feasible set
    lam = WAVELENGTH
    for _ in range(10):
        tau = rng.uniform(0.5, 5.0)
        t_old = rng.uniform(-0.5, 0.5, 2) * region.half_width_m
        others = rng.uniform(-1, 1, (3, 2)) * region.half_width_m
        # keep t_old strictly feasible for the linearization
        others = others[np.linalg.norm(others - t_old, axis=1) >= WAVELENGTH / 2]
        grad = rng.uniform(-1, 1, 2) * tau * lam * 20
        sol = position_qp(tau, grad, t_old, region, others, WAVELENGTH / 2)
        if sol is None:
            continue
        # linearized constraints at t_old
        a_m = region.half_width_m
        xs = np.linspace(-a_m, a_m, 201)
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        ok = np.ones(len(pts), dtype=bool)
        for t_l in others:
            d = t_old - t_l
            n = d / np.linalg.norm(d)
            ok &= (pts - t_l) @ n >= WAVELENGTH / 2
        pts = pts[ok]
        vals = 0.5 * tau * (pts ** 2).sum(1) + pts @ (grad - tau * t_old)
        best = vals.min()
        got = qp_objective(tau, grad, t_old, sol)
        # within one grid cell of the dense-search optimum
        cell = 2 * a_m / 200
        slack = cell * (np.linalg.norm(grad) + tau * (np.linalg.norm(sol) + cell))
        assert got <= best + slack
        # and the QP point itself satisfies the constraints
        assert region.contains(sol, tol=1e-12)
        for t_l in others:
            d = t_old - t_l
            n = d / np.linalg.norm(d)
            assert (sol - t_l) @ n >= WAVELENGTH / 2 - 1e-9


def test_update_position_fixed_point(rng, region):
    # zero gradient at a feasible point: position unchanged
    real, _, pos, P, Z = setup_position_instance(rng, M=2, K=2, L=3)
    pos = uniform_line_layout(2, region)
    H = channel_matrix(pos, real, WAVELENGTH)
    exact = H.conj() @ P
    t_new, status = update_position(0, pos, real, P, exact, region,
                                    WAVELENGTH / 2, WAVELENGTH)
    assert np.allclose(t_new, pos[0], atol=1e-12)


def test_update_position_respects_constraints(rng, region):
    for _ in range(20):
        real, _, pos, P, Z = setup_position_instance(rng, M=4, K=3, L=5, scale=2.0)
        pos = uniform_line_layout(4, region)
        m = int(rng.integers(4))
        t_new, status = update_position(m, pos, real, P, Z, region,
                                        WAVELENGTH / 2, WAVELENGTH)
        assert status in ("free", "qp", "stuck", "skipped")
        moved = pos.copy()
        moved[m] = t_new
        assert region.contains(moved, tol=1e-12)
        others = np.delete(pos, m, axis=0)
        assert np.all(np.linalg.norm(others - t_new, axis=1) >= WAVELENGTH / 2 - 1e-9)
