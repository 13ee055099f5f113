"""WMMSE solver, its (u, w, mu) decomposition, and grid-search oracles.

The weighted-MMSE alternating solver maximizes the weighted sum rate under a
total power budget. Each iterate is summarized by K complex receiver
coefficients u, K positive MSE weights w, and one dual scalar mu >= 0; the
beamformer is reconstructed from that triple in closed form, which is the
low-dimensional target the predictor networks learn.
"""

from dataclasses import dataclass

import numpy as np

from . import objective
from .errors import CapabilityError, DegenerateInputError, SingularMatrixError
from .linalg import (
    PIVOT_RTOL,
    hermitian_rank1_sum,
    hpd_solve,
    normalize_to_power,
    total_power,
)


@dataclass
class ComponentTriple:
    """Decomposed WMMSE state: receiver gains u, MSE weights w, dual mu."""

    u: np.ndarray  # (K,) complex128
    w: np.ndarray  # (K,) float64
    mu: float


@dataclass
class WmmseResult:
    v: np.ndarray  # (N, K) beamformer
    components: ComponentTriple  # triple recomputed at the returned iterate
    iterations: int
    wsr_trace: np.ndarray  # WSR of each iterate, initial point included


@dataclass
class OracleResult:
    wsr: float
    lam: np.ndarray  # (K,) dual simplex point
    p: np.ndarray  # (K,) power split
    v: np.ndarray  # (N, K) best beamformer found


def compute_w(h, v, cfg):
    """MSE weights w_k = 1 + SINR_k (total over interference-plus-noise)."""
    a2 = objective.batch_coupling(h[None], v[None])[0]
    signal = np.diag(a2)
    totals = cfg.sigma2 + a2.sum(axis=1)
    return totals / (totals - signal)


def compute_u(h, v, cfg):
    """MMSE receiver gains u_k = h_k^H v_k / (sigma2 + sum_j |h_k^H v_j|^2)."""
    g = h.conj() @ v
    totals = cfg.sigma2 + np.sum(np.abs(g) ** 2, axis=1)
    return np.diag(g) / totals


def _component_scales(u, w, cfg):
    """Per-user reconstruction scales alpha_k u_k w_k."""
    return cfg.alpha_vec * u * w


def _assemble_s(h, u, w, cfg):
    """S = sum_k alpha_k |u_k|^2 w_k h_k h_k^H, the shared quadratic term."""
    coeffs = cfg.alpha_vec * np.abs(u) ** 2 * w
    return hermitian_rank1_sum(coeffs, h)


def reconstruct_v(h, components, cfg):
    """Closed-form beamformer v_k = alpha_k u_k w_k (S + mu I)^{-1} h_k."""
    u = np.asarray(components.u, dtype=np.complex128)
    w = np.asarray(components.w, dtype=np.float64)
    s = _assemble_s(h, u, w, cfg)
    x = hpd_solve(s, components.mu, h.T)  # columns (S + mu I)^{-1} h_k
    return x * _component_scales(u, w, cfg)[None, :]


def solve_mu(h, u, w, cfg, rtol=1e-9, max_iters=200):
    """Smallest mu >= 0 putting the reconstructed power at the budget.

    The reconstructed power is strictly decreasing in mu, so a bisection
    suffices: returns 0 when the power at mu = 0 is already within budget,
    otherwise the mu with power in [P (1 - rtol), P]. Raises
    DegenerateInputError when all reconstruction scales vanish (the power can
    then never reach P).

    With fewer users than antennas S can be rank deficient while the budget
    is slack (the unconstrained optimum). The mu -> 0+ limit of the
    reconstruction is still finite because every scaled column h_k lies in
    the range of S, so instead of 0 this returns a floor proportional to
    trace(S) that keeps the downstream Cholesky solve positive definite and
    perturbs that limit by a negligible relative amount.
    """
    u = np.asarray(u, dtype=np.complex128)
    w = np.asarray(w, dtype=np.float64)
    scales2 = np.abs(_component_scales(u, w, cfg)) ** 2
    if np.all(scales2 == 0.0):
        raise DegenerateInputError("all reconstruction scales are zero")
    s = _assemble_s(h, u, w, cfg)
    # One Hermitian eigendecomposition turns each power evaluation into a
    # rational function of mu: power(mu) = sum_{n,k} c[n,k] / (eig_n + mu)^2.
    eigs, q = np.linalg.eigh(s)
    c = scales2[None, :] * np.abs(q.conj().T @ h.T) ** 2
    # Eigenvalues at rounding scale are exact zeros of S, and their rows of c
    # are rounding noise too (each scaled column h_k lies in the range of S),
    # so drop both: power(mu) is then a clean decreasing rational function
    # all the way down to mu = 0.
    noise = PIVOT_RTOL * max(float(np.sum(eigs)), np.finfo(np.float64).tiny)
    live = eigs > noise
    eigs_live = eigs[live][:, None]
    c_live = c[live]

    def power(mu):
        return float(np.sum(c_live / (eigs_live + mu) ** 2))

    p = cfg.p
    if power(0.0) <= p:
        if eigs[0] > 10.0 * noise:
            return 0.0
        return 100.0 * noise
    lo, hi = 0.0, 1.0
    while power(hi) > p:
        hi *= 2.0
        if hi > 1e18:
            raise SingularMatrixError("power budget unreachable by bisection")
    for _ in range(max_iters):
        mid = 0.5 * (lo + hi)
        pw = power(mid)
        if p * (1.0 - rtol) <= pw <= p:
            return mid
        if pw > p:
            lo = mid
        else:
            hi = mid
    return hi  # power(hi) <= p and the bracket is at float resolution


def mrt_beamformer(h, cfg):
    """Matched-filter columns v_k = h_k, scaled to the power budget."""
    return normalize_to_power(np.asarray(h, dtype=np.complex128).T, cfg.p)


def zf_beamformer(h, cfg):
    """Zero-forcing directions with equal powers.

    Columns satisfy h_j^H v_k = 0 for j != k, so the pseudo-inverse is taken
    of conj(h): the received signal pairs conj(h_j) with v_k.
    """
    x = np.linalg.pinv(np.conj(np.asarray(h, dtype=np.complex128)))
    norms = np.linalg.norm(x, axis=0)
    norms[norms == 0.0] = 1.0
    return normalize_to_power(x / norms[None, :], cfg.p)


def _solve_from(h, cfg, v0, eps, max_iters):
    """One alternating-minimization run from a fixed starting beamformer."""
    v = np.asarray(v0, dtype=np.complex128).copy()
    trace = [objective.wsr(h, v, cfg)]
    best_wsr, best_v = trace[0], v
    iterations = 0
    for iterations in range(1, max_iters + 1):
        u = compute_u(h, v, cfg)
        w = compute_w(h, v, cfg)
        mu = solve_mu(h, u, w, cfg)
        v_new = reconstruct_v(h, ComponentTriple(u, w, mu), cfg)
        trace.append(objective.wsr(h, v_new, cfg))
        if trace[-1] > best_wsr:
            best_wsr, best_v = trace[-1], v_new
        delta = float(np.linalg.norm(v_new - v))
        v = v_new
        if delta < eps:
            break
    return best_wsr, best_v, iterations, trace


def wmmse_solve(h, cfg, v0=None, seed=0, eps=1e-8, max_iters=300, restarts=3):
    """Alternating WMMSE maximization of the weighted sum rate.

    The iteration is a local ascent, so when no v0 is given the solver runs a
    start portfolio (matched-filter, zero-forcing, and `restarts` seeded random
    beamformers) and keeps the best run. With an explicit v0 only that single
    start is used. Each run alternates (u, w) and (mu, V) updates and stops
    when the Frobenius change of V drops below eps or max_iters is reached.
    Always returns the best iterate seen; the returned trace belongs to the
    winning start and the returned triple is recomputed at the best iterate.
    """
    h = np.asarray(h, dtype=np.complex128)
    if v0 is not None:
        starts = [np.asarray(v0, dtype=np.complex128)]
    else:
        rng = np.random.default_rng(seed)
        starts = [mrt_beamformer(h, cfg), zf_beamformer(h, cfg)]
        for _ in range(restarts):
            raw = rng.standard_normal((cfg.n, cfg.k)) + 1j * rng.standard_normal(
                (cfg.n, cfg.k)
            )
            starts.append(normalize_to_power(raw, cfg.p))
    best = None
    for start in starts:
        run = _solve_from(h, cfg, start, eps, max_iters)
        if best is None or run[0] > best[0]:
            best = run
    best_wsr, best_v, iterations, trace = best
    u = compute_u(h, best_v, cfg)
    w = compute_w(h, best_v, cfg)
    mu = solve_mu(h, u, w, cfg)
    comps = ComponentTriple(u, w, mu)
    return WmmseResult(
        v=best_v, components=comps, iterations=iterations, wsr_trace=np.array(trace)
    )


def structure_beamformer(h, lam, p, cfg):
    """Beamformer from the dual/power parametrization.

    v_k = sqrt(p_k) * (I + sum_j lam_j / sigma2 * h_j h_j^H)^{-1} h_k,
    with each direction normalized to unit length before the power split is
    applied. lam = 0 gives matched-filter (MRT) directions.
    """
    lam = np.asarray(lam, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(lam < 0) or np.any(p < 0):
        raise ValueError("lam and p must be nonnegative")
    a = np.eye(cfg.n) + hermitian_rank1_sum(lam / cfg.sigma2, h)
    x = hpd_solve(a, 0.0, h.T)
    norms = np.linalg.norm(x, axis=0)
    if np.any(norms == 0.0):
        raise DegenerateInputError("a channel row is zero; direction undefined")
    return (x / norms[None, :]) * np.sqrt(p)[None, :]


def _simplex_grid(k, total, steps):
    """All K-vectors on the simplex {x >= 0, sum x = total} with steps-1 parts."""
    parts = steps - 1
    if k == 1:
        return np.array([[float(total)]])
    grids = []
    if k == 2:
        for i in range(parts + 1):
            grids.append((i, parts - i))
    else:
        for i in range(parts + 1):
            for j in range(parts + 1 - i):
                grids.append((i, j, parts - i - j))
    return np.array(grids, dtype=np.float64) * (total / parts)


def grid_oracle(h, cfg, grid_steps=41):
    """Exhaustive search over the dual and power simplexes (K <= 3 only).

    Grids both lam and p over {x >= 0, sum x = P} with grid_steps points per
    axis, evaluates the structured beamformer at every pair, and returns the
    best weighted sum rate found. Costs O(steps^(2(K-1))), so it is a small-K
    reference, not a solver.
    """
    if cfg.k > 3:
        raise CapabilityError(f"grid oracle supports K <= 3, got K={cfg.k}")
    if grid_steps < 5:
        raise ValueError("grid_steps must be at least 5")
    h = np.asarray(h, dtype=np.complex128)
    lam_grid = _simplex_grid(cfg.k, cfg.p, grid_steps)
    p_grid = _simplex_grid(cfg.k, cfg.p, grid_steps)
    alpha = cfg.alpha_vec
    best = (-np.inf, None, None)
    for lam in lam_grid:
        a = np.eye(cfg.n) + hermitian_rank1_sum(lam / cfg.sigma2, h)
        x = hpd_solve(a, 0.0, h.T)
        norms = np.linalg.norm(x, axis=0)
        if np.any(norms == 0.0):
            raise DegenerateInputError("a channel row is zero; direction undefined")
        d = x / norms[None, :]
        g = np.abs(h.conj() @ d) ** 2  # g[k, j] = |h_k^H d_j|^2
        signal = p_grid * np.diag(g)[None, :]
        interference = p_grid @ g.T - signal
        rates = np.log1p(signal / (cfg.sigma2 + interference)) / np.log(2.0)
        wsrs = rates @ alpha
        i = int(np.argmax(wsrs))
        if wsrs[i] > best[0]:
            best = (float(wsrs[i]), lam.copy(), p_grid[i].copy())
    wsr_best, lam_best, p_best = best
    v_best = structure_beamformer(h, lam_best, p_best, cfg)
    return OracleResult(wsr=wsr_best, lam=lam_best, p=p_best, v=v_best)
