"""Pickands-constant estimation and excursion probabilities.

The central object is

    H(T) = int_0^inf sqrt(w) P(inf_{[0,T]} Z^w < 1) dw,
    H    = lim_{T->inf} H(T)/T,

estimated through the reversibility of the sqrt(w) dw stationary measure:
reversing each path at its first dip below the level turns the w-integral
into the expected number of consecutive surviving steps of a chain started
below the level, handled exactly with no truncation (see estimate_H_T).

The excursion probability u_L of the q-OU process dipping within eps^2 of
its lower edge over the untransformed window [0, L] is estimated on
stationary edge-magnified paths over transformed time [0, L/eps], and the
double-sum sandwich

    sum_i P(A_i) - sum_{i != j} P(A_i and A_j) <= u_L <= sum_{i<=N+1} P(A_i)

is evaluated on one shared set of paths so both inequalities hold pathwise.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .infimum import MonteCarloEstimate, infZ_tail_constant
from .params import QParams
from .qseries import q_factor
from .sampling import (
    as_generator,
    qou_step_transformed,
    tangent_step,
    transformed_marginal_batch,
)

DEFAULT_GRID_STEP = 1.0 / 256.0
DEFAULT_W_MAX = 1e6
_KURTOSIS_WARN = 200.0


@dataclass(frozen=True)
class PickandsRun:
    """H(T) estimates over a T grid with the 1/T-extrapolated constant."""

    T_grid: np.ndarray
    H_T: list[MonteCarloEstimate]
    H_over_T: np.ndarray
    extrapolated_H: MonteCarloEstimate
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.H_T) != len(self.T_grid) or len(self.H_over_T) != len(self.T_grid):
            raise ValueError("arrays must align with T_grid")
        if any(e.value <= 0.0 for e in self.H_T):
            raise ValueError("H(T) estimates must be positive")


def h_tail_bound(T: float, w_max: float, level: float = 1.0) -> float:
    """Certified bound on the neglected integral beyond w_max."""
    return 2.0 * infZ_tail_constant(T, level) / math.sqrt(w_max)


def estimate_H_T(T: float, n_outer: int, grid_step: float = DEFAULT_GRID_STEP,
                 rng=0) -> MonteCarloEstimate:
    """Estimate H(T) on the uniform grid of step h = grid_step.

    Write the grid functional by first dip index and reverse each chain at
    its first dip: sqrt(w) dw is reversible for the transition kernel
    (detailed balance), so the sqrt(w)-weighted measure of paths that stay
    at or above 1 for exactly i steps before dipping equals the measure of
    chains started below 1 from (3/2) sqrt(z) dz on (0, 1) that stay >= 1
    for i consecutive steps.  Summing over i,

        H_grid(T) = (2/3) (1 + E[min(N, m)]),    m = T/h,

    with N the number of consecutive steps >= 1 made by a chain started
    from z ~ (3/2) sqrt(z) on (0, 1).  The w-integral is handled exactly
    (no truncation, no importance weights); contributions are bounded by
    construction, and because the process is transient, N/m -> the escape
    probability, so the relative stderr is O(1/sqrt(n)) uniformly in T.

    Emits a warning when the contribution kurtosis explodes (a sampler bug
    would surface that way).
    """
    if not T > 0.0:
        raise ValueError("T must be positive")
    if not 0.0 < grid_step <= T:
        raise ValueError("grid_step must lie in (0, T]")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    n_steps = int(round(T / grid_step))

    z = gen.uniform(size=n_outer) ** (2.0 / 3.0)
    counts = np.zeros(n_outer)
    active = np.arange(n_outer)
    vals = z
    for _ in range(n_steps):
        vals = tangent_step(gen, vals, grid_step)
        alive = vals >= 1.0
        counts[active[alive]] += 1.0
        active = active[alive]
        vals = vals[alive]
        if active.size == 0:
            break
    contrib = (2.0 / 3.0) * (1.0 + counts)
    value = float(contrib.mean())
    stderr = float(contrib.std(ddof=1) / math.sqrt(n_outer))
    kurt = float(stats.kurtosis(contrib))
    if kurt > _KURTOSIS_WARN:
        warnings.warn(
            f"H(T) contribution kurtosis {kurt:.1f} is extreme; check the "
            "transition sampler",
            RuntimeWarning,
        )
    return MonteCarloEstimate(value=value, stderr=stderr, n=n_outer, seed=seed)


def estimate_pickands(T_grid, n_outer: int, grid_step: float = DEFAULT_GRID_STEP,
                      rng=0, n_boot: int = 400) -> PickandsRun:
    """H(T)/T over the grid plus a linear-in-1/T extrapolation to the limit.

    The extrapolation fits H(T)/T = H + c/T by stderr-weighted least
    squares; its stderr is a parametric bootstrap over the per-T estimates.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if T_grid.size < 3 or not np.all(np.diff(T_grid) > 0):
        raise ValueError("T_grid must be increasing with at least 3 points")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    estimates = [estimate_H_T(T, n_outer, grid_step, gen) for T in T_grid]
    h_over_t = np.array([e.value / T for e, T in zip(estimates, T_grid)])
    sd = np.array([e.stderr / T for e, T in zip(estimates, T_grid)])

    X = np.column_stack([np.ones_like(T_grid), 1.0 / T_grid])
    wts = 1.0 / sd**2
    WX = X * wts[:, None]
    coef = np.linalg.solve(X.T @ WX, WX.T @ h_over_t)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        yb = h_over_t + gen.normal(size=T_grid.size) * sd
        boots[b] = np.linalg.solve(X.T @ WX, WX.T @ yb)[0]
    extrapolated = MonteCarloEstimate(
        value=float(coef[0]), stderr=float(boots.std(ddof=1)),
        n=n_outer * T_grid.size, seed=seed,
    )

    i_max = T_grid.size - 1
    i_half = int(np.argmin(np.abs(T_grid - T_grid[i_max] / 2.0)))
    drift = abs(h_over_t[i_max] - h_over_t[i_half])
    drift_sd = math.hypot(sd[i_max], sd[i_half])
    if drift > 5.0 * drift_sd:
        warnings.warn(
            f"H(T)/T not stabilized: drift {drift:.4f} vs stderr {drift_sd:.4f}",
            RuntimeWarning,
        )

    # liminf lower bounds from the sandwich: H(S)/S (1 - K H(S)/S^3),
    # K = 2 zeta(3)/pi^2 at q = 0 (the constant scales with (q)_inf^3)
    K = 2.0 * 1.2020569031595943 / math.pi**2
    liminf_lb = h_over_t * (1.0 - K * np.array([e.value for e in estimates]) / T_grid**3)
    diagnostics = {
        "liminf_lower_bounds": dict(zip(map(float, T_grid), map(float, liminf_lb))),
        "drift": drift,
        "drift_stderr": drift_sd,
    }
    return PickandsRun(
        T_grid=T_grid, H_T=estimates, H_over_T=h_over_t,
        extrapolated_H=extrapolated, diagnostics=diagnostics,
    )


def _stationary_grid_minimum(gen, n: int, n_steps: int, grid_step: float, eps: float,
                             params: QParams, level: float = 1.0,
                             block_edges: np.ndarray | None = None,
                             u_last_step: int | None = None,
                             batch: int = 100_000):
    """Stream stationary edge-magnified paths over a uniform grid.

    Returns (u_hits, block_hits): u_hits counts the event {min over grid
    points with index <= u_last_step < level}; block_hits (n, n_blocks)
    marks per-block grid minima below the level when block_edges (step
    indices, right-inclusive) are given.  Grid point 0 belongs to block 0.
    """
    n_blocks = 0 if block_edges is None else block_edges.size
    u_hits = np.empty(n, dtype=bool)
    block_hits = np.empty((n, n_blocks), dtype=bool) if n_blocks else None
    done = 0
    while done < n:
        m = min(batch, n - done)
        w = transformed_marginal_batch(gen, eps, params, m)
        below = w < level
        u_hit = below.copy()
        if n_blocks:
            bh = np.zeros((m, n_blocks), dtype=bool)
            bh[:, 0] = below
        for step in range(1, n_steps + 1):
            w = qou_step_transformed(gen, w, grid_step, eps, params)
            below = w < level
            if u_last_step is None or step <= u_last_step:
                u_hit |= below
            if n_blocks:
                j = int(np.searchsorted(block_edges, step))
                bh[:, min(j, n_blocks - 1)] |= below
        u_hits[done : done + m] = u_hit
        if n_blocks:
            block_hits[done : done + m] = bh
        done += m
    return u_hits, block_hits


def _marginal_head_mass(eps: float, params: QParams, level: float = 1.0) -> float:
    """P(stationary edge-magnified value < level), by quadrature."""
    from scipy.integrate import quad

    from .densities import transformed_marginal_pdf

    val, _ = quad(lambda w: transformed_marginal_pdf(w, eps, params), 0.0, level, limit=200)
    return val


def _conditional_head_starts(gen, eps: float, params: QParams, size: int,
                             level: float = 1.0) -> np.ndarray:
    """Stationary draws conditioned below ``level`` (density ~ sqrt(w) there)."""
    from .qseries import psi_sup_product

    sq = math.sqrt(1.0 - params.q)
    psi_sup = psi_sup_product(params)
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        w = level * gen.uniform(size=pending.size) ** (2.0 / 3.0)
        ratio = np.sqrt(np.maximum(4.0 - w * eps * eps, 0.0)) / 2.0
        if params.q != 0.0:
            from .qseries import psi_product

            y_raw = params.b_minus + w * eps * eps / sq
            ratio = ratio * psi_product(y_raw, params) / psi_sup
        keep = gen.uniform(size=pending.size) < ratio
        out[pending[keep]] = w[keep]
        pending = pending[~keep]
    return out


def estimate_excursion_prob(L: float, eps: float, params: QParams, n: int,
                            grid_step: float = DEFAULT_GRID_STEP, rng=0,
                            method: str = "reversal") -> MonteCarloEstimate:
    """MC estimate of u_L: a stationary q-OU path dips within eps^2-scale of
    the lower edge somewhere on the untransformed window [0, L].

    Equals P(min over the grid on transformed time [0, L/eps] of the
    edge-magnified process < 1); grid point t = 0 included.

    method="direct" simulates stationary paths over the whole window and
    averages the raw indicator.  method="reversal" (default) estimates the
    same grid functional through stationarity plus reversibility: splitting
    by the first dip index and reversing each block,

        u = P(W_0 < 1) * (1 + E[min(N, m)]),

    where N counts the consecutive steps a chain started from the
    stationary law conditioned below 1 stays at or above 1, and m is the
    number of grid steps.  The head mass P(W_0 < 1) is deterministic
    quadrature, contributions are bounded, and paths die after ~E[N] steps,
    so the reversal estimator is orders of magnitude cheaper at small eps.
    """
    if not L > 0.0 or not eps > 0.0:
        raise ValueError("L and eps must be positive")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    span = L / eps
    n_steps = int(math.floor(span / grid_step + 1e-9))
    if method == "direct":
        hits, _ = _stationary_grid_minimum(gen, n, n_steps, grid_step, eps, params)
        p = float(hits.mean())
        return MonteCarloEstimate(value=p, stderr=math.sqrt(p * (1.0 - p) / n), n=n, seed=seed)
    if method != "reversal":
        raise ValueError("method must be 'reversal' or 'direct'")
    head = _marginal_head_mass(eps, params)
    vals = _conditional_head_starts(gen, eps, params, n)
    counts = np.zeros(n)
    active = np.arange(n)
    for _ in range(n_steps):
        vals = qou_step_transformed(gen, vals, grid_step, eps, params)
        alive = vals >= 1.0
        counts[active[alive]] += 1.0
        active = active[alive]
        vals = vals[alive]
        if active.size == 0:
            break
    contrib = head * (1.0 + counts)
    return MonteCarloEstimate(
        value=float(contrib.mean()),
        stderr=float(contrib.std(ddof=1) / math.sqrt(n)),
        n=n, seed=seed,
    )


@dataclass(frozen=True)
class DoubleSumRecord:
    """Shared-path estimates for the block-sum sandwich."""

    u: MonteCarloEstimate
    single_sum: MonteCarloEstimate      # sum_{i<=N+1} P(A_i)  (upper bound)
    cross_sum: MonteCarloEstimate       # sum_{i != j <= N} P(A_i and A_j)
    lower: MonteCarloEstimate           # sum_{i<=N} P(A_i) - cross_sum
    n_blocks: int
    block_length: float

    def sandwich_holds(self, slack: float = 0.0) -> bool:
        return (self.lower.value <= self.u.value + slack
                and self.u.value <= self.single_sum.value + slack)


def doublesum_sandwich(L: float, eps: float, T: float, params: QParams, n: int,
                       grid_step: float = DEFAULT_GRID_STEP, rng=0) -> DoubleSumRecord:
    """Estimate the block sums of the double-sum method on shared paths.

    N = floor(L/(T eps)) unit blocks of transformed length T cover the
    window; block 1 takes grid points in [0, T] (t = 0 included), block i
    takes ((i-1)T, iT].  Pathwise Bonferroni then guarantees
    lower <= u <= single_sum for the estimates themselves.
    """
    if not T * eps < L:
        raise ValueError("need T * eps < L")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    n_cover = int(math.floor(L / (T * eps)))
    span = (n_cover + 1) * T
    steps_per_block = int(round(T / grid_step))
    n_steps = steps_per_block * (n_cover + 1)
    block_edges = np.arange(1, n_cover + 2) * steps_per_block
    u_last = int(math.floor(L / eps / grid_step + 1e-9))
    u_hits, block_hits = _stationary_grid_minimum(
        gen, n, n_steps, grid_step, eps, params,
        block_edges=block_edges, u_last_step=u_last,
    )

    def mce(x):
        return MonteCarloEstimate(
            value=float(np.mean(x)), stderr=float(np.std(x, ddof=1) / math.sqrt(n)),
            n=n, seed=seed,
        )

    b = block_hits.astype(float)
    s_first = b[:, :n_cover].sum(axis=1)
    per_path_single = b.sum(axis=1)
    per_path_cross = s_first * s_first - s_first
    per_path_lower = s_first - per_path_cross
    return DoubleSumRecord(
        u=mce(u_hits.astype(float)),
        single_sum=mce(per_path_single),
        cross_sum=mce(per_path_cross),
        lower=mce(per_path_lower),
        n_blocks=n_cover,
        block_length=T,
    )


def excursion_rate_constant(params: QParams) -> float:
    """(q)_inf^3/pi, the prefactor in u_L ~ eps^2 (q)_inf^3 L H / pi."""
    return q_factor(params) ** 3 / math.pi


def single_block_probability(T: float, eps: float, params: QParams, n: int,
                             grid_step: float = DEFAULT_GRID_STEP, rng=0) -> MonteCarloEstimate:
    """P(A_1): a stationary path dips below 1 on transformed-time [0, T]."""
    gen = as_generator(rng)
    seed = rng if isinstance(rng, (int, np.integer)) else None
    n_steps = int(round(T / grid_step))
    hits, _ = _stationary_grid_minimum(gen, n, n_steps, grid_step, eps, params)
    p = float(hits.mean())
    return MonteCarloEstimate(value=p, stderr=math.sqrt(p * (1.0 - p) / n), n=n, seed=seed)
