"""Infimum probabilities of the tangent process and certified tail bounds.

Three tools:

* ``inf_prob``: plain Monte Carlo for P(min over a time grid of Z^w < level),
  a lower-biased estimator of the path-infimum probability (grid minima
  never undershoot the path infimum).
* ``kx_escape_bound``: the strong-Markov escape inequality

      P(inf_{[S,T]} Z^w <= level)
          <= int_S^{2T-S} P_t(w, [0, level]) dt
             / inf_{y in [0, level]} int_0^{T-S} P_t(y, [0, level]) dt,

  evaluated by quadrature of the closed-form transition cdf.  The
  denominator uses the relaxation int_delta^{T-S} P_t(y, [delta, level]) dt
  (valid lower bound), with delta = min(T - S, level)/10 by default.
* ``infZ_tail_constant``: a concrete constant C(T) with
  P(inf_{[0,T]} Z^w <= level) <= C(T)/w^2 for w on the certified doubling
  grid {2, 4, ..., 2^14}; C(T) = sup of w^2 * kx_escape_bound(w, 0, T, level).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .densities import tangent_transition_cdf
from .errors import DegenerateDenominator
from .sampling import as_generator, tangent_step


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Point estimate with standard error, replicate count and seed."""

    value: float
    stderr: float
    n: int
    seed: int | None = None

    def __post_init__(self):
        if self.stderr < 0.0:
            raise ValueError("stderr must be nonnegative")
        if self.n < 1:
            raise ValueError("n must be at least 1")

    def to_json(self, **params) -> str:
        rec = {"value": self.value, "stderr": self.stderr, "n": self.n, "seed": self.seed}
        if params:
            rec["params"] = params
        return json.dumps(rec)


def grid_minimum_indicator(rng, w: float, times: np.ndarray, level: float, n: int,
                           batch: int = 200_000) -> np.ndarray:
    """Indicator of {min over grid times of Z^w < level} for n replicates.

    times must be increasing and start at 0 (the start value w counts).
    Streams in batches; never stores whole paths.
    """
    rng = as_generator(rng)
    hits = np.empty(n, dtype=bool)
    done = 0
    while done < n:
        m = min(batch, n - done)
        vals = np.full(m, float(w))
        hit = np.full(m, w < level)
        prev_t = times[0]
        for t in times[1:]:
            vals = tangent_step(rng, vals, t - prev_t)
            hit |= vals < level
            prev_t = t
        hits[done : done + m] = hit
        done += m
    return hits


def inf_prob(w: float, T: float, level: float, grid_step: float | None = None,
             n: int = 20_000, rng=0) -> MonteCarloEstimate:
    """MC estimate of P(min over the uniform grid on [0, T] of Z^w < level).

    grid_step defaults to T/1024.  The grid includes t = 0, so w < level
    gives probability exactly 1.
    """
    if not T > 0.0 or not level > 0.0:
        raise ValueError("T and level must be positive")
    if w < 0.0:
        raise ValueError("w must be nonnegative")
    h = T / 1024.0 if grid_step is None else float(grid_step)
    if not 0.0 < h <= T:
        raise ValueError("grid_step must lie in (0, T]")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    times = np.concatenate([[0.0], np.arange(h, T + h / 2, h)])
    times[-1] = min(times[-1], T)
    hits = grid_minimum_indicator(as_generator(rng), w, times, level, n)
    p = float(hits.mean())
    return MonteCarloEstimate(value=p, stderr=math.sqrt(p * (1.0 - p) / n), n=n, seed=seed)


def _occupation_integral(start: float, level: float, t_lo: float, t_hi: float,
                         y_lo: float = 0.0) -> float:
    """int_{t_lo}^{t_hi} P_t(start, [y_lo, level]) dt by adaptive quadrature."""

    def integrand(t):
        hi = tangent_transition_cdf(start, level, t)
        lo = tangent_transition_cdf(start, y_lo, t) if y_lo > 0.0 else 0.0
        return hi - lo

    val, _ = quad(integrand, t_lo, t_hi, limit=200)
    return val


def _kx_denominator(S: float, T: float, level: float, delta: float) -> float:
    """inf over y in [0, level] of int_delta^{T-S} P_t(y, [delta, level]) dt.

    Grid search with two local refinement passes around the argmin.
    """
    span = T - S

    def den(y):
        return _occupation_integral(y, level, delta, span, y_lo=delta)

    ys = np.linspace(0.0, level, 41)
    vals = np.array([den(y) for y in ys])
    i = int(np.argmin(vals))
    best_y, best = ys[i], vals[i]
    lo = ys[max(i - 1, 0)]
    hi = ys[min(i + 1, ys.size - 1)]
    for _ in range(2):
        ys = np.linspace(lo, hi, 9)
        vals = np.array([den(y) for y in ys])
        i = int(np.argmin(vals))
        if vals[i] < best:
            best_y, best = ys[i], vals[i]
        lo = ys[max(i - 1, 0)]
        hi = ys[min(i + 1, ys.size - 1)]
    if not best > 0.0:
        raise DegenerateDenominator(
            f"escape-bound denominator {best:.3g} at y={best_y:.3g}; quadrature failure"
        )
    return best


def kx_escape_bound(w: float, S: float, T: float, level: float,
                    delta: float | None = None) -> float:
    """Upper bound for P(inf_{[S,T]} Z^w <= level), clipped to 1.

    delta defaults to min(T - S, level)/10; any delta in (0, T-S) yields a
    valid bound since shrinking the denominator's window and target set only
    increases the quotient.
    """
    if not T > S or S < 0.0:
        raise ValueError("need T > S >= 0")
    if not level > 0.0:
        raise ValueError("level must be positive")
    if w < 0.0:
        raise ValueError("w must be nonnegative")
    if delta is None:
        delta = min(T - S, level) / 10.0
    if not 0.0 < delta < T - S:
        raise ValueError("delta must lie in (0, T - S)")
    num = _occupation_integral(w, level, S, 2.0 * T - S)
    den = _kx_denominator(S, T, level, delta)
    return min(num / den, 1.0)


@lru_cache(maxsize=256)
def _tail_constant_cached(T: float, level: float) -> float:
    span = T
    delta = min(span, level) / 10.0
    den = _kx_denominator(0.0, T, level, delta)
    best = 0.0
    for j in range(14):
        w = 2.0 * 2.0**j
        num = _occupation_integral(w, level, 0.0, 2.0 * T)
        best = max(best, w * w * min(num / den, 1.0))
    return best


def infZ_tail_constant(T: float, level: float) -> float:
    """Certified C(T) with P(inf_{[0,T]} Z^w <= level) <= C(T)/w^2, w >= 2.

    Computed as the sup of w^2 * kx_escape_bound(w, 0, T, level) over the
    doubling grid w in {2, 4, ..., 2^14}; finite and strictly positive.
    """
    if not T > 0.0 or not level > 0.0:
        raise ValueError("T and level must be positive")
    return _tail_constant_cached(float(T), float(level))
