"""Closed-form densities of the q-OU family and the boundary tangent process.

Conventions
-----------
* ``qou_*`` functions live on the compact state space [b_-, b_+],
  b_+- = +-2/sqrt(1-q).
* ``transformed_*`` functions describe w = sqrt(1-q) (x - b_-)/eps^2, the
  process magnified at the lower edge; its state space is [0, 4/eps^2] and
  its transition over transformed lag t uses the q-OU kernel at lag eps*t.
* The tangent process Z is the positive self-similar Markov limit of the
  transformed process as eps -> 0; its transition density over lag tau is

      p_tau(x, y) = 2 tau sqrt(y) / (pi [(y-x)^2 + 2(x+y) tau^2 + tau^4]).

The tangent transition cdf has a full closed form: with y = u^2 the quartic
factors as ((u-a)^2+tau^2)((u+a)^2+tau^2), a = sqrt(x), and partial
fractions give

    P(Z_tau <= a | x) = atan2(2 tau sqrt(a), x - a + tau^2)/pi
        + (tau/(2 pi sqrt(x))) log1p(-4 sqrt(a x)/((sqrt(a)+sqrt(x))^2+tau^2)),

with the x -> 0 limit (2/pi)(arctan v - v/(1+v^2)) at v = sqrt(a)/tau.

Edge stability: on the transformed scale the support factor is computed as
4 - (1-q) y_raw^2 = w eps^2 (4 - w eps^2), never by cancellation against the
edge, and the k=0 transition factor uses its completed-square form

    phi_0(d, x, y) = (1-q) e^{-2d} (y - x cosh d)^2
                     + (1-e^{-2d})^2 (4 - (1-q) x^2) / 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import QuadratureNonconvergence
from .params import QParams
from .qseries import (
    phi_tail_product_inv,
    psi_product,
    q_factor,
    q_pochhammer_inf,
)

# tau/sqrt(x) below this switches the cdf to direct quadrature of the pdf
_CDF_ILL_CONDITIONED = 1e-6


@dataclass(frozen=True)
class QuadratureResult:
    """Integral value with an a-posteriori error bound and node count."""

    value: float
    err_bound: float
    nodes: int

    def __post_init__(self):
        if self.err_bound < 0.0:
            raise ValueError("err_bound must be nonnegative")
        if self.nodes < 1:
            raise ValueError("nodes must be positive")


# ---------------------------------------------------------------------------
# q-OU densities (raw coordinates)
# ---------------------------------------------------------------------------


def qou_marginal_pdf(x, params: QParams):
    """Stationary marginal density f(x) on [b_-, b_+].

    f(x) = sqrt(1-q) (q)_inf / (2 pi) * sqrt(4-(1-q)x^2) * prod_{k>=1} psi_{q,k}(x)
    """
    x = np.asarray(x, dtype=float)
    q = params.q
    supp = (1.0 - q) * x * x <= 4.0
    xs = np.where(supp, x, 0.0)
    c = math.sqrt(1.0 - q) * q_factor(params) / (2.0 * math.pi)
    val = c * np.sqrt(np.maximum(4.0 - (1.0 - q) * xs * xs, 0.0)) * psi_product(xs, params)
    out = np.where(supp, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _phi_zero_completed(delta: float, x, y, q: float):
    """phi_0 via its completed square; x, y broadcastable arrays."""
    em2 = math.exp(-2.0 * delta)
    s2 = (1.0 - em2) ** 2 * np.maximum(4.0 - (1.0 - q) * x * x, 0.0) / 4.0
    return (1.0 - q) * em2 * (y - x * math.cosh(delta)) ** 2 + s2


def qou_transition_pdf(x: float, y, delta: float, params: QParams):
    """Transition density of the q-OU process from x over time lag delta.

    Zero for y outside [b_-, b_+]; integrates to 1 in y; converges to the
    stationary marginal as delta -> infinity.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    if abs(x) > params.b_plus * (1.0 + 1e-12):
        raise ValueError(f"start point x={x} outside the state space")
    y = np.asarray(y, dtype=float)
    q = params.q
    supp = (1.0 - q) * y * y <= 4.0
    ys = np.where(supp, y, 0.0)
    pref = q_pochhammer_inf(math.exp(-2.0 * delta), params)
    val = (
        pref
        * qou_marginal_pdf(ys, params)
        / _phi_zero_completed(delta, np.asarray(x, dtype=float), ys, q)
        * phi_tail_product_inv(delta, x, ys, params)
    )
    out = np.where(supp, val, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# transformed (lower-edge) densities
# ---------------------------------------------------------------------------


def transformed_marginal_pdf(w, eps: float, params: QParams):
    """Marginal density of the edge-magnified process on [0, 4/eps^2].

    Equal to f(b_- + w eps^2/sqrt(1-q)) eps^2/sqrt(1-q), computed in the
    stable form (q)_inf/(2 pi) eps^3 sqrt(w) sqrt(4 - w eps^2) psi-product.
    Bounded by upper_pq_constant(params) * sqrt(w) * eps^3.
    """
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    w = np.asarray(w, dtype=float)
    e2 = eps * eps
    supp = (w >= 0.0) & (w * e2 <= 4.0)
    ws = np.where(supp, w, 0.0)
    y_raw = params.b_minus + ws * e2 / math.sqrt(1.0 - params.q)
    val = (
        q_factor(params)
        / (2.0 * math.pi)
        * eps**3
        * np.sqrt(ws)
        * np.sqrt(np.maximum(4.0 - ws * e2, 0.0))
        * psi_product(y_raw, params)
    )
    out = np.where(supp, val, 0.0)
    return float(out) if out.ndim == 0 else out


def transformed_transition_pdf(x: float, y, s: float, t: float, eps: float, params: QParams):
    """Transition density of the edge-magnified process from x at s to y at t.

    The q-OU clock runs at eps times the transformed clock, so the raw lag
    is eps (t - s).  Density in y on [0, 4/eps^2].
    """
    if not t > s:
        raise ValueError("need t > s")
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    e2 = eps * eps
    if x < 0.0 or x * e2 > 4.0 * (1.0 + 1e-12):
        raise ValueError(f"start point x={x} outside [0, 4/eps^2]")
    delta = eps * (t - s)
    q = params.q
    sq = math.sqrt(1.0 - q)
    y = np.asarray(y, dtype=float)
    supp = (y >= 0.0) & (y * e2 <= 4.0)
    ys = np.where(supp, y, 0.0)
    x_raw = params.b_minus + x * e2 / sq
    y_raw = params.b_minus + ys * e2 / sq

    # completed-square phi_0 in transformed offsets: stable near the edge
    em2 = math.exp(-2.0 * delta)
    h = e2 / sq
    shift = h * (ys - x * math.cosh(delta)) - 2.0 * params.b_minus * math.sinh(delta / 2.0) ** 2
    s2 = (1.0 - em2) ** 2 * x * e2 * max(4.0 - x * e2, 0.0) / 4.0
    phi0 = (1.0 - q) * em2 * shift * shift + s2

    pref = q_pochhammer_inf(math.exp(-2.0 * delta), params) * q_factor(params) / (2.0 * math.pi)
    val = (
        pref
        * eps**3
        * np.sqrt(ys)
        * np.sqrt(np.maximum(4.0 - ys * e2, 0.0))
        * psi_product(y_raw, params)
        / phi0
        * phi_tail_product_inv(delta, x_raw, y_raw, params)
    )
    out = np.where(supp, val, 0.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# tangent process
# ---------------------------------------------------------------------------


def tangent_transition_pdf(x, y, tau: float):
    """Tangent transition density p_tau(x, y); zero for y <= 0."""
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("x must be nonnegative")
    y = np.asarray(y, dtype=float)
    pos = y > 0.0
    ys = np.where(pos, y, 1.0)
    t2 = tau * tau
    den = (ys - x) ** 2 + 2.0 * (x + ys) * t2 + t2 * t2
    val = 2.0 * tau * np.sqrt(ys) / (math.pi * den)
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def tangent_transition_cdf(x, a, tau: float):
    """P(Z_tau <= a | Z_0 = x), in closed form; values clipped to [0, 1].

    Falls back to direct quadrature of the pdf when tau/sqrt(x) < 1e-6
    (near-degenerate quartic factors).
    """
    if not tau > 0.0:
        raise ValueError("tau must be positive")
    x_arr = np.asarray(x, dtype=float)
    a_arr = np.asarray(a, dtype=float)
    if np.any(x_arr < 0.0):
        raise ValueError("x must be nonnegative")
    scalar = x_arr.ndim == 0 and a_arr.ndim == 0
    x_b, a_b = np.broadcast_arrays(x_arr, a_arr)
    out = np.zeros(x_b.shape)
    pos = a_b > 0.0
    xv = x_b[pos]
    av = a_b[pos]
    sa = np.sqrt(av)
    res = np.empty_like(av)

    tiny = xv <= 0.0
    v = sa[tiny] / tau
    res[tiny] = (2.0 / math.pi) * (np.arctan(v) - v / (1.0 + v * v))

    gen = ~tiny
    xg = xv[gen]
    ag = av[gen]
    ill = tau / np.sqrt(xg) < _CDF_ILL_CONDITIONED
    if np.any(ill):
        idx = np.where(gen)[0][ill]
        for i in idx:
            val, _ = quad(lambda yy: float(tangent_transition_pdf(xv[i], yy, tau)), 0.0, av[i], limit=200)
            res[i] = val
        gen_ok = gen.copy()
        gen_ok[np.where(gen)[0][ill]] = False
    else:
        gen_ok = gen
    xg = xv[gen_ok]
    ag = av[gen_ok]
    sag = np.sqrt(ag)
    sxg = np.sqrt(xg)
    t2 = tau * tau
    atan_term = np.arctan2(2.0 * tau * sag, xg - ag + t2) / math.pi
    log_term = (tau / (2.0 * math.pi * sxg)) * np.log1p(
        -4.0 * sag * sxg / ((sag + sxg) ** 2 + t2)
    )
    res[gen_ok] = atan_term + log_term

    out[pos] = np.clip(res, 0.0, 1.0)
    return float(out) if scalar else out


def semigroup_apply(
    f: Callable[[np.ndarray], np.ndarray],
    t: float,
    x: float,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    breakpoints: Sequence[float] | None = None,
    limit: int = 200,
) -> QuadratureResult:
    """P_t f(x) = int_0^inf p_t(x, y) f(y) dy for bounded f.

    The integrand has a sqrt(y) cusp at 0 and a y^{-3/2} tail; the domain is
    split at y* = x + 10 (t^2 + sqrt(x) t) and the density spike near x is
    passed to the adaptive rule as a breakpoint.
    """
    if not t > 0.0:
        raise ValueError("t must be positive")
    if x < 0.0:
        raise ValueError("x must be nonnegative")

    def integrand(y):
        return tangent_transition_pdf(x, y, t) * f(y)

    split = x + 10.0 * (t * t + math.sqrt(x) * t)
    pts = [x] if 0.0 < x < split else []
    if breakpoints is not None:
        pts = sorted({*pts, *[p for p in breakpoints if 0.0 < p < split]})
    val1, err1, info1 = quad(
        integrand, 0.0, split, epsabs=atol, epsrel=rtol, limit=limit,
        points=pts or None, full_output=True,
    )[:3]
    val2, err2, info2 = quad(
        integrand, split, np.inf, epsabs=atol, epsrel=rtol, limit=limit, full_output=True
    )[:3]
    value = val1 + val2
    err = err1 + err2
    nodes = int(info1["neval"] + info2["neval"])
    if err > max(100.0 * rtol * abs(value), 1e-6):
        raise QuadratureNonconvergence(
            f"semigroup_apply error bound {err:.3g} above tolerance at t={t}, x={x}"
        )
    return QuadratureResult(value=value, err_bound=err, nodes=nodes)
