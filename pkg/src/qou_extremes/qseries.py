"""q-series building blocks: infinite products and the quadratic factors.

The marginal and transition densities of the q-Ornstein-Uhlenbeck process
are products over k of two families of quadratics,

    psi_{q,k}(x)          = (1+q^k)^2 - (1-q) x^2 q^k,
    phi_{q,k}(d, x, y)    = (1-e^{-2d}q^{2k})^2
                            - (1-q) e^{-d} q^k (1+e^{-2d}q^{2k}) x y
                            + (1-q) e^{-2d} q^{2k} (x^2+y^2),

together with the q-Pochhammer prefactors (a;q)_inf = prod_{k>=0}(1-a q^k).
Everything here is pure and deterministic for fixed QParams.

Truncation rule: the log of the neglected tail of (a;q)_inf is bounded by
|a| |q|^K/(1-|q|), so products stop at the first K below tol.  Products
longer than 50 factors are accumulated in log space (the k >= 1 factors are
strictly positive on the state space, so only the sign of finitely many
leading (a;q) factors needs separate tracking).
"""

from __future__ import annotations

import math

import numpy as np

from .params import QParams

_LOG_SPACE_THRESHOLD = 50


def q_pochhammer_inf(a: float, params: QParams) -> float:
    """(a;q)_inf = prod_{k>=0} (1 - a q^k), truncated at relative tol.

    Exact zeros of a factor yield an exact 0.0.  Negative factors (possible
    for a > 1) are handled by sign tracking, so the signed value is returned
    rather than NaN.
    """
    q = params.q
    if a == 0.0:
        return 1.0
    if q == 0.0:
        return 1.0 - a
    # smallest K with |a| |q|^K / (1-|q|) < tol
    aq = abs(q)
    target = params.tol * (1.0 - aq) / abs(a)
    if target >= 1.0:
        n_terms = 1
    else:
        n_terms = int(math.ceil(math.log(target) / math.log(aq))) + 1
    n_terms = max(1, min(n_terms, params.max_terms))

    k = np.arange(n_terms)
    factors = 1.0 - a * q**k
    if np.any(factors == 0.0):
        return 0.0
    if n_terms <= _LOG_SPACE_THRESHOLD:
        return float(np.prod(factors))
    sign = 1.0 if (factors < 0).sum() % 2 == 0 else -1.0
    return sign * float(np.exp(np.sum(np.log(np.abs(factors)))))


def q_factor(params: QParams) -> float:
    """(q)_inf = prod_{k>=1} (1 - q^k); strictly positive on (-1, 1)."""
    return q_pochhammer_inf(params.q, params)


def psi(k: int, x: float, params: QParams) -> float:
    """psi_{q,k}(x) = (1+q^k)^2 - (1-q) x^2 q^k."""
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    qk = params.q**k
    return (1.0 + qk) ** 2 - (1.0 - params.q) * x * x * qk


def phi(k: int, delta: float, x: float, y: float, params: QParams) -> float:
    """phi_{q,k}(delta, x, y); the k-th transition-density factor."""
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    q = params.q
    e = math.exp(-delta)
    r = e * e * q ** (2 * k)
    return (1.0 - r) ** 2 - (1.0 - q) * e * q**k * (1.0 + r) * x * y + (1.0 - q) * r * (
        x * x + y * y
    )


def phi_zero_rearranged(delta: float, x: float, y: float, params: QParams) -> float:
    """The k=0 factor in its sinh/cosh form.

    e^{-2d} [4 sinh^2 d + (1-q)(x-y)^2 + 2(1-q) x y (1 - cosh d)];
    agrees with phi(0, ...) identically and is better conditioned for the
    envelope analysis near the state-space edges.
    """
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    q = params.q
    sh = math.sinh(delta)
    return math.exp(-2.0 * delta) * (
        4.0 * sh * sh
        + (1.0 - q) * (x - y) ** 2
        + 2.0 * (1.0 - q) * x * y * (1.0 - math.cosh(delta))
    )


# ---------------------------------------------------------------------------
# vectorized internals used by the density and sampling modules
# ---------------------------------------------------------------------------


def psi_product(y, params: QParams):
    """prod_{k>=1} psi_{q,k}(y) for y on the state space (vectorized).

    All factors are >= (1-|q|^k)^2 > 0 on [b_-, b_+], so log-space
    accumulation is safe for long products.
    """
    y = np.asarray(y, dtype=float)
    n = params.series_terms()
    if n == 0:
        return np.ones_like(y)
    q = params.q
    y2 = (1.0 - q) * y * y
    if n <= _LOG_SPACE_THRESHOLD:
        out = np.ones_like(y)
        for k in range(1, n + 1):
            qk = q**k
            out *= (1.0 + qk) ** 2 - y2 * qk
        return out
    acc = np.zeros_like(y)
    for k in range(1, n + 1):
        qk = q**k
        acc += np.log((1.0 + qk) ** 2 - y2 * qk)
    return np.exp(acc)


def phi_tail_product_inv(delta: float, x, y, params: QParams):
    """prod_{k>=1} 1 / phi_{q,k}(delta, x, y) (vectorized in x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = params.series_terms()
    if n == 0:
        return np.ones(np.broadcast(x, y).shape)
    q = params.q
    e = math.exp(-delta)
    xy = x * y
    ss = x * x + y * y
    if n <= _LOG_SPACE_THRESHOLD:
        out = np.ones(np.broadcast(x, y).shape)
        for k in range(1, n + 1):
            r = e * e * q ** (2 * k)
            out /= (1.0 - r) ** 2 - (1.0 - q) * e * q**k * (1.0 + r) * xy + (1.0 - q) * r * ss
        return out
    acc = np.zeros(np.broadcast(x, y).shape)
    for k in range(1, n + 1):
        r = e * e * q ** (2 * k)
        acc += np.log((1.0 - r) ** 2 - (1.0 - q) * e * q**k * (1.0 + r) * xy + (1.0 - q) * r * ss)
    return np.exp(-acc)


def psi_sup_product(params: QParams) -> float:
    """prod_{k>=1} (1+|q|^k)^2, the sup of psi_product over the state space."""
    n = params.series_terms()
    if n == 0:
        return 1.0
    k = np.arange(1, n + 1)
    return float(np.exp(2.0 * np.sum(np.log1p(np.abs(params.q) ** k))))


def phi_ratio_sup_product(delta: float, x, params: QParams):
    """prod_{k>=1} sup_y psi_{q,k}(y)/phi_{q,k}(delta, x, y) over the state space.

    Each factor is a ratio of quadratics in y; the stationarity condition
    num' den - num den' = 0 is itself a quadratic (the cubic terms cancel),
    so the per-k sup over [b_-, b_+] is exact: evaluate at the two edges and
    at any interior critical point.  Vectorized in x.
    """
    x = np.asarray(x, dtype=float).ravel()
    n = params.series_terms()
    if n == 0:
        return np.ones_like(x)
    q = params.q
    b = params.b_plus
    e = math.exp(-delta)
    out = np.ones_like(x)
    for k in range(1, n + 1):
        qk = q**k
        r = e * e * qk * qk
        c1 = (1.0 + qk) ** 2
        c2 = (1.0 - q) * qk
        a2 = (1.0 - q) * r
        a1 = -(1.0 - q) * e * qk * (1.0 + r) * x
        a0 = (1.0 - r) ** 2 + (1.0 - q) * r * x * x

        def ratio(y):
            return (c1 - c2 * y * y) / (a2 * y * y + a1 * y + a0)

        best = np.maximum(ratio(np.full_like(x, b)), ratio(np.full_like(x, -b)))
        # critical points: -c2 a1 y^2 - 2(c2 a0 + c1 a2) y - c1 a1 = 0
        qa = -c2 * a1
        qb = -2.0 * (c2 * a0 + c1 * a2)
        qc = -c1 * a1
        disc = qb * qb - 4.0 * qa * qc
        with np.errstate(divide="ignore", invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            for sgn in (1.0, -1.0):
                root = np.where(
                    np.abs(qa) > 1e-300,
                    (-qb + sgn * sq) / (2.0 * qa),
                    np.where(np.abs(qb) > 1e-300, -qc / np.where(qb == 0, 1.0, qb), np.inf),
                )
                ok = (disc >= 0.0) & (np.abs(root) < b) & np.isfinite(root)
                if np.any(ok):
                    best = np.where(ok, np.maximum(best, ratio(np.where(ok, root, 0.0))), best)
        out *= best * (1.0 + 1e-12)
    return out


def transition_envelope_constant(params: QParams) -> float:
    """C(q) = (2/pi) (q)_inf prod_{k>=1} (1+|q|^k)^3 / (1-|q|^k)^4.

    A concrete constant for the transformed-transition envelope
    p <= C t e^{2 eps t} sqrt(y) / (16 sinh^4(eps t/2)/eps^4 + (x-y)^2);
    assembled from the factor bounds quoted in the density docstrings.
    """
    n = params.series_terms()
    aq = abs(params.q)
    if n == 0:
        prod = 1.0
    else:
        k = np.arange(1, n + 1)
        prod = float(np.exp(np.sum(3.0 * np.log1p(aq**k) - 4.0 * np.log1p(-(aq**k)))))
    return 2.0 / math.pi * q_factor(params) * prod


def upper_pq_constant(params: QParams) -> float:
    """C with p^(q,eps)(w) <= C sqrt(w) eps^3: C = (q)_inf prod (1+|q|^k)^2 / pi."""
    return q_factor(params) * psi_sup_product(params) / math.pi
