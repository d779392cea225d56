"""Exact samplers and path-skeleton simulation.

Everything is rejection or inverse-CDF sampling against the closed-form
densities; there is no discretization error in the transitions, only in the
choice of grid times.  Paths are simulated as exact finite-dimensional
skeletons (Markov chain on the grid) and never interpolated.

Sampler design
--------------
* Stationary q-OU marginal: rejection against the uniform law on
  [b_-, b_+] with envelope constant sup f (grid+refinement search, cached).
* Tangent transition from x > 0 over lag tau: substitute u = sqrt(y).  The
  target is u^2/(((u-a)^2+tau^2)((u+a)^2+tau^2)) with a = sqrt(x), and
  u^2 <= (u+a)^2 + tau^2 holds algebraically, so a single truncated
  Cauchy(a, tau) proposal dominates with acceptance >= 1/4 uniformly.
* Tangent transition from x = 0: inverse CDF of
  F(v) = (2/pi)(arctan v - v/(1+v^2)) at v = sqrt(y)/tau by bracketed
  Newton iteration (tolerance 1e-12 relative in v).
* q-OU transition from x over lag d: substitute u = sqrt(y - b_-).  The
  k = 0 factor is exactly Cauchy-shaped in y (completed square), the edge
  factor sqrt(4-(1-q)y^2) contributes sqrt(y-b_-) = u (absorbed into the
  proposal) times a bounded sqrt(b_+-y) remainder, and the k >= 1 product
  is bounded by its exact per-k minima.  The same truncated-Cauchy
  dominance argument applies, so acceptance is O(1) for every lag, unlike
  rejection against the stationary law whose acceptance decays like d^3.
  For d > 350 the kernel is within 1e-150 total variation of the marginal
  (every e^{-d} factor is below 1e-152), so the marginal sampler is used.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .densities import qou_marginal_pdf, tangent_transition_cdf
from .errors import EnvelopeViolation, SamplerStall
from .params import QParams
from .qseries import phi_ratio_sup_product, phi_tail_product_inv, psi_product, psi_sup_product

_MAX_REJECTION_ROUNDS = 100_000
_STALL_RATE = 1e-3
_STALL_MIN_PROPOSALS = 100_000
_BINARY_MAGIC = b"QOUPATH1\n"


def as_generator(rng) -> np.random.Generator:
    """Accept an int seed or a Generator; return a Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass
class SamplerDiagnostics:
    """Proposal/acceptance counters for rejection samplers."""

    proposals: int = 0
    accepts: int = 0

    def __post_init__(self):
        if self.accepts > self.proposals:
            raise ValueError("accepts cannot exceed proposals")

    @property
    def acceptance_rate(self) -> float:
        if self.proposals == 0:
            return 1.0
        return self.accepts / self.proposals

    def record(self, proposals: int, accepts: int) -> None:
        self.proposals += int(proposals)
        self.accepts += int(accepts)
        if self.proposals >= _STALL_MIN_PROPOSALS and self.acceptance_rate < _STALL_RATE:
            raise SamplerStall(
                f"acceptance rate {self.acceptance_rate:.2e} after "
                f"{self.proposals} proposals"
            )


@dataclass(frozen=True)
class PathSkeleton:
    """Exact Markov skeleton: strictly increasing times with process values.

    ``origin_index`` locates time 0 on the grid (None when 0 is not a grid
    point).  ``meta`` carries q, eps and the seed for serialization headers.
    """

    times: np.ndarray
    values: np.ndarray
    origin_index: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if self.origin_index is not None:
            if not 0 <= self.origin_index < times.size:
                raise ValueError("origin_index out of range")

    def __len__(self) -> int:
        return int(self.times.size)

    def _header(self) -> str:
        q = self.meta.get("q", math.nan)
        eps = self.meta.get("eps", math.nan)
        seed = self.meta.get("seed", "")
        return f"# q={q!r} eps={eps!r} seed={seed}"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self._header() + "\n")
            fh.write("time,value\n")
            for t, v in zip(self.times, self.values):
                fh.write(f"{t:.17g},{v:.17g}\n")

    @classmethod
    def from_csv(cls, path) -> "PathSkeleton":
        meta = {}
        times, values = [], []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    for tok in line[1:].split():
                        if "=" in tok:
                            k, v = tok.split("=", 1)
                            try:
                                meta[k] = float(v)
                            except ValueError:
                                meta[k] = v
                    continue
                if line.startswith("time"):
                    continue
                t, v = line.split(",")
                times.append(float(t))
                values.append(float(v))
        times = np.asarray(times)
        origin = int(np.argmin(np.abs(times))) if times.size and np.any(times == 0.0) else None
        return cls(times=times, values=np.asarray(values), origin_index=origin, meta=meta)

    def to_binary(self, path) -> None:
        """Length-prefixed little-endian float64 columnar dump."""
        with open(path, "wb") as fh:
            fh.write(_BINARY_MAGIC)
            fh.write((self._header() + "\n").encode())
            n = len(self)
            fh.write(struct.pack("<Q", n))
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(self.values.astype("<f8").tobytes())
            fh.write(struct.pack("<q", -1 if self.origin_index is None else self.origin_index))

    @classmethod
    def from_binary(cls, path) -> "PathSkeleton":
        with open(path, "rb") as fh:
            magic = fh.read(len(_BINARY_MAGIC))
            if magic != _BINARY_MAGIC:
                raise ValueError("not a path skeleton binary dump")
            header = b""
            while not header.endswith(b"\n"):
                header += fh.read(1)
            meta = {}
            for tok in header.decode().lstrip("#").split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    try:
                        meta[k] = float(v)
                    except ValueError:
                        meta[k] = v
            (n,) = struct.unpack("<Q", fh.read(8))
            times = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            values = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
            (origin,) = struct.unpack("<q", fh.read(8))
        return cls(
            times=times,
            values=values,
            origin_index=None if origin < 0 else int(origin),
            meta=meta,
        )


# ---------------------------------------------------------------------------
# core vectorized draws
# ---------------------------------------------------------------------------


def _truncated_cauchy_bounds(loc, scale, hi):
    """Proposal cdf values at the endpoints of (0, hi); hi may be inf."""
    f_lo = np.arctan((0.0 - loc) / scale) / math.pi + 0.5
    if np.isinf(hi):
        f_hi = 1.0
    else:
        f_hi = np.arctan((hi - loc) / scale) / math.pi + 0.5
    return f_lo, f_hi


def _truncated_cauchy_draw(rng, loc, scale, f_lo, f_hi, size):
    u = rng.uniform(size=size)
    return loc + scale * np.tan(math.pi * (f_lo + u * (f_hi - f_lo) - 0.5))


def _truncated_cauchy(rng, loc, scale, hi, size):
    """Draw from Cauchy(loc, scale) restricted to (0, hi); hi may be inf."""
    f_lo, f_hi = _truncated_cauchy_bounds(loc, scale, hi)
    return _truncated_cauchy_draw(rng, loc, scale, f_lo, f_hi, size)


def tangent_from_zero(rng, tau, size=None) -> np.ndarray:
    """Exact draw of Z_tau started at 0 via inverse CDF.

    F(v) = (2/pi)(arctan v - v/(1+v^2)) for v = sqrt(y)/tau; Newton with
    bisection safeguard, relative tolerance 1e-12 in v; returns tau^2 v^2.
    """
    rng = as_generator(rng)
    tau = np.asarray(tau, dtype=float)
    shape = np.broadcast_shapes(tau.shape, () if size is None else (size,))
    u = rng.uniform(0.0, 1.0, size=shape)
    # initial guess from the small/large-v expansions
    v = np.where(u < 0.3, (3.0 * math.pi * u / 4.0) ** (1.0 / 3.0), 4.0 / (math.pi * (1.0 - u)))
    lo = np.zeros(shape)
    hi = np.full(shape, np.inf)
    for _ in range(200):
        F = (2.0 / math.pi) * (np.arctan(v) - v / (1.0 + v * v))
        dF = 4.0 * v * v / (math.pi * (1.0 + v * v) ** 2)
        high = F > u
        lo = np.where(high, lo, v)
        hi = np.where(high, np.minimum(hi, v), hi)
        step = (F - u) / np.maximum(dF, 1e-300)
        v_new = v - step
        bad = (v_new <= lo) | (v_new >= hi)
        mid = np.where(np.isinf(hi), 2.0 * np.maximum(v, 1.0), 0.5 * (lo + hi))
        v_new = np.where(bad, mid, v_new)
        done = np.abs(v_new - v) <= 1e-12 * (1.0 + np.abs(v_new))
        v = v_new
        if np.all(done):
            break
    y = (tau * v) ** 2
    return y


def tangent_step(rng, x, tau, diagnostics: SamplerDiagnostics | None = None) -> np.ndarray:
    """Exact draw of Z_tau started at x (vectorized; x, tau broadcast).

    x = 0 lanes use the inverse CDF; x > 0 lanes use truncated-Cauchy
    rejection in u = sqrt(y).
    """
    rng = as_generator(rng)
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(x < 0.0):
        raise ValueError("x must be nonnegative")
    if np.any(tau <= 0.0):
        raise ValueError("tau must be positive")
    x_b, tau_b = np.broadcast_arrays(x, tau)
    out = np.empty(x_b.shape, dtype=float)
    zero = x_b == 0.0
    if np.any(zero):
        out[zero] = tangent_from_zero(rng, tau_b[zero])
    pos = ~zero
    if np.any(pos):
        out[pos] = _tangent_step_pos(rng, x_b[pos].ravel(), tau_b[pos].ravel(), diagnostics).reshape(
            x_b[pos].shape
        )
    return out if out.ndim else float(out)


def _tangent_step_pos(rng, x, tau, diagnostics=None) -> np.ndarray:
    alpha = np.sqrt(x)
    beta = np.broadcast_to(np.asarray(tau, dtype=float), x.shape)
    n = x.size
    y = np.empty(n, dtype=float)
    pending = np.arange(n)
    f_lo, f_hi = _truncated_cauchy_bounds(alpha, beta, np.inf)
    f_lo = np.broadcast_to(f_lo, x.shape)
    diag = diagnostics if diagnostics is not None else SamplerDiagnostics()
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise SamplerStall(f"tangent transition rejection exceeded {rounds} rounds")
        a = alpha[pending]
        b = beta[pending]
        u = _truncated_cauchy_draw(rng, a, b, f_lo[pending], f_hi, pending.size)
        acc = u * u / ((u + a) ** 2 + b * b)
        if np.any(acc > 1.0 + 1e-12):
            raise EnvelopeViolation("tangent transition acceptance ratio above 1")
        keep = rng.uniform(size=pending.size) < acc
        diag.record(pending.size, int(keep.sum()))
        y[pending[keep]] = u[keep] ** 2
        pending = pending[~keep]
    return y


# ---------------------------------------------------------------------------
# q-OU samplers
# ---------------------------------------------------------------------------

_MARGINAL_SUP_CACHE: dict[QParams, float] = {}


def marginal_sup(params: QParams) -> float:
    """sup of the stationary marginal density (grid + golden refinement)."""
    cached = _MARGINAL_SUP_CACHE.get(params)
    if cached is not None:
        return cached
    xs = np.linspace(params.b_minus, params.b_plus, 4097)
    fs = qou_marginal_pdf(xs, params)
    i = int(np.argmax(fs))
    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, xs.size - 1)]
    for _ in range(60):
        m1 = lo + (hi - lo) * 0.381966
        m2 = hi - (hi - lo) * 0.381966
        if qou_marginal_pdf(m1, params) < qou_marginal_pdf(m2, params):
            lo = m1
        else:
            hi = m2
    sup = float(qou_marginal_pdf(0.5 * (lo + hi), params)) * (1.0 + 1e-9)
    _MARGINAL_SUP_CACHE[params] = sup
    return sup


def qou_marginal_batch(rng, params: QParams, size: int, diagnostics=None) -> np.ndarray:
    """Exact stationary draws by rejection against the uniform envelope."""
    rng = as_generator(rng)
    sup = marginal_sup(params)
    out = np.empty(size, dtype=float)
    pending = np.arange(size)
    diag = diagnostics if diagnostics is not None else SamplerDiagnostics()
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise SamplerStall("marginal sampler exceeded round cap")
        y = rng.uniform(params.b_minus, params.b_plus, size=pending.size)
        keep = rng.uniform(0.0, sup, size=pending.size) < qou_marginal_pdf(y, params)
        diag.record(pending.size, int(keep.sum()))
        out[pending[keep]] = y[keep]
        pending = pending[~keep]
    return out


def transformed_marginal_batch(rng, eps: float, params: QParams, size: int, diagnostics=None):
    """Stationary draws of the edge-magnified process, directly in w.

    Density is proportional to sqrt(w) sqrt(4 - w eps^2) psi-product on
    [0, 4/eps^2]; propose from the sqrt(w) law (w = w_max U^{2/3}) and accept
    with the bounded remainder.  Avoids any cancellation at the lower edge.
    """
    rng = as_generator(rng)
    w_hi = 4.0 / (eps * eps)
    psi_sup = psi_sup_product(params)
    sq = math.sqrt(1.0 - params.q)
    out = np.empty(size, dtype=float)
    pending = np.arange(size)
    diag = diagnostics if diagnostics is not None else SamplerDiagnostics()
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise SamplerStall("transformed marginal sampler exceeded round cap")
        w = w_hi * rng.uniform(size=pending.size) ** (2.0 / 3.0)
        y_raw = params.b_minus + w * eps * eps / sq
        ratio = np.sqrt(np.maximum(4.0 - w * eps * eps, 0.0)) / 2.0
        if params.q != 0.0:
            ratio = ratio * psi_product(y_raw, params) / psi_sup
        keep = rng.uniform(size=pending.size) < ratio
        diag.record(pending.size, int(keep.sum()))
        out[pending[keep]] = w[keep]
        pending = pending[~keep]
    return out


def _qou_step_u(rng, delta: float, params: QParams, gap_lower, diagnostics=None) -> np.ndarray:
    """Core q-OU transition draw; returns the gap y - b_- exactly.

    ``gap_lower`` is x - b_- (exact, supplied by the caller to avoid edge
    cancellation).  Exact rejection as described in the module docstring.

    The acceptance function g(u) (proposal-compensated target) is smooth
    and pole-free on (0, umax]; its k = 0 and edge parts are <= 1 by
    algebra, and for q != 0 the k >= 1 ratio is normalized either by the
    exact per-k ratio sups (moderate |q|) or by a per-lane numerical sup
    (dense grid + golden refinement + 2% headroom) near |q| = 1.  Any
    proposal with g above the declared bound raises EnvelopeViolation.
    """
    rng = as_generator(rng)
    gap = np.asarray(gap_lower, dtype=float).ravel()
    n = gap.size
    q = params.q
    b_minus = params.b_minus
    umax2 = params.b_plus - b_minus
    umax = math.sqrt(umax2)
    # the kernel is symmetric under x -> -x, y -> -y: reflect starts in the
    # upper half so the density spike always sits in u <= umax/sqrt(2),
    # where the proposal's u^2 factor matches the edge behavior exactly
    # (starts near b_+ would otherwise collapse the sqrt(b_+ - y) acceptance)
    reflect = gap > umax2 / 2.0
    gap = np.where(reflect, umax2 - gap, gap)
    x = b_minus + gap

    cosh_d = math.cosh(delta)
    sinh_half2 = math.sinh(delta / 2.0) ** 2
    # vertex and half-width of the k=0 Cauchy factor, in u^2 coordinates
    a_tilde = gap * cosh_d + 2.0 * b_minus * sinh_half2
    gamma = math.sinh(delta) * np.sqrt(np.maximum(gap * (umax2 - gap), 0.0))
    rho = np.hypot(a_tilde, gamma)
    # alpha*beta = gamma/2; pick the stable branch per sign of a_tilde
    # (a_tilde < umax2/2 after reflection, so alpha < umax always)
    pos = a_tilde >= 0.0
    alpha = np.where(pos, np.sqrt(np.maximum((rho + a_tilde) / 2.0, 0.0)), 0.0)
    beta = np.where(pos, 0.0, np.sqrt(np.maximum((rho - a_tilde) / 2.0, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(pos, np.where(alpha > 0, gamma / (2.0 * alpha), 0.0), beta)
        alpha = np.where(~pos, np.where(beta > 0, gamma / (2.0 * beta), alpha), alpha)
    # gap = 0 exactly gives gamma = 0, a_tilde < 0, hence beta > 0; a
    # positive floor guards the float corner gap ~ 1e-300
    beta = np.maximum(beta, 1e-150)

    # u^2/((u+a)^2+b^2) normalized by its value at umax (it is increasing,
    # so the normalized form stays <= 1); precompute the lane constants
    norm = ((umax + alpha) ** 2 + beta * beta) / (umax2 * umax2)

    def acc_raw(u, lanes):
        """Proposal-compensated target at u for the given lane indices."""
        a = alpha[lanes]
        bg = beta[lanes]
        u2 = u * u
        g = u2 * norm[lanes] / ((u + a) ** 2 + bg * bg) * np.sqrt(
            np.maximum(umax2 - u2, 0.0)
        ) * umax
        if q != 0.0:
            # psi and phi depend only on y^2, x^2 + y^2 and x y, so the
            # reflected kernel evaluates identically in reflected coordinates
            y = b_minus + u2
            g = g * psi_product(y, params) * phi_tail_product_inv(delta, x[lanes], y, params)
        return g

    if q == 0.0:
        acc_sup = np.ones(n)
    elif abs(q) <= 0.65:
        # per-k exact ratio sups multiply to a usable bound at moderate |q|
        # (acceptance a few percent or better); the k=0 and edge parts of
        # acc_raw are <= 1 by algebra, so this dominates g everywhere.
        acc_sup = phi_ratio_sup_product(delta, x, params)
    else:
        # near |q| = 1 the product of per-k sups is exponentially slack
        # (odd and even factors peak at different y); fall back to a
        # per-lane numerical sup of the smooth, pole-free g: coarse grid
        # plus vectorized golden-section refinement, with 2% headroom and
        # the runtime acceptance check as the guarantee.
        all_lanes = np.arange(n)
        grid = np.linspace(0.0, umax, 130)[1:]
        best = np.zeros(n)
        best_i = np.zeros(n, dtype=int)
        for i, u0 in enumerate(grid):
            gi = acc_raw(np.full(n, u0), all_lanes)
            upd = gi > best
            best = np.where(upd, gi, best)
            best_i = np.where(upd, i, best_i)
        lo = grid[np.maximum(best_i - 1, 0)]
        hi = grid[np.minimum(best_i + 1, grid.size - 1)]
        invphi = 0.381966011250105
        m1 = lo + (hi - lo) * invphi
        m2 = hi - (hi - lo) * invphi
        g1 = acc_raw(m1, all_lanes)
        g2 = acc_raw(m2, all_lanes)
        for _ in range(30):
            take1 = g1 < g2
            lo = np.where(take1, m1, lo)
            hi = np.where(take1, hi, m2)
            m1 = lo + (hi - lo) * invphi
            m2 = hi - (hi - lo) * invphi
            g1 = acc_raw(m1, all_lanes)
            g2 = acc_raw(m2, all_lanes)
        acc_sup = np.maximum(best, np.maximum(g1, g2)) * 1.02

    out_gap = np.empty(n, dtype=float)
    pending = np.arange(n)
    f_lo, f_hi = _truncated_cauchy_bounds(alpha, beta, umax)
    diag = diagnostics if diagnostics is not None else SamplerDiagnostics()
    rounds = 0
    while pending.size:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise SamplerStall("q-OU transition rejection exceeded round cap")
        u = _truncated_cauchy_draw(rng, alpha[pending], beta[pending],
                                   f_lo[pending], f_hi[pending], pending.size)
        u = np.clip(u, 0.0, umax)
        acc = acc_raw(u, pending) / acc_sup[pending]
        if np.any(acc > 1.0 + 1e-9):
            raise EnvelopeViolation("q-OU transition acceptance ratio above 1")
        keep = rng.uniform(size=pending.size) < acc
        diag.record(pending.size, int(keep.sum()))
        lanes = pending[keep]
        uk = u[keep]
        out_gap[lanes] = np.where(reflect[lanes], umax2 - uk * uk, uk * uk)
        pending = pending[~keep]
    return out_gap


def qou_step(rng, x, delta: float, params: QParams, diagnostics=None) -> np.ndarray:
    """Exact q-OU transition draw from x over lag delta (vectorized in x)."""
    if not delta > 0.0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > params.b_plus * (1.0 + 1e-12)):
        raise ValueError("start point outside the state space")
    rng = as_generator(rng)
    if delta > 350.0:
        # kernel is numerically the stationary law (factors e^{-delta} < 1e-152)
        return qou_marginal_batch(rng, params, x.size, diagnostics).reshape(x.shape)
    gap = np.clip(x - params.b_minus, 0.0, params.b_plus - params.b_minus)
    gap_out = _qou_step_u(rng, delta, params, gap, diagnostics)
    return (params.b_minus + gap_out).reshape(x.shape)


def qou_step_transformed(rng, w, dt: float, eps: float, params: QParams, diagnostics=None):
    """One transition of the edge-magnified process over transformed lag dt.

    Uses the raw kernel at lag eps*dt; returns w' = (y - b_-) sqrt(1-q)/eps^2
    computed exactly from the sampler's u = sqrt(y - b_-).
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    w = np.asarray(w, dtype=float)
    delta = eps * dt
    sq = math.sqrt(1.0 - params.q)
    rng = as_generator(rng)
    if delta > 350.0:
        return transformed_marginal_batch(rng, eps, params, w.size, diagnostics).reshape(w.shape)
    gap = w.ravel() * eps * eps / sq
    gap_out = _qou_step_u(rng, delta, params, gap, diagnostics)
    return (gap_out * sq / (eps * eps)).reshape(w.shape)


# ---------------------------------------------------------------------------
# public single-draw / path operations
# ---------------------------------------------------------------------------


def sample_qou_marginal(params: QParams, rng, size: int | None = None, diagnostics=None):
    """Exact draw(s) from the stationary q-OU marginal."""
    out = qou_marginal_batch(as_generator(rng), params, 1 if size is None else size, diagnostics)
    return float(out[0]) if size is None else out


def sample_qou_transition(x: float, delta: float, params: QParams, rng, size: int | None = None,
                          diagnostics=None):
    """Exact draw(s) from the q-OU transition kernel started at x."""
    n = 1 if size is None else size
    out = qou_step(rng, np.full(n, float(x)), delta, params, diagnostics)
    return float(out[0]) if size is None else out


def sample_tangent_transition(x: float, tau: float, rng, size: int | None = None,
                              diagnostics=None):
    """Exact draw(s) from the tangent transition kernel started at x >= 0."""
    n = 1 if size is None else size
    out = tangent_step(rng, np.full(n, float(x)), np.full(n, float(tau)), diagnostics)
    return float(out[0]) if size is None else out


def _check_times(times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a nonempty 1-d grid")
    if times.size > 1 and not np.all(np.diff(times) > 0):
        raise ValueError("times must be strictly increasing")
    return times


def simulate_tangent_path(w: float, times, rng, meta: dict | None = None) -> PathSkeleton:
    """Markov skeleton of the tangent process started at w >= 0.

    times[0] may be positive, in which case the first value is already a
    transition from w over times[0].
    """
    if w < 0.0:
        raise ValueError("w must be nonnegative")
    times = _check_times(times)
    if times[0] < 0.0:
        raise ValueError("one-sided path needs times[0] >= 0")
    rng = as_generator(rng)
    values = np.empty(times.size)
    if times[0] == 0.0:
        values[0] = w
    else:
        values[0] = tangent_step(rng, np.array([w]), np.array([times[0]]))[0]
    for i in range(1, times.size):
        values[i] = tangent_step(
            rng, values[i - 1 : i], np.array([times[i] - times[i - 1]])
        )[0]
    origin = 0 if times[0] == 0.0 else None
    return PathSkeleton(times=times, values=values, origin_index=origin, meta=meta or {})


def simulate_two_sided_tangent_path(w: float, times, rng, meta: dict | None = None) -> PathSkeleton:
    """Two-sided tangent skeleton: independent forward and backward halves.

    The grid must contain 0; the value there is exactly w.  The backward
    half is an independent copy of the same semigroup run on |t|.
    """
    if w < 0.0:
        raise ValueError("w must be nonnegative")
    times = _check_times(times)
    origin_candidates = np.where(times == 0.0)[0]
    if origin_candidates.size != 1:
        raise ValueError("two-sided grid must contain time 0 exactly once")
    origin = int(origin_candidates[0])
    rng = as_generator(rng)
    values = np.empty(times.size)
    values[origin] = w
    fwd = times[origin:]
    if fwd.size > 1:
        sk = simulate_tangent_path(w, fwd, rng)
        values[origin:] = sk.values
    back = np.abs(times[:origin][::-1])
    if back.size:
        sk = simulate_tangent_path(w, np.concatenate([[0.0], back]), rng)
        values[:origin] = sk.values[1:][::-1]
    return PathSkeleton(times=times, values=values, origin_index=origin, meta=meta or {})


def simulate_qou_path(x0, times, eps: float, params: QParams, rng,
                      meta: dict | None = None) -> PathSkeleton:
    """Skeleton of the edge-magnified q-OU process on the grid (values in w).

    ``x0`` is either the string 'stationary' (initial value from the
    stationary transformed marginal) or a fixed w >= 0.  Transitions use the
    raw q-OU kernel at lag eps * dt.  Grids may extend to negative times
    (the stationary process is reversible, so the backward half uses the
    same kernel independently); a negative-time grid must contain 0.
    """
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    times = _check_times(times)
    rng = as_generator(rng)
    two_sided = times[0] < 0.0
    if two_sided:
        origin_candidates = np.where(times == 0.0)[0]
        if origin_candidates.size != 1:
            raise ValueError("two-sided grid must contain time 0 exactly once")
        origin = int(origin_candidates[0])
    else:
        origin = 0 if times[0] == 0.0 else None

    if isinstance(x0, str):
        if x0 != "stationary":
            raise ValueError("x0 must be a number or 'stationary'")
        w0 = float(transformed_marginal_batch(rng, eps, params, 1)[0])
    else:
        w0 = float(x0)
        if w0 < 0.0 or w0 * eps * eps > 4.0:
            raise ValueError("x0 outside [0, 4/eps^2]")

    values = np.empty(times.size)
    anchor = origin if origin is not None else 0
    if origin is None:
        # grid starts after 0: first value is a transition from w0
        values[0] = qou_step_transformed(rng, np.array([w0]), times[0], eps, params)[0]
    else:
        values[anchor] = w0
    for i in range(anchor + 1, times.size):
        values[i] = qou_step_transformed(
            rng, values[i - 1 : i], times[i] - times[i - 1], eps, params
        )[0]
    for i in range(anchor - 1, -1, -1):
        values[i] = qou_step_transformed(
            rng, values[i + 1 : i + 2], times[i + 1] - times[i], eps, params
        )[0]
    m = {"q": params.q, "eps": eps}
    if meta:
        m.update(meta)
    return PathSkeleton(times=times, values=values, origin_index=origin, meta=m)
