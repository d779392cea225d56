"""Parameter bundle shared by every q-series evaluation.

All densities of the q-Ornstein-Uhlenbeck family are built from infinite
products with geometrically decaying exponents q^k, |q| < 1.  ``QParams``
carries q together with the truncation controls (relative tolerance and a
hard cap on product length) so that any two evaluations with the same
parameters are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class QParams:
    """q in (-1, 1) plus series-truncation controls.

    Attributes
    ----------
    q : float
        The deformation parameter, strictly inside (-1, 1).
    tol : float
        Relative truncation tolerance for infinite products.
    max_terms : int
        Hard cap on the number of product factors.
    """

    q: float
    tol: float = 1e-12
    max_terms: int = 100_000

    def __post_init__(self):
        if not -1.0 < self.q < 1.0:
            raise ValueError(f"q must satisfy |q| < 1, got {self.q}")
        if not self.tol > 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_terms < 1:
            raise ValueError(f"max_terms must be >= 1, got {self.max_terms}")

    @property
    def b_plus(self) -> float:
        """Upper edge 2/sqrt(1-q) of the state space."""
        return 2.0 / math.sqrt(1.0 - self.q)

    @property
    def b_minus(self) -> float:
        """Lower edge -2/sqrt(1-q) of the state space."""
        return -2.0 / math.sqrt(1.0 - self.q)

    def series_terms(self, scale: float = 1.0) -> int:
        """Number of k >= 1 terms so the geometric log-tail is below tol.

        Smallest K with scale * |q|^(K+1) / (1 - |q|) < tol, clipped to
        [1, max_terms].  Zero for q == 0 (all k >= 1 factors are trivial).
        """
        aq = abs(self.q)
        if aq == 0.0:
            return 0
        target = self.tol * (1.0 - aq) / max(scale, self.tol)
        if target >= 1.0:
            return 1
        k = int(math.ceil(math.log(target) / math.log(aq)))
        return max(1, min(k, self.max_terms))
