"""Exception types for numerical failure modes.

Validation problems (arguments outside documented domains) raise plain
ValueError; the classes here flag genuine numerical breakdowns that callers
may want to catch and map to a nonzero exit status.
"""


class NumericsError(Exception):
    """Base class for numerical failures."""


class QuadratureNonconvergence(NumericsError):
    """Adaptive quadrature hit its node cap before reaching tolerance."""


class SamplerStall(NumericsError):
    """Rejection sampler acceptance rate collapsed; signals an envelope bug."""


class EnvelopeViolation(NumericsError):
    """A proposal's density ratio exceeded the declared envelope bound."""


class DegenerateDenominator(NumericsError):
    """The escape-bound denominator came out nonpositive; quadrature failure."""
