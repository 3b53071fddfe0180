"""Transformation families G with derivatives.

Two families are supported:

* Box-Cox with parameter rho:   G(x) = ((1+x)^rho - 1) / rho
* Logarithmic with parameter r: G(x) = log(1 + r*x) / r

Both are strictly increasing with G(0) = 0 and G(inf) = inf. The families
meet where the parameters degenerate: Box-Cox rho -> 0 is log(1+x), which is
Logarithmic r = 1; Logarithmic r -> 0 is the identity, which is Box-Cox
rho = 1. Parameters at or below LIMIT_THRESHOLD evaluate the exact limiting
formula (so boxcox:1 and log:1e-8 denote the same model, as do log:1 and
boxcox:1e-8); everything else goes through expm1/log1p identities, which are
cancellation-free for arbitrarily small parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BOXCOX = "boxcox"
LOGARITHMIC = "log"

# at or below this the exact limit formula is used
LIMIT_THRESHOLD = 1e-8


@dataclass(frozen=True)
class LinkFunction:
    family: str
    param: float

    def __post_init__(self):
        if self.family not in (BOXCOX, LOGARITHMIC):
            raise ValueError(f"unknown link family {self.family!r}")
        if not np.isfinite(self.param) or self.param < 0:
            raise ValueError(f"link parameter must be finite and >= 0, got {self.param}")

    def __str__(self):
        return format_link(self)

    @property
    def is_identity(self) -> bool:
        """True when G is exactly the identity map."""
        if self.family == BOXCOX:
            return self.param == 1.0
        return self.param <= LIMIT_THRESHOLD


def parse_link(spec: str) -> LinkFunction:
    """Parse the CLI encoding 'boxcox:<rho>' or 'log:<r>'."""
    parts = spec.strip().split(":")
    if len(parts) != 2:
        raise ValueError(f"link spec must look like 'boxcox:1' or 'log:0.5', got {spec!r}")
    family, raw = parts[0].strip().lower(), parts[1]
    try:
        param = float(raw)
    except ValueError:
        raise ValueError(f"link parameter {raw!r} is not a number") from None
    return LinkFunction(family, param)


def format_link(link: LinkFunction) -> str:
    return f"{link.family}:{link.param:g}"


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("link argument contains NaN")
    if np.any(x < 0):
        raise ValueError("link argument must be nonnegative")
    return x


def eval_link(link: LinkFunction, x):
    """Evaluate (G(x), G'(x), G''(x)) elementwise for x >= 0."""
    x = _check_x(x)
    rho = link.param
    if link.family == BOXCOX:
        L = np.log1p(x)
        if rho <= LIMIT_THRESHOLD:
            # limit rho -> 0: G = log(1+x)
            g = L
            g1 = np.exp(-L)
            g2 = -np.exp(-2.0 * L)
        else:
            g = np.expm1(rho * L) / rho
            g1 = np.exp((rho - 1.0) * L)
            g2 = (rho - 1.0) * np.exp((rho - 2.0) * L)
    else:
        r = rho
        if r <= LIMIT_THRESHOLD:
            # limit r -> 0: G = identity
            g = x.copy()
            g1 = np.ones_like(x)
            g2 = np.zeros_like(x)
        else:
            y = r * x
            g = np.log1p(y) / r
            g1 = 1.0 / (1.0 + y)
            g2 = -r / (1.0 + y) ** 2
    return g, g1, g2


def _eval_link_d3(link: LinkFunction, x):
    """Third derivative G'''(x), internal to the likelihood Hessian.

    Not part of the public link contract; the exact Hessian of the
    discretized log-likelihood needs d/dx G'' in terms 1 and 3.
    """
    x = _check_x(x)
    rho = link.param
    if link.family == BOXCOX:
        L = np.log1p(x)
        if rho <= LIMIT_THRESHOLD:
            return 2.0 * np.exp(-3.0 * L)
        return (rho - 1.0) * (rho - 2.0) * np.exp((rho - 3.0) * L)
    r = rho
    if r <= LIMIT_THRESHOLD:
        return np.zeros_like(x)
    return 2.0 * r * r / (1.0 + r * x) ** 3
