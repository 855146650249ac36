"""Model parameters and the closed-form constants of the periodic liquidation problem.

The unaffected price is a geometric Brownian motion with drift ``mu`` and
volatility ``sigma``; every sale of ``nu`` shares multiplies the price by
``exp(-lam * nu)``. Trading is only possible at the arrival times of a Poisson
clock with intensity ``gamma``. Gains are discounted at rate ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class InvalidParamsError(ValueError):
    """Raised when a computation is requested with parameters that fail validation."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("invalid model parameters: " + "; ".join(report.violations))


class DegenerateFormulaError(ArithmeticError):
    """A closed-form denominator that must be positive was not."""


@dataclass(frozen=True)
class ModelParams:
    mu: float
    sigma: float
    delta: float
    lam: float
    gamma: float
    cost_sell: float
    cost_buy: float

    @property
    def b(self) -> float:
        return 0.5 * self.sigma**2 - self.mu

    @property
    def eta(self) -> float:
        return self.delta - self.mu

    @property
    def log_drift(self) -> float:
        """Drift of ``ln X`` between trades, ``mu - sigma**2 / 2``."""
        return self.mu - 0.5 * self.sigma**2

    def replace(self, **changes) -> "ModelParams":
        from dataclasses import replace

        return replace(self, **changes)


DEFAULT_PARAMS = ModelParams(
    mu=0.05, sigma=0.3, delta=0.1, lam=0.01, gamma=2.0, cost_sell=0.5, cost_buy=0.5
)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_params(p: ModelParams) -> ValidationReport:
    """Check the standing assumptions of the model; never raises."""
    checks = [
        ("delta > mu", p.delta > p.mu),
        ("sigma != 0", p.sigma != 0),
        ("lam > 0", p.lam > 0),
        ("gamma > 0", p.gamma > 0),
        ("cost_sell > 0", p.cost_sell > 0),
        ("cost_buy > 0", p.cost_buy > 0),
        ("delta > 0", p.delta > 0),
    ]
    violations = []
    for name, ok in checks:
        # NaN compares False everywhere, so it is reported here too
        if not ok:
            violations.append(f"{name} violated")
    for name in ("mu", "sigma", "delta", "lam", "gamma", "cost_sell", "cost_buy"):
        if not math.isfinite(getattr(p, name)):
            violations.append(f"{name} must be finite")
    return ValidationReport(tuple(violations))


def require_valid(p: ModelParams) -> None:
    report = validate_params(p)
    if not report.ok:
        raise InvalidParamsError(report)


def _quadratic_roots(sigma: float, b: float, c: float) -> tuple[float, float]:
    """Roots (positive, negative) of ``sigma**2/2 * l**2 - b*l - c = 0`` for c > 0.

    The larger-magnitude root is taken from the quadratic formula and the
    other from the product of roots, which avoids cancellation.
    """
    s2 = sigma * sigma
    disc = math.sqrt(b * b + 2.0 * s2 * c)
    product = -2.0 * c / s2
    if b >= 0:
        pos = (b + disc) / s2
        neg = product / pos
    else:
        neg = (b - disc) / s2
        pos = product / neg
    return pos, neg


def positive_root_n(p: ModelParams) -> float:
    require_valid(p)
    return _quadratic_roots(p.sigma, p.b, p.delta)[0]


def negative_root_m(p: ModelParams) -> float:
    require_valid(p)
    return _quadratic_roots(p.sigma, p.b, p.delta + p.gamma)[1]


def _root_excess(p: ModelParams) -> float:
    """``n - 1``, computed without cancellation.

    ``k = n - 1`` is the positive root of ``sigma^2/2 k^2 + s k - eta = 0``
    with ``s = sigma^2/2 + mu``, so it stays accurate when ``delta - mu`` is
    tiny and ``n`` rounds to 1.
    """
    s = 0.5 * p.sigma**2 + p.mu
    return 2.0 * p.eta / (s + math.sqrt(s * s + 2.0 * p.sigma**2 * p.eta))


def _delta_over_n_gap(p: ModelParams, n: float) -> float:
    """``delta/n - gamma mu/(eta + gamma)``, which is proportional to ``eta``.

    Uses ``delta - n mu = eta (b + R)/(s + R)`` with ``s = sigma^2/2 + mu``
    and ``R = sqrt(s^2 + 2 sigma^2 eta)``.
    """
    d, g, eta = p.delta, p.gamma, p.eta
    s = 0.5 * p.sigma**2 + p.mu
    R = math.sqrt(s * s + 2.0 * p.sigma**2 * eta)
    return eta * (d + g * (p.b + R) / (s + R)) / (n * (eta + g))


def _a_gamma_parts(p: ModelParams, n: float, m: float) -> tuple[float, float]:
    d, g, b, eta = p.delta, p.gamma, p.b, p.eta
    num = (d - m * (d / n + g * b / (d + g))) / (d + g)
    den = eta / (eta + g) - m / (d + g) * _delta_over_n_gap(p, n)
    return num, den


def a_gamma(p: ModelParams) -> float:
    """Ratio of the optimal barrier to the per-share sale cost.

    Lies strictly between 1 and ``n / (n - 1)``; tends to 1 as the clock slows
    down and to ``n / (n - 1)`` as it speeds up (at rate ``O(gamma**-0.5)``).
    """
    require_valid(p)
    n, _ = _quadratic_roots(p.sigma, p.b, p.delta)
    _, m = _quadratic_roots(p.sigma, p.b, p.delta + p.gamma)
    num, den = _a_gamma_parts(p, n, m)
    if not den > 0:
        raise DegenerateFormulaError(f"a_gamma denominator {den!r} is not positive")
    return num / den


@dataclass(frozen=True)
class DerivedConstants:
    params: ModelParams
    b: float
    eta: float
    n: float
    m_gamma: float
    a_gamma: float
    F_barrier: float
    A_coeff: float
    C_coeff: float
    F_infinity: float
    _token: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self._token is not _CONSTRUCT:
            raise TypeError("DerivedConstants are built by derive_constants()")

    def as_dict(self) -> dict[str, float]:
        return {
            "b": self.b,
            "eta": self.eta,
            "n": self.n,
            "m_gamma": self.m_gamma,
            "a_gamma": self.a_gamma,
            "F_barrier": self.F_barrier,
            "A_coeff": self.A_coeff,
            "C_coeff": self.C_coeff,
            "F_infinity": self.F_infinity,
        }


_CONSTRUCT = object()


def barrier_formula(p: ModelParams, n: float, m: float) -> float:
    """The optimal barrier written out directly (cost_sell inside the numerator)."""
    d, g, b, eta, cs = p.delta, p.gamma, p.b, p.eta, p.cost_sell
    num = cs / (d + g) * (d - m * (d / n + g * b / (d + g)))
    den = eta / (eta + g) - m / (d + g) * _delta_over_n_gap(p, n)
    return num / den


def derive_constants(p: ModelParams) -> DerivedConstants:
    require_valid(p)
    d, g, b, lam, cs = p.delta, p.gamma, p.b, p.lam, p.cost_sell
    n, _ = _quadratic_roots(p.sigma, b, d)
    _, m = _quadratic_roots(p.sigma, b, d + g)
    num, den = _a_gamma_parts(p, n, m)
    if not den > 0:
        raise DegenerateFormulaError(f"a_gamma denominator {den!r} is not positive")
    a = num / den
    F = cs * a
    F_direct = barrier_formula(p, n, m)
    if not math.isclose(F, F_direct, rel_tol=1e-10):
        raise DegenerateFormulaError(f"barrier mismatch: {F!r} vs {F_direct!r}")
    k = _root_excess(p)
    A = F / (lam * (d + g)) * _delta_over_n_gap(p, n) - cs / (lam * (d + g)) * (d / n + g * b / (d + g))
    # (F - C_s)/n - F regrouped as -(k F + C_s)/n, which does not cancel for huge F
    C = g / (lam * (d + g)) * (b * cs / (d + g) + cs * math.log(F) - (k * F + cs) / n)
    return DerivedConstants(
        params=p,
        b=b,
        eta=p.eta,
        n=n,
        m_gamma=m,
        a_gamma=a,
        F_barrier=F,
        A_coeff=A,
        C_coeff=C,
        F_infinity=n * cs / k,
        _token=_CONSTRUCT,
    )
