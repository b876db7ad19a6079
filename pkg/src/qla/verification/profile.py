"""Exponent bundle for the polynomial large deviation conditions."""
from dataclasses import asdict, dataclass
import math

from ..errors import ProfileError

MODES = ("S", "T", "U")


@dataclass(frozen=True)
class ConditionProfile:
    """Exponents ``(alpha, beta1, beta2, rho1, rho2)`` and decay order ``L``.

    Construction enforces the strict inequalities that tie the exponents
    together; the derived moment orders ``M1..M4`` follow from them.
    """

    alpha: float
    beta1: float
    beta2: float
    rho1: float
    rho2: float
    L: float
    mode: str = "S"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ProfileError(f"mode must be one of {MODES}")
        a, b1, b2, r1, r2 = self.alpha, self.beta1, self.beta2, self.rho1, self.rho2
        if not 0 < a < 1:
            raise ProfileError("alpha must lie in (0, 1)")
        if self.L <= 0:
            raise ProfileError("L must be positive")
        checks = [
            (0 < b1 < 0.5, "0 < beta1 < 1/2"),
            (0 < r1 < min(1.0, a / (1 - a), 2 * b1 / (1 - a)), "0 < rho1 < min{1, alpha/(1-alpha), 2 beta1/(1-alpha)}"),
            (0 < 2 * a < r2, "0 < 2 alpha < rho2"),
            (b2 >= 0, "beta2 >= 0"),
            (1 - 2 * b2 - r2 > 0, "1 - 2 beta2 - rho2 > 0"),
        ]
        for ok, text in checks:
            if not ok:
                raise ProfileError(f"condition profile violates {text}: {self}")
        for name in ("M1", "M2", "M3", "M4"):
            m = getattr(self, name)
            if not (m > 0 and math.isfinite(m)):
                raise ProfileError(f"derived {name}={m} is not positive and finite")

    @property
    def beta(self):
        return self.alpha / (1 - self.alpha)

    @property
    def rho_max(self):
        return max(self.rho1, self.rho2)

    @property
    def M1(self):
        return self.L / (1 - self.rho1)

    @property
    def M2(self):
        return self.L / (1 - 2 * self.beta2 - self.rho2)

    @property
    def M3(self):
        return self.L / (self.beta - self.rho1)

    @property
    def M4(self):
        return self.L / (2 * self.beta1 / (1 - self.alpha) - self.rho1)

    @property
    def eps1(self):
        return 0.5 - self.beta2

    @property
    def eps2(self):
        return self.beta1

    def as_dict(self):
        d = asdict(self)
        d.update(beta=self.beta, M1=self.M1, M2=self.M2, M3=self.M3, M4=self.M4)
        return d


def find_rho1(alpha, beta1, beta2, rho2, L, M1=None, M3=None, M4=None):
    """Pick ``rho1`` completing a valid profile from the ergodic-case exponents.

    The inputs must satisfy ``0 < 2 alpha < rho2``, ``beta2 >= 0``,
    ``1 - 2 beta2 - rho2 > 0`` and ``0 < beta1 < 1/2``. If moment orders
    ``M1, M3, M4`` are supplied, ``rho1`` is also small enough that
    ``L/(1-rho1) <= M1``, ``L/(beta-rho1) <= M3`` and
    ``L/(2 beta1/(1-alpha) - rho1) <= M4``. Returns half the admissible
    upper bound (capped at ``rho2``).
    """
    if not (0 < 2 * alpha < rho2 and beta2 >= 0 and 1 - 2 * beta2 - rho2 > 0 and 0 < beta1 < 0.5 and alpha < 1):
        raise ProfileError("inputs violate 0<2alpha<rho2, beta2>=0, 1-2beta2-rho2>0, 0<beta1<1/2")
    beta = alpha / (1 - alpha)
    k = 2 * beta1 / (1 - alpha)
    bounds = [1.0, beta, k]
    if M1 is not None:
        bounds.append(1 - L / M1)
    if M3 is not None:
        bounds.append(beta - L / M3)
    if M4 is not None:
        bounds.append(k - L / M4)
    upper = min(bounds)
    if upper <= 0:
        raise ProfileError(f"no admissible rho1: moment orders too small (bound {upper})")
    return min(0.5 * upper, rho2)


def make_profile(alpha=0.2, beta1=0.3, beta2=0.05, rho2=0.5, L=2.0, rho1=None, mode="S"):
    if rho1 is None:
        rho1 = find_rho1(alpha, beta1, beta2, rho2, L)
    return ConditionProfile(alpha, beta1, beta2, rho1, rho2, L, mode)


def default_profile(mode="S"):
    return make_profile(mode=mode)
