from dataclasses import asdict, dataclass
from typing import Dict, Tuple
import logging
import math

from scipy.special import gammaln

from .errors import InvalidParams
from .model import ModelParams

_logger = logging.getLogger("adaptwave")


@dataclass(frozen=True)
class Scales:
    """Time and type scales of the wave for one parameter set.

    a_N is the time from a type's establishment to its dominance, k_N the
    natural number of types. k_N_minus and k_N_plus bracket k_N; k_star is the
    largest integer below k_N_plus and t_star the end of the early phase.
    The assumption ratios are the finite-N values of the three expressions
    whose limits the asymptotic results require (A1 and A3 grow, A2 vanishes).
    """

    a_N: float
    k_N: float
    k_N_minus: float
    k_N_plus: float
    k_star: int
    t_star: float
    assumption_ratios: Tuple[float, float, float]

    def assumption_flags(self) -> Tuple[str, str, str]:
        """Qualitative reading of the three ratios; informational only."""
        a1, a2, a3 = self.assumption_ratios
        return (
            "large" if a1 > 1.0 else "small",
            "small" if a2 < 1.0 else "large",
            "small" if a3 < 1.0 else "large",
        )


def _check(params: ModelParams) -> None:
    if not (0.0 < params.mu < params.s):
        raise InvalidParams(
            f"scales need 0 < mu < s, got mu={params.mu} s={params.s}"
        )


def scales(params: ModelParams) -> Scales:
    _check(params)
    s, mu = params.s, params.mu
    log_N = math.log(params.N)
    L = math.log(s / mu)

    a_N = L / s
    k_N = log_N / L
    correction = log_N / L**2 * math.log(k_N)
    k_N_minus = k_N - correction
    k_N_plus = k_N + 2.0 * correction
    k_star = max(0, math.ceil(k_N_plus) - 1)

    # an integer strictly inside (k_N_minus, k_N_plus) slows the early phase
    has_integer = math.floor(k_N_minus) + 1 < k_N_plus
    t_star = (4.0 if has_integer else 2.0) / s * math.log(k_N)

    a1 = log_N / (L * math.log(1.0 / s))
    a2 = log_N / L**2 * math.log(k_N)
    a3 = s * log_N / L
    return Scales(a_N, k_N, k_N_minus, k_N_plus, k_star, t_star, (a1, a2, a3))


def early_curve(j: int, t: float, params: ModelParams) -> float:
    """Early-phase approximation x_j(t) = N mu^j (e^{st} - 1)^j / (s^j j!).

    Evaluated in log space so large j and t do not overflow.
    """
    if j < 0 or t < 0.0:
        raise ValueError(f"need j >= 0 and t >= 0, got {j=} {t=}")
    if j == 0:
        return float(params.N)
    if t == 0.0 or params.mu == 0.0:
        return 0.0
    s, mu = params.s, params.mu
    log_x = (
        math.log(params.N)
        + j * (math.log(mu) + math.log(math.expm1(s * t)) - math.log(s))
        - gammaln(j + 1)
    )
    return math.exp(log_x)


@dataclass(frozen=True)
class Predictions:
    df_width: float
    df_speed: float
    rbw_speed: float
    speed: float
    q_large_t: float
    sigma_sq: float
    a_N: float
    log_N: float
    log_ratio: float

    def sigma_sq_at(self, q_tm1: float) -> float:
        """Variance of the near-Gaussian fitness profile given q(t - 1)."""
        return q_tm1 * self.log_N / self.log_ratio**2

    def tau_gap(self, lead: float) -> float:
        """Heuristic time between consecutive establishments when Q(tau_j) = lead."""
        return self.a_N / lead

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def predictions(params: ModelParams, q_at: float = 2.0) -> Predictions:
    """Width and speed predictions of the wave.

    Args:
        params: model parameters, 0 < mu < s.
        q_at: value of q(t - 1) used for sigma_sq; the long-run limit 2 by default.
    """
    _check(params)
    if not (1.0 <= q_at <= math.e):
        raise ValueError(f"q values lie in [1, e], got {q_at}")
    N, s, mu = params.N, params.s, params.mu
    log_N = math.log(N)
    L = math.log(s / mu)
    log_Ns = math.log(N * s)

    df_width = 2.0 * log_Ns / L
    df_speed = 2.0 * s * log_Ns / L**2
    log_rbw = math.log(N * math.sqrt(s * mu))
    rbw_speed = 2.0 * s * log_rbw / math.log((s / mu) * log_rbw) ** 2
    speed = 2.0 * s * log_N / L**2
    # lead of the wave over its mean, in the long-run limit q = 2
    q_large_t = 2.0 * log_N / L
    sigma_sq = q_at * log_N / L**2
    return Predictions(
        df_width, df_speed, rbw_speed, speed, q_large_t, sigma_sq, L / s, log_N, L
    )


def gauss_log_ratio(ell: int, d: float, q_tm1: float, params: ModelParams) -> float:
    """Predicted log(X_{j(t)+ell} / X_{j(t)}) for a Gaussian profile centred at j(t) + d."""
    _check(params)
    L = math.log(params.s / params.mu)
    return -(L**2) * (ell * ell - 2.0 * ell * d) / (2.0 * q_tm1 * math.log(params.N))


def predicted_curvature(q_tm1: float, params: ModelParams) -> float:
    """Coefficient of ell**2 in gauss_log_ratio."""
    return gauss_log_ratio(1, 0.0, q_tm1, params)


def summary(params: ModelParams) -> Dict[str, float]:
    """Scales and predictions under the keys printed by `adaptwave predict`."""
    sc = scales(params)
    pr = predictions(params)
    a1, a2, a3 = sc.assumption_ratios
    return {
        "N": params.N,
        "mu": params.mu,
        "s": params.s,
        "aN": sc.a_N,
        "kN": sc.k_N,
        "kNminus": sc.k_N_minus,
        "kNplus": sc.k_N_plus,
        "kstar": sc.k_star,
        "tstar": sc.t_star,
        "A1": a1,
        "A2": a2,
        "A3": a3,
        "dfWidth": pr.df_width,
        "dfSpeed": pr.df_speed,
        "rbwSpeed": pr.rbw_speed,
        "speed": pr.speed,
        "qLargeT": pr.q_large_t,
    }
