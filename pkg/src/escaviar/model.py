"""ES-CAViaR(-X) recursions, the asymmetric Laplace likelihood and scoring rules.

Two dynamics are supported for the quantile ``Q_t = b0 + b1 X_{t-1} + b2 Q_{t-1}``:

* ``ar``:  ``ES_t = Q_t - x_t`` with ``x_t`` updated only after a violation,
  ``x_t = g0 + g1 (Q_{t-1} - r_{t-1}) + g2 x_{t-1}``;
* ``exp``: ``ES_t = (1 + exp(g0)) Q_t``.

The driver ``X_t`` is ``|r_t|`` for the original models and the square root
of a realized measure for the ``-X`` variants. Parameters are passed to the
numerical kernels as flat arrays ``(b0, b1, b2, g0[, g1, g2])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import NumericalError, ValidationError

KINDS = {"ar": 0, "exp": 1}
DRIVERS = ("absret", "rv", "rr", "scrv", "scrr", "ssrv", "ssrr")
BETA_NAMES = ("beta0", "beta1", "beta2")
GAMMA_NAMES = {"ar": ("gamma0", "gamma1", "gamma2"), "exp": ("gamma0",)}
EXP_GAMMA_BOUND = 20.0


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "exp"
    driver: str = "absret"
    alpha: float = 0.01

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"model kind must be one of {sorted(KINDS)}, got {self.kind!r}")
        if self.driver not in DRIVERS:
            raise ValidationError(f"driver must be one of {DRIVERS}, got {self.driver!r}")
        if not 0.0 < self.alpha <= 0.5:
            raise ValidationError("alpha must lie in (0, 0.5]")

    @property
    def code(self) -> int:
        return KINDS[self.kind]

    @property
    def param_names(self) -> tuple:
        return BETA_NAMES + GAMMA_NAMES[self.kind]

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def name(self) -> str:
        base = "ES-CAV-AR" if self.kind == "ar" else "ES-CAV-Exp"
        if self.driver == "absret":
            return base
        label = {"scrv": "ScRV", "scrr": "ScRR", "ssrv": "SSRV", "ssrr": "SSRR"}.get(self.driver, self.driver.upper())
        return f"{base}-{label}"


@dataclass(frozen=True)
class ParamVector:
    beta: tuple
    gamma: tuple

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.beta) != 3 or len(self.gamma) not in (1, 3):
            raise ValidationError("expected 3 betas and 1 or 3 gammas")

    @property
    def kind(self) -> str:
        return "ar" if len(self.gamma) == 3 else "exp"

    def to_array(self) -> np.ndarray:
        return np.array(self.beta + self.gamma)

    @classmethod
    def from_array(cls, theta) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(theta[:3]), tuple(theta[3:]))

    def as_dict(self) -> dict:
        names = BETA_NAMES + GAMMA_NAMES[self.kind]
        return dict(zip(names, self.beta + self.gamma))


@dataclass(frozen=True)
class InitPolicy:
    """Starting values ``Q_1`` and ``x_1`` of the recursions.

    Unset values are estimated from the first ``frac`` of the sample (at
    least ``min_obs`` observations): ``Q_1`` is the empirical alpha-quantile
    and ``x_1`` the distance from ``Q_1`` to the mean of returns below it.
    """

    q1: float | None = None
    x1: float | None = None
    frac: float = 0.1
    min_obs: int = 50

    def resolve(self, returns, alpha: float) -> tuple[float, float]:
        r = np.asarray(returns, dtype=float)
        m = min(len(r), max(self.min_obs, int(math.ceil(self.frac * len(r)))))
        head = r[:m]
        q1 = float(np.quantile(head, alpha)) if self.q1 is None else float(self.q1)
        if self.x1 is not None:
            return q1, float(self.x1)
        tail = head[head <= q1]
        x1 = abs(float(np.mean(tail)) - q1) if tail.size else 0.0
        return q1, x1


@dataclass(frozen=True)
class RiskPath:
    q: np.ndarray
    es: np.ndarray
    q_next: float
    es_next: float

    def __len__(self):
        return len(self.q)


@dataclass(frozen=True)
class LossReport:
    quantile_loss: float
    joint_loss: float
    n_obs: int


def _values(series) -> np.ndarray:
    return np.asarray(getattr(series, "values", series), dtype=float)


def in_region(kind: str, theta, driver_nonneg: bool = True) -> bool:
    """Membership of the flat-prior support / MLE constraint set."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        return False
    if not abs(theta[2]) < 1.0:
        return False
    if driver_nonneg and theta[1] > 0.0:
        return False
    if kind == "ar":
        return bool(np.all(theta[3:6] >= 0.0))
    return bool(-EXP_GAMMA_BOUND <= theta[3] <= EXP_GAMMA_BOUND)


# --- numerical kernels -------------------------------------------------------


@njit(cache=True)
def _path_kernel(code, theta, r, x, q1, x1, q_out, es_out):
    n = r.shape[0]
    b0, b1, b2 = theta[0], theta[1], theta[2]
    if code == 1:
        ratio = 1.0 + math.exp(theta[3])
    q = q1
    off = x1
    for t in range(n):
        if t > 0:
            q_prev = q
            q = b0 + b1 * x[t - 1] + b2 * q_prev
            if code == 0 and r[t - 1] <= q_prev:
                off = theta[3] + theta[4] * (q_prev - r[t - 1]) + theta[5] * off
        q_out[t] = q
        es_out[t] = q - off if code == 0 else ratio * q
    q_next = b0 + b1 * x[n - 1] + b2 * q
    if code == 0:
        if r[n - 1] <= q:
            off = theta[3] + theta[4] * (q - r[n - 1]) + theta[5] * off
        es_next = q_next - off
    else:
        es_next = ratio * q_next
    return q_next, es_next


@njit(cache=True)
def _loglik_kernel(code, theta, r, x, q1, x1, alpha):
    n = r.shape[0]
    b0, b1, b2 = theta[0], theta[1], theta[2]
    ratio = 1.0
    if code == 1:
        ratio = 1.0 + math.exp(theta[3])
    q = q1
    off = x1
    total = 0.0
    for t in range(n):
        if t > 0:
            q_prev = q
            q = b0 + b1 * x[t - 1] + b2 * q_prev
            if code == 0 and r[t - 1] <= q_prev:
                off = theta[3] + theta[4] * (q_prev - r[t - 1]) + theta[5] * off
        es = q - off if code == 0 else ratio * q
        if not es < 0.0 or not math.isfinite(es):
            return -np.inf
        u = r[t] - q
        ind = 1.0 if r[t] <= q else 0.0
        total += math.log((alpha - 1.0) / es) + u * (alpha - ind) / (alpha * es)
    if not math.isfinite(total):
        return -np.inf
    return total


@njit(cache=True)
def _loglik_many(code, thetas, r, x, q1, x1, alpha):
    out = np.empty(thetas.shape[0])
    for i in range(thetas.shape[0]):
        out[i] = _loglik_kernel(code, thetas[i], r, x, q1, x1, alpha)
    return out


@njit(cache=True)
def _forecast_many(code, thetas, r, x, q1, x1):
    n = r.shape[0]
    qn = np.empty(thetas.shape[0])
    en = np.empty(thetas.shape[0])
    q_buf = np.empty(n)
    es_buf = np.empty(n)
    for i in range(thetas.shape[0]):
        qn[i], en[i] = _path_kernel(code, thetas[i], r, x, q1, x1, q_buf, es_buf)
    return qn, en


@njit(cache=True)
def _qloss_kernel(beta, r, x, q1, alpha):
    """Quantile (pinball) loss of the Q recursion alone."""
    q = q1
    total = 0.0
    for t in range(r.shape[0]):
        if t > 0:
            q = beta[0] + beta[1] * x[t - 1] + beta[2] * q
        u = r[t] - q
        total += u * (alpha - (1.0 if u < 0.0 else 0.0))
    if not math.isfinite(total):
        return np.inf
    return total


@njit(cache=True)
def _qloss_many(betas, r, x, q1, alpha):
    out = np.empty(betas.shape[0])
    for i in range(betas.shape[0]):
        out[i] = _qloss_kernel(betas[i], r, x, q1, alpha)
    return out


# --- public API ---------------------------------------------------------------


def risk_path(spec: ModelSpec, params, returns, driver, init: InitPolicy = InitPolicy()) -> RiskPath:
    """Evaluate the VaR/ES recursions in-sample plus the one-step forecast."""
    r = _values(returns)
    x = _values(driver)
    if r.shape != x.shape:
        raise ValidationError(f"returns ({r.size}) and driver ({x.size}) are not aligned")
    if r.size < 1:
        raise ValidationError("empty sample")
    theta = params.to_array() if isinstance(params, ParamVector) else np.asarray(params, dtype=float)
    if theta.size != spec.n_params:
        raise ValidationError(f"{spec.kind} model expects {spec.n_params} parameters, got {theta.size}")
    q1, x1 = init.resolve(r, spec.alpha)
    q = np.empty(r.size)
    es = np.empty(r.size)
    q_next, es_next = _path_kernel(spec.code, theta, r, x, q1, x1, q, es)
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(es)) and math.isfinite(q_next) and math.isfinite(es_next)):
        raise NumericalError("recursion produced non-finite values (explosive parameters?)")
    return RiskPath(q, es, float(q_next), float(es_next))


def al_log_likelihood(path: RiskPath, returns, alpha: float) -> float:
    """Asymmetric Laplace log-likelihood; ``-inf`` if any ES is non-negative."""
    r = _values(returns)
    q, es = path.q, path.es
    if np.any(~(es < 0)):
        return -math.inf
    ind = (r <= q).astype(float)
    return float(np.sum(np.log((alpha - 1.0) / es) + (r - q) * (alpha - ind) / (alpha * es)))


def joint_score(r, q, es, alpha: float):
    """Per-observation AL log score (a Fissler-Ziegel joint VaR/ES loss).

    Works elementwise on scalars or arrays; non-negative ES scores ``+inf``.
    """
    r, q, es = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r, q, es)))
    out = np.full(r.shape, np.inf)
    ok = es < 0
    hit = np.where(r[ok] <= q[ok], 1.0, 0.0)
    out[ok] = -np.log((alpha - 1.0) / es[ok]) - (r[ok] - q[ok]) * (alpha - hit) / (alpha * es[ok])
    return out if out.ndim else float(out)


def quantile_loss_terms(r, q, alpha: float) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    q = np.asarray(q, dtype=float)
    return (alpha - (r < q)) * (r - q)


def quantile_loss(path: RiskPath, returns, alpha: float) -> float:
    return float(np.sum(quantile_loss_terms(_values(returns), path.q, alpha)))


def loss_report(path: RiskPath, returns, alpha: float) -> LossReport:
    r = _values(returns)
    return LossReport(quantile_loss(path, r, alpha), float(np.sum(joint_score(r, path.q, path.es, alpha))), r.size)


def log_likelihood(spec: ModelSpec, theta, returns, driver, q1: float, x1: float) -> float:
    """Fast fused likelihood used by the estimators (no region check)."""
    return float(_loglik_kernel(spec.code, np.asarray(theta, dtype=float), _values(returns), _values(driver), q1, x1, spec.alpha))
