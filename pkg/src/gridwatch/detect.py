"""Streaming Bayesian change-point detection of line outages.

The detector tracks the posterior probability that the outage time lies at or
before the current step, under a geometric prior and Gaussian pre/post models
for the voltage increments. Everything runs in log space; the complementary
posterior stays exact down to thresholds like 1 - 1e-20.

One detector instance per stream, strictly sequential updates. Instances are
independent and may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import InputError, NumericError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """Multivariate normal with cached Cholesky factor."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise InputError(f"mean/cov shape mismatch: {mean.shape} vs {cov.shape}")

    @property
    def dim(self) -> int:
        return self.mean.size

    @cached_property
    def _chol(self) -> np.ndarray:
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError("covariance matrix is not positive definite") from exc

    @cached_property
    def _log_norm(self) -> float:
        return float(np.sum(np.log(np.diag(self._chol))) + 0.5 * self.dim * LOG_2PI)

    def logpdf(self, x) -> float:
        z = solve_triangular(self._chol, np.asarray(x, dtype=float) - self.mean, lower=True)
        return float(-0.5 * z @ z - self._log_norm)

    def logpdf_batch(self, xs) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        z = solve_triangular(self._chol, (xs - self.mean).T, lower=True)
        return -0.5 * np.sum(z * z, axis=0) - self._log_norm

    @classmethod
    def regularized(cls, mean, cov, rel_jitter: float = 1e-8) -> tuple["GaussianModel", bool]:
        """Build a model, adding escalating diagonal jitter until PD.

        Returns the model and whether jitter was needed.
        """
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        cov = 0.5 * (cov + cov.T)
        d = mean.size
        trace = float(np.trace(cov))
        base = rel_jitter * (trace / d if trace > 0 else 1.0)
        jitter = 0.0
        for attempt in range(40):
            try:
                model = cls(mean, cov + jitter * np.eye(d))
                model._chol  # noqa: B018  - force factorization
                return model, attempt > 0
            except NumericError:
                jitter = base if jitter == 0.0 else jitter * 10.0
        raise NumericError("covariance could not be regularized to positive definite")


def log_density(model: GaussianModel, x) -> float:
    """Exact multivariate normal log-density (triangular factorization)."""
    return model.logpdf(x)


@dataclass(frozen=True)
class GeometricPrior:
    """Outage-time prior pi(k) = rho * (1 - rho)^(k-1), k >= 1."""

    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise InputError(f"rho must lie in (0, 1), got {self.rho}")

    @property
    def log_1m_rho(self) -> float:
        return math.log1p(-self.rho)

    def log_pmf(self, k) -> np.ndarray | float:
        return math.log(self.rho) + (np.asarray(k) - 1) * self.log_1m_rho

    def cdf(self, n) -> np.ndarray | float:
        # 1 - (1-rho)^n, stable for tiny rho
        return -np.expm1(np.asarray(n) * self.log_1m_rho)

    def log_sf(self, n) -> float:
        return n * self.log_1m_rho


def kl_divergence(f: GaussianModel, g: GaussianModel) -> float:
    """Closed-form KL(f || g) between Gaussians."""
    if f.dim != g.dim:
        raise InputError(f"dimension mismatch: {f.dim} vs {g.dim}")
    lf, lg = f._chol, g._chol
    a = solve_triangular(lg, lf, lower=True)
    trace_term = float(np.sum(a * a))
    dm = solve_triangular(lg, g.mean - f.mean, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lg))) - np.sum(np.log(np.diag(lf))))
    return 0.5 * (trace_term + float(dm @ dm) - f.dim + logdet)


def delay_bound(alpha: float, rho: float, kl: float) -> float:
    """Asymptotic mean detection delay |log(alpha)| / (-log(1-rho) + KL)."""
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0.0 <= rho < 1.0:
        raise InputError(f"rho must lie in [0, 1), got {rho}")
    if kl < 0.0:
        raise InputError(f"KL divergence must be nonnegative, got {kl}")
    denom = -math.log1p(-rho) + kl
    if denom == 0.0:
        return math.inf
    return abs(math.log(alpha)) / denom


# ---------------------------------------------------------------------------
# Posterior over the outage time


def posterior_direct(prior, g, f, increments, return_log_vector=False):
    """Posterior P(outage time <= N | increments) by the full hypothesis sum.

    Hypothesis k (1..N) puts samples before k under g and from k on under f;
    hypothesis N+1 is "no outage yet" with the prior tail mass. The sum runs
    entirely in log space.
    """
    xs = np.atleast_2d(np.asarray(increments, dtype=float))
    n = xs.shape[0]
    if n < 1:
        raise InputError("need at least one increment")
    lg = g.logpdf_batch(xs)
    lf = f.logpdf_batch(xs)
    cum_lg = np.concatenate([[0.0], np.cumsum(lg)])
    cum_lf = np.concatenate([[0.0], np.cumsum(lf)])
    k = np.arange(1, n + 1)
    log_terms = np.empty(n + 1)
    log_terms[:n] = prior.log_pmf(k) + cum_lg[k - 1] + (cum_lf[n] - cum_lf[k - 1])
    log_terms[n] = prior.log_sf(n) + cum_lg[n]
    log_total = logsumexp(log_terms)
    log_comp = log_terms[n] - log_total
    posterior = float(-np.expm1(log_comp))
    if return_log_vector:
        return posterior, log_terms - log_total
    return posterior


def posterior_trace_known(prior, g, f, increments):
    """Vectorized posterior trace for a fully known pre/post model pair.

    Returns (posterior, log_complementary) arrays over every prefix length.
    """
    xs = np.atleast_2d(np.asarray(increments, dtype=float))
    n = xs.shape[0]
    lg = g.logpdf_batch(xs)
    lf = f.logpdf_batch(xs)
    cum_llr = np.concatenate([[0.0], np.cumsum(lg - lf)])
    k = np.arange(1, n + 1)
    b = prior.log_pmf(k) + cum_llr[:-1]
    log_a = np.logaddexp.accumulate(b)
    c = k * prior.log_1m_rho + cum_llr[1:]
    log_comp = c - np.logaddexp(log_a, c)
    return -np.expm1(log_comp), log_comp


# ---------------------------------------------------------------------------
# Online estimation of the unknown post-outage model


class RunningMle:
    """Streaming prior-weighted estimators of the post-outage mean/covariance.

    Uses the reduction sum_k pi(k) sum_{n>=k} x_n = sum_n P(outage<=n) x_n, so
    the state is three weighted sums; estimates are exact for every prefix.
    """

    def __init__(self, prior: GeometricPrior, dim: int):
        self.prior = prior
        self.dim = dim
        self.n = 0
        self.weight_sum = 0.0
        self.weight_sq_sum = 0.0
        self.s1 = np.zeros(dim)
        self.s2 = np.zeros((dim, dim))

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        self.n += 1
        w = float(self.prior.cdf(self.n))
        self.weight_sum += w
        self.weight_sq_sum += w * w
        self.s1 += w * x
        self.s2 += w * np.outer(x, x)

    def mean(self) -> np.ndarray:
        return self.s1 / self.weight_sum

    def cov(self) -> np.ndarray:
        mu = self.mean()
        cov = self.s2 / self.weight_sum - np.outer(mu, mu)
        return 0.5 * (cov + cov.T)

    @property
    def ess(self) -> float:
        """Effective number of post-change samples behind the estimate."""
        if self.weight_sq_sum == 0.0:
            return 0.0
        return self.weight_sum**2 / self.weight_sq_sum


# ---------------------------------------------------------------------------
# Detector


@dataclass
class DetectionResult:
    """Outcome of running a detector over a stream."""

    tau: int | None
    lambda_true: int | None
    posterior_trace: np.ndarray
    log_complementary_trace: np.ndarray
    detected: bool
    false_alarm: bool
    delay: int | None


class Detector:
    """Sequential outage detector with the 1-alpha posterior stopping rule.

    With a known post-outage model `f` each step is O(dim^2) and independent
    of the stream length. With `f=None` the post-outage model is re-estimated
    before each posterior update, which requires replaying the stored prefix
    (O(N * dim^2) at step N).
    """

    def __init__(self, alpha: float, prior: GeometricPrior, g: GaussianModel,
                 f: GaussianModel | None = None, jitter_rel: float = 1e-8):
        if not 0.0 < alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {alpha}")
        if f is not None and f.dim != g.dim:
            raise InputError("f and g dimensions differ")
        self.alpha = float(alpha)
        self.log_alpha = math.log(alpha)
        self.prior = prior
        self.g = g
        self.f = f
        self.f_known = f is not None
        self.dim = g.dim
        self._reset_state()

    def _reset_state(self):
        self.n = 0
        self.tau: int | None = None
        self.posterior = 0.0
        self.log_complementary = 0.0
        self.posterior_trace: list[float] = []
        self.log_complementary_trace: list[float] = []
        # known-f recursion state
        self._log_a = -math.inf
        self._cum_llr = 0.0
        # unknown-f replay state
        self._buf = np.empty((64, self.dim))
        self._cum_lg = [0.0]
        self.mle = RunningMle(self.prior, self.dim) if not self.f_known else None
        self.f_hat: GaussianModel | None = None
        self.f_hat_jittered = False

    @property
    def running(self) -> bool:
        return self.tau is None

    @property
    def estimate_mature(self) -> bool:
        """Estimated covariance is trustworthy once ESS exceeds dim + 1."""
        return self.mle is not None and self.mle.ess >= self.dim + 1

    def reset(self, g: GaussianModel | None = None) -> None:
        """Explicit restart, optionally with a freshly trained pre-outage model."""
        if g is not None:
            if g.dim != self.dim:
                raise InputError("replacement g has wrong dimension")
            self.g = g
        self._reset_state()

    def step(self, x) -> float:
        """Consume one increment; returns the updated posterior."""
        if not self.running:
            raise InputError("detector is frozen after detection; call reset() to restart")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise InputError(f"expected increment of dimension {self.dim}, got {x.shape}")
        self.n += 1
        if self.f_known:
            log_comp = self._step_known(x)
        else:
            log_comp = self._step_unknown(x)
        self.log_complementary = log_comp
        self.posterior = float(-np.expm1(log_comp))
        self.posterior_trace.append(self.posterior)
        self.log_complementary_trace.append(log_comp)
        if log_comp <= self.log_alpha:
            self.tau = self.n
        return self.posterior

    def _step_known(self, x) -> float:
        lg = self.g.logpdf(x)
        lf = self.f.logpdf(x)
        b = float(self.prior.log_pmf(self.n)) + self._cum_llr
        self._log_a = np.logaddexp(self._log_a, b)
        self._cum_llr += lg - lf
        c = self.n * self.prior.log_1m_rho + self._cum_llr
        return float(c - np.logaddexp(self._log_a, c))

    def _step_unknown(self, x) -> float:
        if self.n > self._buf.shape[0]:
            grown = np.empty((2 * self._buf.shape[0], self.dim))
            grown[: self.n - 1] = self._buf[: self.n - 1]
            self._buf = grown
        self._buf[self.n - 1] = x
        self._cum_lg.append(self._cum_lg[-1] + self.g.logpdf(x))
        self.mle.update(x)
        # Plug-in model: raw estimates shrunk toward the pre-outage model with
        # prior strength 2*(dim+1), decaying as effective samples accumulate.
        # With few effective samples the raw weighted estimate near-interpolates
        # the data and its in-sample likelihood gain alone would cross any
        # threshold. Raw estimates stay available on `mle`.
        ess = self.mle.ess
        strength = 2.0 * (self.dim + 1.0)
        cov = (ess * self.mle.cov() + strength * self.g.cov) / (ess + strength)
        mean = (ess * self.mle.mean() + strength * self.g.mean) / (ess + strength)
        self.f_hat, self.f_hat_jittered = GaussianModel.regularized(mean, cov)
        xs = self._buf[: self.n]
        lf = self.f_hat.logpdf_batch(xs)
        cum_lf = np.concatenate([[0.0], np.cumsum(lf)])
        cum_lg = np.asarray(self._cum_lg)
        k = np.arange(1, self.n + 1)
        log_terms = np.empty(self.n + 1)
        log_terms[: self.n] = self.prior.log_pmf(k) + cum_lg[k - 1] + (cum_lf[self.n] - cum_lf[k - 1])
        log_terms[self.n] = self.prior.log_sf(self.n) + cum_lg[self.n]
        return float(log_terms[self.n] - logsumexp(log_terms))


def detect(detector: Detector, increments, lambda_true: int | None = None) -> DetectionResult:
    """Run the detector over a stream until it fires or the stream ends."""
    xs = np.atleast_2d(np.asarray(increments, dtype=float))
    for row in xs:
        detector.step(row)
        if not detector.running:
            break
    tau = detector.tau
    detected = tau is not None
    false_alarm = detected and lambda_true is not None and tau < lambda_true
    delay = None
    if detected and lambda_true is not None and not false_alarm:
        delay = tau - lambda_true
    return DetectionResult(
        tau=tau,
        lambda_true=lambda_true,
        posterior_trace=np.asarray(detector.posterior_trace),
        log_complementary_trace=np.asarray(detector.log_complementary_trace),
        detected=detected,
        false_alarm=false_alarm,
        delay=delay,
    )


def fit_gaussian(samples) -> GaussianModel:
    """Pre-outage model from a historical training window (sample mean/cov)."""
    xs = np.atleast_2d(np.asarray(samples, dtype=float))
    if xs.shape[0] < 2:
        raise InputError("need at least two samples to fit a Gaussian")
    mean = xs.mean(axis=0)
    cov = np.cov(xs, rowvar=False)
    cov = np.atleast_2d(cov)
    model, _ = GaussianModel.regularized(mean, cov)
    return model
