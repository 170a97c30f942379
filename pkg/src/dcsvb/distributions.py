"""
Special functions and distributions used by the sparse signal model.

Gamma distributions are parameterized by shape and *rate* throughout.
BKF(p, c) is the law of ``w`` when ``w | tau ~ N(0, tau)`` and ``tau`` is
Gamma with shape ``p`` and scale ``c``; its variance is ``p * c``.
GIG(a, b, p) has density proportional to
``x**(p - 1) * exp(-(a * x + b / x) / 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import singledispatch

import numpy as np
from scipy import special

__all__ = [
    "BkfParams",
    "GigParams",
    "GammaParams",
    "BetaParams",
    "Bernoulli",
    "Normal",
    "bessel_k",
    "log_bessel_k",
    "bessel_k_ratio",
    "bkf_pdf",
    "bkf_logpdf",
    "bkf_cdf",
    "bkf_excess_kurtosis",
    "bkf_from_gamma",
    "gig_expectations",
    "gig_log_normalizer",
    "sample",
]

# orders above this go through the upward recurrence in log space
_DIRECT_ORDER_LIMIT = 50.0


@dataclass(frozen=True)
class BkfParams:
    p: float
    c: float

    def __post_init__(self):
        if not (self.p > 0 and self.c > 0):
            raise ValueError(f"BKF needs p > 0 and c > 0, got {self}")


@dataclass(frozen=True)
class GigParams:
    a: float
    b: float
    p: float

    def __post_init__(self):
        if not self.a > 0 or not self.b >= 0:
            raise ValueError(f"GIG needs a > 0 and b >= 0, got {self}")
        if self.b == 0 and not self.p > 0:
            raise ValueError("GIG with b = 0 (Gamma limit) needs p > 0")


@dataclass(frozen=True)
class GammaParams:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError(f"Gamma needs positive shape and rate: {self}")

    @property
    def mean(self):
        return self.shape / self.rate


@dataclass(frozen=True)
class BetaParams:
    e: float
    f: float

    def __post_init__(self):
        if not (self.e > 0 and self.f > 0):
            raise ValueError(f"Beta needs positive parameters: {self}")

    @property
    def mean(self):
        return self.e / (self.e + self.f)


@dataclass(frozen=True)
class Bernoulli:
    pi: float

    def __post_init__(self):
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"Bernoulli probability outside [0, 1]: {self.pi}")


@dataclass(frozen=True)
class Normal:
    mean: float
    var: float

    def __post_init__(self):
        if not self.var >= 0:
            raise ValueError(f"Normal variance must be >= 0: {self.var}")


# --------------------------------------------------------------------------
# Bessel functions
# --------------------------------------------------------------------------

def _check_arg(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("modified Bessel K needs x > 0")
    return x


def bessel_k(nu, x):
    """Modified Bessel function of the second kind, ``K_nu(x)`` for x > 0."""
    x = _check_arg(x)
    return special.kv(nu, x)


def _log_k_scalar(nu, x):
    nu = abs(nu)
    if nu <= _DIRECT_ORDER_LIMIT:
        v = special.kve(nu, x)
        if np.isfinite(v) and v > 0:
            return math.log(v) - x
    # K grows with order, so the upward recurrence is stable
    n = int(math.floor(nu))
    mu = nu - n
    k0 = special.kve(mu, x)
    ratio = special.kve(mu + 1.0, x) / k0
    out = math.log(k0) - x
    for j in range(n):
        out += math.log(ratio)
        ratio = 1.0 / ratio + 2.0 * (mu + j + 1) / x
    return out


def log_bessel_k(nu, x):
    """``log K_nu(x)``, usable for orders where ``K_nu`` overflows."""
    x = _check_arg(x)
    fn = np.vectorize(_log_k_scalar, otypes=[float])
    out = fn(nu, x)
    return out.item() if out.ndim == 0 else out


def bessel_k_ratio(nu, x, shift=1):
    """``K_{nu + shift}(x) / K_nu(x)`` without forming either factor."""
    return np.exp(log_bessel_k(np.asarray(nu) + shift, x)
                  - log_bessel_k(nu, x))


# --------------------------------------------------------------------------
# Bessel K form
# --------------------------------------------------------------------------

def bkf_logpdf(x, params):
    """Log density of BKF; ``inf`` at x = 0 when p <= 1/2."""
    p, c = params.p, params.c
    x = np.abs(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    zero = x == 0
    nz = ~zero
    if np.any(nz):
        xs = x[nz]
        z = math.sqrt(2.0 / c) * xs
        out[nz] = (-0.5 * math.log(math.pi) - special.gammaln(p)
                   - (p / 2 + 0.25) * math.log(c / 2)
                   + (p - 0.5) * np.log(xs / 2)
                   + log_bessel_k(p - 0.5, z))
    if np.any(zero):
        if p > 0.5:
            # density at zero is E[(2 pi tau)^(-1/2)] over the Gamma mixing
            out[zero] = (-0.5 * math.log(2 * math.pi) + special.gammaln(p - 0.5)
                         - special.gammaln(p) - 0.5 * math.log(c))
        else:
            out[zero] = np.inf
    return out.item() if out.ndim == 0 else out


def bkf_pdf(x, params):
    """BKF density.

    Returns ``inf`` at ``x == 0`` when ``p <= 1/2``, where the density is
    singular; use :func:`bkf_logpdf` away from zero in that regime.
    """
    return np.exp(bkf_logpdf(x, params))


def bkf_cdf(x, params):
    """CDF of BKF by adaptive quadrature of the density from 0 to ``|x|``."""
    from scipy import integrate

    x = np.asarray(x, dtype=float)
    mag = np.abs(np.atleast_1d(x))
    knots, inverse = np.unique(mag, return_inverse=True)
    edges = np.concatenate([[0.0], knots])
    pieces = [
        integrate.quad(lambda u: bkf_pdf(u, params), lo, hi, limit=200,
                       epsabs=1e-13, epsrel=1e-11)[0] if hi > lo else 0.0
        for lo, hi in zip(edges[:-1], edges[1:])
    ]
    half = np.cumsum(pieces)[inverse]
    out = 0.5 + np.sign(np.atleast_1d(x)) * half
    return out.reshape(x.shape) if x.ndim else out.item()


def bkf_excess_kurtosis(params):
    """Excess kurtosis of BKF: ``3 * Var(tau) / E[tau]**2 = 3 / p``."""
    return 3.0 / params.p


def bkf_from_gamma(g):
    """BKF law of ``w`` when ``w | tau ~ N(0, tau)``, ``tau ~ g``.

    With shape ``a`` and rate ``b`` the marginal is BKF(a, 1/b).
    """
    return BkfParams(p=g.shape, c=1.0 / g.rate)


# --------------------------------------------------------------------------
# Generalized inverse Gaussian
# --------------------------------------------------------------------------

def gig_expectations(params):
    """``(E[x], E[1/x])`` under GIG(a, b, p).

    For b = 0 the law is Gamma(p, a/2); ``E[1/x]`` is then infinite when
    p <= 1.
    """
    a, b, p = params.a, params.b, params.p
    if b == 0:
        rate = a / 2.0
        mean = p / rate
        inv = rate / (p - 1.0) if p > 1 else math.inf
        return mean, inv
    omega = math.sqrt(a * b)
    lk = log_bessel_k(p, omega)
    mean = math.sqrt(b / a) * math.exp(log_bessel_k(p + 1, omega) - lk)
    inv = math.sqrt(a / b) * math.exp(log_bessel_k(p - 1, omega) - lk)
    return mean, inv


def gig_log_normalizer(a, b, p):
    """``log`` of ``int_0^inf x**(p-1) exp(-(a x + b / x) / 2) dx``."""
    if b == 0:
        return special.gammaln(p) - p * math.log(a / 2.0)
    return (math.log(2.0) + 0.5 * p * math.log(b / a)
            + log_bessel_k(p, math.sqrt(a * b)))


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

@singledispatch
def sample(dist, rng, size=None):
    """Draw from ``dist`` using the generator ``rng``."""
    raise TypeError(f"no sampler for {type(dist).__name__}")


@sample.register
def _(dist: GammaParams, rng, size=None):
    return rng.gamma(dist.shape, 1.0 / dist.rate, size)


@sample.register
def _(dist: BetaParams, rng, size=None):
    return rng.beta(dist.e, dist.f, size)


@sample.register
def _(dist: Bernoulli, rng, size=None):
    return (rng.random(size) < dist.pi).astype(int)


@sample.register
def _(dist: Normal, rng, size=None):
    return rng.normal(dist.mean, math.sqrt(dist.var), size)
