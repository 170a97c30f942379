"""
Variational Bayes for the JSM-1 model with a fusion center.

The posterior factorizes into Gaussian ``q(w)`` per component (common and
one innovation per node), Bernoulli support marginals, one GIG (or Gamma
under the Gaussian slab) per scale and component for the slab variance, a
Gamma for the noise precision and Beta tables for the mixing weights.

Three support modes are available:

``hard``
    Supports enter the Gaussian updates as binary vectors. Each coefficient
    is visited in coarse-to-fine order and switched on when the marginal
    likelihood of activating it, with its value integrated out, beats the
    prior odds. This is the fixed-point scheme of the iterative algorithm.
``soft``
    Exact mean-field coordinate ascent on ``q(w) q(z)``. The evidence lower
    bound never decreases per sweep when the unstructured prior is used.
``anneal``
    Soft sweeps first, then hard sweeps.

The Gaussian updates only need the aggregated Gram matrix ``A = sum_k
D_k^T D_k`` and correlation vectors, which is what lets the decentralized
engine reuse them after consensus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.linalg import lapack

from .distributions import GammaParams, GigParams, gig_expectations, gig_log_normalizer
from .jsm import BetaTable, reconstruct
from .metrics import nmse

__all__ = [
    "NotPositiveDefiniteError",
    "VbConfig",
    "Component",
    "PosteriorState",
    "Problem",
    "contexts",
    "prior_logits",
    "gaussian_moments",
    "support_hard",
    "support_soft",
    "scale_variances",
    "mixing_update",
    "expected_residual",
    "update_common",
    "update_innovation",
    "update_support",
    "update_variances",
    "update_noise",
    "update_mixing",
    "elbo",
    "init_posterior",
    "init_component",
    "init_values",
    "init_noise",
    "run_centralized",
    "effective_support",
    "moment_step",
    "support_step",
    "variance_step",
    "mixing_step",
    "node_residual",
]

_LOG2PI = math.log(2 * math.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Posterior precision lost positive definiteness."""

    def __init__(self, min_eig):
        super().__init__(f"posterior precision is not positive definite "
                         f"(minimum eigenvalue {min_eig:.3e})")
        self.min_eig = min_eig


@dataclass
class VbConfig:
    max_iter: int = 100
    rel_tol: float = 1e-4
    support_mode: str = "hard"
    anneal_sweeps: int = 10
    damping: float = 1.0
    init_noise_fraction: float = 0.1
    init_active_fraction: float = 0.1

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.support_mode not in ("hard", "soft", "anneal"):
            raise ValueError(f"unknown support mode {self.support_mode!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    def mode_at(self, sweep):
        """Support mode used in the 0-based ``sweep``."""
        if self.support_mode == "anneal":
            return "soft" if sweep < self.anneal_sweeps else "hard"
        return self.support_mode


@dataclass
class Component:
    """Posterior factors of one component (common or one innovation)."""

    mu: np.ndarray
    Sigma: np.ndarray
    q: np.ndarray
    lam_inv: np.ndarray          # per scale <1/lambda>
    lam_mean: np.ndarray         # per scale <lambda>
    gig: list                    # per scale GigParams or GammaParams
    beta: BetaTable              # posterior Beta table
    support: np.ndarray = field(default=None)  # effective support in Z

    def hard(self):
        return (self.q > 0.5).astype(float)

    def copy(self):
        return Component(self.mu.copy(), self.Sigma.copy(), self.q.copy(),
                         self.lam_inv.copy(), self.lam_mean.copy(),
                         list(self.gig), self.beta.copy(),
                         None if self.support is None else self.support.copy())


@dataclass
class PosteriorState:
    common: Component
    innov: list
    noise: GammaParams

    @property
    def alpha(self):
        return self.noise.mean

    @property
    def K(self):
        return len(self.innov)

    def theta(self):
        """Estimates ``mu_c * z_c + mu_k * z_k`` with hardened supports."""
        zc = self.common.hard()
        return np.stack([reconstruct(self.common.mu, zc, c.mu, c.hard())
                         for c in self.innov])


class Problem:
    """Per-node sufficient statistics and the coefficient tree."""

    def __init__(self, ensemble, tree):
        self.tree = tree
        self.scale = tree.scale
        self.n_scales = int(tree.scale.max()) + 1
        self.scale_size = np.bincount(self.scale, minlength=self.n_scales)
        self.D = ensemble.D
        self.y = ensemble.y
        self.G = [D.T @ D for D in ensemble.D]
        self.b = [D.T @ y for D, y in zip(ensemble.D, ensemble.y)]
        self.yy = [float(y @ y) for y in ensemble.y]
        self.M = np.array([D.shape[0] for D in ensemble.D])
        self.A = sum(self.G)
        self.N = ensemble.N
        self.K = ensemble.K
        if tree.parent.size != self.N:
            raise ValueError("tree size does not match the sensing matrices")


# --------------------------------------------------------------------------
# Support prior
# --------------------------------------------------------------------------

def contexts(z_hard, tree, hp):
    """Context index ``2 * parent + neighbor`` (0 at roots / unstructured)."""
    ctx = np.zeros(tree.parent.size, dtype=int)
    if not hp.structured_prior:
        return ctx
    z = np.asarray(z_hard) > 0.5
    par = np.zeros(z.size, dtype=int)
    has = tree.parent >= 0
    par[has] = z[tree.parent[has]]
    deg = np.maximum(tree.n_neighbors, 1)
    nbr = ((tree.neighbors @ z.astype(float)) / deg
           > hp.threshold_fraction).astype(int)
    ctx[has] = 2 * par[has] + nbr[has]
    return ctx


def prior_logits(beta, scale, ctx, expected_log=True):
    """Prior log odds of activation per position.

    ``expected_log`` uses ``E[log pi] - E[log(1 - pi)]`` (the mean-field
    term); otherwise the log odds of the posterior mean of ``pi``.
    """
    e = beta.e[scale, ctx]
    f = beta.f[scale, ctx]
    if expected_log:
        return special.digamma(e) - special.digamma(f)
    return np.log(e) - np.log(f)


# --------------------------------------------------------------------------
# Array-level updates
# --------------------------------------------------------------------------

def _spd_inverse(P):
    """Inverse of a symmetric positive-definite matrix via LAPACK potrf/potri."""
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise NotPositiveDefiniteError(float("nan"))
    L, info = lapack.dpotrf(P, lower=1, clean=1)
    if info != 0:
        raise NotPositiveDefiniteError(float(np.linalg.eigvalsh(P)[0]))
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NotPositiveDefiniteError(float(np.linalg.eigvalsh(P)[0]))
    # potri fills only the lower triangle
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def gaussian_moments(A, c, s, gamma_diag, alpha):
    """Gaussian factor given effective support ``s``.

    Precision ``diag(gamma) + alpha (S A S + diag(s (1 - s) diag A))`` and
    mean ``alpha * Sigma (s * c)``, with ``c`` the correlation of the data
    with everything except this component. For binary ``s`` this is the
    familiar masked ridge solution.
    """
    s = np.asarray(s, dtype=float)
    P = alpha * (A * np.outer(s, s))
    P[np.diag_indices_from(P)] += gamma_diag + alpha * s * (1 - s) * np.diag(A)
    Sigma = _spd_inverse(P)
    mu = alpha * Sigma @ (s * c)
    return mu, Sigma


def support_hard(A, r, s, mu, lam_inv_vec, alpha, prior_logit_fn,
                 Sigma=None):
    """Sequential activation test, updating ``s``, ``mu`` and ``r`` in place.

    ``r`` must equal the data correlation minus ``A @ (s * mu)`` on entry.
    For each coefficient the log odds of activation is the prior log odds
    plus the log Bayes factor of including it with its value integrated out
    against the current residual. An active coefficient takes its
    conditional posterior mean, so the pass is also a Gauss-Seidel sweep on
    the values. When ``Sigma`` is given, the row of a coefficient that
    changes state is replaced by its conditional variance so the noise
    update does not see a stale prior variance. Returns the marginal
    probabilities.
    """
    n = s.size
    q = np.empty(n)
    diag = np.diag(A)
    for i in range(n):
        lam = 1.0 / lam_inv_vec[i]
        g = r[i] + s[i] * mu[i] * diag[i]
        P = lam_inv_vec[i] + alpha * diag[i]
        m = alpha * g / P
        logit = prior_logit_fn(i) - 0.5 * math.log(lam * P) + 0.5 * P * m * m
        q[i] = special.expit(logit)
        new = 1.0 if logit > 0 else 0.0
        if new != s[i] and Sigma is not None:
            Sigma[i, :] = 0.0
            Sigma[:, i] = 0.0
            Sigma[i, i] = 1.0 / P if new else lam
        delta = new * m - s[i] * mu[i]
        if new:
            mu[i] = m
        s[i] = new
        if delta != 0.0:
            r -= A[:, i] * delta
    return q


def support_soft(T, c, mu, q, alpha, prior_logit):
    """Mean-field Bernoulli updates with moments held fixed.

    ``T = A * (Sigma + mu mu^T)`` and ``c`` is the data correlation with the
    other components removed. ``q`` is updated in place, one coordinate at a
    time, each step maximizing the bound exactly.
    """
    v = T @ q
    tdiag = np.diag(T)
    for i in range(q.size):
        gain = alpha * (mu[i] * c[i] - (v[i] - q[i] * tdiag[i])
                        - 0.5 * tdiag[i])
        new = special.expit(prior_logit[i] + gain)
        if new != q[i]:
            v += T[:, i] * (new - q[i])
            q[i] = new
    return q


def scale_variances(mu, Sigma, weight, scale, n_scales, priors, slab):
    """Per-scale posterior of the slab variance.

    ``weight`` selects which coefficients inform each scale: all ones for the
    mean-field bound, the hardened support otherwise. Returns ``(params,
    lam_inv, lam_mean, evidence)`` where ``evidence`` is the sum over scales
    of the collapsed log normalizer used by the bound.
    """
    second = mu ** 2 + np.diag(Sigma)
    B = np.bincount(scale, weights=weight * second, minlength=n_scales)
    n = np.bincount(scale, weights=weight, minlength=n_scales)
    params, lam_inv, lam_mean = [], np.empty(n_scales), np.empty(n_scales)
    evidence = 0.0
    for s in range(n_scales):
        a0, b0 = priors[s].shape, priors[s].rate
        if slab == "gaussian":
            post = GammaParams(a0 + n[s] / 2, b0 + B[s] / 2)
            lam_inv[s] = post.mean
            lam_mean[s] = (post.rate / (post.shape - 1) if post.shape > 1
                           else 1.0 / post.mean)
            evidence += (a0 * math.log(b0) - special.gammaln(a0)
                         - 0.5 * n[s] * _LOG2PI + special.gammaln(post.shape)
                         - post.shape * math.log(post.rate))
        else:
            post = GigParams(2 * b0, float(B[s]), a0 - n[s] / 2)
            mean, inv = gig_expectations(post)
            lam_mean[s] = mean
            # an empty scale under a heavy prior has no finite <1/lambda>
            lam_inv[s] = inv if np.isfinite(inv) else 1.0 / mean
            if B[s] > 0 or post.p > 0:
                evidence += (a0 * math.log(b0) - special.gammaln(a0)
                             - 0.5 * n[s] * _LOG2PI
                             + gig_log_normalizer(post.a, post.b, post.p))
        params.append(post)
    return params, lam_inv, lam_mean, evidence


def mixing_update(prior, s, scale, ctx):
    """Beta posterior: successes ``sum s`` and failures ``sum (1 - s)``."""
    n_scales = prior.e.shape[0]
    flat = scale * 4 + ctx
    on = np.bincount(flat, weights=s, minlength=n_scales * 4)
    off = np.bincount(flat, weights=1 - s, minlength=n_scales * 4)
    return BetaTable(prior.e + on.reshape(n_scales, 4),
                     prior.f + off.reshape(n_scales, 4))


def expected_residual(G, b, yy, comps):
    """``E ||y - D theta||^2`` for one node given its active components.

    ``comps`` is a sequence of ``(mu, Sigma, s)``; the supports are
    independent Bernoulli factors.
    """
    m = sum(s * mu for mu, _, s in comps)
    fit = yy - 2 * b @ m + m @ G @ m
    var = 0.0
    gd = np.diag(G)
    for mu, Sigma, s in comps:
        var += s @ (G * Sigma) @ s
        var += np.sum(gd * s * (1 - s) * (np.diag(Sigma) + mu ** 2))
    return float(max(fit, 0.0) + var)


# --------------------------------------------------------------------------
# State-level updates
# --------------------------------------------------------------------------

def effective_support(comp, mode):
    """Support vector entering the Gaussian updates."""
    return comp.q.copy() if mode == "soft" else comp.hard()


def moment_step(comp, A, corr, alpha, scale, mode, damping=1.0):
    """Gaussian factor of one component from its Gram matrix and the data
    correlation with every other component removed."""
    comp.support = effective_support(comp, mode)
    mu, Sigma = gaussian_moments(A, corr, comp.support, comp.lam_inv[scale],
                                 alpha)
    comp.mu = damping * mu + (1 - damping) * comp.mu
    comp.Sigma = Sigma
    return comp.mu, comp.Sigma


def variance_step(comp, priors, scale, n_scales, slab, mode):
    weight = np.ones(comp.mu.size) if mode == "soft" else comp.hard()
    comp.gig, comp.lam_inv, comp.lam_mean, ev = scale_variances(
        comp.mu, comp.Sigma, weight, scale, n_scales, priors, slab)
    return ev


def mixing_step(comp, prior, scale, tree, hp, mode):
    s = comp.q if mode == "soft" else comp.hard()
    comp.beta = mixing_update(prior, s, scale, contexts(comp.hard(), tree, hp))
    return comp.beta


def _common_corr(prob, post):
    """``sum_k D_k^T (y_k - D_k x_k)`` with x_k the innovation mean."""
    out = np.zeros(prob.N)
    for k, c in enumerate(post.innov):
        out += prob.b[k] - prob.G[k] @ (c.support * c.mu)
    return out


def _innov_corr(prob, post, k):
    c = post.common
    return prob.b[k] - prob.G[k] @ (c.support * c.mu)


def update_common(post, prob, cfg=None, mode="hard"):
    """Gaussian factor of the common component."""
    return moment_step(post.common, prob.A, _common_corr(prob, post),
                       post.alpha, prob.scale, mode,
                       1.0 if cfg is None else cfg.damping)


def update_innovation(post, prob, k, cfg=None, mode="hard"):
    """Gaussian factor of the innovation at node ``k``."""
    return moment_step(post.innov[k], prob.G[k], _innov_corr(prob, post, k),
                       post.alpha, prob.scale, mode,
                       1.0 if cfg is None else cfg.damping)


def support_step(comp, A, corr, alpha, tree, hp, scale, mode):
    """Shared support step for one component given ``A`` and correlation."""
    if mode == "soft":
        s_ctx = comp.hard()
        logit = prior_logits(comp.beta, scale, contexts(s_ctx, tree, hp))
        T = A * (comp.Sigma + np.outer(comp.mu, comp.mu))
        comp.q = support_soft(T, corr, comp.mu, comp.q.copy(), alpha, logit)
        comp.support = comp.q.copy()
        return comp.q
    s = comp.hard() if comp.support is None else comp.support.copy()
    mu = comp.mu.copy()
    r = corr - A @ (s * mu)
    lam_inv_vec = comp.lam_inv[scale]
    beta_e, beta_f = comp.beta.e, comp.beta.f
    structured = hp.structured_prior
    parent = tree.parent
    nb = tree.neighbors
    thr = hp.threshold_fraction

    def logit_fn(i):
        ctx = 0
        if structured and parent[i] >= 0:
            nbrs = nb.indices[nb.indptr[i]:nb.indptr[i + 1]]
            frac = s[nbrs].sum() / max(nbrs.size, 1)
            ctx = 2 * int(s[parent[i]] > 0.5) + int(frac > thr)
        sc = scale[i]
        return math.log(beta_e[sc, ctx]) - math.log(beta_f[sc, ctx])

    Sigma = comp.Sigma.copy()
    q = support_hard(A, r, s, mu, lam_inv_vec, alpha, logit_fn, Sigma)
    comp.Sigma = Sigma
    # the decision is the sign of the log odds, q only reports it
    comp.q = np.where(s > 0.5, np.maximum(q, 0.5 + 1e-12),
                      np.minimum(q, 0.5))
    comp.support = s
    comp.mu = mu
    return comp.q


def update_support(post, prob, hp, target, mode="hard"):
    """Support marginals of the common component or node ``target``."""
    if target == "common":
        return support_step(post.common, prob.A,
                                  _common_corr(prob, post), post.alpha,
                                  prob.tree, hp, prob.scale, mode)
    return support_step(post.innov[target], prob.G[target],
                              _innov_corr(prob, post, target), post.alpha,
                              prob.tree, hp, prob.scale, mode)


def update_variances(post, prob, hp, target, mode="hard"):
    """Per-scale variance posterior; returns the collapsed evidence term."""
    if target == "common":
        comp, priors = post.common, hp.gamma_common
    else:
        comp, priors = post.innov[target], hp.gamma_innov
    return variance_step(comp, priors, prob.scale, prob.n_scales,
                         hp.slab_prior, mode)


def update_mixing(post, prob, hp, target, mode="hard"):
    """Beta posterior tables from the current support."""
    if target == "common":
        comp, prior = post.common, hp.beta_common
    else:
        comp, prior = post.innov[target], hp.beta_innov
    return mixing_step(comp, prior, prob.scale, prob.tree, hp, mode)


def node_residual(post, prob, k):
    c, i = post.common, post.innov[k]
    return expected_residual(prob.G[k], prob.b[k], prob.yy[k],
                             [(c.mu, c.Sigma, c.support),
                              (i.mu, i.Sigma, i.support)])


def update_noise(post, prob, hp):
    """Noise precision posterior ``(c', d')``."""
    resid = sum(node_residual(post, prob, k) for k in range(prob.K))
    post.noise = GammaParams(hp.noise.shape + prob.M.sum() / 2,
                             hp.noise.rate + resid / 2)
    return post.noise


# --------------------------------------------------------------------------
# Bound
# --------------------------------------------------------------------------

def _bernoulli_entropy(q):
    q = np.clip(q, 0.0, 1.0)
    return float(-np.sum(special.xlogy(q, q) + special.xlogy(1 - q, 1 - q)))


def _log_beta(e, f):
    return special.gammaln(e) + special.gammaln(f) - special.gammaln(e + f)


def _gauss_entropy(Sigma):
    sign, logdet = np.linalg.slogdet(Sigma)
    return 0.5 * (logdet + Sigma.shape[0] * (1 + _LOG2PI))


def elbo(post, prob, hp, mode="soft"):
    """Evidence lower bound with the scale, mixing and noise factors at
    their optimum given the Gaussian and support factors.

    The value is a true bound only with the unstructured prior: the
    structured contexts are read from the support itself.
    """
    total = 0.0
    pairs = [("common", post.common, hp.gamma_common, hp.beta_common)]
    pairs += [(k, c, hp.gamma_innov, hp.beta_innov)
              for k, c in enumerate(post.innov)]
    for _, comp, g_prior, b_prior in pairs:
        weight = np.ones(prob.N) if mode == "soft" else comp.hard()
        s = comp.q if mode == "soft" else comp.hard()
        *_, ev = scale_variances(comp.mu, comp.Sigma, weight, prob.scale,
                                 prob.n_scales, g_prior, hp.slab_prior)
        tab = mixing_update(b_prior, s, prob.scale,
                            contexts(comp.hard(), prob.tree, hp))
        total += ev
        total += float(np.sum(_log_beta(tab.e, tab.f)
                              - _log_beta(b_prior.e, b_prior.f)))
        total += _gauss_entropy(comp.Sigma) + _bernoulli_entropy(s)
    resid = sum(node_residual(post, prob, k) for k in range(prob.K))
    c0, d0 = hp.noise.shape, hp.noise.rate
    c1, d1 = c0 + prob.M.sum() / 2, d0 + resid / 2
    total += (special.gammaln(c1) - c1 * math.log(d1) - special.gammaln(c0)
              + c0 * math.log(d0) - 0.5 * prob.M.sum() * _LOG2PI)
    return float(total)


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------

def init_component(n, n_scales, beta_prior, lam0, q0):
    """Component factors before the first sweep."""
    lam = np.full(n_scales, lam0)
    return Component(mu=np.zeros(n), Sigma=np.diag(np.full(n, lam0)),
                     q=np.full(n, q0), lam_inv=1.0 / lam, lam_mean=lam,
                     gig=[None] * n_scales, beta=beta_prior.copy(),
                     support=np.full(n, q0))


def init_values(power, M_total, K, N, cfg):
    """Starting noise precision, slab variance and support probability.

    Noise precision assumes a fraction ``init_noise_fraction`` of the mean
    squared measurement ``power`` is noise; slab variances assume a
    fraction ``init_active_fraction`` of the coefficients carry the signal
    energy (``||theta||^2`` is about ``||y||^2`` for unit-norm columns).
    """
    power = max(power, 1e-300)
    alpha0 = 1.0 / (cfg.init_noise_fraction * power)
    lam0 = power * (M_total / K) / (cfg.init_active_fraction * N)
    q0 = 0.5 if cfg.mode_at(0) == "soft" else 0.0
    return alpha0, lam0, q0


def init_noise(hp, M_total, alpha0):
    shape = hp.noise.shape + M_total / 2
    return GammaParams(shape, shape / alpha0)


def init_posterior(prob, hp, cfg):
    """Starting point for the iterations."""
    M_total = prob.M.sum()
    alpha0, lam0, q0 = init_values(sum(prob.yy) / M_total, M_total, prob.K,
                                   prob.N, cfg)
    common = init_component(prob.N, prob.n_scales, hp.beta_common, lam0, q0)
    innov = [init_component(prob.N, prob.n_scales, hp.beta_innov, lam0, q0)
             for _ in range(prob.K)]
    return PosteriorState(common, innov, init_noise(hp, M_total, alpha0))


def _sweep(post, prob, hp, cfg, mode):
    update_common(post, prob, cfg, mode)
    update_support(post, prob, hp, "common", mode)
    update_mixing(post, prob, hp, "common", mode)
    for k in range(prob.K):
        update_innovation(post, prob, k, cfg, mode)
        update_support(post, prob, hp, k, mode)
        update_mixing(post, prob, hp, k, mode)
    update_variances(post, prob, hp, "common", mode)
    for k in range(prob.K):
        update_variances(post, prob, hp, k, mode)
    update_noise(post, prob, hp)


def _refresh_moments(post, prob):
    """Gaussian factors for the final hardened supports."""
    update_common(post, prob, None, "hard")
    for k in range(prob.K):
        update_innovation(post, prob, k, None, "hard")


def relative_change(new, old):
    num = np.linalg.norm(new - old, axis=1)
    den = np.linalg.norm(old, axis=1)
    ratio = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                     np.where(num > 0, np.inf, 0.0))
    return float(np.max(ratio))


def run_centralized(ensemble, tree, hp, cfg=None, truth=None,
                    compute_elbo=True):
    """Iterate the coordinate updates to a fixed point.

    Parameters
    ----------
    ensemble : SensingEnsemble
    tree : TreeIndex
        Coefficient tree of the wavelet layout.
    hp : HyperParams
    cfg : VbConfig, optional
    truth : array (K, N), optional
        Ground truth for the NMSE column of the trace.

    Returns
    -------
    theta : array (K, N)
        Estimates with hardened supports.
    post : PosteriorState
    trace : list of dict
        One row per sweep with ``iteration``, ``elbo``, ``nmse`` and
        ``residual_<k>``.
    """
    cfg = cfg or VbConfig()
    prob = Problem(ensemble, tree)
    post = init_posterior(prob, hp, cfg)
    trace = []
    theta_old = np.zeros((prob.K, prob.N))
    for it in range(cfg.max_iter):
        mode = cfg.mode_at(it)
        _sweep(post, prob, hp, cfg, mode)
        theta = post.theta()
        row = {"iteration": it + 1,
               "elbo": elbo(post, prob, hp, mode) if compute_elbo else math.nan,
               "nmse": (nmse(theta, truth) if truth is not None
                        else math.nan)}
        for k in range(prob.K):
            row[f"residual_{k}"] = node_residual(post, prob, k)
        trace.append(row)
        change = relative_change(theta, theta_old)
        theta_old = theta
        if it > 0 and change < cfg.rel_tol:
            break
    _refresh_moments(post, prob)
    return post.theta(), post, trace
