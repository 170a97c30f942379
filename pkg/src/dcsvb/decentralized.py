"""
Fusion-center-free inference.

Each simulated node keeps its own measurements, its own innovation factors
and a private copy of the common-component factors. The only global
quantities are averages reached by ADMM consensus:

* the Gram matrix ``A = mean_k D_k^T D_k``, once before the iterations,
* the correlation ``gamma = mean_k D_k^T (y_k - D_k x_k)`` every sweep,
* the expected residual energy ``mean_k E||y_k - D_k theta_k||^2`` every
  sweep, for the noise update.

Averages are turned back into the sums of the centralized updates by a
factor K. With exact consensus the sweep reproduces the centralized one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .consensus import ConsensusStats, TopologyError, run_consensus
from .distributions import GammaParams
from .jsm import reconstruct
from .metrics import nmse
from .vb import (
    PosteriorState,
    VbConfig,
    expected_residual,
    gaussian_moments,
    init_component,
    init_noise,
    init_values,
    mixing_step,
    moment_step,
    relative_change,
    support_step,
    variance_step,
)

__all__ = [
    "DecentralizedConfig",
    "Node",
    "consensus_substitute",
    "run_decentralized",
]


@dataclass
class DecentralizedConfig:
    """Consensus settings.

    ``exact_gram`` replaces the Gram-matrix consensus by the exact sum.
    It is only accepted on a complete topology and is not a decentralized
    mode: it exists to shorten tests.
    """

    rho: float = 1.0
    tol: float = 1e-6
    max_rounds: int = 50
    exact_gram: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.tol > 0 or self.max_rounds < 1:
            raise ValueError("need tol > 0 and max_rounds >= 1")


@dataclass
class Node:
    """Everything node ``k`` holds locally."""

    index: int
    D: np.ndarray
    y: np.ndarray
    G: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)
    yy: float = field(init=False)
    A: np.ndarray = None          # consensus average of the Gram matrices
    post: PosteriorState = None   # common copy, own innovation, noise

    def __post_init__(self):
        self.G = self.D.T @ self.D
        self.b = self.D.T @ self.y
        self.yy = float(self.y @ self.y)

    @property
    def common(self):
        return self.post.common

    @property
    def innov(self):
        return self.post.innov[0]

    def gamma_target(self):
        """``D_k^T (y_k - D_k x_k)`` with the local innovation mean."""
        c = self.innov
        return self.b - self.G @ (c.support * c.mu)

    def residual_target(self):
        c, i = self.common, self.innov
        return expected_residual(self.G, self.b, self.yy,
                                 [(c.mu, c.Sigma, c.support),
                                  (i.mu, i.Sigma, i.support)])

    def theta(self):
        return reconstruct(self.common.mu, self.common.hard(),
                           self.innov.mu, self.innov.hard())


def consensus_substitute(A_avg, gamma_avg, lam_avg, s_c, alpha, gamma_diag,
                         K, d0):
    """Common factor and noise rate from consensus averages.

    ``Sigma_c = (Gamma_c + K alpha Z A Z)^-1``, ``mu_c = K alpha Sigma_c Z
    gamma`` and ``d' = d + (K / 2) lambda``: the averages are scaled back to
    the sums used by the centralized updates.
    """
    mu, Sigma = gaussian_moments(K * A_avg, K * gamma_avg, s_c, gamma_diag,
                                 alpha)
    return Sigma, mu, d0 + (K / 2) * lam_avg


def _consensus(targets, topology, dcfg, stats):
    vals, st = run_consensus(targets, topology, dcfg.rho, dcfg.tol,
                             dcfg.max_rounds)
    stats.add(st)
    return vals, st


def run_decentralized(ensemble, topology, tree, hp, cfg=None, dcfg=None,
                      truth=None):
    """Iterate the decentralized sweep until every node's estimate settles.

    Parameters
    ----------
    ensemble : SensingEnsemble
        Node ``k`` only ever reads ``ensemble.D[k]`` and ``ensemble.y[k]``.
    topology : Topology
    tree : TreeIndex
    hp : HyperParams
    cfg : VbConfig, optional
    dcfg : DecentralizedConfig, optional
    truth : array (K, N), optional

    Returns
    -------
    theta : array (K, N)
    nodes : list of Node
    trace : list of dict
        Per sweep: ``iteration``, ``nmse``, ``residual_<k>``,
        ``consensus_rounds``, ``messages`` and ``message_bytes``
        (cumulative).
    """
    cfg = cfg or VbConfig()
    dcfg = dcfg or DecentralizedConfig()
    K = ensemble.K
    if topology.K != K:
        raise TopologyError(f"topology has {topology.K} nodes, data has {K}")
    if not topology.is_connected():
        raise TopologyError("topology is disconnected")
    if dcfg.exact_gram and not np.all(topology.degrees == K - 1):
        raise TopologyError("exact_gram is only allowed on a complete graph")
    N = ensemble.N
    scale = tree.scale
    n_scales = int(scale.max()) + 1
    nodes = [Node(k, D, y) for k, (D, y) in
             enumerate(zip(ensemble.D, ensemble.y))]
    stats = ConsensusStats()

    # one-time consensus: Gram matrix, measurement counts and energy
    if dcfg.exact_gram:
        total = sum(n.G for n in nodes)
        A_vals = [total / K for _ in nodes]
    else:
        A_vals, _ = _consensus([n.G for n in nodes], topology, dcfg, stats)
    meta, _ = _consensus([np.array([float(n.D.shape[0]), n.yy])
                          for n in nodes], topology, dcfg, stats)
    for node, A, (m_avg, yy_avg) in zip(nodes, A_vals, meta):
        node.A = A
        M_total = round(K * m_avg)
        alpha0, lam0, q0 = init_values(yy_avg / m_avg, M_total, K, N, cfg)
        node.M_total = M_total
        node.post = PosteriorState(
            init_component(N, n_scales, hp.beta_common, lam0, q0),
            [init_component(N, n_scales, hp.beta_innov, lam0, q0)],
            init_noise(hp, M_total, alpha0))

    trace = []
    theta_old = np.zeros((K, N))
    for it in range(cfg.max_iter):
        mode = cfg.mode_at(it)
        rounds_before = stats.rounds
        gammas, _ = _consensus([n.gamma_target() for n in nodes], topology,
                               dcfg, stats)
        for node, g in zip(nodes, gammas):
            alpha = node.post.alpha
            moment_step(node.common, K * node.A, K * g, alpha, scale, mode,
                        cfg.damping)
            support_step(node.common, K * node.A, K * g, alpha, tree, hp,
                         scale, mode)
            mixing_step(node.common, hp.beta_common, scale, tree, hp, mode)
            corr = node.b - node.G @ (node.common.support * node.common.mu)
            moment_step(node.innov, node.G, corr, alpha, scale, mode,
                        cfg.damping)
            support_step(node.innov, node.G, corr, alpha, tree, hp, scale,
                         mode)
            mixing_step(node.innov, hp.beta_innov, scale, tree, hp, mode)
            variance_step(node.common, hp.gamma_common, scale, n_scales,
                          hp.slab_prior, mode)
            variance_step(node.innov, hp.gamma_innov, scale, n_scales,
                          hp.slab_prior, mode)
        local_resid = [n.residual_target() for n in nodes]
        lams, _ = _consensus([np.float64(r) for r in local_resid], topology,
                             dcfg, stats)
        for node, lam in zip(nodes, lams):
            node.post.noise = GammaParams(
                hp.noise.shape + node.M_total / 2,
                hp.noise.rate + (K / 2) * float(lam))
        theta = np.stack([n.theta() for n in nodes])
        row = {"iteration": it + 1,
               "nmse": nmse(theta, truth) if truth is not None else math.nan}
        for k, r in enumerate(local_resid):
            row[f"residual_{k}"] = r
        row["consensus_rounds"] = stats.rounds - rounds_before
        row["messages"] = stats.messages
        row["message_bytes"] = stats.bytes
        trace.append(row)
        # the simulator checks the stopping rule for all nodes at once
        change = relative_change(theta, theta_old)
        theta_old = theta
        if it > 0 and change < cfg.rel_tol:
            break

    # final refresh of the Gaussian factors on the hardened supports
    gammas, _ = _consensus([n.gamma_target() for n in nodes], topology, dcfg,
                           stats)
    for node, g in zip(nodes, gammas):
        moment_step(node.common, K * node.A, K * g, node.post.alpha, scale,
                    "hard")
        corr = node.b - node.G @ (node.common.support * node.common.mu)
        moment_step(node.innov, node.G, corr, node.post.alpha, scale, "hard")
    return np.stack([n.theta() for n in nodes]), nodes, trace
