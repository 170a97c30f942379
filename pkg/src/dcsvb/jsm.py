"""
JSM-1 generative model: common + innovation components with spike-and-slab
supports, per-node Gaussian sensing in the wavelet coefficient domain, and
the prior hyperparameters shared with the inference engines.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .distributions import BetaParams, GammaParams
from .wavelets import build_tree_index

__all__ = [
    "CONTEXTS",
    "SensingEnsemble",
    "JsmState",
    "BetaTable",
    "HyperParams",
    "default_hyperparams",
    "gen_measurement_matrix",
    "measure",
    "noise_precision_for_snr",
    "tree_support",
    "synth_jsm1",
    "make_ensemble",
    "reconstruct",
    "save_ensemble",
    "load_ensemble",
    "save_state",
    "load_state",
]

# context index = 2 * parent_state + neighbor_state
CONTEXTS = ("00", "01", "10", "11")


@dataclass
class SensingEnsemble:
    """Per-node sensing matrices ``D[k]`` (M_k x N) and measurements ``y[k]``."""

    D: list
    y: list
    noise_precision: float = float("nan")

    def __post_init__(self):
        if len(self.D) != len(self.y) or not self.D:
            raise ValueError("need one measurement vector per sensing matrix")
        n = self.D[0].shape[1]
        for k, (D, y) in enumerate(zip(self.D, self.y)):
            if D.ndim != 2 or D.shape[1] != n:
                raise ValueError(f"node {k}: D must have {n} columns")
            if D.shape[0] > n:
                raise ValueError(f"node {k}: more measurements than unknowns")
            if y.shape != (D.shape[0],):
                raise ValueError(f"node {k}: y has shape {y.shape}, "
                                 f"expected ({D.shape[0]},)")

    @property
    def K(self):
        return len(self.D)

    @property
    def N(self):
        return self.D[0].shape[1]

    @property
    def M(self):
        return np.array([D.shape[0] for D in self.D])


@dataclass(frozen=True)
class JsmState:
    """Ground-truth or estimated JSM-1 components.

    ``w_k`` and ``z_k`` are stacked as (K, N) arrays.
    """

    w_c: np.ndarray
    z_c: np.ndarray
    w_k: np.ndarray
    z_k: np.ndarray

    def __post_init__(self):
        for name in ("w_c", "z_c", "w_k", "z_k"):
            arr = np.array(getattr(self, name))
            if name.startswith("z") and not np.all((arr == 0) | (arr == 1)):
                raise ValueError(f"{name} must be binary")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self):
        return self.w_k.shape[0]

    @property
    def theta(self):
        return reconstruct(self.w_c, self.z_c, self.w_k, self.z_k)


@dataclass
class BetaTable:
    """Beta hyperparameters indexed by ``[scale, context]``.

    Root scales and the unstructured prior only use context 0.
    """

    e: np.ndarray
    f: np.ndarray

    def copy(self):
        return BetaTable(self.e.copy(), self.f.copy())

    def mean(self):
        return self.e / (self.e + self.f)

    def __getitem__(self, key):
        return BetaParams(float(self.e[key]), float(self.f[key]))


@dataclass
class HyperParams:
    """Prior hyperparameters.

    ``gamma_common[s]`` and ``gamma_innov[s]`` are Gamma priors on the
    per-scale slab variance (``slab_prior='bkf'``) or precision
    (``slab_prior='gaussian'``).
    """

    gamma_common: list
    gamma_innov: list
    noise: GammaParams
    beta_common: BetaTable
    beta_innov: BetaTable
    threshold_fraction: float = 0.5
    structured_prior: bool = True
    slab_prior: str = "bkf"

    def __post_init__(self):
        if self.slab_prior not in ("bkf", "gaussian"):
            raise ValueError(f"unknown slab prior {self.slab_prior!r}")
        if not 0 < self.threshold_fraction < 1:
            raise ValueError("threshold_fraction must lie in (0, 1)")
        for tab in (self.beta_common, self.beta_innov):
            if tab.e.shape != (len(self.gamma_common), 4):
                raise ValueError("Beta table must be (n_scales, 4)")
            if np.any(tab.e <= 0) or np.any(tab.f <= 0):
                raise ValueError("Beta parameters must be positive")

    @property
    def n_scales(self):
        return len(self.gamma_common)

    def with_options(self, **kw):
        return replace(self, **kw)


def default_hyperparams(layout, structured=True, slab="bkf", gamma=(1.0, 0.1),
                        noise=(1e-6, 1e-6), beta=(1.0, 1.0),
                        root_fractions=(0.9, 0.1), threshold_fraction=0.5):
    """Default (non-informative-ish) hyperparameters for ``layout``.

    Root scales get Beta(0.9 M_s, 0.1 M_s) so coarse coefficients start
    out likely active; everything else is Beta(1, 1).
    """
    counts = layout.scale_counts()
    n_scales = len(counts)
    e = np.full((n_scales, 4), float(beta[0]))
    f = np.full((n_scales, 4), float(beta[1]))
    for s in range(min(2, n_scales)):
        e[s, :] = root_fractions[0] * counts[s]
        f[s, :] = root_fractions[1] * counts[s]
    g = [GammaParams(*gamma) for _ in range(n_scales)]
    return HyperParams(
        gamma_common=list(g), gamma_innov=list(g),
        noise=GammaParams(*noise),
        beta_common=BetaTable(e.copy(), f.copy()),
        beta_innov=BetaTable(e.copy(), f.copy()),
        threshold_fraction=threshold_fraction,
        structured_prior=structured, slab_prior=slab)


def gen_measurement_matrix(M, N, rng):
    """M x N matrix with i.i.d. N(0, 1/M) entries."""
    if M > N:
        raise ValueError(f"M = {M} exceeds N = {N}")
    if M < 1:
        raise ValueError("need at least one measurement")
    return rng.normal(0.0, 1.0 / np.sqrt(M), size=(M, N))


def noise_precision_for_snr(clean, snr_db):
    """Noise precision giving measurement SNR ``snr_db`` for ``clean``."""
    power = np.mean(np.asarray(clean) ** 2)
    if power == 0:
        return np.inf
    return 10.0 ** (snr_db / 10.0) / power


def measure(theta, D, noise_precision, rng=None):
    """``y = D theta + n`` with ``n ~ N(0, I / noise_precision)``.

    ``noise_precision = inf`` gives noiseless measurements.
    """
    theta = np.asarray(theta, dtype=float)
    if D.shape[1] != theta.shape[0]:
        raise ValueError(f"D has {D.shape[1]} columns, theta has "
                         f"{theta.shape[0]} entries")
    if not noise_precision > 0:
        raise ValueError("noise precision must be positive")
    y = D @ theta
    if np.isfinite(noise_precision):
        y = y + rng.normal(0.0, 1.0 / np.sqrt(noise_precision), y.shape)
    return y


def tree_support(tree, count, rng, structured=True, orphan_rate=0.05):
    """Binary support with exactly ``count`` active positions.

    The structured draw grows rooted subtrees: each new position is either a
    root-scale position or a child of an already active position, except for
    an ``orphan_rate`` fraction of picks made uniformly over all inactive
    positions. The unstructured draw is uniform.
    """
    n = tree.parent.size
    count = int(count)
    if not 0 <= count <= n:
        raise ValueError(f"cannot place {count} active positions in {n}")
    z = np.zeros(n, dtype=int)
    if not structured:
        z[rng.choice(n, size=count, replace=False)] = 1
        return z
    roots = np.flatnonzero(tree.scale <= 1)
    frontier = set(roots.tolist())
    for _ in range(count):
        if rng.random() < orphan_rate or not frontier:
            pick = int(rng.choice(np.flatnonzero(z == 0)))
        else:
            pick = int(rng.choice(sorted(frontier)))
        z[pick] = 1
        frontier.discard(pick)
        frontier.update(int(c) for c in tree.children_of(pick) if z[c] == 0)
    return z


def _slab(hp_gamma, scale, rng, slab):
    """Slab values drawn coefficient-wise from the scale mixture."""
    shape = np.array([g.shape for g in hp_gamma])[scale]
    rate = np.array([g.rate for g in hp_gamma])[scale]
    mix = rng.gamma(shape, 1.0 / rate)
    var = mix if slab == "bkf" else 1.0 / mix
    return rng.normal(0.0, np.sqrt(var))


def synth_jsm1(layout, K, common_sparsity, innov_sparsity, hp, rng):
    """Draw a JSM-1 ground truth on ``layout``.

    Support sizes are exactly ``round(fraction * N)``; supports are tree
    structured when ``hp.structured_prior`` is set. Slab values follow the
    Gaussian scale mixture of ``hp`` coefficient by coefficient, so under the
    BKF slab each value is BKF distributed.
    """
    for frac in (common_sparsity, innov_sparsity):
        if not 0 <= frac < 1:
            raise ValueError("sparsity fractions must lie in [0, 1)")
    if K < 1:
        raise ValueError("need at least one node")
    tree = build_tree_index(layout)
    n = layout.size
    scale = tree.scale
    structured = hp.structured_prior
    z_c = tree_support(tree, round(common_sparsity * n), rng, structured)
    w_c = _slab(hp.gamma_common, scale, rng, hp.slab_prior)
    z_k = np.stack([tree_support(tree, round(innov_sparsity * n), rng,
                                 structured) for _ in range(K)])
    w_k = np.stack([_slab(hp.gamma_innov, scale, rng, hp.slab_prior)
                    for _ in range(K)])
    return JsmState(w_c, z_c, w_k, z_k)


def make_ensemble(theta, rate, rng, snr_db=None, noise_precision=None):
    """Sense each row of ``theta`` with a fresh Gaussian matrix.

    ``rate`` is M/N. Noise is set from ``snr_db`` (per node) or an explicit
    ``noise_precision``; with neither, measurements are noiseless.
    """
    theta = np.atleast_2d(theta)
    n = theta.shape[1]
    m = max(1, int(round(rate * n)))
    Ds, ys, precs = [], [], []
    for th in theta:
        D = gen_measurement_matrix(m, n, rng)
        clean = D @ th
        if noise_precision is not None:
            prec = noise_precision
        elif snr_db is not None:
            prec = noise_precision_for_snr(clean, snr_db)
        else:
            prec = np.inf
        ys.append(measure(th, D, prec, rng))
        Ds.append(D)
        precs.append(prec)
    return SensingEnsemble(Ds, ys, float(np.mean(precs)))


def reconstruct(mu_c, z_c, mu_k, z_k):
    """``theta_k = mu_c * z_c + mu_k * z_k`` (broadcast over nodes)."""
    return np.asarray(mu_c) * np.asarray(z_c) + np.asarray(mu_k) * np.asarray(z_k)


# --------------------------------------------------------------------------
# Text serialization
#
# A file is a sequence of blocks. Each block starts with a header line
# ``# <name> <rows> <cols>`` followed by ``rows`` lines of comma separated
# values written with 17 significant digits, so a round trip is exact.
# A leading ``# format <kind> 1`` line names the file type and scalar
# metadata lines look like ``# meta <key> <value>``.
# --------------------------------------------------------------------------

def _write_block(fh, name, arr):
    arr = np.atleast_2d(np.asarray(arr, dtype=float))
    fh.write(f"# {name} {arr.shape[0]} {arr.shape[1]}\n")
    np.savetxt(fh, arr, fmt="%.17g", delimiter=",")


def _read_blocks(path, kind):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].split() != ["#", "format", kind, "1"]:
        raise ValueError(f"{path}: not a '{kind}' file")
    meta, blocks, i = {}, [], 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[:2] == ["#", "meta"]:
            meta[parts[2]] = float(parts[3])
            continue
        if parts[0] != "#" or len(parts) != 4:
            raise ValueError(f"{path}: malformed header {lines[i - 1]!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        body = "\n".join(lines[i:i + rows])
        i += rows
        arr = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        if arr.shape != (rows, cols):
            raise ValueError(f"{path}: block {name} has shape {arr.shape}")
        blocks.append((name, arr))
    return meta, blocks


def save_ensemble(path, ens):
    """Write a :class:`SensingEnsemble` as header + CSV blocks."""
    with open(path, "w") as fh:
        fh.write("# format ensemble 1\n")
        fh.write(f"# meta K {ens.K}\n")
        fh.write(f"# meta noise_precision {ens.noise_precision!r}\n")
        for k, (D, y) in enumerate(zip(ens.D, ens.y)):
            _write_block(fh, f"D{k}", D)
            _write_block(fh, f"y{k}", y)


def load_ensemble(path):
    meta, blocks = _read_blocks(path, "ensemble")
    named = dict(blocks)
    K = int(meta["K"])
    return SensingEnsemble([named[f"D{k}"] for k in range(K)],
                           [named[f"y{k}"].ravel() for k in range(K)],
                           meta["noise_precision"])


def save_state(path, state):
    """Write a :class:`JsmState`; theta is included for convenience."""
    with open(path, "w") as fh:
        fh.write("# format jsm_state 1\n")
        fh.write(f"# meta K {state.K}\n")
        for name in ("w_c", "z_c", "w_k", "z_k"):
            _write_block(fh, name, getattr(state, name))
        _write_block(fh, "theta", state.theta)


def load_state(path):
    _, blocks = _read_blocks(path, "jsm_state")
    named = dict(blocks)
    state = JsmState(named["w_c"].ravel(), named["z_c"].ravel().astype(int),
                     named["w_k"], named["z_k"].astype(int))
    if not np.array_equal(state.theta, named["theta"]):
        raise ValueError(f"{path}: stored theta disagrees with components")
    return state
