"""
Orthonormal periodic discrete wavelet transforms with tree indexing.

The coefficient vector is serialized coarse-to-fine: the approximation
subband first, then for each detail level (coarsest first) the detail
subbands in orientation order. :class:`PyramidLayout` records where every
subband lives and is the single source of truth for that ordering.

Scales follow the convention used by the support prior: scale 0 is the
approximation subband, scale 1 the coarsest detail level and scale ``L``
the finest one. Scales 0 and 1 are roots (no parent conditioning).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

__all__ = [
    "WAVELETS",
    "DimensionError",
    "LayoutError",
    "Subband",
    "PyramidLayout",
    "WaveletPyramid",
    "TreeIndex",
    "make_layout",
    "forward_dwt",
    "inverse_dwt",
    "build_tree_index",
    "neighbor_state",
    "neighbor_states",
    "parent_states",
]


# Reconstruction lowpass filters (orthonormal Daubechies family).
WAVELETS = {
    "haar": np.array([0.7071067811865476, 0.7071067811865476]),
    "db2": np.array([
        0.48296291314453416, 0.8365163037378079,
        0.2241438680420134, -0.12940952255126037,
    ]),
    "db4": np.array([
        0.2303778133088965, 0.7148465705529157, 0.6308807679298589,
        -0.027983769416859854, -0.18703481171909309, 0.030841381835560764,
        0.0328830116668852, -0.010597401785069032,
    ]),
}

DETAIL_2D = ("LH", "HL", "HH")


class DimensionError(ValueError):
    """Signal shape incompatible with the requested decomposition."""

    def __init__(self, message, axis=None, size=None):
        super().__init__(message)
        self.axis = axis
        self.size = size


class LayoutError(ValueError):
    """Pyramid layout that does not describe a valid coefficient vector."""


@dataclass(frozen=True)
class Subband:
    scale: int
    orientation: str
    offset: int
    shape: tuple

    @property
    def count(self):
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class PyramidLayout:
    side: int
    levels: int
    ndim: int
    subbands: tuple
    wavelet: str = "db4"

    @property
    def size(self):
        return self.side ** self.ndim

    @property
    def shape(self):
        return (self.side,) * self.ndim

    @property
    def n_scales(self):
        return self.levels + 1

    def scale_of(self):
        """Scale index of every coefficient position."""
        out = np.empty(self.size, dtype=int)
        for sb in self.subbands:
            out[sb.offset:sb.offset + sb.count] = sb.scale
        return out

    def scale_counts(self):
        """Number of coefficients per scale (all orientations pooled)."""
        return np.bincount(self.scale_of(), minlength=self.n_scales)

    def validate(self):
        total = sum(sb.count for sb in self.subbands)
        if total != self.size:
            raise LayoutError(
                f"subband counts sum to {total}, expected {self.size}")
        approx = [sb for sb in self.subbands if sb.scale == 0]
        if len(approx) != 1:
            raise LayoutError("layout needs exactly one approximation subband")
        offset = 0
        for sb in self.subbands:
            if sb.offset != offset:
                raise LayoutError(f"subband {sb} is not contiguous")
            offset += sb.count
        if self.wavelet not in WAVELETS:
            raise LayoutError(f"unknown wavelet {self.wavelet!r}")

    def to_text(self):
        """Key-value lines suitable for a trace header."""
        lines = [f"side={self.side}", f"levels={self.levels}",
                 f"ndim={self.ndim}", f"wavelet={self.wavelet}"]
        for sb in self.subbands:
            shape = "x".join(str(s) for s in sb.shape)
            lines.append(
                f"subband={sb.scale},{sb.orientation},{sb.offset},{shape}")
        return "\n".join(lines)


@dataclass
class WaveletPyramid:
    layout: PyramidLayout
    coeffs: np.ndarray = field(repr=False)

    def subband(self, scale, orientation):
        for sb in self.layout.subbands:
            if sb.scale == scale and sb.orientation == orientation:
                block = self.coeffs[sb.offset:sb.offset + sb.count]
                return block.reshape(sb.shape)
        raise KeyError((scale, orientation))


def make_layout(side, levels, ndim=2, wavelet="db4"):
    """Layout of an ``ndim``-dimensional pyramid with edge length ``side``."""
    if levels < 1:
        raise DimensionError("levels must be >= 1")
    if ndim not in (1, 2):
        raise DimensionError("only 1-D and 2-D transforms are supported")
    if side % (2 ** levels):
        raise DimensionError(
            f"edge length {side} is not divisible by 2**{levels}",
            axis=0, size=side)
    if wavelet not in WAVELETS:
        raise ValueError(f"unknown wavelet {wavelet!r}")
    coarse = side >> levels
    subbands = []
    offset = 0
    shape = (coarse,) * ndim
    subbands.append(Subband(0, "LL" if ndim == 2 else "A", 0, shape))
    offset += int(np.prod(shape))
    orientations = DETAIL_2D if ndim == 2 else ("D",)
    for j in range(1, levels + 1):
        n = side >> (levels - j + 1)
        shape = (n,) * ndim
        for o in orientations:
            subbands.append(Subband(j, o, offset, shape))
            offset += int(np.prod(shape))
    layout = PyramidLayout(side, levels, ndim, tuple(subbands), wavelet)
    layout.validate()
    return layout


def _highpass(h):
    g = h[::-1].copy()
    g[1::2] *= -1
    return g


def _analysis_index(n, taps):
    return (2 * np.arange(n // 2)[:, None] + np.arange(taps)[None, :]) % n


def _analyze(x, h, axis):
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = _analysis_index(n, len(h))
    windows = x[..., idx]
    lo = windows @ h
    hi = windows @ _highpass(h)
    return np.moveaxis(lo, -1, axis), np.moveaxis(hi, -1, axis)


def _synthesize(lo, hi, h, axis):
    lo = np.moveaxis(lo, axis, -1)
    hi = np.moveaxis(hi, axis, -1)
    n = 2 * lo.shape[-1]
    idx = _analysis_index(n, len(h))
    g = _highpass(h)
    out = np.zeros(lo.shape[:-1] + (n,))
    # for a fixed tap the target positions are distinct, so += is safe
    for k in range(len(h)):
        out[..., idx[:, k]] += lo * h[k] + hi * g[k]
    return np.moveaxis(out, -1, axis)


def forward_dwt(signal, levels=3, wavelet="db4"):
    """Multilevel orthonormal DWT with periodic extension.

    Parameters
    ----------
    signal : array_like
        Square 2-D grid or 1-D vector whose edge length is divisible by
        ``2**levels``.
    levels : int
        Number of decomposition levels.
    wavelet : str
        One of ``WAVELETS``.

    Returns
    -------
    WaveletPyramid
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim not in (1, 2):
        raise DimensionError("signal must be 1-D or 2-D")
    if x.ndim == 2 and x.shape[0] != x.shape[1]:
        raise DimensionError(
            f"2-D signal must be square, got {x.shape}", axis=1,
            size=x.shape[1])
    for axis, n in enumerate(x.shape):
        if levels < 1 or n % (2 ** max(levels, 1)):
            raise DimensionError(
                f"axis {axis} has length {n}, not divisible by 2**{levels}",
                axis=axis, size=n)
    layout = make_layout(x.shape[0], levels, x.ndim, wavelet)
    h = WAVELETS[wavelet]
    details = []
    approx = x
    for _ in range(levels):
        if x.ndim == 1:
            approx, d = _analyze(approx, h, 0)
            details.append((d,))
        else:
            lo, hi = _analyze(approx, h, 1)
            # orientation letters: axis-0 filter then axis-1 filter
            approx, hl = _analyze(lo, h, 0)
            lh, hh = _analyze(hi, h, 0)
            details.append((lh, hl, hh))
    parts = [approx.ravel()]
    for level in reversed(details):
        parts.extend(d.ravel() for d in level)
    return WaveletPyramid(layout, np.concatenate(parts))


def inverse_dwt(pyramid):
    """Invert :func:`forward_dwt`."""
    layout = pyramid.layout
    layout.validate()
    coeffs = np.asarray(pyramid.coeffs, dtype=float)
    if coeffs.size != layout.size:
        raise LayoutError(
            f"coefficient vector has {coeffs.size} entries, layout "
            f"expects {layout.size}")
    h = WAVELETS[layout.wavelet]
    bands = {}
    for sb in layout.subbands:
        bands[(sb.scale, sb.orientation)] = \
            coeffs[sb.offset:sb.offset + sb.count].reshape(sb.shape)
    if layout.ndim == 1:
        x = bands[(0, "A")]
        for j in range(1, layout.levels + 1):
            x = _synthesize(x, bands[(j, "D")], h, 0)
        return x
    x = bands[(0, "LL")]
    for j in range(1, layout.levels + 1):
        lh, hl, hh = (bands[(j, o)] for o in DETAIL_2D)
        lo = _synthesize(x, hl, h, 0)
        hi = _synthesize(lh, hh, h, 0)
        x = _synthesize(lo, hi, h, 1)
    return x


@dataclass(frozen=True)
class TreeIndex:
    """Parent, children and same-subband neighbor relations.

    ``parent[i]`` is -1 for root positions. ``children[i]`` is padded with
    -1. ``neighbors`` is a symmetric CSR adjacency over positions.
    """

    layout: PyramidLayout
    parent: np.ndarray
    children: np.ndarray
    neighbors: sparse.csr_matrix
    scale: np.ndarray

    @property
    def n_neighbors(self):
        return np.diff(self.neighbors.indptr)

    def neighbors_of(self, i):
        nb = self.neighbors
        return nb.indices[nb.indptr[i]:nb.indptr[i + 1]]

    def children_of(self, i):
        c = self.children[i]
        return c[c >= 0]


def build_tree_index(layout):
    """Quad-tree (binary tree in 1-D) and 3x3 neighborhood maps."""
    layout.validate()
    n = layout.size
    fan = 4 if layout.ndim == 2 else 2
    parent = np.full(n, -1, dtype=int)
    children = np.full((n, fan), -1, dtype=int)
    scale = layout.scale_of()
    by_key = {(sb.scale, sb.orientation): sb for sb in layout.subbands}
    rows, cols = [], []
    for sb in layout.subbands:
        pos = sb.offset + np.arange(sb.count).reshape(sb.shape)
        if sb.scale >= 2:
            psb = by_key[(sb.scale - 1, sb.orientation)]
            ppos = psb.offset + np.arange(psb.count).reshape(psb.shape)
            if layout.ndim == 2:
                r, c = np.indices(sb.shape)
                par = ppos[r // 2, c // 2]
            else:
                par = ppos[np.arange(sb.shape[0]) // 2]
            parent[pos.ravel()] = par.ravel()
            order = np.argsort(par.ravel(), kind="stable")
            kids = pos.ravel()[order].reshape(-1, fan)
            children[np.sort(par.ravel())[::fan]] = kids
        # clipped 3x3 (or 3-tap in 1-D) window minus the center
        offsets = ([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                    if (dr, dc) != (0, 0)] if layout.ndim == 2
                   else [(-1,), (1,)])
        idx = np.indices(sb.shape).reshape(layout.ndim, -1).T
        for off in offsets:
            nbr = idx + np.array(off)
            ok = np.all((nbr >= 0) & (nbr < np.array(sb.shape)), axis=1)
            src = pos.ravel()[ok]
            dst = pos[tuple(nbr[ok].T)]
            rows.append(src)
            cols.append(dst)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    adj = sparse.csr_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n, n))
    adj.sort_indices()
    return TreeIndex(layout, parent, children, adj, scale)


def neighbor_state(z, position, tree, threshold_fraction=0.5):
    """1 if the fraction of nonzero neighbors exceeds the threshold."""
    z = np.asarray(z)
    nbrs = tree.neighbors_of(position)
    if nbrs.size == 0:
        return 0
    frac = np.count_nonzero(z[nbrs]) / nbrs.size
    return int(frac > threshold_fraction)


def neighbor_states(z, tree, threshold_fraction=0.5):
    """Vectorized :func:`neighbor_state` over all positions."""
    z = (np.asarray(z) != 0).astype(float)
    count = tree.neighbors @ z
    deg = np.maximum(tree.n_neighbors, 1)
    return (count / deg > threshold_fraction).astype(int)


def parent_states(z, tree):
    """Support state of each position's parent (0 for roots)."""
    z = (np.asarray(z) != 0).astype(int)
    out = np.zeros_like(z)
    has = tree.parent >= 0
    out[has] = z[tree.parent[has]]
    return out
