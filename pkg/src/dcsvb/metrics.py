"""Reconstruction quality measures."""

import math

import numpy as np

__all__ = ["nmse", "psnr"]


def nmse(estimates, truths):
    """Mean over signals of ``||x_k - xhat_k||^2 / ||x_k||^2``.

    A single signal may be passed as a 1-D array. Raises ``ValueError``
    when a true signal has zero norm, where the ratio is undefined.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    tru = np.atleast_2d(np.asarray(truths, dtype=float))
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    est = est.reshape(est.shape[0], -1)
    tru = tru.reshape(tru.shape[0], -1)
    den = np.sum(tru ** 2, axis=1)
    if np.any(den == 0):
        raise ValueError("NMSE undefined for a zero-norm true signal")
    return float(np.mean(np.sum((est - tru) ** 2, axis=1) / den))


def psnr(estimate, truth, peak=1.0):
    """``10 log10(peak^2 / MSE)`` in dB; ``inf`` for an exact match."""
    estimate, truth = np.asarray(estimate, float), np.asarray(truth, float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    mse = float(np.mean((estimate - truth) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / mse)
