"""Independently written straight-line reference computations.

These deliberately avoid the library's composed functions: each oracle is a
single block of inline numpy so the production chain is checked against a
second, structurally different derivation of the same published formulas.
"""
import numpy as np


def straightline_preprocess(window: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
                            threshold: float = 1e-3, clip_factor: float = 500.0,
                            eps: float = 1e-5) -> np.ndarray:
    x = window.astype(np.float64)
    x = np.where(x < threshold, 0.0, x)
    x = (x - mu[:, None, None]) / sigma[:, None, None]
    x = np.minimum(x, clip_factor * sigma[:, None, None])
    lo = x.min()
    hi = x.max()
    x = (x - lo) / (hi - lo + eps)
    x = np.minimum(x, np.nextafter(np.float64(1), np.float64(0)))
    x = x.astype(np.float32)
    return np.minimum(x, np.nextafter(np.float32(1), np.float32(0)))


def two_pass_channel_stats(stacked: np.ndarray):
    """Naive two-pass mean / population std over [N,3,H,W] pixels, after
    zero suppression at 1e-3."""
    x = stacked.astype(np.float64)
    x = np.where(x < 1e-3, 0.0, x)
    flat = x.transpose(1, 0, 2, 3).reshape(3, -1)
    mu = flat.mean(axis=1)
    sigma = np.sqrt(((flat - mu[:, None]) ** 2).mean(axis=1))
    return mu, sigma


def pairwise_auc(scores, labels) -> float:
    """O(n^2) count of positive-over-negative score pairs, ties worth 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return (wins + 0.5 * ties) / (len(pos) * len(neg))
