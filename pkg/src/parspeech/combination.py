"""Per-frame combination of posterior streams: append, product, sum, entropy weights."""
import numpy as np

from .errors import AlignmentError
from .frontend import FeatureMatrix

PROB_FLOOR = 1e-12
ENTROPY_EPS = 1e-6


def _check_aligned(streams):
    streams = list(streams)
    if not streams:
        raise ValueError("need at least one stream")
    n = streams[0].n_frames
    period = streams[0].frame_period
    for s in streams[1:]:
        if s.n_frames != n:
            raise AlignmentError(f"frame counts differ: {n} vs {s.n_frames}")
        if s.frame_period != period:
            raise AlignmentError("frame periods differ")
    return streams


def _check_posteriors(streams):
    streams = _check_aligned(streams)
    classes = streams[0].dim
    for s in streams[1:]:
        if s.dim != classes:
            raise AlignmentError(f"class counts differ: {classes} vs {s.dim}")
    return streams


def _weights(weights, n_streams, n_frames):
    """Normalize to an ``(n_frames, n_streams)`` array."""
    if weights is None or (isinstance(weights, str) and weights == "uniform"):
        return np.full((n_frames, n_streams), 1.0 / n_streams)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim == 1:
        if w.size != n_streams:
            raise AlignmentError(f"{w.size} weights for {n_streams} streams")
        w = np.broadcast_to(w, (n_frames, n_streams))
    if w.shape != (n_frames, n_streams):
        raise AlignmentError(f"weights of shape {w.shape} for {n_frames} frames x {n_streams} streams")
    if np.any(w < 0):
        raise ValueError("stream weights must be nonnegative")
    total = w.sum(axis=1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("stream weights must not all be zero")
    return w / total


def combine_append(streams):
    """Concatenate feature columns in stream order."""
    streams = _check_aligned(streams)
    data = np.hstack([s.data for s in streams])
    kind = streams[0].kind if len(streams) == 1 else "raw"
    return FeatureMatrix(data, streams[0].frame_period, kind)


def _renormalize(p):
    return p / p.sum(axis=1, keepdims=True)


def combine_product(streams, weights=None):
    """p(c) proportional to prod_s p_s(c)^e_s, with a probability floor before exponentiation.

    Exponents are the normalized weights rescaled to average one, so
    uniform weights give the plain (unscaled) product.
    """
    streams = _check_posteriors(streams)
    w = _weights(weights, len(streams), streams[0].n_frames) * len(streams)
    log_p = np.zeros_like(streams[0].data)
    for i, s in enumerate(streams):
        log_p += w[:, i : i + 1] * np.log(np.maximum(s.data, PROB_FLOOR))
    log_p -= log_p.max(axis=1, keepdims=True)
    return FeatureMatrix(_renormalize(np.exp(log_p)), streams[0].frame_period, "posterior")


def combine_sum(streams, weights=None):
    """p(c) = sum_s w_s p_s(c)."""
    streams = _check_posteriors(streams)
    w = _weights(weights, len(streams), streams[0].n_frames)
    out = np.zeros_like(streams[0].data)
    for i, s in enumerate(streams):
        out += w[:, i : i + 1] * s.data
    return FeatureMatrix(_renormalize(out), streams[0].frame_period, "posterior")


def entropy(p):
    """Shannon entropy (nats) of each row."""
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def inverse_entropy_weights(streams, eps=ENTROPY_EPS):
    """Per-frame weights w_s proportional to 1 / (H_s + eps)."""
    streams = _check_posteriors(streams)
    inv = np.stack([1.0 / (entropy(s.data) + eps) for s in streams], axis=1)
    return inv / inv.sum(axis=1, keepdims=True)


RULES = {"append": combine_append, "product": combine_product, "sum": combine_sum}


def combine_streams(streams, rule="product", weights="uniform"):
    """Dispatch used by the CLI. ``weights`` is ``uniform``, ``entropy`` or a sequence."""
    if rule == "append":
        return combine_append(streams)
    if rule not in RULES:
        raise ValueError(f"unknown combination rule {rule!r}")
    if isinstance(weights, str) and weights == "entropy":
        weights = inverse_entropy_weights(streams)
    return RULES[rule](streams, weights)
