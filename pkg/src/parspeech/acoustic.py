"""Diagonal-covariance Gaussian mixture models.

Likelihoods go through :mod:`parspeech.kernels`, so scalar and batched
evaluation share one code path and agree bitwise.
"""
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, FormatError, TrainingError

LOG_2PI = math.log(2.0 * math.pi)
DEFAULT_VARIANCE_FLOOR = 1e-4
_WEIGHT_FLOOR = 1e-12
_EM_BLOCK = 4096


class GaussianMixtureModel:
    """Weighted diagonal Gaussians. Parameter arrays are read-only after construction."""

    def __init__(self, weights, means, variances, variance_floor=DEFAULT_VARIANCE_FLOOR):
        weights = np.array(weights, dtype=np.float64).reshape(-1)
        means = np.array(means, dtype=np.float64)
        variances = np.array(variances, dtype=np.float64)
        if means.ndim == 1:
            means = means[None, :]
        if variances.ndim == 1:
            variances = variances[None, :]
        g = weights.size
        if g < 1:
            raise ValueError("a mixture needs at least one component")
        if means.shape != variances.shape or means.shape[0] != g or means.shape[1] < 1:
            raise DimensionError(
                f"shape mismatch: weights {weights.shape}, means {means.shape}, variances {variances.shape}"
            )
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(means)) and np.all(np.isfinite(variances))):
            raise ValueError("mixture parameters must be finite")
        if np.any(weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights sum to {weights.sum()!r}, expected 1")
        variances = np.maximum(variances, variance_floor)

        self.weights = weights
        self.means = np.ascontiguousarray(means)
        self.variances = np.ascontiguousarray(variances)
        self.inv_variances = 1.0 / self.variances
        self.log_weights = np.log(weights)
        self.log_normalizers = -0.5 * (means.shape[1] * LOG_2PI + np.log(self.variances).sum(axis=1))
        self.log_consts = self.log_weights + self.log_normalizers
        for arr in (self.weights, self.means, self.variances, self.inv_variances,
                    self.log_weights, self.log_normalizers, self.log_consts):
            arr.setflags(write=False)

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GaussianMixtureModel):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    __hash__ = None

    def __repr__(self):
        return f"GaussianMixtureModel(g={self.n_components}, dim={self.dim})"

    def frame_log_likelihood(self, X, workers=1):
        """Per-frame log-likelihood of an ``(n, dim)`` array."""
        comp = self.component_log_densities(X, workers)
        return _logsumexp_rows(comp)

    def component_log_densities(self, X, workers=1):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"expected (n, {self.dim}) frames, got {X.shape}")
        out = np.empty((X.shape[0], self.n_components))
        if X.shape[0]:
            kernels.component_logpdf(X, self.means, self.inv_variances, self.log_consts, out, workers)
        return out

    def total_log_likelihood(self, X, workers=1):
        return float(_ordered_sum(self.frame_log_likelihood(X, workers)))


def _logsumexp_rows(a):
    if a.shape[0] == 0:
        return np.zeros(0)
    best = a.max(axis=1)
    total = np.zeros(a.shape[0])
    for g in range(a.shape[1]):
        total += np.exp(a[:, g] - best)
    return best + np.log(total)


def _ordered_sum(values):
    # blockwise in a fixed order so totals never depend on how work was split
    total = 0.0
    for lo in range(0, values.shape[0], _EM_BLOCK):
        total += float(values[lo : lo + _EM_BLOCK].sum())
    return total


class ModelBank:
    """Mixtures packed into padded ``(models, components, dim)`` arrays.

    Padded components carry a log constant of ``-inf`` and contribute
    exactly zero to the mixture sum.
    """

    def __init__(self, models):
        models = list(models)
        self.models = models
        if not models:
            self.dim = 0
            self.means = np.zeros((0, 1, 1))
            self.inv_variances = np.zeros((0, 1, 1))
            self.log_consts = np.zeros((0, 1))
            return
        dim = models[0].dim
        if any(m.dim != dim for m in models):
            raise DimensionError("all models in a bank must share one feature dimension")
        gmax = max(m.n_components for m in models)
        self.dim = dim
        self.means = np.zeros((len(models), gmax, dim))
        self.inv_variances = np.ones((len(models), gmax, dim))
        self.log_consts = np.full((len(models), gmax), -np.inf)
        for i, m in enumerate(models):
            g = m.n_components
            self.means[i, :g] = m.means
            self.inv_variances[i, :g] = m.inv_variances
            self.log_consts[i, :g] = m.log_consts

    def __len__(self):
        return len(self.models)

    def log_likelihood(self, ids, x, workers=1):
        ids = np.ascontiguousarray(ids, dtype=np.int64)
        out = np.empty(ids.size)
        if ids.size == 0:
            return out
        x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.dim:
            raise DimensionError(f"feature dim {x.size} does not match model dim {self.dim}")
        if ids.min() < 0 or ids.max() >= len(self.models):
            raise IndexError("model id outside the bank")
        kernels.gmm_batch_loglik(self.means, self.inv_variances, self.log_consts, ids, x, out, workers)
        return out


def gmm_log_likelihood(model, x, log_add=None):
    """log sum_i w_i N(x; mu_i, var_i) for one frame.

    ``log_add`` switches to the approximate table-driven path.
    """
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.dim:
        raise DimensionError(f"feature dim {x.size} does not match model dim {model.dim}")
    if log_add is not None:
        diff = x - model.means
        terms = model.log_consts - 0.5 * (diff * diff * model.inv_variances).sum(axis=1)
        return log_add.reduce(terms)
    out = np.empty(1)
    kernels.gmm_batch_loglik(
        model.means[None], model.inv_variances[None], model.log_consts[None],
        np.zeros(1, dtype=np.int64), x, out, 1,
    )
    return float(out[0])


def gmm_log_likelihood_batch(models, x, workers=1):
    """Element ``i`` equals ``gmm_log_likelihood(models[i], x)``."""
    bank = models if isinstance(models, ModelBank) else ModelBank(models)
    if len(bank) == 0:
        return np.zeros(0)
    return bank.log_likelihood(np.arange(len(bank)), x, workers)


class LogAddTable:
    """Quantized lookup for log(1 + exp(-d)), d >= 0.

    Opt-in cache for repeated log-add operations; error is bounded by the
    table step (linear interpolation is not used).
    """

    def __init__(self, step=1e-3, max_diff=40.0):
        self.step = step
        self.max_diff = max_diff
        grid = np.arange(0.0, max_diff + step, step)
        self.table = np.log1p(np.exp(-grid))

    def add(self, a, b):
        if a < b:
            a, b = b, a
        if b == -math.inf:
            return a
        d = a - b
        if d >= self.max_diff:
            return a
        return a + self.table[int(d / self.step + 0.5)]

    def reduce(self, values):
        acc = -math.inf
        for v in values:
            acc = self.add(acc, float(v))
        return acc


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 10
    ll_tolerance: float = 1e-4
    variance_floor: float = DEFAULT_VARIANCE_FLOOR
    seed: int = 0
    kmeans_sweeps: int = 2

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _kmeans_init(X, g, config):
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    means = X[np.sort(rng.choice(n, size=g, replace=False))].copy()
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(config.kmeans_sweeps):
        d2 = np.empty((n, g))
        for k in range(g):
            diff = X - means[k]
            d2[:, k] = (diff * diff).sum(axis=1)
        labels = d2.argmin(axis=1)
        for k in range(g):
            members = X[labels == k]
            if members.shape[0]:
                means[k] = members.mean(axis=0)
    counts = np.bincount(labels, minlength=g).astype(np.float64)
    global_var = X.var(axis=0)
    variances = np.empty_like(means)
    for k in range(g):
        members = X[labels == k]
        variances[k] = members.var(axis=0) if members.shape[0] > 1 else global_var
    weights = np.maximum(counts, 1.0)
    weights /= weights.sum()
    return GaussianMixtureModel(weights, means, np.maximum(variances, config.variance_floor),
                                config.variance_floor)


def _m_step(X, resp, prev, config):
    n, dim = X.shape
    g = resp.shape[1]
    counts = np.zeros(g)
    sums = np.zeros((g, dim))
    for lo in range(0, n, _EM_BLOCK):
        r = resp[lo : lo + _EM_BLOCK]
        counts += r.sum(axis=0)
        sums += r.T @ X[lo : lo + _EM_BLOCK]
    alive = counts > _WEIGHT_FLOOR * n
    means = prev.means.copy()
    means[alive] = sums[alive] / counts[alive, None]
    sq = np.zeros((g, dim))
    for lo in range(0, n, _EM_BLOCK):
        r = resp[lo : lo + _EM_BLOCK]
        xb = X[lo : lo + _EM_BLOCK]
        for k in np.flatnonzero(alive):
            diff = xb - means[k]
            sq[k] += r[:, k] @ (diff * diff)
    variances = prev.variances.copy()
    variances[alive] = sq[alive] / counts[alive, None]
    weights = np.maximum(counts / n, _WEIGHT_FLOOR)
    weights /= weights.sum()
    return GaussianMixtureModel(weights, means, np.maximum(variances, config.variance_floor),
                                config.variance_floor)


def train_gmm_em(data, g, config=None, workers=1, trace=None, init=None):
    """Fit a ``g``-component diagonal GMM by EM.

    :param data: FeatureMatrix or ``(n, dim)`` array.
    :param trace: optional list; receives the mean per-frame log-likelihood
        before each M-step and once more for the returned model.
    :param init: optional starting model with ``g`` components; replaces the
        seeded k-means initialization.
    """
    config = config or EmConfig()
    X = np.ascontiguousarray(getattr(data, "data", data), dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionError(f"training data must be (n, dim), got {X.shape}")
    if g < 1 or X.shape[0] < g:
        raise TrainingError(f"cannot fit {g} components to {X.shape[0]} frames")
    n = X.shape[0]
    if init is not None:
        if init.n_components != g or init.dim != X.shape[1]:
            raise DimensionError("initial model does not match (g, dim)")
        model = init
    else:
        model = _kmeans_init(X, g, config)
    prev_ll = -math.inf
    for _ in range(config.max_iterations):
        comp = model.component_log_densities(X, workers)
        ll = _logsumexp_rows(comp)
        mean_ll = _ordered_sum(ll) / n
        if trace is not None:
            trace.append(mean_ll)
        if mean_ll - prev_ll < config.ll_tolerance:
            break
        prev_ll = mean_ll
        resp = np.exp(comp - ll[:, None])
        model = _m_step(X, resp, model, config)
    else:
        if trace is not None:
            trace.append(model.total_log_likelihood(X, workers) / n)
    return model


def concatenate_models(models, shares):
    """One mixture holding every component of ``models``; weights scaled by ``shares``."""
    shares = np.asarray(shares, dtype=np.float64)
    shares = shares / shares.sum()
    weights = np.concatenate([m.weights * s for m, s in zip(models, shares)])
    means = np.vstack([m.means for m in models])
    variances = np.vstack([m.variances for m in models])
    return GaussianMixtureModel(weights / weights.sum(), means, variances, variance_floor=0.0)


def train_many(datasets, g, config, workers=1):
    """Train one GMM per dataset, one task per worker; order of results follows input."""
    datasets = list(datasets)
    if workers <= 1 or len(datasets) <= 1:
        return [train_gmm_em(d, g, config) for d in datasets]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda d: train_gmm_em(d, g, config), datasets))


GMM_MAGIC = b"GMM1"


def save_gmm(model, path):
    with open(path, "wb") as f:
        f.write(GMM_MAGIC)
        f.write(struct.pack("<II", model.n_components, model.dim))
        f.write(model.weights.astype("<f8").tobytes())
        f.write(model.means.astype("<f8").tobytes())
        f.write(model.variances.astype("<f8").tobytes())


def load_gmm(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != GMM_MAGIC:
        raise FormatError(f"{path}: not a GMM1 model file")
    g, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + 8 * (g + 2 * g * dim)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", offset=12).astype(np.float64)
    weights = values[:g]
    means = values[g : g + g * dim].reshape(g, dim)
    variances = values[g + g * dim :].reshape(g, dim)
    # stored variances are already floored; keep them bit-exact
    return GaussianMixtureModel(weights, means, variances, variance_floor=0.0)
