"""Agglomerative GMM speaker diarization, offline and online.

Offline: uniform initial segmentation into ``k`` clusters, then repeat
minimum-duration Viterbi re-segmentation, per-cluster GMM re-training and a
single best BIC merge until no pair passes the merge test.

Online: models bootstrapped from an offline pass over the start of the
recording label every later frame by maximum likelihood; a majority vote over
fixed windows of ``vote_window`` frames emits one decision per window.
"""
import hashlib
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import linear_sum_assignment

from . import kernels
from .acoustic import EmConfig, ModelBank, concatenate_models, train_gmm_em
from .errors import InsufficientSpeechError

log = logging.getLogger(__name__)


@dataclass
class Segmentation:
    """Sorted, non-overlapping ``(start_frame, end_frame, label)`` spans over ``n_frames`` frames."""

    segments: list
    frame_period: float = 0.01
    n_frames: int | None = None

    def __post_init__(self):
        self.segments = sorted((int(a), int(b), c) for a, b, c in self.segments)
        prev_end = 0
        for a, b, _ in self.segments:
            if b <= a:
                raise ValueError(f"empty segment [{a}, {b})")
            if a < prev_end:
                raise ValueError(f"overlapping segment starting at {a}")
            prev_end = b
        if self.n_frames is None:
            self.n_frames = prev_end
        elif prev_end > self.n_frames:
            raise ValueError("segment beyond the stated duration")

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def labels(self):
        return sorted({c for _, _, c in self.segments}, key=repr)

    def frame_labels(self, speech_mask=None):
        """Label index per frame (-1 where unlabeled) and the label list."""
        names = self.labels
        index = {c: i for i, c in enumerate(names)}
        out = np.full(self.n_frames, -1, dtype=np.int64)
        for a, b, c in self.segments:
            out[a:b] = index[c]
        if speech_mask is not None:
            out[~np.asarray(speech_mask, dtype=bool)[: self.n_frames]] = -1
        return out, names

    @classmethod
    def from_frame_labels(cls, labels, frame_period=0.01, names=None):
        labels = np.asarray(labels)
        segs = []
        if labels.size:
            edges = np.flatnonzero(np.diff(labels)) + 1
            starts = np.concatenate([[0], edges])
            ends = np.concatenate([edges, [labels.size]])
            for a, b in zip(starts, ends):
                lab = labels[a]
                if lab >= 0:
                    segs.append((int(a), int(b), names[lab] if names is not None else int(lab)))
        return cls(segs, frame_period, int(labels.size))

    def lengths(self):
        return [b - a for a, b, _ in self.segments]


@dataclass
class ClusterSet:
    models: dict                 # cluster id -> GaussianMixtureModel
    frames: dict                 # cluster id -> sorted frame indices

    def __len__(self):
        return len(self.models)

    @property
    def ids(self):
        return sorted(self.models)


@dataclass(frozen=True)
class DiarizationConfig:
    k: int = 16
    g: int = 5
    min_duration: float = 2.5
    vad_threshold: float = 30.0
    vad_margin: float = 3.0
    energy_dim: int = 0
    energy_floor: float = 0.0
    energy_smoothing: float = 0.11
    vad_smoothing: float = 0.5
    em: EmConfig = field(default_factory=EmConfig)
    max_iterations: int = 100

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.g < 1:
            raise ValueError("g must be >= 1")
        if not self.min_duration > 0:
            raise ValueError("min_duration must be positive")


@dataclass(frozen=True)
class OnlineConfig:
    train_duration: float = 1000.0
    chunk_duration: float = 60.0
    vote_window: int = 250
    seed: int = 0

    def __post_init__(self):
        if not self.train_duration > self.chunk_duration:
            raise ValueError("train_duration must exceed chunk_duration")
        if self.vote_window < 1:
            raise ValueError("vote_window must be >= 1")


@dataclass
class DiarizationResult:
    segmentation: Segmentation
    clusters: ClusterSet
    speech_mask: np.ndarray
    trace: list
    elapsed: float
    duration: float
    timings: dict = field(default_factory=dict)

    @property
    def n_clusters(self):
        return len(self.clusters)

    @property
    def real_time_factor(self):
        return self.elapsed / self.duration if self.duration > 0 else 0.0

    def same_output(self, other):
        if self.segmentation.segments != other.segmentation.segments:
            return False
        if not np.array_equal(self.speech_mask, other.speech_mask):
            return False
        if self.clusters.ids != other.clusters.ids:
            return False
        if any(self.clusters.models[c] != other.clusters.models[c] for c in self.clusters.ids):
            return False
        return self.trace == other.trace


def _frames_of(features):
    return np.ascontiguousarray(getattr(features, "data", features), dtype=np.float64)


def _odd_frames(seconds, frame_period):
    n = max(1, int(round(seconds / frame_period)))
    return n if n % 2 else n + 1


def detect_speech(features, config=None):
    """Energy rule with majority smoothing.

    The log energy (dimension ``energy_dim``) is smoothed by a short moving
    average. If the spread between its ``vad_threshold`` and
    ``100 - vad_threshold`` percentiles exceeds ``vad_margin`` the threshold is
    their midpoint; otherwise the recording has no usable contrast and the
    fixed ``energy_floor`` decides. A 0.5 s majority filter smooths the mask.
    """
    config = config or DiarizationConfig()
    X = _frames_of(features)
    frame_period = getattr(features, "frame_period", 0.01)
    if X.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    energy = uniform_filter1d(X[:, config.energy_dim], _odd_frames(config.energy_smoothing, frame_period),
                              mode="nearest")
    lo = np.percentile(energy, config.vad_threshold)
    hi = np.percentile(energy, 100.0 - config.vad_threshold)
    threshold = 0.5 * (lo + hi) if hi - lo > config.vad_margin else config.energy_floor
    raw = (energy > threshold).astype(np.float64)
    votes = uniform_filter1d(raw, _odd_frames(config.vad_smoothing, frame_period), mode="nearest")
    return votes > 0.5


def uniform_init(speech_frames, k, frame_period=0.01, n_frames=None):
    """``k`` contiguous runs of the speech frames; sizes differ by at most one."""
    speech = np.asarray(speech_frames, dtype=np.int64)
    if k < 1 or speech.size < k:
        raise InsufficientSpeechError(f"{speech.size} speech frames cannot seed {k} clusters")
    base, extra = divmod(speech.size, k)
    segs, pos = [], 0
    for c in range(k):
        n = base + (1 if c < extra else 0)
        segs.append((int(speech[pos]), int(speech[pos + n - 1]) + 1, c))
        pos += n
    total = n_frames if n_frames is not None else int(speech[-1]) + 1
    return Segmentation(segs, frame_period, total)


def _speech_index(n_frames, speech_mask):
    if speech_mask is None:
        return np.arange(n_frames, dtype=np.int64)
    return np.flatnonzero(np.asarray(speech_mask, dtype=bool))


def cluster_cost_matrix(X, clusters, speech, workers=1):
    """Negative log-likelihood of each speech frame under each cluster, clusters in id order."""
    ids = clusters.ids
    cost = np.empty((speech.size, len(ids)))
    Xs = np.ascontiguousarray(X[speech])
    for j, c in enumerate(ids):
        cost[:, j] = -clusters.models[c].frame_log_likelihood(Xs, workers)
    return cost


def resegment(features, clusters, min_duration=2.5, speech_mask=None, workers=1):
    """Minimum-duration Viterbi over an ergodic model of per-cluster state chains.

    Each cluster unit is a chain of ``ceil(min_duration / frame_period)``
    states sharing the cluster GMM, with a self loop on its last state.
    Transitions between units cost nothing. Only speech frames take part;
    each output span covers at least the minimum number of speech frames.
    """
    X = _frames_of(features)
    frame_period = getattr(features, "frame_period", 0.01)
    speech = _speech_index(X.shape[0], speech_mask)
    ids = clusters.ids
    if not ids or speech.size == 0:
        return Segmentation([], frame_period, X.shape[0])
    min_len = int(math.ceil(min_duration / frame_period - 1e-9))
    cost = cluster_cost_matrix(X, clusters, speech, workers)
    if speech.size < min_len:
        path = np.full(speech.size, int(np.argmin(cost.sum(axis=0))), dtype=np.int64)
    else:
        path, _ = kernels.min_duration_viterbi(np.ascontiguousarray(cost), min_len)
    segs = []
    edges = np.flatnonzero(np.diff(path)) + 1
    for a, b in zip(np.concatenate([[0], edges]), np.concatenate([edges, [path.size]])):
        segs.append((int(speech[a]), int(speech[b - 1]) + 1, ids[int(path[a])]))
    return Segmentation(segs, frame_period, X.shape[0])


def _cluster_frames(segmentation, speech_mask, n_frames):
    mask = np.ones(n_frames, dtype=bool) if speech_mask is None else np.asarray(speech_mask, dtype=bool)
    frames = {}
    for a, b, c in segmentation:
        idx = np.arange(a, b)
        frames.setdefault(c, []).append(idx[mask[a:b]])
    return {c: np.concatenate(parts) for c, parts in frames.items()}


def _cluster_seed(config, cluster_id):
    return config.em.seed * 1_000_003 + int(cluster_id)


def retrain(features, segmentation, g=5, speech_mask=None, config=None, workers=1):
    """New GMM per cluster on its speech frames; clusters with fewer than ``g`` frames dissolve."""
    config = config or DiarizationConfig(g=g)
    X = _frames_of(features)
    frames = _cluster_frames(segmentation, speech_mask, X.shape[0])
    keep = sorted(c for c, f in frames.items() if f.size >= g)
    dropped = sorted(set(frames) - set(keep))
    if dropped:
        log.debug("dissolving starved clusters %s", dropped)

    def fit(c):
        em = EmConfig(config.em.max_iterations, config.em.ll_tolerance, config.em.variance_floor,
                      _cluster_seed(config, c), config.em.kmeans_sweeps)
        return train_gmm_em(X[frames[c]], g, em)

    if workers > 1 and len(keep) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            models = list(pool.map(fit, keep))
    else:
        models = [fit(c) for c in keep]
    return ClusterSet(dict(zip(keep, models)), {c: frames[c] for c in keep})


@dataclass
class MergeCandidate:
    pair: tuple
    delta: float
    model: object


def _digest(model, frames):
    h = hashlib.sha1()
    for arr in (model.weights, model.means, model.variances, frames):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class BicCache:
    """Memo of pair scores keyed on both clusters' parameters and frames."""

    def __init__(self):
        self.table = {}
        self.hits = 0

    def key(self, clusters, a, b):
        return (_digest(clusters.models[a], clusters.frames[a]), _digest(clusters.models[b], clusters.frames[b]))


def bic_pair_delta(X, clusters, a, b, config=None):
    """Parameter-matched BIC difference for merging clusters ``a`` and ``b``.

    The merged GMM has ``g_a + g_b`` components, starts from the two cluster
    models side by side and is refined by EM on the union of frames. With
    equal parameter counts the BIC penalty terms cancel, leaving
    ``LL_merged - (LL_a + LL_b)``.
    """
    config = config or DiarizationConfig()
    ma, mb = clusters.models[a], clusters.models[b]
    fa, fb = clusters.frames[a], clusters.frames[b]
    Xa, Xb = X[fa], X[fb]
    union = np.sort(np.concatenate([fa, fb]))
    Xu = X[union]
    init = concatenate_models([ma, mb], [fa.size, fb.size])
    em = EmConfig(config.em.max_iterations, config.em.ll_tolerance, config.em.variance_floor,
                  config.em.seed, config.em.kmeans_sweeps)
    merged = train_gmm_em(Xu, init.n_components, em, init=init)
    delta = merged.total_log_likelihood(Xu) - (ma.total_log_likelihood(Xa) + mb.total_log_likelihood(Xb))
    return delta, merged


def bic_merge_candidate(features, clusters, config=None, workers=1, cache=None):
    """Best pair by BIC difference, or None when no pair has a nonnegative difference.

    Ties on the difference go to the lexicographically smallest pair.
    """
    config = config or DiarizationConfig()
    ids = clusters.ids
    if len(ids) < 2:
        return None
    X = _frames_of(features)
    pairs = list(itertools.combinations(ids, 2))
    results = [None] * len(pairs)
    todo = []
    for i, (a, b) in enumerate(pairs):
        if cache is not None:
            key = cache.key(clusters, a, b)
            if key in cache.table:
                results[i] = cache.table[key]
                cache.hits += 1
                continue
        todo.append(i)

    def score(i):
        return bic_pair_delta(X, clusters, *pairs[i], config)

    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(score, todo))
    else:
        fresh = [score(i) for i in todo]
    for i, r in zip(todo, fresh):
        results[i] = r
        if cache is not None:
            cache.table[cache.key(clusters, *pairs[i])] = r
    best = None
    for pair, (delta, model) in zip(pairs, results):
        if delta >= 0 and (best is None or delta > best.delta):
            best = MergeCandidate(pair, float(delta), model)
    return best


def diarize_offline(features, config=None, speech_mask=None, workers=1):
    """Re-segment, re-train, merge the best BIC pair; stop when no pair merges."""
    config = config or DiarizationConfig()
    t0 = time.perf_counter()
    X = _frames_of(features)
    frame_period = getattr(features, "frame_period", 0.01)
    mask = detect_speech(features, config) if speech_mask is None else np.asarray(speech_mask, dtype=bool)
    speech = np.flatnonzero(mask)
    if speech.size < config.k * config.g:
        raise InsufficientSpeechError(
            f"{speech.size} speech frames; need at least k*g = {config.k * config.g}")

    timings = {"resegment": 0.0, "retrain": 0.0, "bic": 0.0}
    segmentation = uniform_init(speech, config.k, frame_period, X.shape[0])
    clusters = retrain(X, segmentation, config.g, mask, config, workers)
    cache = BicCache()
    trace = [{"iteration": -1, "clusters": len(clusters), "dissolved": config.k - len(clusters),
              "segments": len(segmentation), "merged": None, "delta": None}]
    for iteration in range(config.max_iterations):
        before = len(clusters)
        t1 = time.perf_counter()
        segmentation = resegment(features, clusters, config.min_duration, mask, workers)
        t2 = time.perf_counter()
        clusters = retrain(X, segmentation, config.g, mask, config, workers)
        t3 = time.perf_counter()
        timings["resegment"] += t2 - t1
        timings["retrain"] += t3 - t2
        entry = {
            "iteration": iteration,
            "clusters": len(clusters),
            "dissolved": before - len(clusters),
            "segments": len(segmentation),
            "merged": None,
            "delta": None,
        }
        trace.append(entry)
        cand = bic_merge_candidate(X, clusters, config, workers, cache)
        timings["bic"] += time.perf_counter() - t3
        if cand is None:
            break
        a, b = cand.pair
        frames = np.sort(np.concatenate([clusters.frames[a], clusters.frames[b]]))
        models = {c: m for c, m in clusters.models.items() if c not in (a, b)}
        framesets = {c: f for c, f in clusters.frames.items() if c not in (a, b)}
        models[a], framesets[a] = cand.model, frames
        clusters = ClusterSet(models, framesets)
        entry["merged"] = (a, b)
        entry["delta"] = cand.delta
        entry["clusters_after"] = len(clusters)
    elapsed = time.perf_counter() - t0
    timings["total"] = elapsed
    return DiarizationResult(segmentation, clusters, mask, trace, elapsed, X.shape[0] * frame_period, timings)


@dataclass
class OnlineModels:
    models: dict                 # model id -> GaussianMixtureModel
    speaker_ids: list
    nonspeech_id: int | None
    warnings: list
    chunks: dict                 # model id -> frame indices used for training


def _runs(frames):
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    return np.split(frames, breaks)


def select_chunk(frames, n_chunk, rng):
    """Seeded chunk of ``n_chunk`` frames; a single contiguous run when one is long enough.

    Returns ``(frame indices, complete)``.
    """
    runs = _runs(frames)
    total = sum(r.size for r in runs)
    if total <= n_chunk:
        return np.asarray(frames, dtype=np.int64), total == n_chunk
    long_runs = [r for r in runs if r.size >= n_chunk]
    if long_runs:
        run = long_runs[int(rng.integers(len(long_runs)))]
        start = int(rng.integers(run.size - n_chunk + 1))
        return run[start : start + n_chunk], True
    picked, have = [], 0
    for i in rng.permutation(len(runs)):
        take = runs[i][: n_chunk - have]
        picked.append(take)
        have += take.size
        if have >= n_chunk:
            break
    return np.sort(np.concatenate(picked)), True


def train_online_models(features, offline_result, config=None, g=5, em=None):
    """One GMM per offline speaker plus a nonspeech GMM, each from a seeded chunk."""
    config = config or OnlineConfig()
    em = em or EmConfig()
    X = _frames_of(features)
    frame_period = getattr(features, "frame_period", 0.01)
    n_chunk = int(round(config.chunk_duration / frame_period))
    rng = np.random.default_rng(config.seed)
    warnings, models, chunks = [], {}, {}
    speaker_ids = offline_result.clusters.ids
    for c in speaker_ids:
        frames, complete = select_chunk(offline_result.clusters.frames[c], n_chunk, rng)
        if not complete:
            warnings.append(
                f"speaker {c}: only {frames.size * frame_period:.1f} s of data, "
                f"training on all of it instead of {config.chunk_duration:g} s")
        chunks[c] = frames
        models[c] = train_gmm_em(X[frames], g, em)
    nonspeech_id = None
    span = min(X.shape[0], offline_result.speech_mask.size)
    silent = np.flatnonzero(~offline_result.speech_mask[:span])
    if silent.size >= g:
        nonspeech_id = (max(speaker_ids) + 1) if speaker_ids else 0
        frames, complete = select_chunk(silent, n_chunk, rng)
        if not complete:
            warnings.append(
                f"nonspeech: only {frames.size * frame_period:.1f} s of data, "
                f"training on all of it instead of {config.chunk_duration:g} s")
        chunks[nonspeech_id] = frames
        models[nonspeech_id] = train_gmm_em(X[frames], g, em)
    else:
        warnings.append("no nonspeech frames in the training portion; nonspeech model omitted")
    for w in warnings:
        log.warning(w)
    return OnlineModels(models, list(speaker_ids), nonspeech_id, warnings, chunks)


@dataclass(frozen=True)
class Decision:
    index: int
    frame: int          # frames consumed when the decision is emitted
    label: int
    votes: dict
    latency: float      # seconds from window start to emission

    def time(self, frame_period=0.01):
        return self.frame * frame_period


def latency_string(config=None, frame_period=0.01):
    config = config or OnlineConfig()
    return f"t + {config.vote_window * frame_period:g} s"


class OnlineDiarizer:
    """Single-consumer stream processor: feed frames, collect decisions in order."""

    def __init__(self, models, config=None, frame_period=0.01):
        self.config = config or OnlineConfig()
        self.frame_period = frame_period
        table = getattr(models, "models", models)
        self.ids = sorted(table)
        self.bank = ModelBank([table[i] for i in self.ids])
        self.frames_seen = 0
        self.n_decisions = 0
        self._votes = np.zeros(len(self.ids), dtype=np.int64)

    def classify(self, x):
        ll = self.bank.log_likelihood(np.arange(len(self.ids)), x)
        return int(np.argmax(ll))

    def push(self, x):
        """Consume one frame; returns a :class:`Decision` when a window closes, else None."""
        self._votes[self.classify(x)] += 1
        self.frames_seen += 1
        if self.frames_seen % self.config.vote_window:
            return None
        winner = int(np.argmax(self._votes))
        votes = {self.ids[i]: int(v) for i, v in enumerate(self._votes) if v}
        self._votes[:] = 0
        d = Decision(self.n_decisions, self.frames_seen, self.ids[winner], votes,
                     self.config.vote_window * self.frame_period)
        self.n_decisions += 1
        return d


def diarize_online(stream, models, config=None, frame_period=0.01):
    """Yield one :class:`Decision` per completed vote window; a partial tail window is dropped."""
    frames = _frames_of(stream) if hasattr(stream, "data") else stream
    proc = OnlineDiarizer(models, config, getattr(stream, "frame_period", frame_period))
    for x in frames:
        d = proc.push(np.asarray(x, dtype=np.float64))
        if d is not None:
            yield d


def decisions_to_segmentation(decisions, n_frames, vote_window, frame_period=0.01, skip=None):
    """Each decision labels the window it voted on; labels in ``skip`` (e.g. nonspeech) are left out."""
    segs = []
    for d in decisions:
        if skip is not None and d.label in skip:
            continue
        segs.append((d.frame - vote_window, d.frame, d.label))
    merged = []
    for a, b, c in segs:
        if merged and merged[-1][1] == a and merged[-1][2] == c:
            merged[-1] = (merged[-1][0], b, c)
        else:
            merged.append((a, b, c))
    return Segmentation(merged, frame_period, n_frames)


def diarization_error_rate(hypothesis, reference, speech_mask=None):
    """Fraction of reference speech time mislabeled under the best one-to-one label mapping.

    Missed speech, false alarm and speaker confusion all count as errors.
    """
    if hypothesis.n_frames != reference.n_frames:
        raise ValueError(f"duration mismatch: {hypothesis.n_frames} vs {reference.n_frames} frames")
    if not math.isclose(hypothesis.frame_period, reference.frame_period):
        raise ValueError("frame period mismatch")
    ref, _ = reference.frame_labels()
    hyp, _ = hypothesis.frame_labels(speech_mask)
    total = int((ref >= 0).sum())
    if total == 0:
        return 0.0 if (hyp >= 0).sum() == 0 else 1.0
    both = (ref >= 0) & (hyp >= 0)
    overlap = np.zeros((ref.max() + 1, max(hyp.max() + 1, 1)), dtype=np.int64)
    np.add.at(overlap, (ref[both], hyp[both]), 1)
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    matched = int(overlap[rows, cols].sum())
    false_alarm = int(((hyp >= 0) & (ref < 0)).sum())
    return (total - matched + false_alarm) / total
