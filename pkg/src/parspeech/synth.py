"""Synthetic data with exact ground truth: speaker corpora and recognition networks."""
from dataclasses import dataclass

import numpy as np

from .acoustic import GaussianMixtureModel
from .decoder import RecognitionNetwork
from .diarization import Segmentation
from .frontend import FRAME_PERIOD, FeatureMatrix


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    """Speakers are mixtures around centres ``separation`` standard deviations apart.

    Dimension 0 carries log energy (speech near ``speech_energy``, gaps near
    ``silence_energy``); the remaining dimensions carry speaker identity with
    unit per-dimension spread.
    """

    n_speakers: int = 3
    duration: float = 600.0
    dim: int = 13
    components: int = 16
    separation: float = 5.0
    component_spread: float = 0.7
    turn_range: tuple = (3.0, 15.0)
    silence_prob: float = 0.0
    silence_range: tuple = (0.5, 2.0)
    speech_energy: float = 10.0
    silence_energy: float = -10.0
    frame_period: float = FRAME_PERIOD
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1:
            raise ValueError("need at least one speaker")
        if self.n_speakers > self.dim - 1:
            raise ValueError("need dim > n_speakers to place equidistant speaker centres")
        if not 0.0 <= self.component_spread < 1.0:
            raise ValueError("component_spread must be in [0, 1)")


@dataclass
class SyntheticCorpus:
    features: FeatureMatrix
    reference: Segmentation
    speaker_models: list
    speech_mask: np.ndarray

    def __iter__(self):
        yield self.features
        yield self.reference


def speaker_models(spec, rng):
    """Per-speaker GMMs; centres ``separation / sqrt(2) * e_(s+1)`` are pairwise ``separation`` apart."""
    models = []
    within = 1.0 - spec.component_spread ** 2
    for s in range(spec.n_speakers):
        center = np.zeros(spec.dim)
        center[0] = spec.speech_energy
        center[s + 1] = spec.separation / np.sqrt(2.0)
        offsets = rng.normal(0.0, spec.component_spread, (spec.components, spec.dim))
        weights = rng.dirichlet(np.full(spec.components, 5.0))
        models.append(GaussianMixtureModel(weights, center + offsets, np.full((spec.components, spec.dim), within)))
    return models


def sample_gmm(model, n, rng):
    comp = rng.choice(model.n_components, size=n, p=model.weights)
    return model.means[comp] + rng.normal(size=(n, model.dim)) * np.sqrt(model.variances[comp])


def generate_synthetic_corpus(spec=None):
    """Features sampled turn by turn from the speaker GMMs, with the true segmentation."""
    spec = spec or SyntheticCorpusSpec()
    rng = np.random.default_rng(spec.seed)
    models = speaker_models(spec, rng)
    total = int(round(spec.duration / spec.frame_period))
    lo, hi = (int(round(x / spec.frame_period)) for x in spec.turn_range)
    slo, shi = (int(round(x / spec.frame_period)) for x in spec.silence_range)

    data = np.empty((total, spec.dim))
    mask = np.zeros(total, dtype=bool)
    segments = []
    t, prev = 0, -1
    while t < total:
        if spec.silence_prob > 0 and t > 0 and rng.random() < spec.silence_prob:
            n = min(int(rng.integers(slo, shi + 1)), total - t)
            data[t : t + n] = rng.normal(size=(n, spec.dim))
            data[t : t + n, 0] += spec.silence_energy
            t += n
            continue
        choices = [s for s in range(spec.n_speakers) if s != prev] or [0]
        spk = int(rng.choice(choices))
        n = min(int(rng.integers(lo, hi + 1)), total - t)
        data[t : t + n] = sample_gmm(models[spk], n, rng)
        mask[t : t + n] = True
        if segments and segments[-1][1] == t and segments[-1][2] == spk:
            segments[-1] = (segments[-1][0], t + n, spk)
        else:
            segments.append((t, t + n, spk))
        t += n
        prev = spk
    reference = Segmentation(segments, spec.frame_period, total)
    return SyntheticCorpus(FeatureMatrix(data, spec.frame_period, "raw"), reference, models, mask)


def random_network(rng, max_states=12, n_models=3, dim=2, n_words=3, epsilon_prob=0.25, max_out=2):
    """Small random network for exhaustive-search checks.

    Epsilon arcs only go from lower to higher state ids, so they are acyclic.
    Weights are continuous, but paths that reorder the same arcs still tie
    exactly, so checks against it must apply the decoder's tie rule.
    """
    S = int(rng.integers(2, max_states + 1))
    arcs = []
    for s in range(S):
        for _ in range(int(rng.integers(1, max_out + 1))):
            d = int(rng.integers(0, S))
            arcs.append((s, d, int(rng.integers(1, n_models + 1)),
                         int(rng.integers(0, n_words + 1)) if rng.random() < 0.5 else 0,
                         float(rng.uniform(0.0, 3.0))))
        if s < S - 1 and rng.random() < epsilon_prob:
            d = int(rng.integers(s + 1, S))
            arcs.append((s, d, 0, int(rng.integers(0, n_words + 1)) if rng.random() < 0.5 else 0,
                         float(rng.uniform(0.0, 3.0))))
    order = rng.permutation(len(arcs))
    arcs = [arcs[i] for i in order]
    n_final = int(rng.integers(1, S + 1))
    finals = {int(s): float(rng.uniform(0.0, 2.0)) for s in rng.choice(S, size=n_final, replace=False)}
    models = {}
    for m in range(1, n_models + 1):
        g = int(rng.integers(1, 4))
        w = rng.dirichlet(np.ones(g))
        models[m] = GaussianMixtureModel(w, rng.normal(0, 2, (g, dim)), rng.uniform(0.5, 2.0, (g, dim)))
    words = {i: f"w{i}" for i in range(1, n_words + 1)}
    return RecognitionNetwork(S, arcs, finals, 0, words, models)


def word_loop_network(n_words=50, phones_per_word=3, n_models=128, components=4, dim=13, seed=0,
                      self_loop_weight=0.7, word_weight=None):
    """Word-loop recognition network over shared phone models.

    State 0 is the loop head (final). Each word is a left-to-right phone chain
    with emitting self loops; the word label sits on the word's first arc and an
    epsilon arc returns the word end to the head.
    """
    rng = np.random.default_rng(seed)
    word_weight = np.log(n_words) if word_weight is None else word_weight
    stay = -np.log(1.0 - np.exp(-self_loop_weight)) if self_loop_weight > 0 else 0.0
    arcs = []
    state = 1
    lexicon = {}
    for w in range(1, n_words + 1):
        phones = [int(p) for p in rng.integers(1, n_models + 1, size=phones_per_word)]
        lexicon[w] = phones
        prev = 0
        for i, m in enumerate(phones):
            cur = state
            state += 1
            arcs.append((prev, cur, m, w if i == 0 else 0, word_weight if i == 0 else stay))
            arcs.append((cur, cur, m, 0, self_loop_weight))
            prev = cur
        arcs.append((prev, 0, 0, 0, 0.0))
    models = {}
    for m in range(1, n_models + 1):
        w = rng.dirichlet(np.full(components, 3.0))
        models[m] = GaussianMixtureModel(w, rng.normal(0, 3.0, (components, dim)), rng.uniform(0.5, 1.5, (components, dim)))
    words = {w: f"word{w}" for w in range(1, n_words + 1)}
    net = RecognitionNetwork(state, arcs, {0: 0.0}, 0, words, models)
    net.lexicon = lexicon
    return net


def sample_utterance(network, n_frames, seed=0, frames_per_phone=(3, 8), frame_period=FRAME_PERIOD):
    """Features for a random word sequence through a :func:`word_loop_network`.

    Returns ``(features, word_ids)``.
    """
    rng = np.random.default_rng(seed)
    lexicon = network.lexicon
    rows, words = [], []
    while len(rows) < n_frames:
        w = int(rng.integers(1, len(lexicon) + 1))
        words.append(w)
        for m in lexicon[w]:
            for _ in range(int(rng.integers(frames_per_phone[0], frames_per_phone[1] + 1))):
                rows.append(sample_gmm(network.models[m], 1, rng)[0])
    return FeatureMatrix(np.array(rows[:n_frames]), frame_period, "raw"), words
