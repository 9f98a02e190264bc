"""Shared fixtures-as-functions for diarization checks."""
import numpy as np

from parspeech.acoustic import EmConfig, train_gmm_em
from parspeech.diarization import ClusterSet, DiarizationConfig, bic_merge_candidate
from parspeech.synth import SyntheticCorpusSpec, sample_gmm, speaker_models


def two_cluster_trial(seed, same_source, n_frames=1000, g=5, separation=5.0):
    """Sample two clusters, fit a GMM to each, return the merge candidate (or None)."""
    rng = np.random.default_rng(seed)
    spec = SyntheticCorpusSpec(n_speakers=2, separation=separation)
    a_model, b_model = speaker_models(spec, rng)
    if same_source:
        b_model = a_model
    Xa = sample_gmm(a_model, n_frames, rng)
    Xb = sample_gmm(b_model, n_frames, rng)
    X = np.vstack([Xa, Xb])
    frames = {0: np.arange(n_frames), 1: np.arange(n_frames, 2 * n_frames)}
    em = EmConfig(seed=seed)
    models = {c: train_gmm_em(X[f], g, EmConfig(seed=seed * 7 + c)) for c, f in frames.items()}
    config = DiarizationConfig(g=g, em=em)
    return bic_merge_candidate(X, ClusterSet(models, frames), config)
