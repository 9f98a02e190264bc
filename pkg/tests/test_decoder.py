import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import best_path, count_paths
from parspeech.acoustic import GaussianMixtureModel, gmm_log_likelihood
from parspeech.decoder import (
    DecodeConfig,
    RecognitionNetwork,
    TraversalBuffers,
    benchmark_decode,
    decode,
    format_network,
    gather_active_models,
    load_network,
    load_network_files,
    observation_phase,
    save_network_files,
    traversal_phase,
)
from parspeech.errors import BenchmarkDivergence, DecodeError, NetworkError
from parspeech.frontend import FeatureMatrix
from parspeech.synth import random_network, sample_utterance, word_loop_network

INF_BEAM = DecodeConfig(beam_width=math.inf, acoustic_scale=1.0)
STD = GaussianMixtureModel([1.0], [[0.0]], [[1.0]])


def obs_costs(network, X, scale=1.0):
    return [{m: -scale * gmm_log_likelihood(g, x) for m, g in network.models.items()} for x in X]


def test_empty_network_accepting_empty_input():
    net = RecognitionNetwork(1, [], {0: 0.75})
    res = decode(net, FeatureMatrix(np.zeros((0, 1))), INF_BEAM)
    assert res.ok and res.word_sequence == [] and res.cost == 0.75


def test_dangling_state_rejected():
    with pytest.raises(NetworkError):
        RecognitionNetwork(2, [(0, 2, 1, 0, 0.0)], {1: 0.0}, models={1: STD})


def test_epsilon_cycle_rejected():
    with pytest.raises(NetworkError):
        RecognitionNetwork(3, [(0, 1, 0, 0, 0.0), (1, 2, 0, 0, 0.0), (2, 0, 0, 0, 0.0)], {2: 0.0})


def test_unknown_model_rejected():
    with pytest.raises(NetworkError):
        RecognitionNetwork(2, [(0, 1, 5, 0, 0.0)], {1: 0.0}, models={1: STD})


def test_text_roundtrip():
    net = RecognitionNetwork(2, [(0, 1, 1, 1, 0.25)], {1: 0.5}, words={1: "one"}, models={1: STD})
    again = load_network(format_network(net), net.words, net.models)
    assert again == net


def test_file_roundtrip(tmp_path):
    net = word_loop_network(n_words=4, n_models=5, dim=3, seed=2)
    paths = [str(tmp_path / n) for n in ("net.txt", "words.txt", "models.txt")]
    save_network_files(net, *paths)
    assert load_network_files(*paths) == net


def test_gather_sorts_and_dedups():
    models = {m: STD for m in (3, 7)}
    arcs = [(0, 1, 7, 0, 0.0), (0, 1, 3, 0, 0.0), (1, 2, 7, 0, 0.0)]
    net = RecognitionNetwork(3, arcs, {2: 0.0}, models=models)
    buf = TraversalBuffers(net)
    buf.active_states = np.array([0, 1])
    assert gather_active_models(buf, net).tolist() == [3, 7]
    buf.active_states = np.zeros(0, dtype=np.int64)
    assert gather_active_models(buf, net).size == 0


def test_gather_full_network_matches_scan(rng):
    for _ in range(30):
        net = random_network(rng, n_models=3)
        buf = TraversalBuffers(net)
        buf.active_states = np.arange(net.state_count)
        scan = sorted({i for _, _, i, _, _ in net.arcs() if i > 0})
        assert gather_active_models(buf, net).tolist() == scan


def test_observation_value():
    net = RecognitionNetwork(2, [(0, 1, 1, 0, 0.0)], {1: 0.0}, models={1: STD})
    table = observation_phase(net, [1], np.zeros(1), 1.0)
    assert abs(table[1] - 0.5 * math.log(2 * math.pi)) < 1e-15


def test_observation_worker_invariant(rng):
    models = {m: GaussianMixtureModel(rng.dirichlet(np.ones(4)), rng.normal(size=(4, 6)), np.ones((4, 6)))
              for m in range(1, 1001)}
    net = RecognitionNetwork(2, [(0, 1, m, 0, 0.0) for m in models], {1: 0.0}, models=models)
    ids = np.arange(1, 1001)
    x = rng.normal(size=6)
    one, eight = observation_phase(net, ids, x, 0.1, 1), observation_phase(net, ids, x, 0.1, 8)
    assert np.array_equal(one, eight, equal_nan=True) and not np.isnan(one[1:]).any()


def _traverse(net, states, costs, table, config=INF_BEAM):
    buf = TraversalBuffers(net)
    buf.active_states = np.asarray(states, dtype=np.int64)
    buf.active_costs = np.asarray(costs, dtype=float)
    out = traversal_phase(buf, net, table, config)
    return out, buf.backpointers[-1]


def test_single_arc_composition():
    net = RecognitionNetwork(2, [(0, 1, 1, 0, 0.5)], {1: 0.0}, models={1: STD})
    (states, costs), _ = _traverse(net, [0], [1.0], np.array([np.nan, 2.0]))
    assert states.tolist() == [1] and costs.tolist() == [3.5]


def test_min_and_tie_break():
    arcs = [(1, 2, 1, 0, 0.0), (0, 2, 1, 0, 0.0)]
    net = RecognitionNetwork(3, arcs, {2: 0.0}, models={1: STD})
    table = np.array([np.nan, 0.0])
    (states, costs), _ = _traverse(net, [0, 1], [4.0, 3.0], table)
    assert costs[states.tolist().index(2)] == 3.0
    _, (bp_states, bp_arcs) = _traverse(net, [0, 1], [3.0, 3.0], table)
    assert bp_arcs[bp_states.tolist().index(2)] == 0


def test_beam_pruning():
    arcs = [(0, s, 1, 0, float(s)) for s in range(1, 6)]
    net = RecognitionNetwork(6, arcs, {1: 0.0}, models={1: STD})
    cfg = DecodeConfig(beam_width=2.0, acoustic_scale=1.0)
    (states, costs), _ = _traverse(net, [0], [2.0], np.array([np.nan, 0.0]), cfg)
    assert costs.min() == 3.0 and np.all(costs <= 5.0)


def test_max_active_keeps_lowest():
    arcs = [(0, s, 1, 0, 1.0) for s in range(1, 6)]
    net = RecognitionNetwork(6, arcs, {1: 0.0}, models={1: STD})
    cfg = DecodeConfig(beam_width=math.inf, acoustic_scale=1.0, max_active=3)
    (states, _), _ = _traverse(net, [0], [0.0], np.array([np.nan, 0.0]), cfg)
    assert states.tolist() == [1, 2, 3]


def test_linear_network_spells_words(rng):
    arcs = [(0, 1, 1, 1, 0.0), (1, 1, 1, 0, 0.0), (1, 2, 1, 2, 0.0), (2, 2, 1, 0, 0.0)]
    net = RecognitionNetwork(3, arcs, {2: 0.0}, words={1: "one", 2: "two"}, models={1: STD})
    res = decode(net, FeatureMatrix(rng.normal(size=(7, 1))), INF_BEAM)
    assert res.word_sequence == ["one", "two"]
    spans = [(s, e) for _, s, e in res.words]
    assert spans[0][0] == 0 and spans[0][1] == spans[1][0] and spans[1][1] == 7


def test_branching_network_matches_enumeration(rng):
    arcs = [(0, 1, 1, 1, 0.3), (0, 2, 2, 2, 0.1), (1, 1, 1, 0, 0.2), (2, 2, 2, 0, 0.2),
            (1, 3, 2, 0, 0.5), (2, 4, 1, 0, 0.4), (3, 3, 2, 0, 0.1), (4, 4, 1, 0, 0.1),
            (3, 5, 0, 0, 0.0), (4, 5, 0, 0, 0.0), (5, 6, 1, 0, 0.3), (6, 6, 1, 0, 0.1),
            (6, 7, 2, 0, 0.2), (7, 7, 2, 0, 0.1), (7, 8, 1, 0, 0.0), (8, 9, 0, 0, 0.0)]
    models = {1: GaussianMixtureModel([1.0], [[-1.0]], [[1.0]]), 2: GaussianMixtureModel([1.0], [[1.0]], [[1.0]])}
    net = RecognitionNetwork(10, arcs, {9: 0.0}, words={1: "yes", 2: "no"}, models=models)
    X = rng.normal(size=(20, 1))
    cost, words = best_path(net.arcs(), net.finals, 0, obs_costs(net, X), net.words)
    res = decode(net, FeatureMatrix(X), INF_BEAM)
    assert abs(res.cost - cost) <= 1e-9 and res.word_sequence == words


def test_collapse_reports_frame():
    net = RecognitionNetwork(2, [(0, 1, 1, 0, 0.0)], {1: 0.0}, models={1: STD})
    res = decode(net, FeatureMatrix(np.zeros((3, 1))), INF_BEAM)
    assert not res.ok and res.failed_frame == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_random_networks_match_enumeration(seed):
    rng = np.random.default_rng(seed)
    net = random_network(rng, max_states=8, dim=2)
    T = int(rng.integers(0, 8))
    if count_paths(net.arcs(), net.finals, 0, T, net.state_count) > 5000:
        return
    X = rng.normal(size=(T, 2))
    oracle = best_path(net.arcs(), net.finals, 0, obs_costs(net, X), net.words)
    res = decode(net, FeatureMatrix(X), INF_BEAM)
    if oracle is None:
        assert not res.ok
    else:
        assert abs(res.cost - oracle[0]) <= 1e-9 and res.word_sequence == oracle[1]


def test_worker_invariance_and_benchmark():
    net = word_loop_network(n_words=20, n_models=40, seed=5)
    feats, _ = sample_utterance(net, 200, seed=5)
    runs = [decode(net, feats, workers=w) for w in (1, 2, 4, 8)]
    assert all(r.same_output(runs[0]) for r in runs)
    report = benchmark_decode(net, feats, worker_counts=(2, 4))
    assert [r["workers"] for r in report["rows"]] == [1, 2, 4]
    assert report["rows"][0]["speedup"] == 1.0
    assert {"observation_s", "traversal_s"} <= set(report["rows"][0])


def test_benchmark_divergence_is_fatal(monkeypatch):
    import parspeech.decoder as dec

    net = word_loop_network(n_words=3, n_models=4, seed=1)
    feats, _ = sample_utterance(net, 30, seed=1)
    real = dec.decode

    def flaky(network, features, config=None, workers=1):
        res = real(network, features, config, workers)
        if workers > 1:
            res.cost += 1.0
        return res

    monkeypatch.setattr(dec, "decode", flaky)
    with pytest.raises(BenchmarkDivergence):
        dec.benchmark_decode(net, feats, worker_counts=(1, 2))


def test_missing_model_in_observation():
    net = RecognitionNetwork(2, [(0, 1, 1, 0, 0.0)], {1: 0.0}, models={1: STD})
    with pytest.raises(DecodeError):
        observation_phase(net, [0], np.zeros(1), 1.0)
