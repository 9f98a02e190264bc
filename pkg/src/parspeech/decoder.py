"""Data-parallel WFST Viterbi beam search.

Each frame runs three steps over gathered, contiguous buffers:

1. gather   -- sorted unique acoustic-model ids on emitting arcs of active states
2. observe  -- scaled negative log-likelihood of the frame under each gathered model
3. traverse -- expand emitting arcs with an atomic best-cost minimum, close over
               epsilon arcs in topological order, prune to the beam

Costs are negative logs. On equal cost the arc with the smaller arc id wins
(arc ids are file order, grouped by source state), which keeps backpointers
independent of the worker count.
"""
import heapq
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .acoustic import ModelBank, load_gmm, save_gmm
from .errors import BenchmarkDivergence, DecodeError, DimensionError, NetworkError

NO_ARC = np.iinfo(np.int64).max


@dataclass(frozen=True)
class DecodeConfig:
    beam_width: float = 12.0
    acoustic_scale: float = 0.083
    max_active: int | None = None

    def __post_init__(self):
        if not self.beam_width > 0:
            raise ValueError("beam_width must be positive")
        if not self.acoustic_scale > 0:
            raise ValueError("acoustic_scale must be positive")
        if self.max_active is not None and self.max_active < 1:
            raise ValueError("max_active must be >= 1 or None")


def _csr(src, order, n_states):
    offsets = np.zeros(n_states + 1, dtype=np.int64)
    np.add.at(offsets, src[order] + 1, 1)
    return np.cumsum(offsets)


class RecognitionNetwork:
    """A WFST with emitting arcs (input label = model id) and epsilon arcs (label 0).

    :param arcs: sequence of ``(src, dst, ilabel, olabel, weight)``; arc ids are positions.
    :param finals: mapping state -> final weight.
    :param words: mapping word id -> string.
    :param models: mapping model id -> GaussianMixtureModel, or None to skip model checks.
    """

    def __init__(self, state_count, arcs, finals, start=0, words=None, models=None):
        self.state_count = int(state_count)
        if self.state_count < 1:
            raise NetworkError("a network needs at least one state")
        arcs = list(arcs)
        n = len(arcs)
        self.src = np.array([a[0] for a in arcs], dtype=np.int64).reshape(n)
        self.dst = np.array([a[1] for a in arcs], dtype=np.int64).reshape(n)
        self.ilabel = np.array([a[2] for a in arcs], dtype=np.int64).reshape(n)
        self.olabel = np.array([a[3] for a in arcs], dtype=np.int64).reshape(n)
        self.weight = np.array([a[4] for a in arcs], dtype=np.float64).reshape(n)
        self.start = int(start)
        self.finals = {int(s): float(w) for s, w in dict(finals).items()}
        self.words = {int(k): str(v) for k, v in (words or {}).items()}
        self.models = None if models is None else {int(k): v for k, v in models.items()}
        self._validate()
        self._build()

    def _validate(self):
        S = self.state_count
        for name, arr in (("source", self.src), ("destination", self.dst)):
            bad = np.flatnonzero((arr < 0) | (arr >= S))
            if bad.size:
                raise NetworkError(f"arc {bad[0]} has {name} state {arr[bad[0]]} outside [0, {S})")
        if not 0 <= self.start < S:
            raise NetworkError(f"start state {self.start} outside [0, {S})")
        for s, w in self.finals.items():
            if not 0 <= s < S:
                raise NetworkError(f"final state {s} outside [0, {S})")
            if not math.isfinite(w):
                raise NetworkError(f"final weight of state {s} is not finite")
        if np.any(~np.isfinite(self.weight)):
            raise NetworkError("arc weights must be finite")
        if np.any(self.ilabel < 0) or np.any(self.olabel < 0):
            raise NetworkError("labels must be nonnegative")
        if self.models is not None:
            missing = sorted(set(self.ilabel[self.ilabel > 0].tolist()) - set(self.models))
            if missing:
                raise NetworkError(f"unknown model id {missing[0]}")
        self.epsilon_topo_order()

    def epsilon_topo_order(self):
        """Sources of epsilon arcs in topological order; raises on an epsilon cycle."""
        eps = self.ilabel == 0
        indeg = np.zeros(self.state_count, dtype=np.int64)
        np.add.at(indeg, self.dst[eps], 1)
        out = {}
        for a in np.flatnonzero(eps):
            out.setdefault(int(self.src[a]), []).append(int(self.dst[a]))
        ready = sorted(int(s) for s in np.flatnonzero(indeg == 0))
        order = []
        heapq.heapify(ready)
        while ready:
            s = heapq.heappop(ready)
            order.append(s)
            for d in out.get(s, ()):
                indeg[d] -= 1
                if indeg[d] == 0:
                    heapq.heappush(ready, d)
        if len(order) != self.state_count:
            raise NetworkError("epsilon arcs form a cycle")
        return [s for s in order if s in out]

    def _build(self):
        S = self.state_count
        ids = np.arange(self.src.size, dtype=np.int64)
        emit = self.ilabel > 0
        em = ids[emit]
        em = em[np.argsort(self.src[em], kind="stable")]
        ep = ids[~emit]
        ep = ep[np.argsort(self.src[ep], kind="stable")]
        self.em_arc = np.ascontiguousarray(em)
        self.em_offsets = _csr(self.src, em, S)
        self.em_dst = np.ascontiguousarray(self.dst[em])
        self.em_ilabel = np.ascontiguousarray(self.ilabel[em])
        self.em_weight = np.ascontiguousarray(self.weight[em])
        self.ep_arc = np.ascontiguousarray(ep)
        self.ep_offsets = _csr(self.src, ep, S)
        self.ep_dst = np.ascontiguousarray(self.dst[ep])
        self.ep_weight = np.ascontiguousarray(self.weight[ep])
        self.ep_topo = np.array(self.epsilon_topo_order(), dtype=np.int64)
        self.model_ids = np.unique(self.ilabel[emit])
        self.n_model_slots = int(self.model_ids.max()) + 1 if self.model_ids.size else 1
        self._bank = None

    @property
    def n_arcs(self):
        return self.src.size

    def arcs(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.ilabel.tolist(),
                        self.olabel.tolist(), self.weight.tolist()))

    @property
    def bank(self):
        """Acoustic models packed in model-id order, plus the id -> bank row map."""
        if self._bank is None:
            if self.models is None:
                raise NetworkError("network has no model table")
            ids = sorted(self.models)
            row = np.full(max(ids, default=0) + 1, -1, dtype=np.int64)
            row[ids] = np.arange(len(ids))
            self._bank = (ModelBank([self.models[i] for i in ids]), row)
        return self._bank

    @property
    def feature_dim(self):
        bank, _ = self.bank
        return bank.dim

    def __eq__(self, other):
        if not isinstance(other, RecognitionNetwork):
            return NotImplemented
        return (
            self.state_count == other.state_count
            and self.start == other.start
            and self.arcs() == other.arcs()
            and self.finals == other.finals
            and self.words == other.words
        )

    __hash__ = None


def format_network(network):
    """Text form: ``# states N`` header, arc lines, then final lines."""
    lines = [f"# states {network.state_count}"]
    if network.start != 0:
        lines.append(f"# start {network.start}")
    for s, d, i, o, w in network.arcs():
        lines.append(f"{s}\t{d}\t{i}\t{o}\t{w!r}")
    for s in sorted(network.finals):
        lines.append(f"{s}\t{network.finals[s]!r}")
    return "\n".join(lines) + "\n"


def load_network(text, words=None, models=None, state_count=None):
    """Parse the arc/final text format.

    Arc lines: ``src dst ilabel olabel weight``; final lines: ``state [weight]``.
    ``# states N`` fixes the state count (otherwise max id + 1); ``# start S``
    moves the start state from 0.
    """
    arcs, finals = [], {}
    declared, start = state_count, 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "states":
                declared = int(parts[1])
            elif len(parts) == 2 and parts[0] == "start":
                start = int(parts[1])
            continue
        parts = line.split()
        try:
            if len(parts) == 5:
                arcs.append((int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])))
            elif len(parts) in (1, 2):
                finals[int(parts[0])] = float(parts[1]) if len(parts) == 2 else 0.0
            else:
                raise ValueError(f"{len(parts)} fields")
        except ValueError as exc:
            raise NetworkError(f"line {lineno}: cannot parse {raw!r} ({exc})") from None
    if declared is None:
        ids = [start] + [a[0] for a in arcs] + [a[1] for a in arcs] + list(finals)
        declared = max(ids) + 1
    return RecognitionNetwork(declared, arcs, finals, start, words, models)


def read_symbol_table(text):
    table = {}
    for line in text.splitlines():
        parts = line.split()
        if len(parts) >= 2:
            table[int(parts[0])] = parts[1]
    return table


def load_network_files(network_path, words_path=None, models_path=None):
    """Network file plus optional sidecars: ``id word`` lines and ``id model-file`` lines."""
    with open(network_path) as f:
        text = f.read()
    words = models = None
    if words_path:
        with open(words_path) as f:
            words = read_symbol_table(f.read())
    if models_path:
        with open(models_path) as f:
            table = read_symbol_table(f.read())
        base = os.path.dirname(os.path.abspath(models_path))
        models = {k: load_gmm(v if os.path.isabs(v) else os.path.join(base, v)) for k, v in table.items()}
    return load_network(text, words, models)


def save_network_files(network, network_path, words_path=None, models_path=None):
    with open(network_path, "w") as f:
        f.write(format_network(network))
    if words_path:
        with open(words_path, "w") as f:
            f.writelines(f"{k}\t{v}\n" for k, v in sorted(network.words.items()))
    if models_path and network.models is not None:
        base = os.path.dirname(os.path.abspath(models_path))
        stem = os.path.splitext(os.path.basename(models_path))[0]
        with open(models_path, "w") as f:
            for k, model in sorted(network.models.items()):
                name = f"{stem}.{k}.gmm"
                save_gmm(model, os.path.join(base, name))
                f.write(f"{k}\t{name}\n")


class TraversalBuffers:
    """Per-frame work lists and the shared best-cost table.

    ``best_cost``/``best_arc`` are scratch tables reset after every frame;
    ``backpointers[f]`` holds ``(states, arcs)`` for every state touched after
    ``f`` frames, sorted by state.
    """

    def __init__(self, network):
        S = network.state_count
        self.active_states = np.zeros(0, dtype=np.int64)
        self.active_costs = np.zeros(0)
        self.model_ids = np.zeros(0, dtype=np.int64)
        self.best_cost = np.full(S, np.inf)
        self.best_arc = np.full(S, NO_ARC, dtype=np.int64)
        self.touched_flag = np.zeros(S, dtype=np.int8)
        self.touched = np.zeros(S, dtype=np.int64)
        self.n_touched = 0
        self.backpointers = []

    def seed(self, state, cost=0.0):
        self.best_cost[state] = cost
        self.best_arc[state] = -1
        self.touched_flag[state] = 1
        self.touched[0] = state
        self.n_touched = 1

    def settle(self):
        """Sorted touched states with their costs and arcs; clears the scratch tables."""
        idx = np.sort(self.touched[: self.n_touched])
        costs = self.best_cost[idx].copy()
        arcs = self.best_arc[idx].copy()
        self.best_cost[idx] = np.inf
        self.best_arc[idx] = NO_ARC
        self.touched_flag[idx] = 0
        self.n_touched = 0
        return idx, costs, arcs


def gather_active_models(buffers, network):
    """Sorted, duplicate-free model ids on emitting arcs leaving active states."""
    states = buffers.active_states
    if states.size == 0:
        buffers.model_ids = np.zeros(0, dtype=np.int64)
        return buffers.model_ids
    starts = network.em_offsets[states]
    counts = network.em_offsets[states + 1] - starts
    if counts.sum() == 0:
        buffers.model_ids = np.zeros(0, dtype=np.int64)
        return buffers.model_ids
    mask = np.zeros(network.em_ilabel.size + 1, dtype=np.int64)
    np.add.at(mask, starts, 1)
    np.add.at(mask, starts + counts, -1)
    covered = np.cumsum(mask[:-1]) > 0
    buffers.model_ids = np.unique(network.em_ilabel[covered])
    return buffers.model_ids


def observation_phase(network, model_ids, x, scale, workers=1):
    """Dense table over model-id slots: ``-scale * log p(x | model)`` for gathered ids, NaN elsewhere."""
    table = np.full(network.n_model_slots, np.nan)
    model_ids = np.asarray(model_ids, dtype=np.int64)
    if model_ids.size == 0:
        return table
    bank, row = network.bank
    if model_ids.max() >= row.size or np.any(row[model_ids] < 0):
        raise DecodeError("observation requested for a model id missing from the model table")
    ll = bank.log_likelihood(row[model_ids], x, workers)
    table[model_ids] = -scale * ll
    return table


def _prune(states, costs, config):
    keep = np.isfinite(costs)
    if keep.any() and math.isfinite(config.beam_width):
        keep &= costs <= costs[keep].min() + config.beam_width
    states, costs = states[keep], costs[keep]
    if config.max_active is not None and states.size > config.max_active:
        order = np.lexsort((states, costs))[: config.max_active]
        order.sort()
        states, costs = states[order], costs[order]
    return states, costs


def epsilon_phase(buffers, network):
    buffers.n_touched = kernels.epsilon_closure(
        network.ep_topo, network.ep_offsets, network.ep_dst, network.ep_weight, network.ep_arc,
        buffers.best_cost, buffers.best_arc, buffers.touched_flag, buffers.touched, buffers.n_touched,
    )


def traversal_phase(buffers, network, obs_table, config, workers=1):
    """Advance the active tokens by one frame; returns the surviving ``(states, costs)``."""
    buffers.n_touched = kernels.traverse_emitting(
        buffers.active_states, buffers.active_costs,
        network.em_offsets, network.em_dst, network.em_ilabel, network.em_weight, network.em_arc,
        obs_table, buffers.best_cost, buffers.best_arc, buffers.touched_flag, buffers.touched,
        workers,
    )
    epsilon_phase(buffers, network)
    states, costs, arcs = buffers.settle()
    buffers.backpointers.append((states, arcs))
    buffers.active_states, buffers.active_costs = _prune(states, costs, config)
    return buffers.active_states, buffers.active_costs


@dataclass
class DecodeResult:
    words: list = field(default_factory=list)      # (word, start_frame, end_frame)
    word_ids: list = field(default_factory=list)
    cost: float = math.inf
    active_counts: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    n_frames: int = 0
    frame_period: float = 0.01
    ok: bool = True
    failed_frame: int | None = None
    final_state: int | None = None
    backpointers: list = field(default_factory=list, repr=False)

    @property
    def word_sequence(self):
        return [w for w, _, _ in self.words]

    @property
    def real_time_factor(self):
        audio = self.n_frames * self.frame_period
        return self.timings.get("total", 0.0) / audio if audio > 0 else 0.0

    def same_output(self, other):
        """Equality of everything except timings."""
        if (self.words, self.word_ids, self.ok, self.failed_frame, self.final_state, self.active_counts) != (
            other.words, other.word_ids, other.ok, other.failed_frame, other.final_state, other.active_counts
        ):
            return False
        if not (self.cost == other.cost or (math.isnan(self.cost) and math.isnan(other.cost))):
            return False
        if len(self.backpointers) != len(other.backpointers):
            return False
        return all(
            np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
            for a, b in zip(self.backpointers, other.backpointers)
        )


def _lookup(backpointers, frame, state):
    states, arcs = backpointers[frame]
    i = int(np.searchsorted(states, state))
    if i >= states.size or states[i] != state:
        raise DecodeError(f"no backpointer for state {state} at frame {frame}")
    return int(arcs[i])


def backtrack(network, backpointers, frame, state):
    """Arc ids of the best path ending at ``state`` after ``frame`` frames, in path order,
    each with the index of the frame it consumed (or the frame count so far for epsilon arcs)."""
    path = []
    while True:
        a = _lookup(backpointers, frame, state)
        if a == -1:
            if frame != 0 or state != network.start:
                raise DecodeError("backtrace ended away from the start state")
            break
        if network.ilabel[a] > 0:
            frame -= 1
        path.append((a, frame))
        state = int(network.src[a])
    path.reverse()
    return path


def _words(network, path, n_frames):
    emitted = [(int(network.olabel[a]), f) for a, f in path if network.olabel[a] > 0]
    out = []
    for i, (wid, start) in enumerate(emitted):
        end = emitted[i + 1][1] if i + 1 < len(emitted) else n_frames
        out.append((network.words.get(wid, str(wid)), start, end))
    return [w for w, _ in emitted], out


def decode(network, features, config=None, workers=1):
    """Frame-synchronous Viterbi beam search over ``features``."""
    config = config or DecodeConfig()
    X = np.ascontiguousarray(getattr(features, "data", features), dtype=np.float64)
    frame_period = getattr(features, "frame_period", 0.01)
    if X.ndim != 2:
        raise DimensionError("features must be a 2-D array")
    T = X.shape[0]
    if T and network.model_ids.size and X.shape[1] != network.feature_dim:
        raise DimensionError(f"feature dim {X.shape[1]} does not match model dim {network.feature_dim}")
    result = DecodeResult(n_frames=T, frame_period=frame_period)
    timings = {"gather": 0.0, "observation": 0.0, "traversal": 0.0, "backtrack": 0.0}
    t_start = time.perf_counter()

    buffers = TraversalBuffers(network)
    buffers.seed(network.start)
    epsilon_phase(buffers, network)
    states, costs, arcs = buffers.settle()
    buffers.backpointers.append((states, arcs))
    buffers.active_states, buffers.active_costs = _prune(states, costs, config)
    result.active_counts.append(int(buffers.active_states.size))

    for t in range(T):
        t0 = time.perf_counter()
        ids = gather_active_models(buffers, network)
        t1 = time.perf_counter()
        table = observation_phase(network, ids, X[t], config.acoustic_scale, workers)
        t2 = time.perf_counter()
        traversal_phase(buffers, network, table, config, workers)
        t3 = time.perf_counter()
        timings["gather"] += t1 - t0
        timings["observation"] += t2 - t1
        timings["traversal"] += t3 - t2
        result.active_counts.append(int(buffers.active_states.size))
        if buffers.active_states.size == 0:
            result.ok = False
            result.failed_frame = t
            break

    result.backpointers = buffers.backpointers
    if result.ok:
        t0 = time.perf_counter()
        best_state, best_cost = None, math.inf
        for s, c in zip(buffers.active_states.tolist(), buffers.active_costs.tolist()):
            if s in network.finals:
                total = c + network.finals[s]
                if total < best_cost:
                    best_state, best_cost = s, total
        if best_state is None:
            result.ok = False
            result.failed_frame = T
        else:
            path = backtrack(network, buffers.backpointers, T, best_state)
            result.word_ids, result.words = _words(network, path, T)
            result.cost = best_cost
            result.final_state = best_state
        timings["backtrack"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    result.timings = timings
    return result


def benchmark_decode(network, features, config=None, worker_counts=(1, 2, 4, 8), repeats=1):
    """Per-phase wall clock for each worker count; raises if outputs differ.

    Worker count 1 is always run first and is the speedup denominator.
    """
    counts = [1] + [w for w in dict.fromkeys(worker_counts) if w != 1]
    audio = features.n_frames * features.frame_period
    rows, reference = [], None
    for w in counts:
        best = None
        for _ in range(repeats):
            res = decode(network, features, config, workers=w)
            if best is None or res.timings["total"] < best.timings["total"]:
                best = res
        if reference is None:
            reference = best
        elif not best.same_output(reference):
            raise BenchmarkDivergence(f"decode output with {w} workers differs from 1 worker")
        rows.append({
            "workers": w,
            "observation_s": best.timings["observation"],
            "traversal_s": best.timings["traversal"],
            "gather_s": best.timings["gather"],
            "total_s": best.timings["total"],
            "rtf": best.timings["total"] / audio if audio > 0 else 0.0,
        })
    base = rows[0]
    for r in rows:
        r["speedup"] = base["total_s"] / r["total_s"] if r["total_s"] > 0 else math.inf
        r["observation_speedup"] = base["observation_s"] / r["observation_s"] if r["observation_s"] > 0 else math.inf
    return {
        "backend": kernels.BACKEND,
        "frames": features.n_frames,
        "audio_s": audio,
        "words": " ".join(reference.word_sequence),
        "cost": reference.cost,
        "outputs_identical": True,
        "rows": rows,
    }
