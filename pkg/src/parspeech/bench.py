"""Benchmark harness: per-worker-count timings, equality checks and ``key=value`` reports.

Timing fields carry the ``time.`` prefix so that determinism diffs can drop
them with ``grep -v '^time\\.'``.
"""
import os
import platform
import time

import numpy as np

from . import kernels
from .decoder import DecodeConfig, benchmark_decode
from .diarization import DiarizationConfig, diarization_error_rate, diarize_offline
from .errors import BenchmarkDivergence

TIMING_PREFIX = "time."
# offline diarization reference figure: 10 min of audio in about 6 min
REFERENCE_RTF = 0.6


def real_time_factor(processing_s, audio_s):
    """Processing time over audio time; below 1 is faster than real time."""
    if audio_s <= 0:
        raise ValueError("audio duration must be positive")
    return processing_s / audio_s


def machine_info():
    return {
        "machine.platform": platform.platform(),
        "machine.processor": platform.processor() or platform.machine(),
        "machine.cpu_count": os.cpu_count(),
        "machine.python": platform.python_version(),
        "machine.numpy": np.__version__,
        "machine.backend": kernels.BACKEND,
    }


def _worker_list(worker_counts):
    counts = [int(w) for w in worker_counts]
    if not counts or min(counts) < 1:
        raise ValueError("worker counts must be positive")
    return [1] + [w for w in dict.fromkeys(counts) if w != 1]


def _bench_decode(inputs, counts):
    network, features = inputs["network"], inputs["features"]
    config = inputs.get("config") or DecodeConfig()
    raw = benchmark_decode(network, features, config, counts, inputs.get("repeats", 1))
    report = {
        "task": "decode",
        "config.beam_width": config.beam_width,
        "config.acoustic_scale": config.acoustic_scale,
        "config.max_active": config.max_active,
        "frames": raw["frames"],
        "audio_s": raw["audio_s"],
        "result.words": raw["words"],
        "result.cost": repr(raw["cost"]),
        "outputs_identical": raw["outputs_identical"],
    }
    for r in raw["rows"]:
        w = r["workers"]
        for key in ("observation_s", "traversal_s", "gather_s", "total_s", "rtf", "speedup", "observation_speedup"):
            report[f"{TIMING_PREFIX}w{w}.{key}"] = r[key]
    return report


def _bench_diarize(inputs, counts):
    features = inputs["features"]
    config = inputs.get("config") or DiarizationConfig()
    reference = inputs.get("reference")
    audio = features.n_frames * features.frame_period
    results = {}
    for w in counts:
        res = diarize_offline(features, config, inputs.get("speech_mask"), workers=w)
        if results and not res.same_output(results[1]):
            raise BenchmarkDivergence(f"diarization output with {w} workers differs from 1 worker")
        results[w] = res
    base = results[1]
    report = {
        "task": "diarize",
        "config.k": config.k,
        "config.g": config.g,
        "config.min_duration": config.min_duration,
        "frames": features.n_frames,
        "audio_s": audio,
        "result.clusters": base.n_clusters,
        "result.segments": len(base.segmentation),
        "outputs_identical": True,
        "reference_rtf": REFERENCE_RTF,
    }
    if reference is not None:
        report["result.der"] = repr(diarization_error_rate(base.segmentation, reference))
    for w, res in results.items():
        for phase, seconds in res.timings.items():
            report[f"{TIMING_PREFIX}w{w}.{phase}_s"] = seconds
        report[f"{TIMING_PREFIX}w{w}.rtf"] = real_time_factor(res.elapsed, audio)
        report[f"{TIMING_PREFIX}w{w}.speedup"] = base.elapsed / res.elapsed if res.elapsed > 0 else float("inf")
    return report


def run_benchmark(task, inputs, worker_counts=(1, 2, 4, 8), tool_config=None):
    """Run ``task`` ("decode" or "diarize") at each worker count.

    :param inputs: dict with ``features`` plus ``network`` for decode, and
        optionally ``config``, ``reference`` and ``speech_mask``.
    :raises BenchmarkDivergence: if outputs differ between worker counts.
    """
    counts = _worker_list(worker_counts)
    t0 = time.perf_counter()
    if task == "decode":
        report = _bench_decode(inputs, counts)
    elif task == "diarize":
        report = _bench_diarize(inputs, counts)
    else:
        raise ValueError(f"unknown benchmark task {task!r}")
    report["workers"] = ",".join(map(str, counts))
    if tool_config is not None:
        for k, v in tool_config.items():
            report[f"tool.{k}"] = v
    report.update(machine_info())
    report[f"{TIMING_PREFIX}wall_s"] = time.perf_counter() - t0
    return report


def format_report(report):
    lines = []
    for key, value in report.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k] = v
    return out


def strip_timings(report):
    """Drop timing and machine keys, leaving what must match across runs."""
    return {k: v for k, v in report.items()
            if not k.startswith(TIMING_PREFIX) and not k.startswith("machine.")}
