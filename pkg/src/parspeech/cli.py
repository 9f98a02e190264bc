"""``parspeech`` command line: features, stream combination, decoding, diarization, benchmarks."""
import argparse
import logging
import os
import sys

import numpy as np

from . import bench
from .acoustic import EmConfig
from .combination import combine_streams
from .config import WORKERS_ENV, load_tool_config
from .decoder import DecodeConfig, decode, load_network_files, save_network_files
from .diarization import (
    DiarizationConfig,
    OnlineConfig,
    decisions_to_segmentation,
    diarize_offline,
    diarize_online,
    latency_string,
    train_online_models,
)
from .errors import DecodeError, EmptyInputError, ParspeechError
from .formats import format_ctm, format_rttm, read_feat, read_wav, write_feat
from .frontend import (
    FeatureMatrix,
    StreamBankSpec,
    append_deltas,
    build_stream_set,
    compute_logmel,
    compute_mfcc,
    log_frame_energy,
)
from .synth import SyntheticCorpusSpec, generate_synthetic_corpus, sample_utterance, word_loop_network

log = logging.getLogger("parspeech")


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def _file_id(path):
    return os.path.splitext(os.path.basename(path))[0]


def _load_features(path, frame_period, kind="raw"):
    """FEAT files load as-is; WAV files become 13 MFCCs with c0 replaced by log frame energy."""
    if path.lower().endswith(".wav"):
        audio = read_wav(path)
        mfcc = compute_mfcc(audio, hop=frame_period)
        data = mfcc.data.copy()
        data[:, 0] = log_frame_energy(audio, hop=frame_period)
        return FeatureMatrix(data, frame_period, "mfcc")
    return read_feat(path, frame_period, kind)


def _parse_weights(text):
    if text in ("uniform", "entropy"):
        return text
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"weights must be uniform, entropy or a comma list, got {text!r}")


def _parse_workers(text):
    return [int(x) for x in text.split(",")]


def cmd_extract_features(args, tool):
    audio = read_wav(args.input)
    if audio.sample_rate != tool.sample_rate:
        log.warning("input rate %d differs from configured %d", audio.sample_rate, tool.sample_rate)
    if args.kind == "mfcc":
        feats = append_deltas(compute_mfcc(audio, hop=tool.frame_period, n_coeffs=args.n_coeffs), args.deltas)
        write_feat(feats, args.output)
    elif args.kind == "logmel":
        write_feat(compute_logmel(audio, hop=tool.frame_period), args.output)
    else:
        streams = build_stream_set(compute_logmel(audio, hop=tool.frame_period), StreamBankSpec(), tool.workers)
        stem, ext = os.path.splitext(args.output)
        for i, s in enumerate(streams):
            write_feat(s, f"{stem}.{i:02d}{ext or '.feat'}")
        log.info("wrote %d streams", len(streams))
    return 0


def cmd_combine_streams(args, tool):
    kind = "raw" if args.rule == "append" else "posterior"
    streams = [read_feat(p, tool.frame_period, kind) for p in args.inputs]
    write_feat(combine_streams(streams, args.rule, args.weights), args.output)
    return 0


def cmd_decode(args, tool):
    network = load_network_files(args.network, args.words, args.models)
    features = read_feat(args.features, tool.frame_period)
    config = DecodeConfig(args.beam, args.acoustic_scale, args.max_active)
    result = decode(network, features, config, tool.workers)
    if not result.ok:
        raise DecodeError(f"no path reached a final state (stopped at frame {result.failed_frame})")
    utt = args.utterance or _file_id(args.features)
    _emit(format_ctm(utt, result.words, tool.frame_period), args.out)
    return 0


def _diar_config(args):
    return DiarizationConfig(k=args.k, g=args.g, min_duration=args.min_dur, em=EmConfig(seed=args.seed))


def cmd_diarize(args, tool):
    features = _load_features(args.input, tool.frame_period)
    result = diarize_offline(features, _diar_config(args), workers=tool.workers)
    log.info("%d clusters, RTF %.3f", result.n_clusters, result.real_time_factor)
    _emit(format_rttm(_file_id(args.input), result.segmentation.segments, tool.frame_period), args.out)
    return 0


def cmd_diarize_online(args, tool):
    features = _load_features(args.input, tool.frame_period)
    online = OnlineConfig(args.train_dur, args.chunk_dur, args.vote_window, args.seed)
    n_train = min(features.n_frames, int(round(args.train_dur / tool.frame_period)))
    if n_train >= features.n_frames:
        raise EmptyInputError(
            f"input is {features.duration:.1f} s; nothing left to stream after {args.train_dur:g} s of training")
    offline = diarize_offline(features.slice(0, n_train), _diar_config(args), workers=tool.workers)
    models = train_online_models(features.slice(0, n_train), offline, online, args.g, EmConfig(seed=args.seed))
    stream = features.slice(n_train, features.n_frames)
    decisions = list(diarize_online(stream, models, online, tool.frame_period))
    lat = latency_string(online, tool.frame_period)
    lines = [f"# trained on {n_train} frames; decision latency {lat}"]
    for d in decisions:
        lines.append(f"decision {d.index} frame {n_train + d.frame} time {(n_train + d.frame) * tool.frame_period:.2f} "
                     f"label {d.label} latency {lat}")
    _emit("\n".join(lines) + "\n", args.out)
    if args.rttm:
        skip = {models.nonspeech_id} if models.nonspeech_id is not None else None
        seg = decisions_to_segmentation(decisions, stream.n_frames, args.vote_window, tool.frame_period, skip)
        shifted = [(a + n_train, b + n_train, c) for a, b, c in seg.segments]
        _emit(format_rttm(_file_id(args.input), shifted, tool.frame_period), args.rttm)
    return 0


def cmd_synth_corpus(args, tool):
    os.makedirs(args.out_dir, exist_ok=True)
    if args.task == "decode":
        net = word_loop_network(args.words, seed=args.seed)
        feats, words = sample_utterance(net, args.frames, args.seed, frame_period=tool.frame_period)
        save_network_files(net, os.path.join(args.out_dir, "network.txt"),
                           os.path.join(args.out_dir, "words.txt"), os.path.join(args.out_dir, "models.txt"))
        write_feat(feats, os.path.join(args.out_dir, "utterance.feat"))
        with open(os.path.join(args.out_dir, "reference.txt"), "w") as f:
            f.write(" ".join(net.words[w] for w in words) + "\n")
        return 0
    spec = SyntheticCorpusSpec(n_speakers=args.speakers, duration=args.duration, separation=args.separation,
                               silence_prob=args.silence_prob, frame_period=tool.frame_period, seed=args.seed)
    corpus = generate_synthetic_corpus(spec)
    write_feat(corpus.features, os.path.join(args.out_dir, "corpus.feat"))
    with open(os.path.join(args.out_dir, "reference.rttm"), "w") as f:
        f.write(format_rttm("corpus", corpus.reference.segments, tool.frame_period))
    return 0


def cmd_benchmark(args, tool):
    if args.task == "decode":
        net = word_loop_network(seed=tool.seed)
        feats, _ = sample_utterance(net, args.frames, tool.seed, frame_period=tool.frame_period)
        inputs = {"network": net, "features": feats, "repeats": args.repeats,
                  "config": DecodeConfig(args.beam, args.acoustic_scale)}
    else:
        corpus = generate_synthetic_corpus(SyntheticCorpusSpec(duration=args.duration, seed=tool.seed,
                                                                frame_period=tool.frame_period))
        inputs = {"features": corpus.features, "reference": corpus.reference,
                  "config": DiarizationConfig(k=args.k, g=args.g, em=EmConfig(seed=tool.seed))}
    report = bench.run_benchmark(args.task, inputs, args.worker_counts or [tool.workers], tool)
    _emit(bench.format_report(report), args.out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="parspeech", description=__doc__)
    p.add_argument("--config", help="key=value file with sample_rate, frame_period, workers, seed")
    p.add_argument("--workers", type=int, help=f"worker threads (default: ${WORKERS_ENV} or 1)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frame-period", type=float, default=None)
    p.add_argument("--sample-rate", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    # accepted after the subcommand too; SUPPRESS keeps the global value when absent
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **kw: _add(*a, parents=[common], **kw)

    s = sub.add_parser("extract-features", help="WAV to FEAT")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--kind", choices=("mfcc", "logmel", "gabor"), default="mfcc")
    s.add_argument("--n-coeffs", type=int, default=13)
    s.add_argument("--deltas", type=int, choices=(0, 1, 2), default=2)
    s.set_defaults(func=cmd_extract_features)

    s = sub.add_parser("combine-streams", help="merge per-stream posteriors or features")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--rule", choices=("append", "product", "sum"), default="product")
    s.add_argument("--weights", type=_parse_weights, default="uniform")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_combine_streams)

    s = sub.add_parser("decode", help="Viterbi beam search over a recognition network")
    s.add_argument("--network", required=True)
    s.add_argument("--words")
    s.add_argument("--models", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--beam", type=float, default=DecodeConfig.beam_width)
    s.add_argument("--acoustic-scale", type=float, default=DecodeConfig.acoustic_scale)
    s.add_argument("--max-active", type=int, default=None)
    s.add_argument("--utterance")
    s.add_argument("--output", choices=("ctm",), default="ctm")
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_decode)

    def diar_flags(s):
        s.add_argument("--input", required=True, help="WAV or FEAT file")
        s.add_argument("--k", type=int, default=DiarizationConfig.k)
        s.add_argument("--g", type=int, default=DiarizationConfig.g)
        s.add_argument("--min-dur", type=float, default=DiarizationConfig.min_duration)
        s.add_argument("--out", help="output file (default stdout)")

    s = sub.add_parser("diarize", help="offline speaker diarization")
    diar_flags(s)
    s.add_argument("--output", choices=("rttm",), default="rttm")
    s.set_defaults(func=cmd_diarize)

    s = sub.add_parser("diarize-online", help="train on a prefix, then label the rest window by window")
    diar_flags(s)
    s.add_argument("--train-dur", type=float, default=OnlineConfig.train_duration)
    s.add_argument("--chunk-dur", type=float, default=OnlineConfig.chunk_duration)
    s.add_argument("--vote-window", type=int, default=OnlineConfig.vote_window)
    s.add_argument("--rttm", help="also write the decisions as RTTM")
    s.set_defaults(func=cmd_diarize_online)

    s = sub.add_parser("synth-corpus", help="write a synthetic corpus with ground truth")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--task", choices=("diarize", "decode"), default="diarize")
    s.add_argument("--speakers", type=int, default=3)
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--separation", type=float, default=5.0)
    s.add_argument("--silence-prob", type=float, default=0.0)
    s.add_argument("--words", type=int, default=50)
    s.add_argument("--frames", type=int, default=1000)
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("benchmark", help="timings per worker count on synthetic inputs")
    s.add_argument("--task", choices=("decode", "diarize"), required=True)
    s.add_argument("--worker-counts", dest="worker_counts", type=_parse_workers, default=None,
                   help="comma list, e.g. 1,2,4,8")
    s.add_argument("--frames", type=int, default=1000)
    s.add_argument("--duration", type=float, default=600.0)
    s.add_argument("--beam", type=float, default=DecodeConfig.beam_width)
    s.add_argument("--acoustic-scale", type=float, default=DecodeConfig.acoustic_scale)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--g", type=int, default=DiarizationConfig.g)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        tool = load_tool_config(args.config, workers=args.workers, seed=args.seed,
                                frame_period=args.frame_period, sample_rate=args.sample_rate)
        if args.seed is None:
            args.seed = tool.seed
        return args.func(args, tool)
    except (ParspeechError, ValueError, OSError) as exc:
        print(f"parspeech: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
