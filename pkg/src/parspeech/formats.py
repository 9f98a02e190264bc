"""Binary and text file formats: FEAT features, PCM16 WAV, CTM and RTTM."""
import struct
import wave

import numpy as np

from .errors import FormatError
from .frontend import FRAME_PERIOD, AudioBuffer, FeatureMatrix

FEAT_MAGIC = b"FEAT"


def write_feat(features, path):
    """``FEAT``, u32 n_frames, u32 dim, then row-major little-endian float32."""
    data = np.asarray(getattr(features, "data", features))
    with open(path, "wb") as f:
        f.write(FEAT_MAGIC)
        f.write(struct.pack("<II", data.shape[0], data.shape[1]))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_feat(path, frame_period=FRAME_PERIOD, kind="raw"):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != FEAT_MAGIC:
        raise FormatError(f"{path}: not a FEAT file")
    n, dim = struct.unpack("<II", blob[4:12])
    if len(blob) != 12 + 4 * n * dim:
        raise FormatError(f"{path}: expected {12 + 4 * n * dim} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=12).astype(np.float64).reshape(n, dim)
    if kind == "posterior" and n:
        # float32 storage loses the 1e-9 normalization; restore it
        data = data / data.sum(axis=1, keepdims=True)
    return FeatureMatrix(data, frame_period, kind)


def read_wav(path):
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise FormatError(f"{path}: expected PCM16 mono")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(audio, path):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(audio.sample_rate)
        w.writeframes(pcm.tobytes())


def format_ctm(utterance, words, frame_period=FRAME_PERIOD):
    """Lines ``<utt> 1 <tbeg> <tdur> <word>`` from ``(word, start_frame, end_frame)``."""
    lines = []
    for word, start, end in words:
        lines.append(f"{utterance} 1 {start * frame_period:.2f} {(end - start) * frame_period:.2f} {word}")
    return "\n".join(lines) + ("\n" if lines else "")


def format_rttm(file_id, segments, frame_period=FRAME_PERIOD, name=lambda c: f"spk{c}"):
    """Lines ``SPEAKER <file> 1 <tbeg> <tdur> <NA> <NA> <name> <NA> <NA>``."""
    lines = []
    for start, end, cluster in segments:
        lines.append(
            f"SPEAKER {file_id} 1 {start * frame_period:.2f} {(end - start) * frame_period:.2f} "
            f"<NA> <NA> {name(cluster)} <NA> <NA>"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_rttm(text, frame_period=FRAME_PERIOD):
    """Segments ``(start_frame, end_frame, speaker_name)`` from RTTM text."""
    out = []
    for line in text.splitlines():
        parts = line.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        if len(parts) < 8:
            raise FormatError(f"short RTTM line: {line!r}")
        start = int(round(float(parts[3]) / frame_period))
        dur = int(round(float(parts[4]) / frame_period))
        out.append((start, start + dur, parts[7]))
    return out
