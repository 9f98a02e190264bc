import numpy as np
import pytest

from parspeech.errors import FormatError
from parspeech.formats import format_ctm, format_rttm, parse_rttm, read_feat, read_wav, write_feat, write_wav
from parspeech.frontend import AudioBuffer, FeatureMatrix


def test_feat_roundtrip(tmp_path, rng):
    data = rng.normal(size=(17, 5)).astype(np.float32).astype(float)
    write_feat(FeatureMatrix(data), tmp_path / "a.feat")
    blob = (tmp_path / "a.feat").read_bytes()
    assert blob[:4] == b"FEAT" and len(blob) == 12 + 4 * 17 * 5
    assert np.array_equal(read_feat(tmp_path / "a.feat").data, data)


def test_feat_posterior_renormalized(tmp_path, rng):
    p = rng.dirichlet(np.ones(40), size=30)
    write_feat(FeatureMatrix(p, kind="posterior"), tmp_path / "p.feat")
    back = read_feat(tmp_path / "p.feat", kind="posterior")
    assert np.all(np.abs(back.data.sum(axis=1) - 1) <= 1e-9)


def test_feat_truncated(tmp_path):
    (tmp_path / "bad.feat").write_bytes(b"FEAT" + (3).to_bytes(4, "little") + (2).to_bytes(4, "little"))
    with pytest.raises(FormatError):
        read_feat(tmp_path / "bad.feat")


def test_wav_roundtrip(tmp_path, rng):
    audio = AudioBuffer(rng.uniform(-0.9, 0.9, 1600), 16000)
    write_wav(audio, tmp_path / "a.wav")
    back = read_wav(tmp_path / "a.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - audio.samples)) <= 1 / 32768


def test_ctm_lines():
    assert format_ctm("utt1", [("one", 0, 35), ("two", 35, 80)]) == \
        "utt1 1 0.00 0.35 one\nutt1 1 0.35 0.45 two\n"


def test_rttm_roundtrip():
    text = format_rttm("rec", [(0, 250, 0), (250, 600, 2)])
    assert text.splitlines()[0] == "SPEAKER rec 1 0.00 2.50 <NA> <NA> spk0 <NA> <NA>"
    assert parse_rttm(text) == [(0, 250, "spk0"), (250, 600, "spk2")]
