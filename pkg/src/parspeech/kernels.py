"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy twins
are used. Set ``PARSPEECH_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

_forced = os.environ.get("PARSPEECH_BACKEND", "").strip().lower()

_compiled = None
if _forced != "python":
    try:
        from . import _core as _compiled
    except ImportError:
        if _forced == "compiled":
            raise
        _compiled = None

_impl = _compiled if _compiled is not None else _fallback

BACKEND = _impl.BACKEND

gmm_batch_loglik = _impl.gmm_batch_loglik
component_logpdf = _impl.component_logpdf
traverse_emitting = _impl.traverse_emitting
epsilon_closure = _impl.epsilon_closure
min_duration_viterbi = _impl.min_duration_viterbi


def available_backends():
    """Backend modules importable in this environment, keyed by name."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
