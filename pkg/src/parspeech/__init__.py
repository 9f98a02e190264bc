"""Parallel speech inference toolkit.

Modules: :mod:`frontend` (features), :mod:`combination` (posterior stream
fusion), :mod:`acoustic` (GMMs), :mod:`decoder` (WFST Viterbi search),
:mod:`diarization` (offline and online speaker diarization) and
:mod:`cli`. Hot loops live in :mod:`kernels`, which picks the compiled
extension when present.
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
