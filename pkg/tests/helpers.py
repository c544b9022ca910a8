"""Shared test utilities: dense-backed datasets, scripted RNG stand-ins, and
stub objectives for exercising solver plumbing without real data."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from desopt import Dataset


def dataset_from_dense(features: np.ndarray, labels) -> Dataset:
    return Dataset(sp.csr_matrix(np.asarray(features, dtype=float)), np.asarray(labels, dtype=float))


class ScriptedGen:
    """Replays queued arrays for standard_normal/integers calls."""

    def __init__(self, normals=(), ints=()):
        self.normals = [np.asarray(a, dtype=float) for a in normals]
        self.ints = [np.asarray(a, dtype=np.int64) for a in ints]

    def standard_normal(self, size=None):
        out = self.normals.pop(0)
        if size is not None and out.shape != (np.prod(np.atleast_1d(size)),) and out.shape != tuple(np.atleast_1d(size)):
            raise AssertionError(f"scripted normal shape {out.shape} vs requested {size}")
        return out

    def integers(self, low, high=None, size=None):
        return self.ints.pop(0)


class ScriptedStream:
    def __init__(self, gen: ScriptedGen):
        self.gen = gen


class StubView:
    """Batch view yielding a fixed parent value and a fixed candidate value."""

    def __init__(self, parent_value: float, candidate_value: float):
        self.parent_value = parent_value
        self.candidate_value = candidate_value

    def peek_value(self, x):
        return self.parent_value

    def value(self, x):
        return self.candidate_value


class StubObjective:
    def __init__(self, view: StubView):
        self.view = view

    def batch(self, rows):
        return self.view
