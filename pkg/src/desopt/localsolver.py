"""The local (1+1)-ES: diminishing step-size schedule, tie-accepting greedy
selection, and the fixed-minibatch solver each worker runs per round.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mutation import MutationModel, draw_terms


class NonFiniteObjectiveError(RuntimeError):
    """The objective returned NaN; comparison-based acceptance cannot proceed."""


@dataclass(frozen=True)
class LocalConfig:
    """Per-round worker configuration: iteration count, mutation model, and
    the round's initial step-size (already annealed by the server)."""

    iters: int
    model: MutationModel
    step0: float

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if not self.step0 > 0:
            raise ValueError(f"step0 must be positive, got {self.step0}")


@dataclass(frozen=True)
class WorkerResult:
    v_final: np.ndarray
    f_final: float
    evals_used: int
    accepted_count: int


def step_size(alpha: float, t: int, k: int) -> float:
    """Annealed step-size: alpha * (t+1)^(-1/4) * (k+1)^(-1/2).

    t is the round index, k the local iteration index, both 0-based. The
    round factor is applied first so the local solver can be handed the
    per-round base step and apply only the (k+1)^(-1/2) factor, reproducing
    this product exactly.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if t < 0 or k < 0:
        raise ValueError("round and iteration indices must be nonnegative")
    return alpha * (t + 1) ** -0.25 * (k + 1) ** -0.5


def accept(f_parent: float, f_candidate: float) -> bool:
    """Greedy selection: keep the candidate iff f_candidate <= f_parent.

    Ties accept (the zero case counts as an improvement). NaN on either side
    means the objective is poisoned and raises rather than silently ranking.
    """
    if math.isnan(f_parent) or math.isnan(f_candidate):
        raise NonFiniteObjectiveError(
            f"objective returned NaN (parent={f_parent!r}, candidate={f_candidate!r})"
        )
    return f_candidate <= f_parent


def run_local_es(
    x_start: np.ndarray,
    cfg: LocalConfig,
    value_fn: Callable[[np.ndarray], float],
    stream,
    f_start: float | None = None,
    evals_per_call: int = 1,
    trace: Callable[[int, float, np.ndarray, float], None] | None = None,
) -> WorkerResult:
    """Run cfg.iters iterations of the (1+1)-ES from x_start on a fixed objective.

    Each iteration draws a mutation u from cfg.model, evaluates the candidate
    v + step_k * u with step_k = step0 / sqrt(k+1), and accepts on ties or
    improvement. The parent value is carried forward, so the loop costs one
    value_fn call per iteration; pass f_start to supply the initial parent
    value from an uncounted path. evals_per_call sizes the evaluation ledger
    (b for minibatch objectives). trace, if given, receives
    (k, step_k, v_copy, f_v) after every iteration.
    """
    v = np.array(x_start, dtype=np.float64, copy=True)
    f_v = value_fn(v) if f_start is None else float(f_start)
    if math.isnan(f_v):
        raise NonFiniteObjectiveError(f"objective returned NaN at the start point ({f_v!r})")
    gen = stream.gen
    model = cfg.model
    accepted = 0

    for k in range(cfg.iters):
        step = cfg.step0 * (k + 1) ** -0.5
        if model.is_mixture:
            # Sparse candidate: perturb in place, restore the touched slots on
            # rejection. Duplicate indices accumulate, so restore via uniques.
            idx, vals = draw_terms(model, gen)
            uniq = np.unique(idx)
            saved = v[uniq].copy()
            np.add.at(v, idx, step * vals)
            f_cand = value_fn(v)
            if accept(f_v, f_cand):
                f_v = f_cand
                accepted += 1
            else:
                v[uniq] = saved
        else:
            u = gen.standard_normal(model.n)
            candidate = v + step * u
            f_cand = value_fn(candidate)
            if accept(f_v, f_cand):
                v = candidate
                f_v = f_cand
                accepted += 1
        if trace is not None:
            trace(k, step, v.copy(), f_v)

    return WorkerResult(
        v_final=v,
        f_final=f_v,
        evals_used=cfg.iters * evals_per_call,
        accepted_count=accepted,
    )
