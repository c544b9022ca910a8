"""Synchronous distributed-ES orchestration: broadcast the incumbent, run one
local solver per worker in a fork-join round, average the returned points, and
advance the incumbent through a momentum-damped delayed step.
"""
from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bench import MetricRow, RunRecord
from .dataio import PartitionPlan, partition_uniform
from .localsolver import LocalConfig, run_local_es, step_size
from .mutation import MutationKind, MutationModel, RngStream
from .objective import Dataset, LossKind, RegularizedObjective, classification_error

# Momentum must stay below sqrt(1/(2*sqrt(2))) ~ 0.5946 or the delayed step
# can feed back on itself; larger values are for deliberate failure studies.
BETA_LIMIT = math.sqrt(1.0 / (2.0 * math.sqrt(2.0)))


@dataclass(frozen=True)
class DesConfig:
    workers: int
    rounds: int
    local_iters: int
    batch_size: int
    alpha: float
    model: MutationModel
    seed: int
    beta: float = 0.5
    allow_unsafe_beta: bool = False
    max_evals: int | None = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.rounds < 0:
            raise ValueError(f"rounds must be >= 0, got {self.rounds}")
        if self.local_iters < 1:
            raise ValueError(f"local_iters must be >= 1, got {self.local_iters}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must be in [0,1), got {self.beta}")
        if self.beta >= BETA_LIMIT and not self.allow_unsafe_beta:
            raise ValueError(
                f"beta={self.beta} is at or above the stability limit {BETA_LIMIT:.6f}; "
                "set allow_unsafe_beta=True to run anyway"
            )
        if self.batch_size < math.sqrt(self.rounds):
            warnings.warn(
                f"batch_size={self.batch_size} is below sqrt(rounds)={math.sqrt(self.rounds):.2f}; "
                "minibatch noise may dominate late rounds",
                stacklevel=2,
            )


@dataclass
class ServerState:
    x: np.ndarray
    m: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> "ServerState":
        return cls(x=np.zeros(n), m=np.zeros(n), t=0)


def momentum_update(m: np.ndarray, d: np.ndarray, beta: float) -> np.ndarray:
    """Exponential averaging of the descent step: beta*m + (1-beta)*d."""
    if m.shape != d.shape:
        raise ValueError(f"shape mismatch: m {m.shape} vs d {d.shape}")
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must be in [0,1), got {beta}")
    return beta * m + (1.0 - beta) * d


def average_displacement(x: np.ndarray, v_finals: list[np.ndarray]) -> np.ndarray:
    """Mean worker endpoint minus the broadcast point."""
    return np.mean(np.asarray(v_finals), axis=0) - x


@dataclass(frozen=True)
class RoundMetrics:
    evals: int
    accepted: tuple[int, ...]
    worker_values: tuple[float, ...]


def des_round(
    state: ServerState,
    cfg: DesConfig,
    obj_factory,
    partition: PartitionPlan,
    pool: ThreadPoolExecutor | None = None,
    trace_factory=None,
) -> tuple[ServerState, RoundMetrics]:
    """One synchronous round at t = state.t.

    Each worker draws a size-b minibatch uniformly with replacement from its
    shard, runs the local solver from the broadcast point with the round's
    annealed base step, and returns its endpoint. The server averages the
    endpoints into a displacement and applies the momentum step. Worker
    results are keyed streams collected in index order, so the outcome does
    not depend on scheduling.
    """
    t = state.t
    step0 = step_size(cfg.alpha, t, 0)
    local_cfg = LocalConfig(iters=cfg.local_iters, model=cfg.model, step0=step0)

    def solve(i: int):
        shard = partition.worker_shards[i]
        batch_stream = RngStream(cfg.seed, t, i, "batch")
        rows = shard[batch_stream.gen.integers(0, len(shard), size=cfg.batch_size)]
        view = obj_factory(i).batch(rows)
        return run_local_es(
            state.x,
            local_cfg,
            view.value,
            RngStream(cfg.seed, t, i, "mutation"),
            f_start=view.peek_value(state.x),
            evals_per_call=cfg.batch_size,
            trace=trace_factory(i) if trace_factory is not None else None,
        )

    if pool is None:
        results = [solve(i) for i in range(cfg.workers)]
    else:
        results = list(pool.map(solve, range(cfg.workers)))

    d = average_displacement(state.x, [r.v_final for r in results])
    m_next = momentum_update(state.m, d, cfg.beta)
    new_state = ServerState(x=state.x + m_next, m=m_next, t=t + 1)
    metrics = RoundMetrics(
        evals=sum(r.evals_used for r in results),
        accepted=tuple(r.accepted_count for r in results),
        worker_values=tuple(r.f_final for r in results),
    )
    return new_state, metrics


def _algo_id(model: MutationModel) -> str:
    return {
        MutationKind.STANDARD_GAUSSIAN: "des",
        MutationKind.MIXTURE_GAUSSIAN: "des-mg",
        MutationKind.MIXTURE_RADEMACHER: "des-mr",
    }[model.kind]


def run_des(
    cfg: DesConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float = 1e-6,
    threads: int | None = None,
    timing: bool = False,
    instance: str = "",
) -> RunRecord:
    """Run the full round loop and record one metric row per round.

    Row 0 snapshots the zero starting point before any update. Wall times are
    recorded only when timing=True; otherwise the column is a deterministic 0
    so repeated runs serialize byte-identically.
    """
    obj = RegularizedObjective(loss_kind, train, reg)
    partition = partition_uniform(train, cfg.workers, RngStream(cfg.seed, "partition"))
    state = ServerState.initial(train.n_features)

    record = RunRecord(
        algorithm=_algo_id(cfg.model),
        instance=instance,
        seed=cfg.seed,
        config={
            "workers": cfg.workers, "rounds": cfg.rounds, "local_iters": cfg.local_iters,
            "batch_size": cfg.batch_size, "alpha": cfg.alpha, "beta": cfg.beta,
            "model": cfg.model.kind.value, "mixture_size": cfg.model.l,
            "loss": loss_kind.value, "reg": reg,
        },
    )

    def snapshot(cum_evals: int, wall_ms: float) -> None:
        record.rows.append(MetricRow(
            round=state.t,
            cum_evals=cum_evals,
            train_loss=obj.eval_full(state.x),
            train_err=classification_error(state.x, train),
            test_err=classification_error(state.x, test),
            wall_ms=wall_ms if timing else 0.0,
        ))

    cum = 0
    snapshot(cum, 0.0)
    pool = ThreadPoolExecutor(max_workers=threads) if threads is not None and threads > 1 else None
    try:
        for _ in range(cfg.rounds):
            if cfg.max_evals is not None and cum >= cfg.max_evals:
                break
            start = time.perf_counter()
            state, metrics = des_round(state, cfg, lambda i: obj, partition, pool=pool)
            cum += metrics.evals
            snapshot(cum, (time.perf_counter() - start) * 1e3)
    finally:
        if pool is not None:
            pool.shutdown()
    if obj.eval_counter != cum:
        raise RuntimeError(
            f"evaluation ledger drift: instrumented counter {obj.eval_counter} "
            f"vs recorded total {cum}"
        )
    return record.validate()
