"""Budget-matched comparison algorithms: federated zeroth-order descent with
fixed or fresh minibatches, sign-vote zeroth-order SGD, and a distributed
(mu/mu, lambda)-ES with cumulative step-size adaptation.

All four consume exactly workers * local_iters * batch_size objective
evaluations per round when local_iters is even (the ES population size must
additionally divide the budget evenly; see csa_population_size).
"""
from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .bench import MetricRow, RunRecord
from .dataio import partition_uniform
from .mutation import RngStream
from .objective import Dataset, LossKind, RegularizedObjective, classification_error


@dataclass(frozen=True)
class BaselineConfig:
    """Shared knobs: K' = local_iters // 2 descent steps (two evaluations per
    zeroth-order estimate), alpha doubles as the ES initial step-size."""

    workers: int
    rounds: int
    local_iters: int
    batch_size: int
    alpha: float
    seed: int
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


@dataclass(frozen=True)
class SmoothingConfig:
    """Finite-difference radius and directions per gradient estimate."""

    mu: float = 1e-6
    directions: int = 1

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.directions < 1:
            raise ValueError(f"directions must be >= 1, got {self.directions}")


def zo_grad_central(value_fn, x: np.ndarray, smoothing: SmoothingConfig, stream) -> np.ndarray:
    """Central-difference Gaussian-smoothing gradient estimate.

    Each direction u ~ N(0,I) contributes ((f(x+mu*u) - f(x-mu*u)) / 2mu) * u
    at the cost of two value_fn calls; multiple directions are averaged.
    """
    gen = stream.gen
    x = np.asarray(x, dtype=np.float64)
    total = np.zeros(x.shape[0])
    for _ in range(smoothing.directions):
        u = gen.standard_normal(x.shape[0])
        fp = value_fn(x + smoothing.mu * u)
        fm = value_fn(x - smoothing.mu * u)
        total += ((fp - fm) / (2.0 * smoothing.mu)) * u
    return total / smoothing.directions


def sign_plus(v: np.ndarray) -> np.ndarray:
    """Elementwise sign into {-1,+1}, with 0 mapping to +1."""
    return np.where(np.asarray(v) >= 0.0, 1.0, -1.0)


def _half_iters(cfg: BaselineConfig) -> int:
    k_prime = cfg.local_iters // 2
    if k_prime < 1:
        raise ValueError(f"local_iters={cfg.local_iters} leaves no descent steps (need >= 2)")
    if cfg.local_iters % 2:
        forfeited = (cfg.local_iters - 2 * k_prime) * cfg.batch_size
        warnings.warn(
            f"odd local_iters={cfg.local_iters}: forfeiting {forfeited} "
            "evaluations per worker per round to keep estimates paired",
            stacklevel=3,
        )
    return k_prime


def _run_loop(
    algo: str,
    cfg: BaselineConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float,
    threads: int | None,
    timing: bool,
    instance: str,
    make_round,
    config_extra: dict | None = None,
) -> RunRecord:
    """Shared round loop: snapshot round 0, then advance via make_round's
    round function until the round count or evaluation budget runs out."""
    obj = RegularizedObjective(loss_kind, train, reg)
    partition = partition_uniform(train, cfg.workers, RngStream(cfg.seed, "partition"))
    round_fn = make_round(obj, partition)

    config = {
        "workers": cfg.workers, "rounds": cfg.rounds, "local_iters": cfg.local_iters,
        "batch_size": cfg.batch_size, "alpha": cfg.alpha, "loss": loss_kind.value,
        "reg": reg, **(config_extra or {}),
    }
    record = RunRecord(algorithm=algo, instance=instance, seed=cfg.seed, config=config)

    x = np.zeros(train.n_features)
    done = 0
    cum = 0

    def snapshot(wall_ms: float) -> None:
        record.rows.append(MetricRow(
            round=done,
            cum_evals=cum,
            train_loss=obj.eval_full(x),
            train_err=classification_error(x, train),
            test_err=classification_error(x, test),
            wall_ms=wall_ms if timing else 0.0,
        ))

    snapshot(0.0)
    pool = ThreadPoolExecutor(max_workers=threads) if threads is not None and threads > 1 else None
    try:
        for t in range(cfg.rounds):
            if cfg.max_evals is not None and cum >= cfg.max_evals:
                break
            start = time.perf_counter()
            x, evals = round_fn(t, x, pool)
            cum += evals
            done += 1
            snapshot((time.perf_counter() - start) * 1e3)
    finally:
        if pool is not None:
            pool.shutdown()
    if obj.eval_counter != cum:
        raise RuntimeError(
            f"evaluation ledger drift: instrumented counter {obj.eval_counter} "
            f"vs recorded total {cum}"
        )
    return record.validate()


def _map_ordered(pool, fn, count: int) -> list:
    if pool is None:
        return [fn(i) for i in range(count)]
    return list(pool.map(fn, range(count)))


def run_fed_zo_gd(
    cfg: BaselineConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float = 1e-6,
    smoothing: SmoothingConfig = SmoothingConfig(),
    threads: int | None = None,
    timing: bool = False,
    instance: str = "",
) -> RunRecord:
    """Federated averaging over zeroth-order descent on one fixed minibatch
    per worker per round, step alpha / ((k+1) * sqrt(t+1))."""
    k_prime = _half_iters(cfg)

    def make_round(obj, partition):
        def round_fn(t, x, pool):
            def worker(i):
                shard = partition.worker_shards[i]
                batch_stream = RngStream(cfg.seed, t, i, "batch")
                rows = shard[batch_stream.gen.integers(0, len(shard), size=cfg.batch_size)]
                view = obj.batch(rows)
                sm_stream = RngStream(cfg.seed, t, i, "smoothing")
                xi = x.copy()
                for k in range(k_prime):
                    g = zo_grad_central(view.value, xi, smoothing, sm_stream)
                    xi -= cfg.alpha / ((k + 1) * math.sqrt(t + 1)) * g
                return xi
            finals = _map_ordered(pool, worker, cfg.workers)
            evals = cfg.workers * k_prime * 2 * cfg.batch_size * smoothing.directions
            return np.mean(np.asarray(finals), axis=0), evals
        return round_fn

    return _run_loop("fed-zo-gd", cfg, train, test, loss_kind, reg, threads, timing,
                     instance, make_round, {"mu": smoothing.mu})


def run_fed_zo_sgd(
    cfg: BaselineConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float = 1e-6,
    smoothing: SmoothingConfig = SmoothingConfig(),
    threads: int | None = None,
    timing: bool = False,
    instance: str = "",
) -> RunRecord:
    """As run_fed_zo_gd but each local step draws a fresh minibatch and the
    step-size is alpha / sqrt((k+1) * (t+1))."""
    k_prime = _half_iters(cfg)

    def make_round(obj, partition):
        def round_fn(t, x, pool):
            def worker(i):
                shard = partition.worker_shards[i]
                batch_stream = RngStream(cfg.seed, t, i, "batch")
                sm_stream = RngStream(cfg.seed, t, i, "smoothing")
                xi = x.copy()
                for k in range(k_prime):
                    rows = shard[batch_stream.gen.integers(0, len(shard), size=cfg.batch_size)]
                    view = obj.batch(rows)
                    g = zo_grad_central(view.value, xi, smoothing, sm_stream)
                    xi -= cfg.alpha / math.sqrt((k + 1) * (t + 1)) * g
                return xi
            finals = _map_ordered(pool, worker, cfg.workers)
            evals = cfg.workers * k_prime * 2 * cfg.batch_size * smoothing.directions
            return np.mean(np.asarray(finals), axis=0), evals
        return round_fn

    return _run_loop("fed-zo-sgd", cfg, train, test, loss_kind, reg, threads, timing,
                     instance, make_round, {"mu": smoothing.mu})


def run_zo_signsgd(
    cfg: BaselineConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float = 1e-6,
    smoothing: SmoothingConfig = SmoothingConfig(),
    threads: int | None = None,
    timing: bool = False,
    instance: str = "",
) -> RunRecord:
    """Majority-vote sign descent: each worker averages K' estimates at the
    broadcast point (fresh minibatch each), votes with the elementwise sign,
    and the server steps along the sign of the vote sum."""
    k_prime = _half_iters(cfg)

    def make_round(obj, partition):
        def round_fn(t, x, pool):
            def worker(i):
                shard = partition.worker_shards[i]
                batch_stream = RngStream(cfg.seed, t, i, "batch")
                sm_stream = RngStream(cfg.seed, t, i, "smoothing")
                g_sum = np.zeros(x.shape[0])
                for _ in range(k_prime):
                    rows = shard[batch_stream.gen.integers(0, len(shard), size=cfg.batch_size)]
                    view = obj.batch(rows)
                    g_sum += zo_grad_central(view.value, x, smoothing, sm_stream)
                return sign_plus(g_sum / k_prime)
            votes = _map_ordered(pool, worker, cfg.workers)
            step = cfg.alpha / math.sqrt(t + 1)
            x_next = x - step * sign_plus(np.sum(np.asarray(votes), axis=0))
            evals = cfg.workers * k_prime * 2 * cfg.batch_size * smoothing.directions
            return x_next, evals
        return round_fn

    return _run_loop("zo-signsgd", cfg, train, test, loss_kind, reg, threads, timing,
                     instance, make_round, {"mu": smoothing.mu})


@dataclass(frozen=True)
class CsaState:
    """Mean, global step-size, and the evolution path of the (mu/mu, lambda)-ES."""

    mean: np.ndarray
    sigma: float
    p_sigma: np.ndarray
    lam: int
    mu_sel: int
    weights: np.ndarray

    def __post_init__(self):
        if self.lam < 2:
            raise ValueError(f"population size must be >= 2, got {self.lam}")
        if not 1 <= self.mu_sel <= self.lam:
            raise ValueError(f"parent count {self.mu_sel} outside [1, {self.lam}]")
        if np.any(self.weights < 0) or not math.isclose(float(self.weights.sum()), 1.0):
            raise ValueError("weights must be nonnegative and sum to 1")


def csa_population_size(workers: int, local_iters: int, batch_size: int, num_train: int) -> int:
    """Population size matching the per-round budget: round(M*K*b / N)."""
    lam = round(workers * local_iters * batch_size / num_train)
    if lam < 2:
        raise ValueError(
            f"per-round budget {workers * local_iters * batch_size} over {num_train} "
            f"training examples gives population {lam} < 2; raise workers, "
            "local_iters, or batch_size, or shrink the training set"
        )
    return lam


def csa_init(x0: np.ndarray, lam: int, sigma0: float) -> CsaState:
    mu_sel = lam // 2
    weights = np.full(mu_sel, 1.0 / mu_sel)
    return CsaState(
        mean=np.array(x0, dtype=np.float64),
        sigma=float(sigma0),
        p_sigma=np.zeros(len(x0)),
        lam=lam,
        mu_sel=mu_sel,
        weights=weights,
    )


def _expected_chi_norm(n: int) -> float:
    # E||N(0, I_n)|| via the usual series approximation
    return math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))


def csa_step(state: CsaState, draws: np.ndarray, values: np.ndarray) -> CsaState:
    """One comma-selection update given the draws behind the population.

    draws is (lam, n) standard normal; candidate j was mean + sigma*draws[j]
    and values[j] its objective value. The best mu_sel recombine with equal
    weights; the path length against its stationary distribution drives the
    step-size.
    """
    if draws.shape[0] != state.lam or values.shape != (state.lam,):
        raise ValueError("draws/values do not match the population size")
    order = np.argsort(values, kind="stable")
    selected = draws[order[: state.mu_sel]]
    z_mean = state.weights @ selected
    mu_eff = 1.0 / float(np.sum(state.weights**2))
    n = state.mean.shape[0]
    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    p_next = (1.0 - c_sigma) * state.p_sigma + math.sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * z_mean
    ratio = float(np.linalg.norm(p_next)) / _expected_chi_norm(n)
    sigma_next = state.sigma * math.exp((c_sigma / d_sigma) * (ratio - 1.0))
    return replace(
        state,
        mean=state.mean + state.sigma * z_mean,
        sigma=sigma_next,
        p_sigma=p_next,
    )


def run_es_csa(
    cfg: BaselineConfig,
    train: Dataset,
    test: Dataset,
    loss_kind: LossKind,
    reg: float = 1e-6,
    threads: int | None = None,
    timing: bool = False,
    instance: str = "",
) -> RunRecord:
    """Server-sampled (mu/mu, lambda)-ES: every worker scores the whole
    population on its full shard, the server assembles exact full-data
    objective values, selects, recombines, and adapts sigma."""
    lam = csa_population_size(cfg.workers, cfg.local_iters, cfg.batch_size, len(train))

    def make_round(obj, partition):
        views = [obj.batch(shard) for shard in partition.worker_shards]
        state_box = [csa_init(np.zeros(train.n_features), lam, sigma0=cfg.alpha)]

        def round_fn(t, x, pool):
            state = state_box[0]
            draws = RngStream(cfg.seed, t, "csa").gen.standard_normal((lam, train.n_features))
            candidates = state.mean + state.sigma * draws
            shard_sums = _map_ordered(pool, lambda i: views[i].loss_sum_many(candidates), cfg.workers)
            values = np.sum(np.asarray(shard_sums), axis=0) / len(train)
            values += 0.5 * reg * np.sum(candidates**2, axis=1)
            state_box[0] = csa_step(state, draws, values)
            return state_box[0].mean.copy(), lam * len(train)
        return round_fn

    return _run_loop("es-csa", cfg, train, test, loss_kind, reg, threads, timing,
                     instance, make_round, {"lambda": lam})
