"""Round-based federated protocol: broadcast, local training, aggregation.

Aggregators are weight rules over client updates.  FedAvg weights every
group by sample count n_k/N; FedAvgW keeps that for ordinary groups but
weights LoRA groups by normalized (1/n_k)^beta, boosting small clients.

Client training is a pure function of (global params, partition, seeds), so
clients may run on parallel workers; results are always aggregated in
client-id order and outputs are bit-identical either way.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .metrics import RoundLog, evaluate_client, fairness_summary
from .models import build_model
from .models.params import ParamSet, StructuralError
from .numkit.optim import OptimizerState, step
from .textdata import make_batches


class FederationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerCfg:
    kind: str
    lr: float
    weight_decay: float = 0.0


@dataclass(frozen=True)
class FedConfig:
    rounds: int
    local_epochs: int
    batch_size: int
    optimizer: OptimizerCfg
    aggregator: str = "fedavg"  # "fedavg" | "fedavgw"
    beta: float = 0.0
    participation: float = 1.0
    seed: int = 42

    def __post_init__(self):
        if self.rounds < 1 or self.local_epochs < 1:
            raise ValueError("rounds and local_epochs must be >= 1")
        if not 0 < self.participation <= 1:
            raise ValueError("participation must be in (0, 1]")
        if self.aggregator not in ("fedavg", "fedavgw"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    n_k: int
    params: ParamSet


@dataclass(frozen=True)
class AggregationWeights:
    standard: np.ndarray
    lora: np.ndarray

    def __post_init__(self):
        for name, w in (("standard", self.standard), ("lora", self.lora)):
            if (w < 0).any():
                raise ValueError(f"{name} weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} weights sum to {w.sum()!r}, not 1")


def _normalize(raw: np.ndarray) -> np.ndarray:
    # scale by the max first so equal inputs normalize through the exact same
    # float path regardless of magnitude (equal n_k => bitwise-equal weights)
    y = raw / raw.max()
    return y / y.sum()


def fedavg_weights(updates) -> AggregationWeights:
    n = np.array([u.n_k for u in updates], dtype=np.float64)
    if n.sum() <= 0:
        raise FederationError("all clients empty")
    w = _normalize(n)
    return AggregationWeights(w, w)


def fedavgw_weights(updates, beta: float) -> AggregationWeights:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    n = np.array([u.n_k for u in updates], dtype=np.float64)
    if (n <= 0).any():
        raise FederationError("fedavgw requires n_k > 0 for every participant")
    return AggregationWeights(_normalize(n), _normalize((1.0 / n) ** beta))


def make_weights(updates, aggregator: str, beta: float = 0.0) -> AggregationWeights:
    if aggregator == "fedavg":
        return fedavg_weights(updates)
    return fedavgw_weights(updates, beta)


def aggregate(updates, weights: AggregationWeights) -> ParamSet:
    """Per-group weighted average; lora groups use the lora weight vector.

    Frozen groups must be identical across clients and are copied through.
    """
    if not updates:
        raise FederationError("no updates to aggregate")
    template = updates[0].params
    for u in updates[1:]:
        template.check_congruent(u.params)
    new_tensors = {}
    for gi, group in enumerate(template):
        values = [u.params.groups[gi].tensor.data for u in updates]
        if not group.trainable:
            for v in values[1:]:
                if np.abs(v - values[0]).max() > 1e-12:
                    raise FederationError(f"frozen group {group.name!r} drifted across clients")
            new_tensors[group.name] = nk.Tensor(values[0].copy())
            continue
        wvec = weights.lora if group.lora else weights.standard
        acc = np.zeros_like(values[0])
        for w, v in zip(wvec, values):  # fixed client-id order: deterministic fp sum
            acc += w * v
        new_tensors[group.name] = nk.Tensor(acc)
    return template.with_tensors(new_tensors)


def local_train(global_params: ParamSet, forward, partition, dataset,
                opt_cfg: OptimizerCfg, local_epochs: int, batch_size: int,
                seed: int, round_index: int) -> ClientUpdate:
    """E epochs of minibatch training from the broadcast params.

    Optimizer state is fresh each round.  Empty clients return the global
    params unchanged with n_k = 0.
    """
    if partition.size == 0:
        return ClientUpdate(partition.client_id, 0, global_params.copy())
    docs = [dataset.train[i] for i in partition.sample_indices]
    params = global_params.copy()
    state = OptimizerState(opt_cfg.kind, lr=opt_cfg.lr, weight_decay=opt_cfg.weight_decay)
    cid = partition.client_id
    try:
        for epoch in range(local_epochs):
            shuffle_seed = nk.sub_seed(seed, "client", cid, "round", round_index, "epoch", epoch)
            rng = nk.derive(seed, "dropout", cid, round_index, epoch)
            for batch in make_batches(docs, batch_size, shuffle_seed, dataset.max_seq_len):
                logits = forward(params, batch.token_ids, train=True, rng=rng)
                loss = nk.softmax_cross_entropy(logits, batch.labels)
                grads = nk.backward(loss)
                params = params.with_tensors(step(state, params.trainable_dict(), grads))
    except nk.NumericError as e:
        raise FederationError(f"client {cid}, round {round_index}: {e}") from e
    return ClientUpdate(cid, partition.size, params)


def run_federation(dataset, partitions, model_family: str, model_cfg,
                   fed_cfg: FedConfig, workers: int = 1, initial_params=None):
    """Full protocol: returns (list of RoundLog, final ParamSet)."""
    global_params, forward = build_model(model_family, model_cfg,
                                         dataset.vocabulary.size, dataset.max_seq_len,
                                         fed_cfg.seed)
    if initial_params is not None:
        initial_params.check_congruent(global_params)
        global_params = initial_params.copy()

    logs = []
    for t in range(1, fed_cfg.rounds + 1):
        start = time.perf_counter()
        active = [p for p in partitions if p.size > 0]
        if fed_cfg.participation < 1.0:
            count = max(1, round(fed_cfg.participation * len(active)))
            rng = nk.derive(fed_cfg.seed, "participation", t)
            chosen = sorted(rng.choice(len(active), size=count, replace=False))
            active = [active[i] for i in chosen]
        if not active:
            raise FederationError(f"round {t}: no participating clients")

        def train_one(p, _t=t):
            return local_train(global_params, forward, p, dataset, fed_cfg.optimizer,
                               fed_cfg.local_epochs, fed_cfg.batch_size, fed_cfg.seed, _t)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                updates = list(pool.map(train_one, active))
        else:
            updates = [train_one(p) for p in active]
        updates.sort(key=lambda u: u.client_id)

        weights = make_weights(updates, fed_cfg.aggregator, fed_cfg.beta)
        try:
            global_params = aggregate(updates, weights)
        except (FederationError, StructuralError) as e:
            raise FederationError(f"round {t}: {e}") from e

        evals = [evaluate_client(global_params, forward, p, dataset.test, dataset.max_seq_len)
                 for p in active]
        logs.append(RoundLog(t, evals, fairness_summary(evals),
                             [p.size for p in active], time.perf_counter() - start))
    return logs, global_params
