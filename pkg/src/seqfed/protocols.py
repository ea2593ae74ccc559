"""Federation protocols and their communication accounting.

Sequential runs visit clients in a fixed permutation, handing the pool
average from one client to the next; the few-shot variant repeats the ring
for several rounds. The decentralized variant trains every client
independently and broadcasts pool averages to all peers. Two baselines
bracket the method: a plain sequential handoff of a single model, and a
parallel run whose models are averaged once at the end.

Every model transfer lands in a ledger as an exact byte count, so the
communication cost of a protocol is an auditable sum rather than a formula.
"""

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .data import global_test_set
from .diversity import ModelPool
from .errors import EmptyDataError
from .models import ModelSpec, average_params, evaluate_accuracy, init_params
from .training import HyperParams, derive_rng, train_client, train_pool_model, warm_up

SERVER = "server"

_TAG_INIT = 10
_TAG_ORDER = 13
_TAG_CLIENT_ROOT = 30

Endpoint = Union[int, str]


@dataclass
class CommEvent:
    sender: Endpoint
    receiver: Endpoint
    param_count: int
    nbytes: int


@dataclass
class CommLedger:
    """Ordered record of model transfers with exact byte accounting."""

    bytes_per_param: int = 4
    events: list = field(default_factory=list)

    def record(self, sender: Endpoint, receiver: Endpoint, param_count: int):
        self.events.append(CommEvent(sender, receiver, param_count,
                                     param_count * self.bytes_per_param))

    @property
    def total_bytes(self) -> int:
        return sum(e.nbytes for e in self.events)

    @property
    def total_params(self) -> int:
        return sum(e.param_count for e in self.events)

    def __len__(self) -> int:
        return len(self.events)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["from", "to", "param_count", "bytes"])
            for e in self.events:
                writer.writerow([e.sender, e.receiver, e.param_count, e.nbytes])


@dataclass
class RunResult:
    """Everything a finished protocol run produced."""

    protocol: str
    seed: int
    order: list
    final_model: np.ndarray
    global_test_accuracy: float
    per_client_logs: list
    ledger: CommLedger
    total_epochs: int
    client_avgs: list = field(default_factory=list)
    client_pools: list = field(default_factory=list)
    wall_time: float = 0.0


def make_order(n: int, mode: str = "random", seed: int = 0,
               fixed: Optional[Sequence[int]] = None):
    """Client visiting order: a seeded random permutation or a fixed one."""
    if mode == "fixed":
        if fixed is None or sorted(int(i) for i in fixed) != list(range(n)):
            raise ValueError(f"fixed order {fixed!r} is not a permutation of 0..{n - 1}")
        return [int(i) for i in fixed]
    if mode != "random":
        raise ValueError(f"unknown order mode {mode!r}")
    return [int(i) for i in derive_rng(seed, _TAG_ORDER).permutation(n)]


def _check_clients(client_datasets, need_val=True):
    if len(client_datasets) < 1:
        raise EmptyDataError("no client datasets")
    for i, cd in enumerate(client_datasets):
        if cd.train_idx.shape[0] < 1:
            raise EmptyDataError(f"client {i} has an empty training split")
        if need_val and cd.val_idx.shape[0] < 1:
            raise EmptyDataError(f"client {i} has an empty validation split")


def _check_order(order, n):
    order = [int(i) for i in order]
    if sorted(order) != list(range(n)):
        raise ValueError(f"order {order!r} is not a permutation of 0..{n - 1}")
    return order


def _client_roots(hp, n, client_seeds):
    """Per-client seed roots for protocols without a global sequence.

    By default each client gets its own stream derived from the run seed;
    passing explicit ``client_seeds`` overrides that (equal seeds give
    identical streams, making identically-configured clients symmetric).
    """
    if client_seeds is None:
        return [(hp.seed, _TAG_CLIENT_ROOT, i) for i in range(n)]
    if len(client_seeds) != n:
        raise ValueError(f"need {n} client seeds, got {len(client_seeds)}")
    return [(int(s),) for s in client_seeds]


def _run_sequential(spec, client_datasets, hp, order, shots, protocol,
                    bytes_per_param):
    n = len(client_datasets)
    _check_clients(client_datasets)
    order = _check_order(order, n)
    ledger = CommLedger(bytes_per_param)
    p = spec.param_count
    sink = []
    pools = []
    avgs = []

    init = init_params(spec, derive_rng(hp.seed, _TAG_INIT))
    current = warm_up(spec, init, client_datasets[order[0]], hp.warmup_epochs, hp)
    total_epochs = hp.warmup_epochs
    prev_client = None
    for r in range(shots):
        for c in order:
            if prev_client is not None:
                ledger.record(prev_client, c, p)
            pool, m_avg = train_client(spec, current, client_datasets[c], hp,
                                       shot=r, client=c, sink=sink)
            total_epochs += hp.pool_models * hp.local_epochs
            pools.append(pool)
            avgs.append(m_avg)
            current = m_avg
            prev_client = c

    tx, ty = global_test_set(client_datasets)
    acc = evaluate_accuracy(spec, current, tx, ty)
    return RunResult(protocol, hp.seed, order, current, acc, sink, ledger,
                     total_epochs, avgs, pools)


def run_one_shot_sfl(spec: ModelSpec, client_datasets, hp: HyperParams,
                     order=None, bytes_per_param: int = 4) -> RunResult:
    """One ring pass: warm up the first client's model, then hand the pool
    average down the permutation; the last pool average is the final model."""
    if order is None:
        order = list(range(len(client_datasets)))
    return _run_sequential(spec, client_datasets, hp, order, 1,
                           "fedelmy_oneshot", bytes_per_param)


def run_few_shot_sfl(spec: ModelSpec, client_datasets, hp: HyperParams,
                     order=None, bytes_per_param: int = 4) -> RunResult:
    """``hp.shots`` ring passes; after each round the last client feeds the
    first. The final round's trailing send has no consumer and is omitted."""
    if order is None:
        order = list(range(len(client_datasets)))
    return _run_sequential(spec, client_datasets, hp, order, hp.shots,
                           "fedelmy_fewshot", bytes_per_param)


def run_fedseq_baseline(spec: ModelSpec, client_datasets, hp: HyperParams,
                        order=None, bytes_per_param: int = 4) -> RunResult:
    """Plain sequential handoff: each client trains the single received model
    on the task loss alone and passes it on; the last model is final."""
    n = len(client_datasets)
    _check_clients(client_datasets)
    if order is None:
        order = list(range(n))
    order = _check_order(order, n)
    ledger = CommLedger(bytes_per_param)
    p = spec.param_count
    sink = []
    avgs = []
    plain = _plain_hp(hp)

    current = init_params(spec, derive_rng(hp.seed, _TAG_INIT))
    total_epochs = 0
    prev_client = None
    for r in range(hp.shots):
        for c in order:
            if prev_client is not None:
                ledger.record(prev_client, c, p)
            current = train_pool_model(spec, current, ModelPool(current),
                                       client_datasets[c], plain, shot=r,
                                       client=c, model_index=0, sink=sink)
            total_epochs += hp.local_epochs
            avgs.append(current)
            prev_client = c

    tx, ty = global_test_set(client_datasets)
    acc = evaluate_accuracy(spec, current, tx, ty)
    return RunResult("fedseq", hp.seed, order, current, acc, sink, ledger,
                     total_epochs, avgs, [])


def run_parallel_average_baseline(spec: ModelSpec, client_datasets,
                                  hp: HyperParams, bytes_per_param: int = 4,
                                  client_seeds=None) -> RunResult:
    """Every client trains one model from a shared random start; the final
    model is their uniform average and each client ships once to the server."""
    n = len(client_datasets)
    _check_clients(client_datasets)
    ledger = CommLedger(bytes_per_param)
    p = spec.param_count
    sink = []
    models = []
    plain = _plain_hp(hp)
    roots = _client_roots(hp, n, client_seeds)

    shared_init = init_params(spec, derive_rng(hp.seed, _TAG_INIT))
    for i in range(n):
        local_sink = []
        trained = train_pool_model(spec, shared_init, ModelPool(shared_init),
                                   client_datasets[i], plain, shot=0, client=0,
                                   model_index=0, stream_seed=roots[i],
                                   sink=local_sink)
        for rec in local_sink:
            rec.client = i
        sink.extend(local_sink)
        models.append(trained)
        ledger.record(i, SERVER, p)

    final = average_params(models)
    tx, ty = global_test_set(client_datasets)
    acc = evaluate_accuracy(spec, final, tx, ty)
    return RunResult("parallel_avg", hp.seed, list(range(n)), final, acc, sink,
                     ledger, n * hp.local_epochs, models, [])


def run_decentralized_pfl(spec: ModelSpec, client_datasets, hp: HyperParams,
                          bytes_per_param: int = 4, client_seeds=None) -> RunResult:
    """Clients run the pool procedure independently from their own warmed-up
    starts, broadcast their pool averages to every peer, and the final model
    is the mean of all averages.

    Client loops touch no shared state and draw on per-client seed streams,
    so they could execute concurrently; results do not depend on scheduling.
    """
    n = len(client_datasets)
    _check_clients(client_datasets)
    ledger = CommLedger(bytes_per_param)
    p = spec.param_count
    sink = []
    pools = []
    avgs = []
    roots = _client_roots(hp, n, client_seeds)

    total_epochs = 0
    for i in range(n):
        init = init_params(spec, derive_rng(roots[i], _TAG_INIT))
        warmed = warm_up(spec, init, client_datasets[i], hp.warmup_epochs, hp,
                         stream_seed=roots[i])
        local_sink = []
        pool, m_avg = train_client(spec, warmed, client_datasets[i], hp,
                                   shot=0, client=0, stream_seed=roots[i],
                                   sink=local_sink)
        for rec in local_sink:
            rec.client = i
        sink.extend(local_sink)
        pools.append(pool)
        avgs.append(m_avg)
        total_epochs += hp.warmup_epochs + hp.pool_models * hp.local_epochs
    for i in range(n):
        for j in range(n):
            if j != i:
                ledger.record(i, j, p)

    final = average_params(avgs)
    tx, ty = global_test_set(client_datasets)
    acc = evaluate_accuracy(spec, final, tx, ty)
    return RunResult("fedelmy_decentralized", hp.seed, list(range(n)), final,
                     acc, sink, ledger, total_epochs, avgs, pools)


def _plain_hp(hp: HyperParams) -> HyperParams:
    """Baseline hyperparameters: the diversity terms switched off."""
    cfg = replace(hp.regularizer, enable_d1=False, enable_d2=False)
    return replace(hp, regularizer=cfg)
