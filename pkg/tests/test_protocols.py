"""Tests for the federation protocols and communication accounting."""

import itertools
import math

import numpy as np
import pytest

from seqfed.data import ClientDataset, PartitionSpec, build_client_datasets, gen_synthetic_classification
from seqfed.diversity import RegularizerConfig
from seqfed.errors import EmptyDataError
from seqfed.models import ModelSpec
from seqfed.protocols import (
    SERVER,
    CommLedger,
    make_order,
    run_decentralized_pfl,
    run_fedseq_baseline,
    run_few_shot_sfl,
    run_one_shot_sfl,
    run_parallel_average_baseline,
)
from seqfed.training import HyperParams


def make_clients(n, seed=0, classes=3, dims=4, per_class=None, spread=0.4):
    if per_class is None:
        per_class = max(24, 16 * n)
    ds = gen_synthetic_classification(classes, dims, per_class, spread, seed)
    part = PartitionSpec(mode="dirichlet", n_clients=n, beta=1.0, seed=seed,
                         standardize=False)
    return build_client_datasets(ds, part)


def tiny_hp(**kw):
    defaults = dict(num_clients=1, pool_models=1, local_epochs=1, warmup_epochs=1,
                    learning_rate=1e-3, weight_decay=0.0, batch_size=16, shots=1,
                    seed=0, regularizer=RegularizerConfig(alpha=1.0, beta=1.0))
    defaults.update(kw)
    return HyperParams(**defaults)


SPEC = ModelSpec([4, 5, 3])


# ---------------------------------------------------------------- ledger law


@pytest.mark.parametrize("n", [1, 2, 4, 10])
def test_sequential_ledger_counts(n):
    clients = make_clients(n, seed=n)
    res = run_one_shot_sfl(SPEC, clients, tiny_hp(num_clients=n))
    assert len(res.ledger) == n - 1
    resq = run_fedseq_baseline(SPEC, clients, tiny_hp(num_clients=n))
    assert len(resq.ledger) == n - 1


@pytest.mark.parametrize("n,t", list(itertools.product([1, 2, 4], [1, 2, 3])))
def test_few_shot_ledger_counts(n, t):
    clients = make_clients(n, seed=10 * n + t)
    res = run_few_shot_sfl(SPEC, clients, tiny_hp(num_clients=n, shots=t))
    assert len(res.ledger) == t * n - 1


def test_few_shot_4x3_is_11_events():
    clients = make_clients(4, seed=43)
    res = run_few_shot_sfl(SPEC, clients, tiny_hp(num_clients=4, shots=3))
    assert len(res.ledger) == 11


@pytest.mark.parametrize("n", [1, 2, 4])
def test_decentralized_ledger_counts(n):
    clients = make_clients(n, seed=n + 20)
    res = run_decentralized_pfl(SPEC, clients, tiny_hp(num_clients=n))
    assert len(res.ledger) == n * (n - 1)


@pytest.mark.parametrize("n", [1, 2, 4])
def test_parallel_ledger_counts(n):
    clients = make_clients(n, seed=n + 30)
    res = run_parallel_average_baseline(SPEC, clients, tiny_hp(num_clients=n))
    assert len(res.ledger) == n
    assert all(e.receiver == SERVER for e in res.ledger.events)


def test_ledger_byte_accounting_resnet_scale():
    # 46.2 MB per model hop, 10 clients: 9 hops make 415.8 MB on the wire
    ledger = CommLedger(bytes_per_param=4)
    param_count = 11_550_000
    for i in range(9):
        ledger.record(i, i + 1, param_count)
    assert all(e.nbytes == 46_200_000 for e in ledger.events)
    assert ledger.total_bytes == 415_800_000
    assert ledger.total_bytes / 1e6 == 415.8


def test_ledger_events_match_model_size():
    clients = make_clients(3, seed=77)
    res = run_one_shot_sfl(SPEC, clients, tiny_hp(num_clients=3), bytes_per_param=8)
    for e in res.ledger.events:
        assert e.param_count == SPEC.param_count
        assert e.nbytes == 8 * SPEC.param_count


def test_ledger_csv(tmp_path):
    ledger = CommLedger(bytes_per_param=2)
    ledger.record(0, 1, 10)
    ledger.record(1, SERVER, 10)
    path = tmp_path / "ledger.csv"
    ledger.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "from,to,param_count,bytes"
    assert lines[1] == "0,1,10,20"
    assert lines[2] == "1,server,10,20"


# ------------------------------------------------------------------ handoffs


def test_handoff_integrity_bitwise():
    clients = make_clients(3, seed=5)
    hp = tiny_hp(num_clients=3, pool_models=2, local_epochs=2)
    res = run_one_shot_sfl(SPEC, clients, hp, order=[2, 0, 1])
    assert res.order == [2, 0, 1]
    # the pool seed of each later client is exactly the previous average
    for k in range(1, 3):
        assert np.array_equal(res.client_pools[k][0], res.client_avgs[k - 1])
    # final model is the last client's pool mean
    assert np.array_equal(res.final_model, res.client_avgs[-1])


def test_pool_sizes_and_seed_preservation():
    clients = make_clients(2, seed=6)
    hp = tiny_hp(num_clients=2, pool_models=3, local_epochs=1)
    res = run_one_shot_sfl(SPEC, clients, hp)
    for pool in res.client_pools:
        assert len(pool) == 4


def test_single_client_is_local_training():
    clients = make_clients(1, seed=7)
    hp = tiny_hp(num_clients=1, pool_models=2, local_epochs=2)
    res = run_one_shot_sfl(SPEC, clients, hp)
    assert len(res.ledger) == 0
    assert len(res.client_pools) == 1
    assert np.array_equal(res.final_model, res.client_avgs[0])


def test_few_shot_t1_equals_one_shot_bitwise():
    clients = make_clients(3, seed=8)
    hp = tiny_hp(num_clients=3, pool_models=2, local_epochs=2, shots=1)
    one = run_one_shot_sfl(SPEC, clients, hp, order=[1, 2, 0])
    few = run_few_shot_sfl(SPEC, clients, hp, order=[1, 2, 0])
    assert np.array_equal(one.final_model, few.final_model)
    assert one.global_test_accuracy == few.global_test_accuracy
    assert len(one.ledger) == len(few.ledger)


def test_full_run_determinism():
    clients = make_clients(3, seed=9)
    hp = tiny_hp(num_clients=3, pool_models=2, local_epochs=2)
    a = run_one_shot_sfl(SPEC, clients, hp, order=[0, 1, 2])
    b = run_one_shot_sfl(SPEC, clients, hp, order=[0, 1, 2])
    assert np.array_equal(a.final_model, b.final_model)
    assert a.global_test_accuracy == b.global_test_accuracy


def test_epoch_accounting_one_shot():
    clients = make_clients(2, seed=11)
    hp = tiny_hp(num_clients=2, pool_models=3, local_epochs=4, warmup_epochs=5)
    res = run_one_shot_sfl(SPEC, clients, hp)
    assert res.total_epochs == 2 * 3 * 4 + 5
    few = run_few_shot_sfl(SPEC, clients, tiny_hp(num_clients=2, pool_models=3,
                                                  local_epochs=4, warmup_epochs=5,
                                                  shots=2))
    assert few.total_epochs == 2 * 2 * 3 * 4 + 5


def test_fedseq_structure():
    clients = make_clients(3, seed=12)
    hp = tiny_hp(num_clients=3, local_epochs=2)
    res = run_fedseq_baseline(SPEC, clients, hp, order=[0, 1, 2])
    assert res.total_epochs == 3 * 2
    assert np.array_equal(res.final_model, res.client_avgs[-1])
    assert res.client_pools == []
    # single client degenerates to plain local training
    solo = run_fedseq_baseline(SPEC, make_clients(1, seed=13), tiny_hp())
    assert len(solo.ledger) == 0


def test_fedelmy_degenerates_toward_fedseq_structure():
    # S=1, alpha=beta=0, no warm-up, no snapshot selection: each client's pool
    # is {received, trained} and the handoff is their midpoint
    clients = make_clients(3, seed=14)
    hp = tiny_hp(num_clients=3, pool_models=1, local_epochs=2, warmup_epochs=0,
                 select_best_val=False,
                 regularizer=RegularizerConfig(alpha=0.0, beta=0.0))
    res = run_one_shot_sfl(SPEC, clients, hp, order=[0, 1, 2])
    seq = run_fedseq_baseline(SPEC, clients,
                              tiny_hp(num_clients=3, local_epochs=2,
                                      select_best_val=False), order=[0, 1, 2])
    assert len(res.ledger) == len(seq.ledger) == 2
    for pool, avg in zip(res.client_pools, res.client_avgs):
        assert len(pool) == 2
        assert np.array_equal(avg, (pool[0] + pool[1]) / 2.0)


def test_empty_client_errors_name_client():
    clients = make_clients(3, seed=15)
    ds = clients[1].dataset
    clients[1] = ClientDataset(ds, np.array([], dtype=np.int64),
                               clients[1].val_idx, clients[1].test_idx)
    with pytest.raises(EmptyDataError, match="client 1"):
        run_one_shot_sfl(SPEC, clients, tiny_hp(num_clients=3))


# -------------------------------------------------------------- decentralized


def test_decentralized_single_client_matches_local():
    clients = make_clients(1, seed=16)
    hp = tiny_hp(num_clients=1, pool_models=2, local_epochs=2)
    res = run_decentralized_pfl(SPEC, clients, hp)
    assert len(res.ledger) == 0
    assert np.array_equal(res.final_model, res.client_avgs[0])


def test_decentralized_symmetry_under_identical_seeds():
    # identical datasets and identical per-client seed streams: every client
    # produces the same pool average, and the final mean equals any of them
    base = make_clients(1, seed=17)[0]
    clients = [base, base]
    hp = tiny_hp(num_clients=2, pool_models=2, local_epochs=2)
    res = run_decentralized_pfl(SPEC, clients, hp, client_seeds=[123, 123])
    assert np.array_equal(res.client_avgs[0], res.client_avgs[1])
    assert np.array_equal(res.final_model, res.client_avgs[0])
    assert len(res.ledger) == 2


def test_decentralized_default_streams_differ():
    base = make_clients(1, seed=18)[0]
    clients = [base, base]
    hp = tiny_hp(num_clients=2, pool_models=1, local_epochs=1)
    res = run_decentralized_pfl(SPEC, clients, hp)
    assert not np.array_equal(res.client_avgs[0], res.client_avgs[1])


def test_parallel_symmetry_under_identical_seeds():
    base = make_clients(1, seed=19)[0]
    clients = [base, base]
    hp = tiny_hp(num_clients=2, local_epochs=2)
    res = run_parallel_average_baseline(SPEC, clients, hp, client_seeds=[9, 9])
    assert np.array_equal(res.client_avgs[0], res.client_avgs[1])
    assert np.array_equal(res.final_model, res.client_avgs[0])


def test_decentralized_log_clients_relabelled():
    clients = make_clients(2, seed=21)
    hp = tiny_hp(num_clients=2, pool_models=1, local_epochs=2)
    res = run_decentralized_pfl(SPEC, clients, hp)
    assert sorted({r.client for r in res.per_client_logs}) == [0, 1]


# ----------------------------------------------------------------- ordering


def test_make_order_fixed():
    assert make_order(4, "fixed", fixed=[0, 1, 2, 3]) == [0, 1, 2, 3]
    assert make_order(3, "fixed", fixed=[2, 0, 1]) == [2, 0, 1]


def test_make_order_fixed_invalid():
    with pytest.raises(ValueError):
        make_order(3, "fixed", fixed=[0, 1, 1])
    with pytest.raises(ValueError):
        make_order(3, "fixed", fixed=None)


def test_make_order_random_deterministic():
    assert make_order(6, "random", seed=4) == make_order(6, "random", seed=4)
    assert sorted(make_order(6, "random", seed=4)) == list(range(6))


def test_make_order_random_uniform_chi_square():
    draws = 10000
    counts = {p: 0 for p in itertools.permutations(range(3))}
    for seed in range(draws):
        counts[tuple(make_order(3, "random", seed=seed))] += 1
    expect = draws / 6.0
    sigma = math.sqrt(draws * (1 / 6) * (5 / 6))
    for perm, count in counts.items():
        assert abs(count - expect) < 5 * sigma, (perm, count)
