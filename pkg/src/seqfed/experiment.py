"""Experiment execution and persistence.

A config runs ``repeats`` times with seeds ``seed, seed+1, ...``; every run
is written as one JSON document and summarized in two CSVs (per-run rows
plus a mean/std aggregate). Outputs are byte-stable across reruns except
for the recorded wall time.
"""

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, data_section_text, serialize_config
from .data import PartitionSpec, build_client_datasets, gen_synthetic_classification, load_csv, load_idx
from .diversity import pool_pairwise_distances, write_pairwise_csv
from .errors import ConfigError, SeqFedError
from .models import ModelSpec
from .protocols import (
    make_order,
    run_decentralized_pfl,
    run_fedseq_baseline,
    run_few_shot_sfl,
    run_one_shot_sfl,
    run_parallel_average_baseline,
)

RUN_SCHEMA = "seqfed-run-v1"


@dataclass
class ReportRow:
    protocol: str
    seed: int
    global_test_accuracy: float
    ledger_bytes: int
    total_epochs: int
    wall_time: float


def _load_dataset(cfg: ExperimentConfig):
    d = cfg.data
    if d.source == "idx":
        return load_idx(d.idx_images, d.idx_labels)
    if d.source == "csv":
        return load_csv(d.csv_path)
    return gen_synthetic_classification(d.classes, d.dims, d.samples_per_class,
                                        d.cluster_spread, d.seed)


def materialize(cfg: ExperimentConfig, seed: int):
    """Resolve a config into (model spec, client datasets, hyperparams, order)."""
    dataset = _load_dataset(cfg)
    part = PartitionSpec(mode=cfg.data.partition, n_clients=cfg.hp.num_clients,
                         beta=cfg.data.dirichlet_beta, seed=cfg.data.seed,
                         val_frac=cfg.data.val_frac, test_frac=cfg.data.test_frac,
                         skewed_test=cfg.data.skewed_test,
                         standardize=cfg.data.standardize)
    clients = build_client_datasets(dataset, part)
    dims = dataset.features.shape[1]
    layers = cfg.model_layers or (dims, 64, dataset.class_count)
    if layers[0] != dims:
        raise ConfigError("model.layers", f"input width {layers[0]} != data dims {dims}")
    if layers[-1] != dataset.class_count:
        raise ConfigError("model.layers",
                          f"output width {layers[-1]} != class count {dataset.class_count}")
    spec = ModelSpec(layers, cfg.activation)
    hp = replace(cfg.hp, seed=seed)
    order = make_order(cfg.hp.num_clients, cfg.order_mode, seed=seed,
                       fixed=cfg.order_fixed)
    return spec, clients, hp, order


def execute_run(cfg: ExperimentConfig, seed: int):
    spec, clients, hp, order = materialize(cfg, seed)
    bpp = cfg.bytes_per_param
    started = time.perf_counter()
    if cfg.protocol == "fedelmy_oneshot":
        result = run_one_shot_sfl(spec, clients, hp, order, bpp)
    elif cfg.protocol == "fedelmy_fewshot":
        result = run_few_shot_sfl(spec, clients, hp, order, bpp)
    elif cfg.protocol == "fedelmy_decentralized":
        result = run_decentralized_pfl(spec, clients, hp, bpp)
    elif cfg.protocol == "fedseq":
        result = run_fedseq_baseline(spec, clients, hp, order, bpp)
    elif cfg.protocol == "parallel_avg":
        result = run_parallel_average_baseline(spec, clients, hp, bpp)
    else:
        raise ConfigError("protocol", f"unknown protocol {cfg.protocol!r}")
    result.wall_time = time.perf_counter() - started
    return result


def data_fingerprint(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(data_section_text(cfg).encode()).hexdigest()


def result_document(cfg: ExperimentConfig, result) -> dict:
    return {
        "schema": RUN_SCHEMA,
        "protocol": result.protocol,
        "seed": result.seed,
        "order": list(result.order),
        "global_test_accuracy": result.global_test_accuracy,
        "total_epochs": result.total_epochs,
        "wall_time": result.wall_time,
        "data_fingerprint": data_fingerprint(cfg),
        "config_text": serialize_config(cfg),
        "ledger": {
            "bytes_per_param": result.ledger.bytes_per_param,
            "total_bytes": result.ledger.total_bytes,
            "events": [{"from": e.sender, "to": e.receiver,
                        "param_count": e.param_count, "bytes": e.nbytes}
                       for e in result.ledger.events],
        },
        "final_model": [float(x) for x in result.final_model],
        "per_client_logs": [asdict(r) for r in result.per_client_logs],
    }


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_report(path: Path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "seed", "global_test_accuracy",
                         "ledger_bytes", "total_epochs", "wall_time"])
        for r in rows:
            writer.writerow([r.protocol, r.seed, repr(r.global_test_accuracy),
                             r.ledger_bytes, r.total_epochs, repr(r.wall_time)])


def _aggregate(rows):
    accs = np.array([r.global_test_accuracy for r in rows], dtype=np.float64)
    std = float(accs.std(ddof=1)) if accs.shape[0] > 1 else 0.0
    return float(accs.mean()), std


def _write_summary(path: Path, protocol, rows):
    mean, std = _aggregate(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "runs", "accuracy_mean", "accuracy_std",
                         "ledger_bytes", "total_epochs"])
        writer.writerow([protocol, len(rows), repr(mean), repr(std),
                         rows[0].ledger_bytes, rows[0].total_epochs])


def run_experiment(cfg: ExperimentConfig, output_dir=None):
    """Execute all repeats of a config, persisting run JSONs and report CSVs.

    Each run also leaves its ledger as CSV and, for pool-building protocols,
    the final client's pairwise model-distance matrix for heatmap plotting.
    A failing run aborts the batch: completed runs stay on disk and the
    failure is recorded in ``aborted.json`` before the error propagates.
    """
    outdir = Path(output_dir if output_dir is not None else cfg.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    results = []
    rows = []
    for k in range(cfg.repeats):
        seed = cfg.hp.seed + k
        try:
            result = execute_run(cfg, seed)
        except Exception as exc:
            _write_report(outdir / "report.csv", rows)
            (outdir / "aborted.json").write_text(json.dumps(
                {"failed_seed": seed, "error": str(exc),
                 "completed_runs": len(rows)}, indent=1) + "\n")
            raise SeqFedError(
                f"run with seed {seed} failed after {len(rows)} completed runs: {exc}"
            ) from exc
        stem = f"{cfg.protocol}_{seed}"
        _write_json(outdir / f"run_{stem}.json", result_document(cfg, result))
        result.ledger.to_csv(outdir / f"ledger_{stem}.csv")
        if result.client_pools:
            matrix = pool_pairwise_distances(result.client_pools[-1],
                                             cfg.hp.regularizer.measure)
            write_pairwise_csv(matrix, outdir / f"pool_distances_{stem}.csv")
        rows.append(ReportRow(result.protocol, seed, result.global_test_accuracy,
                              result.ledger.total_bytes, result.total_epochs,
                              result.wall_time))
        results.append(result)
    _write_report(outdir / "report.csv", rows)
    _write_summary(outdir / "summary.csv", cfg.protocol, rows)
    return results


def load_run_documents(directory):
    docs = []
    for path in sorted(Path(directory).glob("run_*.json")):
        docs.append(json.loads(path.read_text()))
    if not docs:
        raise SeqFedError(f"no run_*.json documents under {directory}")
    return docs


def emit_comparison(run_dirs, output_dir):
    """Side-by-side accuracy and communication table for several protocols.

    All runs must share one dataset fingerprint. Writes ``comparison.csv``
    and ``plotdata.csv`` (protocol, metric, value triples); returns the
    comparison rows.
    """
    docs = []
    for d in run_dirs:
        docs.extend(load_run_documents(d))
    fingerprints = {doc["data_fingerprint"] for doc in docs}
    if len(fingerprints) != 1:
        raise SeqFedError(
            f"runs cover {len(fingerprints)} different dataset configs; "
            "comparison needs a shared one")
    by_protocol = {}
    for doc in docs:
        by_protocol.setdefault(doc["protocol"], []).append(doc)

    outdir = Path(output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for protocol in sorted(by_protocol):
        group = by_protocol[protocol]
        accs = np.array([g["global_test_accuracy"] for g in group])
        std = float(accs.std(ddof=1)) if accs.shape[0] > 1 else 0.0
        rows.append({
            "protocol": protocol,
            "runs": len(group),
            "accuracy_mean": float(accs.mean()),
            "accuracy_std": std,
            "ledger_bytes": group[0]["ledger"]["total_bytes"],
            "total_epochs": group[0]["total_epochs"],
        })
    with open(outdir / "comparison.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    with open(outdir / "plotdata.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["protocol", "metric", "value"])
        for r in rows:
            for metric in ("accuracy_mean", "accuracy_std", "ledger_bytes",
                           "total_epochs"):
                writer.writerow([r["protocol"], metric, repr(float(r[metric]))])
            writer.writerow([r["protocol"], "ledger_megabytes",
                             repr(r["ledger_bytes"] / 1e6)])
    return rows
