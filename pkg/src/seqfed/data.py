"""Dataset generation, non-IID partitioning and ingestion.

Two non-IID regimes are provided. Label skew draws per-class client
proportions from a Dirichlet distribution, so clients see different class
mixes. Domain shift gives every client an equal slice containing all
classes but pushes each slice through a client-specific invertible feature
transform (a planar rotation composed with a scaling), standing in for
feature distributions that differ across sites.
"""

import csv
import gzip
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    PartitionError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Scales cycle so that client 0 keeps the identity transform.
DOMAIN_SCALES = (1.0, 1.5, 2.0, 0.5)


@dataclass
class Dataset:
    """Feature matrix with integer class labels."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise EmptyDataError("dataset needs at least one row of features")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("feature/label row counts differ")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError("labels outside [0, class_count)")

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass
class ClientDataset:
    """One client's view: a dataset plus disjoint train/val/test index sets."""

    dataset: Dataset
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.val_idx = np.asarray(self.val_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)

    @property
    def train_x(self):
        return self.dataset.features[self.train_idx]

    @property
    def train_y(self):
        return self.dataset.labels[self.train_idx]

    @property
    def val_x(self):
        return self.dataset.features[self.val_idx]

    @property
    def val_y(self):
        return self.dataset.labels[self.val_idx]

    @property
    def test_x(self):
        return self.dataset.features[self.test_idx]

    @property
    def test_y(self):
        return self.dataset.labels[self.test_idx]


@dataclass(frozen=True)
class PartitionSpec:
    """How a dataset is spread over clients and split within each."""

    mode: str = "dirichlet"
    n_clients: int = 5
    beta: float = 0.5
    seed: int = 0
    val_frac: float = 0.1
    test_frac: float = 0.2
    skewed_test: bool = False
    standardize: bool = True

    def __post_init__(self):
        if self.mode not in ("dirichlet", "domain_shift"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.beta <= 0:
            raise ValueError("dirichlet beta must be > 0")
        if not (0 < self.val_frac < 1 and 0 < self.test_frac < 1):
            raise ValueError("val_frac and test_frac must lie in (0, 1)")
        if self.val_frac + self.test_frac >= 1:
            raise ValueError("val_frac + test_frac must be < 1")


def gen_synthetic_classification(classes: int, dims: int, samples_per_class: int,
                                 cluster_spread: float, seed: int,
                                 min_separation: float = 0.5) -> Dataset:
    """Gaussian blobs around unit-norm, pairwise-separated class means."""
    if classes < 2 or dims < 2:
        raise ValueError("need at least 2 classes and 2 feature dimensions")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    if cluster_spread < 0:
        raise ValueError("cluster_spread must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    means = []
    attempts = 0
    while len(means) < classes:
        cand = rng.standard_normal(dims)
        cand /= np.sqrt((cand * cand).sum())
        if all(np.sqrt(((cand - m) ** 2).sum()) >= min_separation for m in means):
            means.append(cand)
        attempts += 1
        if attempts > 1000 * classes:
            raise ValueError(
                f"could not place {classes} means with separation {min_separation} "
                f"in {dims} dimensions")
    feats = np.empty((classes * samples_per_class, dims))
    labels = np.empty(classes * samples_per_class, dtype=np.int64)
    for c, mean in enumerate(means):
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        feats[block] = mean + cluster_spread * rng.standard_normal((samples_per_class, dims))
        labels[block] = c
    return Dataset(feats, labels, classes)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        frac = raw - counts
        order = np.argsort(-frac, kind="stable")
        counts[order[:short]] += 1
    return counts


def dirichlet_label_partition(dataset: Dataset, n_clients: int, beta: float,
                              seed: int, indices=None):
    """Split indices over clients with per-class Dirichlet proportions.

    Every index lands on exactly one client. A client that ends up empty is
    repaired by taking one sample from the currently largest client.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    pool = np.arange(dataset.size) if indices is None else np.asarray(indices, dtype=np.int64)
    if n_clients > pool.shape[0]:
        raise PartitionError(
            f"cannot spread {pool.shape[0]} samples over {n_clients} clients")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    labels = dataset.labels[pool]
    assigned = [[] for _ in range(n_clients)]
    for c in range(dataset.class_count):
        class_idx = pool[labels == c]
        if class_idx.shape[0] == 0:
            continue
        class_idx = rng.permutation(class_idx)
        proportions = rng.dirichlet(np.full(n_clients, beta))
        counts = _largest_remainder(proportions, class_idx.shape[0])
        stop = np.cumsum(counts)
        start = stop - counts
        for i in range(n_clients):
            assigned[i].extend(class_idx[start[i]:stop[i]].tolist())
    # Re-balance clients that received nothing.
    sizes = np.array([len(a) for a in assigned])
    while (sizes == 0).any():
        empty = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        assigned[empty].append(assigned[donor].pop())
        sizes = np.array([len(a) for a in assigned])
    return [np.sort(np.array(a, dtype=np.int64)) for a in assigned]


def domain_transforms(dims: int, n_clients: int, seed: int):
    """Per-client feature transforms: rotation by 2*pi*i/N in one random
    plane, composed with a cycling scale. Client 0 gets the identity."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    u = rng.standard_normal(dims)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(dims)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    eye = np.eye(dims)
    mats = []
    for i in range(n_clients):
        if i == 0:
            mats.append(eye.copy())
            continue
        theta = 2.0 * math.pi * i / n_clients
        rot = (eye
               + (math.cos(theta) - 1.0) * (np.outer(u, u) + np.outer(v, v))
               + math.sin(theta) * (np.outer(v, u) - np.outer(u, v)))
        mats.append(DOMAIN_SCALES[i % len(DOMAIN_SCALES)] * rot)
    return mats


def domain_shift_partition(dataset: Dataset, n_clients: int, seed: int,
                           val_frac: float = 0.1, test_frac: float = 0.2,
                           apply_transforms: bool = True, max_retries: int = 50):
    """Equal random slices, all classes present in each, per-client transform.

    Returns one ClientDataset per client; each holds its own (transformed)
    feature matrix with local train/val/test splits.
    """
    if n_clients < 2:
        raise PartitionError("domain shift needs at least 2 clients")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    slices = None
    for _ in range(max_retries):
        perm = rng.permutation(dataset.size)
        cand = np.array_split(perm, n_clients)
        if all(np.unique(dataset.labels[s]).shape[0] == dataset.class_count for s in cand):
            slices = cand
            break
    if slices is None:
        raise PartitionError(
            f"no equal split of {dataset.size} samples over {n_clients} clients "
            f"kept all {dataset.class_count} classes after {max_retries} draws")
    mats = domain_transforms(dataset.features.shape[1], n_clients, seed)
    clients = []
    for i, sl in enumerate(slices):
        feats = dataset.features[sl]
        if apply_transforms and i > 0:
            feats = feats @ mats[i].T
        local = Dataset(feats, dataset.labels[sl], dataset.class_count)
        tr, va, te = train_val_test_split(np.arange(local.size), val_frac, test_frac,
                                          seed=_derived_seed(seed, 4, i))
        clients.append(ClientDataset(local, tr, va, te))
    return clients


def _derived_seed(seed: int, tag: int, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), tag, k]).generate_state(1)[0])


def train_val_test_split(indices, val_frac: float, test_frac: float, seed: int):
    """Seeded disjoint split; val/test sizes round down, remainder trains."""
    if not (0 < val_frac < 1 and 0 < test_frac < 1 and val_frac + test_frac < 1):
        raise ValueError("fractions must lie in (0,1) and sum below 1")
    indices = np.asarray(indices, dtype=np.int64)
    n = indices.shape[0]
    n_val = int(n * val_frac)
    n_test = int(n * test_frac)
    if n_val < 1 or n_test < 1 or n - n_val - n_test < 1:
        raise EmptyDataError(
            f"split of {n} rows at val={val_frac}, test={test_frac} leaves an empty part")
    perm = np.random.default_rng(seed).permutation(indices)
    return (np.sort(perm[n_val + n_test:]), np.sort(perm[:n_val]),
            np.sort(perm[n_val:n_val + n_test]))


def _split_train_val(indices: np.ndarray, val_frac: float, seed: int):
    n = indices.shape[0]
    n_val = max(int(n * val_frac), 1)
    if n - n_val < 1:
        raise EmptyDataError(f"client slice of {n} rows cannot spare a validation split")
    perm = np.random.default_rng(seed).permutation(indices)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def build_client_datasets(dataset: Dataset, part: PartitionSpec):
    """Full pipeline from one dataset to N ClientDatasets per the partition spec."""
    if part.mode == "domain_shift":
        clients = domain_shift_partition(dataset, part.n_clients, part.seed,
                                         part.val_frac, part.test_frac)
    elif part.skewed_test:
        shards = dirichlet_label_partition(dataset, part.n_clients, part.beta, part.seed)
        clients = []
        for i, shard in enumerate(shards):
            tr, va, te = train_val_test_split(shard, part.val_frac, part.test_frac,
                                              seed=_derived_seed(part.seed, 5, i))
            clients.append(ClientDataset(dataset, tr, va, te))
    else:
        # Hold out a globally IID test pool, Dirichlet-skew the remainder,
        # and deal the pool out evenly as the clients' test partitions.
        rng = np.random.default_rng(np.random.SeedSequence([int(part.seed), 6]))
        perm = rng.permutation(dataset.size)
        n_test = max(int(dataset.size * part.test_frac), 1)
        test_pool = perm[:n_test]
        rest = perm[n_test:]
        shards = dirichlet_label_partition(dataset, part.n_clients, part.beta,
                                           part.seed, indices=rest)
        clients = []
        for i, shard in enumerate(shards):
            tr, va = _split_train_val(shard, part.val_frac,
                                      seed=_derived_seed(part.seed, 5, i))
            te = np.sort(test_pool[i::part.n_clients])
            clients.append(ClientDataset(dataset, tr, va, te))
    if part.standardize:
        clients = standardize_clients(clients)
    return clients


def standardize_clients(clients):
    """Zero-mean unit-variance features, statistics from the union of train splits.

    Clients sharing one underlying dataset keep sharing the rescaled copy.
    """
    train_rows = np.concatenate([c.train_x for c in clients])
    mean = train_rows.mean(axis=0)
    std = train_rows.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    rescaled = {}
    out = []
    for c in clients:
        key = id(c.dataset)
        if key not in rescaled:
            rescaled[key] = Dataset((c.dataset.features - mean) / std,
                                    c.dataset.labels, c.dataset.class_count)
        out.append(replace(c, dataset=rescaled[key]))
    return out


def global_test_set(clients):
    """Union of the clients' held-out test partitions."""
    feats = np.concatenate([c.test_x for c in clients])
    labels = np.concatenate([c.test_y for c in clients])
    if feats.shape[0] < 1:
        raise EmptyDataError("no test rows across clients")
    return feats, labels


# ------------------------------------------------------------------ ingestion

def _read_idx_payload(path, expected_magic, ndims, kind):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    header = 4 + 4 * ndims
    if len(raw) < 4:
        raise IdxTruncatedError(f"{kind} file {path} shorter than its magic number")
    magic = int.from_bytes(raw[:4], "big")
    if magic != expected_magic:
        raise IdxMagicError(
            f"{kind} file {path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if len(raw) < header:
        raise IdxTruncatedError(f"{kind} file {path} ends inside its dimension header")
    dims = [int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndims)]
    count = math.prod(dims)
    if len(raw) < header + count:
        raise IdxTruncatedError(
            f"{kind} file {path}: declared {count} bytes, found {len(raw) - header}")
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return dims, data


def load_idx(path_images, path_labels) -> Dataset:
    """Parse an IDX image/label file pair; pixels scale to [0, 1]."""
    (n_img, rows, cols), pixels = _read_idx_payload(path_images, IMAGE_MAGIC, 3, "image")
    (n_lab,), labels = _read_idx_payload(path_labels, LABEL_MAGIC, 1, "label")
    if n_img != n_lab:
        raise IdxCountMismatchError(f"{n_img} images but {n_lab} labels")
    feats = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1)


def load_csv(path) -> Dataset:
    """CSV with a header row; the column named `label` holds class indices."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise EmptyDataError(f"{path} has no data rows")
    header = rows[0]
    if "label" not in header:
        raise ValueError(f"{path}: no column named 'label'")
    lab_col = header.index("label")
    feat_cols = [i for i in range(len(header)) if i != lab_col]
    feats = np.array([[float(r[i]) for i in feat_cols] for r in rows[1:]])
    labels = np.array([int(r[lab_col]) for r in rows[1:]], dtype=np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1)
