"""Plain-text experiment configuration: `key = value` lines, dotted keys.

Anything after a ``#`` is a comment. Unknown keys, malformed values and
constraint violations raise :class:`ConfigError` naming the key path.
``parse_config(serialize_config(cfg))`` reproduces ``cfg`` exactly.

Defaults for the training knobs follow the reference large-scale settings
(pool of 5, warm-up 30, alpha 0.06, beta 1, Adam at 5e-5 with weight decay
1e-4); desk-scale runs normally override them, see the README quickstart.
"""

from dataclasses import dataclass, field
from typing import Optional

from .diversity import RegularizerConfig
from .errors import ConfigError
from .training import HyperParams

PROTOCOLS = ("fedelmy_oneshot", "fedelmy_fewshot", "fedelmy_decentralized",
             "fedseq", "parallel_avg")


@dataclass(frozen=True)
class DataConfig:
    """Dataset source plus partitioning choices."""

    source: str = "synthetic"
    classes: int = 10
    dims: int = 32
    samples_per_class: int = 400
    cluster_spread: float = 0.4
    seed: int = 0
    partition: str = "dirichlet"
    dirichlet_beta: float = 0.5
    val_frac: float = 0.1
    test_frac: float = 0.2
    skewed_test: bool = False
    standardize: bool = True
    idx_images: Optional[str] = None
    idx_labels: Optional[str] = None
    csv_path: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "fedelmy_oneshot"
    output_dir: str = "runs"
    repeats: int = 1
    bytes_per_param: int = 4
    order_mode: str = "random"
    order_fixed: Optional[tuple] = None
    model_layers: Optional[tuple] = None
    activation: str = "relu"
    data: DataConfig = field(default_factory=DataConfig)
    hp: HyperParams = field(default_factory=HyperParams)


def _parse_int(s):
    return int(s)


def _parse_float(s):
    return float(s)


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_str(s):
    return s


def _parse_intlist(s):
    return tuple(int(p.strip()) for p in s.split(",") if p.strip())


_PARSERS = {"int": _parse_int, "float": _parse_float, "bool": _parse_bool,
            "str": _parse_str, "intlist": _parse_intlist}


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


# key -> (parser, default, constraint description, constraint predicate)
_ALWAYS = None
SCHEMA = {
    "protocol": ("str", "fedelmy_oneshot", f"one of {PROTOCOLS}", lambda v: v in PROTOCOLS),
    "output_dir": ("str", "runs", _ALWAYS, None),
    "repeats": ("int", 1, ">= 1", lambda v: v >= 1),
    "bytes_per_param": ("int", 4, ">= 1", lambda v: v >= 1),
    "order.mode": ("str", "random", "one of ('random', 'fixed')",
                   lambda v: v in ("random", "fixed")),
    "order.fixed": ("intlist", None, _ALWAYS, None),
    "model.layers": ("intlist", None, "at least 2 positive widths",
                     lambda v: len(v) >= 2 and all(x >= 1 for x in v)),
    "model.activation": ("str", "relu", "one of ('relu', 'tanh')",
                         lambda v: v in ("relu", "tanh")),
    "data.source": ("str", "synthetic", "one of ('synthetic', 'idx', 'csv')",
                    lambda v: v in ("synthetic", "idx", "csv")),
    "data.classes": ("int", 10, ">= 2", lambda v: v >= 2),
    "data.dims": ("int", 32, ">= 2", lambda v: v >= 2),
    "data.samples_per_class": ("int", 400, ">= 1", lambda v: v >= 1),
    "data.cluster_spread": ("float", 0.4, ">= 0", lambda v: v >= 0),
    "data.seed": ("int", 0, ">= 0", lambda v: v >= 0),
    "data.partition": ("str", "dirichlet", "one of ('dirichlet', 'domain_shift')",
                       lambda v: v in ("dirichlet", "domain_shift")),
    "data.dirichlet_beta": ("float", 0.5, "> 0", lambda v: v > 0),
    "data.val_frac": ("float", 0.1, "in (0, 1)", lambda v: 0 < v < 1),
    "data.test_frac": ("float", 0.2, "in (0, 1)", lambda v: 0 < v < 1),
    "data.skewed_test": ("bool", False, _ALWAYS, None),
    "data.standardize": ("bool", True, _ALWAYS, None),
    "data.idx_images": ("str", None, _ALWAYS, None),
    "data.idx_labels": ("str", None, _ALWAYS, None),
    "data.csv_path": ("str", None, _ALWAYS, None),
    "hp.num_clients": ("int", 5, ">= 1", lambda v: v >= 1),
    "hp.pool_models": ("int", 5, ">= 1", lambda v: v >= 1),
    "hp.local_epochs": ("int", 200, ">= 1", lambda v: v >= 1),
    "hp.warmup_epochs": ("int", 30, ">= 0", lambda v: v >= 0),
    "hp.alpha": ("float", 0.06, ">= 0", lambda v: v >= 0),
    "hp.beta": ("float", 1.0, ">= 0", lambda v: v >= 0),
    "hp.learning_rate": ("float", 5e-5, "> 0", lambda v: v > 0),
    "hp.weight_decay": ("float", 1e-4, ">= 0", lambda v: v >= 0),
    "hp.optimizer": ("str", "adam", "one of ('sgd', 'adam')",
                     lambda v: v in ("sgd", "adam")),
    "hp.batch_size": ("int", 64, ">= 1", lambda v: v >= 1),
    "hp.shots": ("int", 1, ">= 1", lambda v: v >= 1),
    "hp.seed": ("int", 0, ">= 0", lambda v: v >= 0),
    "hp.select_best_val": ("bool", True, _ALWAYS, None),
    "reg.enable_d1": ("bool", True, _ALWAYS, None),
    "reg.enable_d2": ("bool", True, _ALWAYS, None),
    "reg.measure": ("str", "l2", "one of ('l2', 'l1', 'cosine')",
                    lambda v: v in ("l2", "l1", "cosine")),
    "reg.epsilon": ("float", 1e-12, "> 0", lambda v: v > 0),
    "reg.normalize": ("bool", True, _ALWAYS, None),
    "reg.normalize_every_step": ("bool", True, _ALWAYS, None),
    "reg.upscale_small": ("bool", False, _ALWAYS, None),
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse a configuration document, filling defaults and validating."""
    values = {key: spec[1] for key, spec in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        parser_name, _, desc, check = SCHEMA[key]
        try:
            parsed = _PARSERS[parser_name](val)
        except ValueError:
            raise ConfigError(key, f"cannot parse {val!r} as {parser_name}") from None
        if check is not None and not check(parsed):
            raise ConfigError(key, f"value {parsed!r} violates constraint: {desc}")
        values[key] = parsed
    return _assemble(values)


def _assemble(v) -> ExperimentConfig:
    if v["data.val_frac"] + v["data.test_frac"] >= 1:
        raise ConfigError("data.val_frac",
                          "val_frac + test_frac must stay below 1")
    if v["order.mode"] == "fixed":
        fixed = v["order.fixed"]
        if fixed is None or sorted(fixed) != list(range(v["hp.num_clients"])):
            raise ConfigError("order.fixed",
                              f"must be a permutation of 0..{v['hp.num_clients'] - 1}")
    if v["data.source"] == "idx" and not (v["data.idx_images"] and v["data.idx_labels"]):
        raise ConfigError("data.idx_images", "idx source needs both idx paths")
    if v["data.source"] == "csv" and not v["data.csv_path"]:
        raise ConfigError("data.csv_path", "csv source needs a path")

    reg = RegularizerConfig(
        alpha=v["hp.alpha"], beta=v["hp.beta"],
        enable_d1=v["reg.enable_d1"], enable_d2=v["reg.enable_d2"],
        measure=v["reg.measure"], epsilon=v["reg.epsilon"],
        normalize=v["reg.normalize"],
        normalize_every_step=v["reg.normalize_every_step"],
        upscale_small=v["reg.upscale_small"])
    hp = HyperParams(
        num_clients=v["hp.num_clients"], pool_models=v["hp.pool_models"],
        local_epochs=v["hp.local_epochs"], warmup_epochs=v["hp.warmup_epochs"],
        learning_rate=v["hp.learning_rate"], weight_decay=v["hp.weight_decay"],
        optimizer=v["hp.optimizer"], batch_size=v["hp.batch_size"],
        shots=v["hp.shots"], seed=v["hp.seed"], regularizer=reg,
        select_best_val=v["hp.select_best_val"])
    data = DataConfig(
        source=v["data.source"], classes=v["data.classes"], dims=v["data.dims"],
        samples_per_class=v["data.samples_per_class"],
        cluster_spread=v["data.cluster_spread"], seed=v["data.seed"],
        partition=v["data.partition"], dirichlet_beta=v["data.dirichlet_beta"],
        val_frac=v["data.val_frac"], test_frac=v["data.test_frac"],
        skewed_test=v["data.skewed_test"], standardize=v["data.standardize"],
        idx_images=v["data.idx_images"], idx_labels=v["data.idx_labels"],
        csv_path=v["data.csv_path"])
    return ExperimentConfig(
        protocol=v["protocol"], output_dir=v["output_dir"], repeats=v["repeats"],
        bytes_per_param=v["bytes_per_param"], order_mode=v["order.mode"],
        order_fixed=tuple(v["order.fixed"]) if v["order.fixed"] else None,
        model_layers=tuple(v["model.layers"]) if v["model.layers"] else None,
        activation=v["model.activation"], data=data, hp=hp)


def _values_of(cfg: ExperimentConfig) -> dict:
    d, hp, reg = cfg.data, cfg.hp, cfg.hp.regularizer
    return {
        "protocol": cfg.protocol, "output_dir": cfg.output_dir,
        "repeats": cfg.repeats, "bytes_per_param": cfg.bytes_per_param,
        "order.mode": cfg.order_mode, "order.fixed": cfg.order_fixed,
        "model.layers": cfg.model_layers, "model.activation": cfg.activation,
        "data.source": d.source, "data.classes": d.classes, "data.dims": d.dims,
        "data.samples_per_class": d.samples_per_class,
        "data.cluster_spread": d.cluster_spread, "data.seed": d.seed,
        "data.partition": d.partition, "data.dirichlet_beta": d.dirichlet_beta,
        "data.val_frac": d.val_frac, "data.test_frac": d.test_frac,
        "data.skewed_test": d.skewed_test, "data.standardize": d.standardize,
        "data.idx_images": d.idx_images, "data.idx_labels": d.idx_labels,
        "data.csv_path": d.csv_path,
        "hp.num_clients": hp.num_clients, "hp.pool_models": hp.pool_models,
        "hp.local_epochs": hp.local_epochs, "hp.warmup_epochs": hp.warmup_epochs,
        "hp.alpha": reg.alpha, "hp.beta": reg.beta,
        "hp.learning_rate": hp.learning_rate, "hp.weight_decay": hp.weight_decay,
        "hp.optimizer": hp.optimizer, "hp.batch_size": hp.batch_size,
        "hp.shots": hp.shots, "hp.seed": hp.seed,
        "hp.select_best_val": hp.select_best_val,
        "reg.enable_d1": reg.enable_d1, "reg.enable_d2": reg.enable_d2,
        "reg.measure": reg.measure, "reg.epsilon": reg.epsilon,
        "reg.normalize": reg.normalize,
        "reg.normalize_every_step": reg.normalize_every_step,
        "reg.upscale_small": reg.upscale_small,
    }


def serialize_config(cfg: ExperimentConfig) -> str:
    """Normal-form text for a config; inverse of :func:`parse_config`."""
    values = _values_of(cfg)
    lines = []
    for key in SCHEMA:
        value = values[key]
        if value is None:
            continue
        lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def data_section_text(cfg: ExperimentConfig) -> str:
    """The dataset-defining lines of a config; used to fingerprint runs."""
    values = _values_of(cfg)
    keep = [k for k in SCHEMA
            if k.startswith(("data.", "model.")) or k == "hp.num_clients"]
    return "\n".join(f"{k} = {_fmt(values[k])}" for k in keep if values[k] is not None)
