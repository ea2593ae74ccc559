"""One-shot sequential federated learning with local model-pool diversity."""

from .backend import BACKEND, NUMBA_AVAILABLE
from .config import DataConfig, ExperimentConfig, load_config, parse_config, serialize_config
from .data import (
    ClientDataset,
    Dataset,
    PartitionSpec,
    build_client_datasets,
    dirichlet_label_partition,
    domain_shift_partition,
    gen_synthetic_classification,
    global_test_set,
    load_csv,
    load_idx,
    train_val_test_split,
)
from .diversity import (
    ModelPool,
    RegularizerConfig,
    distance_d1,
    distance_d2,
    magnitude_normalize,
    pool_mean,
    pool_pairwise_distances,
    total_gradient,
    total_loss,
)
from .experiment import emit_comparison, materialize, run_experiment
from .models import (
    ModelSpec,
    average_params,
    backward,
    cross_entropy,
    evaluate_accuracy,
    forward,
    init_params,
    l2_distance,
)
from .protocols import (
    SERVER,
    CommLedger,
    RunResult,
    make_order,
    run_decentralized_pfl,
    run_fedseq_baseline,
    run_few_shot_sfl,
    run_one_shot_sfl,
    run_parallel_average_baseline,
)
from .training import (
    EpochRecord,
    HyperParams,
    OptimizerState,
    adam_step,
    sgd_step,
    train_client,
    train_pool_model,
    warm_up,
)

__version__ = "0.1.0"
