"""Trainable weight averaging: optimize averaging coefficients of sampled
checkpoints by projected gradient descent in their span."""

from .averaging import greedy_soup, lawa, swa
from .checkpoints import CheckpointSet, SamplingPolicy, load_set, save_checkpoint, should_sample
from .distributed import DistributedConfig, all_reduce_mean, distributed_project, partition_columns
from .model_zoo import Dataset, MlpSpec, evaluate, init_params, load_csv, loss_and_grad, make_synthetic
from .optimizer import TwaConfig, TwaState, lr_at, run_twa, twa_step
from .param_space import LayerPartition, axpy, matvec, matvec_t, slice_group
from .subspace import SubspaceBasis, extract, gram_schmidt, project, reconstruct

__version__ = "0.1.0"
