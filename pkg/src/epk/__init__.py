"""Checkpointed full-batch gradient descent plus exact path-kernel
reconstruction, baselines, and Gram/GP analysis for small classification
networks."""

__version__ = "0.1.0"

from .data import BlobSpec, LabeledDataset, gen_blobs, load_mnist
from .gp import GramMatrix, PosteriorField, check_psd, gram, kriging, mc_prob_std
from .kernel import (
    KernelBlock,
    PointSet,
    PredictionReport,
    SampleCoefficients,
    alignment_error,
    dpk_predict,
    epk_gram,
    epk_predict,
    epk_self_blocks,
    epk_step_block,
    interpolate_weights,
    kernel_contributions,
    ntk_block,
    predict,
    reduce_to_kernel_machine,
    sample_coefficients,
    weight_path_diagnostic,
)
from .model import (
    ModelSpec,
    batch_loss_gradient,
    forward,
    forward_batch,
    jacobian_batch,
    loss_grad_wrt_output,
    loss_nll,
    per_sample_jacobian,
)
from .train import (
    Trajectory,
    init_model,
    load_trajectory,
    save_trajectory,
    train_full_batch,
)
