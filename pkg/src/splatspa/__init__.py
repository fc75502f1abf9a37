"""splatspa: sparsity-constrained 2D Gaussian splatting.

Fits a cloud of anisotropic 2D Gaussians to an image by differentiable
alpha compositing, and reduces the cloud to a hard splat budget with an
alternating optimize/sparsify scheme (quadratic coupling to an exactly
sparse auxiliary opacity vector, refreshed by top-k projection, with dual
multiplier updates). One-shot pruning baselines, metrics, checkpointing
and splat-PLY tooling round out the testbed.
"""

from .gs_core import (
    DENSITY_CUTOFF_Q,
    Gaussian2D,
    GaussianCloud,
    build_covariance,
    empty_cloud,
    eval_gaussian,
    eval_gaussian_grad,
    inverse_sigmoid,
    sigmoid,
)
from .loss_metrics import LossConfig, loss, psnr, ssim
from .renderer import RenderBuffers, RenderSettings, render, render_backward, render_weight_sums
from .sparsifier import (
    ProjectionCriterion,
    SparsifierState,
    converged,
    coupling_gradient,
    init_state,
    multiplier_update,
    residual,
    sparsify_step,
    top_k_indices,
)
from .trainer import (
    OneShotConfig,
    SparsifyConfig,
    TrainSchedule,
    TrainerSession,
    hit_count_scores,
    init_cloud,
    make_schedule,
    oneshot_prune_baseline,
    train_dense,
    train_gaussianspa,
)
from .model_io import (
    CheckpointModel,
    SplatPlyRecord,
    load_checkpoint,
    read_image,
    read_splat_ply,
    save_checkpoint,
    simplify_splat_ply,
    splat_ply_dtype,
    write_image,
    write_splat_ply,
)
from .targets import synthetic_image

__version__ = "0.1.0"
