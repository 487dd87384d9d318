"""Consistency-model training laboratory.

Small, fully deterministic numpy implementation of consistency training
with beta noise-level sampling, sinusoidal step-count curricula, and an
attention-gated conditional denoiser. Everything runs at desk scale: toy
2D point clouds, 32x32 images, and 64x64 synthetic phantoms.
"""

import os as _os

# Thread cap must land before numpy configures its BLAS. Explicitly set
# BLAS variables win over CLAB_THREADS.
_threads = _os.environ.get("CLAB_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"

from .schedules import (  # noqa: F401,E402
    NoiseRange,
    NoiseGrid,
    karras_grid,
    sinusoidal_grid,
    build_grid,
    LognormalParams,
    lognormal_index_pmf,
    sample_lognormal,
    BetaParams,
    beta_pdf,
    sample_beta_indices,
    HighNoiseInjection,
    inject_high_noise,
    loss_weight,
)
from .curriculum import (  # noqa: F401,E402
    CurriculumConfig,
    improved_n,
    sinusoidal_n,
    constant_n,
    n_for_step,
)
from .consistency import (  # noqa: F401,E402
    BoundaryScalings,
    boundary_scalings,
    consistency_forward,
    TrajectoryPair,
    make_pair,
    HuberConfig,
    default_huber_c,
    pseudo_huber,
    ct_loss,
    consistency_matching_loss,
    EmaConfig,
    ema_update,
    ConsistencyFunction,
    single_step_sample,
    multi_step_sample,
)
from .network import (  # noqa: F401,E402
    NetConfig,
    WagConfig,
    build_mlp,
    build_unet,
    build_conditional_unet,
    WeightedAttentionGate,
    wag_forward,
    sigma_embedding,
)
from .data import (  # noqa: F401,E402
    Dataset,
    PhantomPair,
    gen_gauss2d,
    gen_phantoms,
    phantom_arrays,
    load_image_dir,
    minibatch,
    read_pgm,
    write_pgm,
)
from .train import (  # noqa: F401,E402
    TrainConfig,
    TrainState,
    TrainingDiverged,
    adam_step,
    rectified_adam_step,
    clip_global_norm,
    train_step,
    train_loop,
    init_state,
    save_train_checkpoint,
    load_train_checkpoint,
)
from .metrics import (  # noqa: F401,E402
    MetricReport,
    metric_csv,
    psnr,
    ssim,
    sliced_wasserstein,
    mode_histogram,
    schedule_report,
)
from .checkpoint import save_tensors, load_tensors, manifest_diff  # noqa: F401,E402
from .config import Config, ConfigError, preset_config  # noqa: F401,E402
