"""textsr: a from-scratch super-resolution engine for text images.

Small stacks of valid convolutions (ReLU between, linear last) map a
bicubic-upscaled low-resolution image straight to its high-resolution
estimate. The package covers the full pipeline: dataset preparation,
patch-based SGD training, inference, greedy model combination, and
PSNR/RMSE/SSIM evaluation, all double precision and fully seeded.
"""

from .ensemble import (
    Combination,
    EvalItem,
    ModelPool,
    PsnrScorer,
    ScoredCombination,
    average_outputs,
    greedy_search,
    score_combination,
)
from .imaging import (
    DatasetManifest,
    ManifestEntry,
    bicubic_downscale,
    bicubic_upscale_x2,
    generate_synthetic_corpus,
    load_manifest,
    load_pgm,
    save_manifest,
    save_pgm,
    split_dataset,
)
from .metrics import evaluate_set, mssim, psnr, rmse
from .network import (
    Checkpoint,
    LayerSpec,
    Network,
    NetworkSpec,
    format_spec,
    forward,
    init_network,
    load_checkpoint,
    param_count,
    parse_spec,
    predict_image,
    save_checkpoint,
    shrink,
    training_pad,
)
from .ops import FilterBank, conv2d_backward, conv2d_valid, crop_center, relu, zero_pad
from .training import (
    ConvergenceRecord,
    PatchPair,
    TrainConfig,
    TrainResult,
    extract_patch_pairs,
    mse_loss,
    sgd_step,
    train,
)

__version__ = "0.1.0"
