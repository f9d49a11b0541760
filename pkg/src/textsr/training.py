"""Patch-based training: sliding-window pair extraction, MSE on the central
crop, and mini-batch SGD with per-layer learning rates.

Training works on 18x18 windows taken with a stride of 2 vertically and 5
horizontally. The network input is the low-resolution window zero-padded so
the stacked valid convolutions emit exactly the 14x14 center of the
high-resolution window. Plain SGD, gradients averaged over the batch; the
last layer has its own learning rate. Runs are fully determined by
(config, data): same seed, same bits.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .network import (
    Network,
    NetworkSpec,
    forward_batch,
    format_spec,
    init_network,
    predict_image,
    save_checkpoint,
    training_pad,
)
from .ops import FilterBank, conv2d_backward_batch, crop_center, zero_pad

PATCH_SIZE = 18
TARGET_SIZE = 14
STRIDE_VERTICAL = 2
STRIDE_HORIZONTAL = 5


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class PatchPair:
    """One training sample: padded LR input window and its 14x14 HR target."""
    input: np.ndarray   # (1, 18 + pad, 18 + pad)
    target: np.ndarray  # (1, 14, 14)
    source_image_id: str = ""
    origin: tuple[int, int] = (0, 0)


@dataclass
class TrainConfig:
    spec: NetworkSpec
    lr_last: float = 1e-5
    lr_other: float = 1e-4
    weight_std: float = 0.001
    seed: int = 0
    batch_size: int = 128
    max_iterations: int = 5000
    checkpoint_every: int = 1000
    eval_every: int = 100

    def __post_init__(self):
        if self.lr_last < 0 or self.lr_other < 0:
            raise ValueError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.checkpoint_every < 1 or self.eval_every < 1:
            raise ValueError("checkpoint_every and eval_every must be >= 1")


@dataclass
class ConvergenceRecord:
    iteration: int
    backprop_count: int  # iterations x batch_size
    train_mse: float
    val_psnr: float      # NaN when no validation images were supplied


@dataclass
class TrainResult:
    network: Network
    records: list[ConvergenceRecord]
    checkpoint_paths: list[str] = field(default_factory=list)


def _single_channel(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] != 1:
        raise ValueError(f"expected a single-channel image, got shape {img.shape}")
    return img


def extract_patch_pairs(hr, lr_upscaled, spec: NetworkSpec,
                        source_image_id: str = "") -> list[PatchPair]:
    """All 18x18 window pairs of an HR / upscaled-LR image pair.

    Windows are anchored top-left at rows 0, 2, 4, ... and columns 0, 5,
    10, ...; the LR window is zero-padded by training_pad/2 per side and the
    target is the central 14x14 crop of the HR window. Images smaller than
    18x18 yield an empty list with a warning.
    """
    hr = _single_channel(hr)
    lr_upscaled = _single_channel(lr_upscaled)
    if hr.shape != lr_upscaled.shape:
        raise ValueError(f"HR/LR shape mismatch: {hr.shape} vs {lr_upscaled.shape}")
    _, h, w = hr.shape
    if h < PATCH_SIZE or w < PATCH_SIZE:
        warnings.warn(
            f"image {h}x{w} smaller than {PATCH_SIZE}x{PATCH_SIZE}; no patches extracted",
            stacklevel=2)
        return []
    half_pad = training_pad(spec) // 2
    pairs = []
    for row in range(0, h - PATCH_SIZE + 1, STRIDE_VERTICAL):
        for col in range(0, w - PATCH_SIZE + 1, STRIDE_HORIZONTAL):
            lr_win = lr_upscaled[:, row:row + PATCH_SIZE, col:col + PATCH_SIZE]
            hr_win = hr[:, row:row + PATCH_SIZE, col:col + PATCH_SIZE]
            pairs.append(PatchPair(
                input=zero_pad(lr_win, half_pad, half_pad, half_pad, half_pad),
                target=crop_center(hr_win, TARGET_SIZE, TARGET_SIZE),
                source_image_id=source_image_id,
                origin=(row, col),
            ))
    return pairs


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def loss_and_gradients(net: Network, inputs: np.ndarray, targets: np.ndarray):
    """Batch MSE plus per-layer (weight, bias) gradients, averaged over the batch.

    inputs: (N, 1, Hp, Wp) padded patches; targets: (N, 1, 14, 14).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    # overflow to inf is intentional here: callers detect non-finite losses
    # and raise DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        pred, acts = forward_batch(net, inputs, keep_intermediates=True)
        if pred.shape != targets.shape:
            raise ValueError(f"network output {pred.shape} does not match targets {targets.shape}")
        diff = pred - targets
        loss = float(np.mean(diff * diff))
        grad = (2.0 / diff.size) * diff
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.banks)
        for i in reversed(range(len(net.banks))):
            layer_in = acts[i - 1] if i > 0 else inputs
            gx, gw, gb = conv2d_backward_batch(layer_in, net.banks[i], grad,
                                               need_grad_input=i > 0)
            grads[i] = (gw, gb)
            if i > 0:
                # the post-ReLU map is positive exactly where its pre-activation was
                grad = np.where(layer_in > 0.0, gx, 0.0)
    return loss, grads


def sgd_step(net: Network, batch: list[PatchPair],
             config: TrainConfig) -> tuple[Network, float]:
    """One plain-SGD update over a batch; returns the new network and the
    pre-update batch MSE. The input network is left untouched."""
    if not batch:
        raise ValueError("batch must be non-empty")
    inputs = np.stack([p.input for p in batch])
    targets = np.stack([p.target for p in batch])
    loss, grads = loss_and_gradients(net, inputs, targets)
    if not math.isfinite(loss):
        raise DivergenceError(f"batch MSE is {loss}")
    last = len(net.banks) - 1
    banks = []
    for i, (bank, (gw, gb)) in enumerate(zip(net.banks, grads)):
        lr = config.lr_last if i == last else config.lr_other
        if lr == 0.0:
            banks.append(bank)  # frozen layer: reuse as-is, bit-identical
        else:
            banks.append(FilterBank(bank.weights - lr * gw, bank.biases - lr * gb))
    return Network(net.spec, banks), loss


def _batch_indices(rng: np.random.Generator, n: int, batch_size: int):
    """Endless epoch-shuffled batches without replacement (remainders dropped)."""
    while True:
        perm = rng.permutation(n)
        if n <= batch_size:
            yield perm
        else:
            for start in range(0, n - batch_size + 1, batch_size):
                yield perm[start:start + batch_size]


def _validation_psnr(net: Network, val_images) -> float:
    if not val_images:
        return math.nan
    values = []
    for lr_up, hr in val_images:
        sr = predict_image(net, _single_channel(lr_up))
        # training-side convention: 4-pixel border removed
        values.append(metrics.psnr(sr, _single_channel(hr), border_mode="trim"))
    finite = [v for v in values if math.isfinite(v)]
    return float(np.mean(finite)) if finite else math.inf


def train(config: TrainConfig, train_pairs: list[PatchPair], val_images=(),
          checkpoint_dir=None) -> TrainResult:
    """Run max_iterations mini-batch SGD steps over the patch pairs.

    val_images is a sequence of (lr_upscaled, hr) full-image pairs used for
    the convergence records' validation PSNR. Checkpoints are written every
    checkpoint_every iterations (and at the end) when checkpoint_dir is set.
    Raises DivergenceError, naming the iteration, if the loss leaves the
    finite range.
    """
    if not train_pairs:
        raise ValueError("training set must be non-empty")
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    net = init_network(config.spec, config.weight_std, init_seed)
    sampler = np.random.default_rng(shuffle_seed)

    inputs = np.stack([p.input for p in train_pairs])
    targets = np.stack([p.target for p in train_pairs])

    records: list[ConvergenceRecord] = []
    checkpoint_paths: list[str] = []
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    def write_ckpt(iteration: int):
        if checkpoint_dir is None:
            return
        path = checkpoint_dir / f"ckpt_{iteration:07d}.tsr"
        save_checkpoint(net, iteration, path, rng_state=sampler.bit_generator.state)
        checkpoint_paths.append(str(path))

    last = len(net.banks) - 1
    window_losses: list[float] = []
    batches = _batch_indices(sampler, len(train_pairs), config.batch_size)
    for it in range(1, config.max_iterations + 1):
        idx = next(batches)
        try:
            loss, grads = loss_and_gradients(net, inputs[idx], targets[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"batch MSE is {loss}")
            banks = []
            for i, (bank, (gw, gb)) in enumerate(zip(net.banks, grads)):
                lr = config.lr_last if i == last else config.lr_other
                if lr == 0.0:
                    banks.append(bank)
                else:
                    banks.append(FilterBank(bank.weights - lr * gw, bank.biases - lr * gb))
            net = Network(net.spec, banks)
        except (DivergenceError, ValueError) as exc:
            raise DivergenceError(
                f"training diverged at iteration {it} "
                f"({format_spec(config.spec)}): {exc}") from exc
        window_losses.append(loss)
        if it % config.eval_every == 0 or it == config.max_iterations:
            records.append(ConvergenceRecord(
                iteration=it,
                backprop_count=it * config.batch_size,
                train_mse=float(np.mean(window_losses)),
                val_psnr=_validation_psnr(net, val_images),
            ))
            window_losses.clear()
        if it % config.checkpoint_every == 0:
            write_ckpt(it)
    if config.max_iterations % config.checkpoint_every != 0 or config.max_iterations == 0:
        write_ckpt(config.max_iterations)
    return TrainResult(net, records, checkpoint_paths)


def write_convergence_csv(records: list[ConvergenceRecord], path) -> None:
    """CSV with columns iteration,backprops,train_mse,val_psnr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "backprops", "train_mse", "val_psnr"])
        for r in records:
            writer.writerow([r.iteration, r.backprop_count,
                             repr(r.train_mse), repr(r.val_psnr)])
