"""SGD training with a staged learning-rate schedule and fine-tuning.

Training draws one augmented patch per iteration, alternating between data
sources every iteration so both influence the model equally, and updates the
parameters with classical momentum:

    v <- momentum * v - lr * grad        theta <- theta + v

The loss is weighted cross-entropy over labeled pixels, normalized by the
weight sum so its magnitude does not depend on how many pixels are labeled,
plus an L2 penalty (1e-5 * sum of squared kernels, biases excluded).
Validation runs after every epoch on augmented patches from the held-out
split; training stops early when the validation loss has not improved for
`patience` epochs and always returns the best-validation parameters.

Fine-tuning applies the same procedure to a small pool of correction FOVs
(F) mixed with an equal number of replayed prior FOVs (A), validating on a
disjoint prior sample (B) to detect overfitting, at a small learning rate
and high momentum.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import model as fcn
from .annotations import AnnotationSet, DatasetSplit, compile_maps
from .augment import sample_patch
from .stain import StainReference, normalize

SCHEDULE_ROWS = (
    (1, 50, 1e-4, 0.9),
    (51, 120, 1e-5, 0.99),
    (121, 200, 1e-6, 0.999),
)

FINETUNE_LR = 1e-6
FINETUNE_MOMENTUM = 0.999


@dataclass(frozen=True)
class Schedule:
    """Ordered (first epoch, last epoch, lr, momentum) rows, contiguous from 1."""

    rows: tuple[tuple[int, int, float, float], ...]

    def __post_init__(self):
        expected_first = 1
        for first, last, lr, momentum in self.rows:
            if first != expected_first or last < first:
                raise ValueError("schedule rows must be contiguous from epoch 1")
            if lr <= 0:
                raise ValueError("learning rates must be positive")
            if not 0.0 <= momentum < 1.0:
                raise ValueError("momentum must lie in [0, 1)")
            expected_first = last + 1

    def lookup(self, epoch: int) -> tuple[float, float]:
        """(lr, momentum) for a 1-based epoch; holds the last row beyond it."""
        if epoch < 1:
            raise ValueError(f"epoch must be >= 1, got {epoch}")
        for first, last, lr, momentum in self.rows:
            if first <= epoch <= last:
                return lr, momentum
        return self.rows[-1][2], self.rows[-1][3]


TABLE_SCHEDULE = Schedule(SCHEDULE_ROWS)


def constant_schedule(lr: float, momentum: float) -> Schedule:
    return Schedule(((1, 10**9, lr, momentum),))


def schedule_lookup(epoch: int) -> tuple[float, float]:
    """(learning rate, momentum) of the default staged table for a 1-based epoch."""
    return TABLE_SCHEDULE.lookup(epoch)


def weighted_cross_entropy(
    probmap: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> float:
    """Data term: sum_p w_p * (-log prob_p[class(label_p)]) / max(sum w, eps).

    Label 2 maps to class 1 (lymphocyte), label 1 to class 0; label-0 pixels
    carry weight 0 and do not contribute. An all-zero weight map yields 0.
    """
    probmap = np.asarray(probmap, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if probmap.shape[:2] != labels.shape or labels.shape != weights.shape:
        raise ValueError("probmap, labels and weights must share spatial dims")
    lymph = labels == 2
    labeled = lymph | (labels == 1)
    p_true = np.where(lymph, probmap[..., 1], probmap[..., 0])
    w = np.where(labeled, weights, 0.0)
    total = w.sum()
    if total <= 0.0:
        return 0.0
    return float(-(w * np.log(np.clip(p_true, fcn.LOG_EPS, None))).sum() / total)


def l2_penalty(params: fcn.ModelParams, coeff: float = fcn.L2_COEFF) -> float:
    """coeff * sum of squared kernel entries, biases excluded."""
    total = 0.0
    for name in params.manifest:
        if name.endswith(".bias"):
            continue
        total += float(np.square(params.tensors[name].astype(np.float64)).sum())
    return coeff * total


def patch_loss(
    params: fcn.ModelParams,
    image: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    mode: str = "eval",
    rng=None,
    l2_coeff: float = fcn.L2_COEFF,
) -> float:
    """Full training loss (data term + L2) of one patch, without autograd."""
    probmap = fcn.forward(params, image, mode=mode, rng=rng)
    return weighted_cross_entropy(probmap, labels, weights) + l2_penalty(
        params, l2_coeff
    )


# --------------------------------------------------------------------------
# Data containers
# --------------------------------------------------------------------------

@dataclass
class Fov:
    """One compiled training example: normalized image + supervision maps."""

    fov_id: str
    image: np.ndarray  # HxWx3 float32 in [0, 1], stain-normalized
    labels: np.ndarray
    weights: np.ndarray


def compile_training_fov(
    fov_id: str,
    image: np.ndarray,
    annotations: AnnotationSet,
    reference: StainReference | None = None,
    r1: int = 11,
) -> Fov:
    """Stain-normalize a raw FOV and compile its annotation maps."""
    if reference is not None:
        image = normalize(image, reference)
    img = image.astype(np.float32) / 255.0 if image.dtype == np.uint8 else image
    labels, weights = compile_maps(annotations, img.shape[0], img.shape[1], r1=r1)
    return Fov(fov_id=fov_id, image=img.astype(np.float32), labels=labels, weights=weights)


@dataclass
class TrainState:
    params: fcn.ModelParams
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    seed: int = 0
    source_toggle: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def new(cls, params: fcn.ModelParams, seed: int = 0) -> "TrainState":
        return cls(params=params, seed=seed)


@dataclass
class FineTuneJob:
    """Correction FOVs (F) plus replay (A) and holdout (B) prior samples."""

    new_fovs: list[Fov]
    replay_fovs: list[Fov]
    holdout_fovs: list[Fov]
    lr: float = FINETUNE_LR
    momentum: float = FINETUNE_MOMENTUM


def assemble_finetune_job(
    new_fovs: list[Fov],
    prior_fovs: list[Fov],
    rng: np.random.Generator,
    lr: float = FINETUNE_LR,
    momentum: float = FINETUNE_MOMENTUM,
) -> FineTuneJob:
    """Sample disjoint replay/holdout sets of size n = |F| from prior data.

    If the prior pool holds fewer than 2n FOVs the sample size shrinks (with
    a warning) so the two sets stay disjoint.
    """
    if not new_fovs:
        raise ValueError("fine-tune job needs at least one correction FOV")
    n = len(new_fovs)
    m = min(n, len(prior_fovs) // 2)
    if m < n:
        warnings.warn(
            f"prior pool has {len(prior_fovs)} FOVs < 2n = {2 * n}; "
            f"shrinking replay/holdout samples to {m}",
            stacklevel=2,
        )
    order = rng.permutation(len(prior_fovs))
    replay = [prior_fovs[i] for i in order[:m]]
    holdout = [prior_fovs[i] for i in order[m : 2 * m]]
    return FineTuneJob(
        new_fovs=list(new_fovs),
        replay_fovs=replay,
        holdout_fovs=holdout,
        lr=lr,
        momentum=momentum,
    )


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

class _LiveModel:
    """Torch module + momentum buffers kept hot across iterations."""

    def __init__(self, params: fcn.ModelParams, velocity: dict[str, np.ndarray]):
        self.template = params
        self.module = fcn.build_module(params, torch.float32)
        self.state_to_name = {
            fcn._state_key(n, params.config): n for n in params.manifest
        }
        self.velocity = {}
        for sname, p in self.module.named_parameters():
            name = self.state_to_name[sname]
            if name in velocity:
                self.velocity[sname] = torch.from_numpy(velocity[name].copy()).to(
                    torch.float32
                )
            else:
                self.velocity[sname] = torch.zeros_like(p)

    def step(self, patch, lr: float, momentum: float, generator) -> float:
        """One SGD update on one patch; returns the data-term loss."""
        self.module.train(True)
        self.module.zero_grad(set_to_none=True)
        x = fcn._image_tensor(patch.image, torch.float32)
        lab = torch.from_numpy(np.ascontiguousarray(patch.labels.astype(np.int64)))
        wgt = torch.from_numpy(np.ascontiguousarray(patch.weights)).to(torch.float32)
        probs = self.module(x, generator=generator)
        data = fcn.data_term(probs, lab, wgt)
        loss = data + fcn.l2_term(self.module)
        loss.backward()
        with torch.no_grad():
            for sname, p in self.module.named_parameters():
                v = self.velocity[sname]
                v.mul_(momentum).add_(p.grad, alpha=-lr)
                p.add_(v)
        return float(data.detach())

    def eval_loss(self, patch) -> float:
        self.module.train(False)
        x = fcn._image_tensor(patch.image, torch.float32)
        lab = torch.from_numpy(np.ascontiguousarray(patch.labels.astype(np.int64)))
        wgt = torch.from_numpy(np.ascontiguousarray(patch.weights)).to(torch.float32)
        with torch.no_grad():
            probs = self.module(x, generator=None)
            return float(fcn.data_term(probs, lab, wgt))

    def snapshot(self) -> fcn.ModelParams:
        return fcn.extract_params(self.module, self.template)

    def velocity_arrays(self) -> dict[str, np.ndarray]:
        return {
            self.state_to_name[sname]: v.numpy().copy()
            for sname, v in self.velocity.items()
        }


def _draw_patch(fovs: list[Fov], K: int, rng: np.random.Generator):
    fov = fovs[int(rng.integers(len(fovs)))]
    return sample_patch(fov.image, fov.labels, fov.weights, K, rng)


def _dropout_generator(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return gen


def _append_log(checkpoint_dir, row: dict) -> None:
    if checkpoint_dir is None:
        return
    os.makedirs(checkpoint_dir, exist_ok=True)
    path = os.path.join(checkpoint_dir, "loss_log.tsv")
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8") as fh:
        if new:
            fh.write("epoch\ttrain_loss\tval_loss\tlr\tmomentum\n")
        fh.write(
            f"{row['epoch']}\t{row['train_loss']:.6f}\t{row['val_loss']:.6f}"
            f"\t{row['lr']:.1e}\t{row['momentum']}\n"
        )


def train(
    state: TrainState,
    datasets: dict[str, DatasetSplit],
    epochs: int = 200,
    train_epoch_size: int = 175,
    val_epoch_size: int = 25,
    patience: int = 20,
    K: int = 256,
    checkpoint_dir=None,
    schedule: Schedule | None = None,
) -> TrainState:
    """Train with the table schedule, alternating sources every iteration.

    Returns the state holding the best-validation parameters (never the
    last epoch's). Deterministic for a fixed `state.seed`.

    Raises:
        ValueError: if any source has an empty training split.
    """
    if schedule is None:
        schedule = TABLE_SCHEDULE
    sources = list(datasets.items())
    if not sources:
        raise ValueError("no dataset sources supplied")
    for name, split in sources:
        if not split.train:
            raise ValueError(f"source {name!r} has an empty training split")
    val_pools = [(name, split.val) for name, split in sources if split.val]

    rng = np.random.default_rng(state.seed)
    live = _LiveModel(state.params, state.velocity)
    best_params = state.params.copy()
    best_val = state.best_val_loss
    since_improvement = state.epochs_since_improvement
    toggle = state.source_toggle
    history = list(state.history)

    last_epoch = state.epoch
    for epoch in range(state.epoch + 1, state.epoch + epochs + 1):
        lr, momentum = schedule.lookup(epoch)
        train_losses = []
        for _ in range(train_epoch_size):
            _, split = sources[toggle % len(sources)]
            toggle += 1
            patch = _draw_patch(split.train, K, rng)
            gen = _dropout_generator(rng)
            train_losses.append(live.step(patch, lr, momentum, gen))

        val_losses = []
        for i in range(val_epoch_size):
            if not val_pools:
                break
            _, pool = val_pools[i % len(val_pools)]
            val_losses.append(live.eval_loss(_draw_patch(pool, K, rng)))
        val_loss = float(np.mean(val_losses)) if val_losses else float("nan")

        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(train_losses)),
            "val_loss": val_loss,
            "lr": lr,
            "momentum": momentum,
        }
        history.append(row)
        _append_log(checkpoint_dir, row)

        if checkpoint_dir is not None and epoch % 10 == 0:
            snap = replace(live.snapshot(), epoch=epoch, schedule_epoch=epoch)
            fcn.save_checkpoint(snap, os.path.join(checkpoint_dir, f"epoch_{epoch:03d}"))

        last_epoch = epoch
        if val_losses and val_loss < best_val:
            best_val = val_loss
            best_params = replace(live.snapshot(), epoch=epoch, schedule_epoch=epoch)
            since_improvement = 0
            if checkpoint_dir is not None:
                fcn.save_checkpoint(best_params, os.path.join(checkpoint_dir, "best"))
        else:
            since_improvement += 1
            if val_losses and since_improvement > patience:
                break

    if not val_pools:
        # nothing to select on; return the final parameters
        best_params = replace(live.snapshot(), epoch=last_epoch, schedule_epoch=last_epoch)

    return TrainState(
        params=best_params,
        velocity=live.velocity_arrays(),
        epoch=best_params.epoch,
        best_val_loss=best_val,
        epochs_since_improvement=since_improvement,
        seed=state.seed,
        source_toggle=toggle % max(len(sources), 1),
        history=history,
    )


def finetune(
    state: TrainState,
    job: FineTuneJob,
    max_epochs: int = 20,
    patience: int = 3,
    train_epoch_size: int = 175,
    val_epoch_size: int = 25,
    K: int = 256,
    parent_id: str | None = None,
    checkpoint_dir=None,
) -> TrainState:
    """Fine-tune on F + A at the job's small lr / high momentum.

    Validation on B detects early stopping (patience 3 by default) so the
    model does not overfit the corrections. With no prior data (empty A/B)
    it trains on F alone for a fixed 5 epochs without validation. The
    returned parameters carry the parent lineage.
    """
    if not job.new_fovs:
        raise ValueError("fine-tune job has no correction FOVs")
    pool = job.new_fovs + job.replay_fovs
    degenerate = not job.replay_fovs

    rng = np.random.default_rng(state.seed)
    live = _LiveModel(state.params, {})
    best_params = None
    best_val = float("inf")
    since_improvement = 0
    history = list(state.history)
    epochs = 5 if degenerate else max_epochs

    final_epoch = state.params.epoch
    for epoch in range(state.params.epoch + 1, state.params.epoch + epochs + 1):
        train_losses = []
        for _ in range(train_epoch_size):
            patch = _draw_patch(pool, K, rng)
            gen = _dropout_generator(rng)
            train_losses.append(live.step(patch, job.lr, job.momentum, gen))

        val_losses = []
        if not degenerate and job.holdout_fovs:
            for _ in range(val_epoch_size):
                val_losses.append(live.eval_loss(_draw_patch(job.holdout_fovs, K, rng)))
        val_loss = float(np.mean(val_losses)) if val_losses else float("nan")

        row = {
            "epoch": epoch,
            "train_loss": float(np.mean(train_losses)),
            "val_loss": val_loss,
            "lr": job.lr,
            "momentum": job.momentum,
        }
        history.append(row)
        _append_log(checkpoint_dir, row)
        final_epoch = epoch

        if val_losses:
            if val_loss < best_val:
                best_val = val_loss
                best_params = replace(live.snapshot(), epoch=epoch)
                since_improvement = 0
            else:
                since_improvement += 1
                if since_improvement > patience:
                    break

    if best_params is None:
        best_params = replace(live.snapshot(), epoch=final_epoch)
    best_params = replace(best_params, parent_id=parent_id)

    return TrainState(
        params=best_params,
        velocity=live.velocity_arrays(),
        epoch=best_params.epoch,
        best_val_loss=best_val,
        epochs_since_improvement=since_improvement,
        seed=state.seed,
        history=history,
    )
