"""Domain-incremental training orchestration.

Modes:
  flcb        train domains one by one; from the second domain on, the best
              model of the previous step is frozen as a teacher and the
              student minimizes count loss + lambda * self-distillation.
  sequential  the same pipeline with lambda forced to 0 (plain fine-tuning).
  joint       one model trained on the shuffled union of every train split
              with count loss only; the storage-expensive reference.

After each step every already-trained domain's test split is evaluated,
filling one row of the (lower-triangular) evaluation matrix. No training
image from a finished domain is ever fed to the trainer again; batches are
tagged with domain names and checked, and instrumentation counters back the
O(N) epochs / one-resident-domain contracts.
"""

from __future__ import annotations

import copy
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .density import DensityMap, density_from_heads, downsample_density
from .losses import LossConfig
from .metrics import EvalMatrix, mae as _mae, matrix_to_csv, rmse as _rmse
from .model import (
    OUTPUT_STRIDE,
    DensityRegressor,
    FrozenSnapshot,
    make_optimizer,
    predict_counts,
    save_checkpoint,
    snapshot,
    train_step,
)
from .synth import AnnotatedImage, DomainDataset, augment

_MASK64 = (1 << 64) - 1


class ReplayViolation(RuntimeError):
    """A batch contained samples from an already-finished domain."""


@dataclass
class RunStats:
    epochs_total: int = 0
    max_resident_train_images: int = 0
    union_train_images: int = 0
    replay_violations: int = 0
    teacher_digests: list[dict] = field(default_factory=list)
    phases: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs_total": self.epochs_total,
            "max_resident_train_images": self.max_resident_train_images,
            "union_train_images": self.union_train_images,
            "replay_violations": self.replay_violations,
            "teacher_digests": self.teacher_digests,
            "phases": self.phases,
        }


class DomainQueues:
    """Pending/seen dataset queues with the |P| + |Q| = N invariant."""

    def __init__(self, datasets: list[DomainDataset]):
        self._q: deque[DomainDataset] = deque(datasets)
        self._p: list[DomainDataset] = []
        self.total = len(datasets)

    def front(self) -> DomainDataset:
        if not self._q:
            raise RuntimeError("no pending domain to train")
        return self._q[0]

    def advance(self) -> None:
        """Move the domain just trained from Q to P."""
        self._p.append(self._q.popleft())
        self._check()

    def _check(self) -> None:
        if len(self._p) + len(self._q) != self.total:
            raise RuntimeError(
                f"queue invariant violated: |P|={len(self._p)} |Q|={len(self._q)} N={self.total}"
            )

    @property
    def seen(self) -> list[DomainDataset]:
        return list(self._p)

    @property
    def pending(self) -> int:
        return len(self._q)


@dataclass
class _Sample:
    domain: str
    image: AnnotatedImage
    density: DensityMap  # full-resolution ground truth


@dataclass
class RunResult:
    run_dir: Path
    eval: EvalMatrix
    stats: RunStats
    unseen_rows: list[dict]
    model: DensityRegressor


def evaluate_seen(predict_fn, seen: list[DomainDataset]) -> list[tuple[float, float]]:
    """Per-domain (MAE, RMSE) of predicted counts on each test split."""
    if not seen:
        raise ValueError("no seen domains to evaluate")
    rows = []
    for ds in seen:
        preds = predict_fn([im.image for im in ds.test])
        truths = [im.count for im in ds.test]
        rows.append((_mae(preds, truths), _rmse(preds, truths)))
    return rows


def _default_crop(image_size: tuple[int, int], configured: int | None) -> int:
    if configured is not None:
        return configured
    half = min(image_size) // 2
    return max(OUTPUT_STRIDE, (half // OUTPUT_STRIDE) * OUTPUT_STRIDE)


def _split_train_val(images: list[AnnotatedImage]) -> tuple[list[AnnotatedImage], list[AnnotatedImage]]:
    # Held-out validation: last 10% (at least one image) by index.
    n_val = max(1, len(images) // 10)
    return images[: len(images) - n_val], images[len(images) - n_val :]


def _val_mae(model: DensityRegressor, val_images: list[AnnotatedImage]) -> float:
    preds = predict_counts(model, [im.image for im in val_images])
    return _mae(preds, [im.count for im in val_images])


def _train_phase(
    model: DensityRegressor,
    optimizer: torch.optim.Optimizer,
    phase_datasets: list[DomainDataset],
    teacher: FrozenSnapshot | None,
    loss_cfg: LossConfig,
    cfg: RunConfig,
    rng: np.random.Generator,
    log_file,
    stats: RunStats,
    phase_label: str,
    global_step: int,
) -> tuple[dict, int]:
    """Train on the pooled train splits of phase_datasets; leaves the model
    loaded with the best-validation-MAE parameters. Returns (phase summary,
    next global step index)."""
    allowed = {ds.spec.name for ds in phase_datasets}
    train_samples: list[_Sample] = []
    val_samples: list[AnnotatedImage] = []
    for ds in phase_datasets:
        fit, val = _split_train_val(ds.train)
        for im in fit:
            dmap = density_from_heads(im.heads, im.image.shape, loss_cfg.sigma)
            train_samples.append(_Sample(ds.spec.name, im, dmap))
        val_samples.extend(val)
    resident = sum(len(ds.train) for ds in phase_datasets)
    stats.max_resident_train_images = max(stats.max_resident_train_images, resident)

    best_state: dict | None = None
    best_val = float("inf")
    best_epoch = -1
    val_mae = float("inf")
    for epoch in range(cfg.epochs_per_domain):
        stats.epochs_total += 1
        perm = rng.permutation(len(train_samples))
        for batch_index, start in enumerate(range(0, len(perm), cfg.batch_size)):
            chosen = [train_samples[i] for i in perm[start : start + cfg.batch_size]]
            for s in chosen:
                if s.domain not in allowed:
                    stats.replay_violations += 1
                    raise ReplayViolation(
                        f"sample from domain {s.domain!r} fed during phase {phase_label!r}"
                    )
            images = []
            gts = []
            for s in chosen:
                if cfg.augment.enabled:
                    crop_size = _default_crop(s.image.image.shape, cfg.augment.crop)
                    im, dmap = augment(s.image, s.density, rng, crop_size=crop_size, sigma=loss_cfg.sigma)
                else:
                    im, dmap = s.image, s.density
                images.append(im.image)
                gts.append(downsample_density(dmap, OUTPUT_STRIDE).grid)
            x = torch.from_numpy(np.stack(images)[:, None, :, :])
            y = torch.from_numpy(np.stack(gts))
            bd = train_step(model, optimizer, (x, y), teacher, loss_cfg)
            record = {"step": global_step, "phase": phase_label, "epoch": epoch, "batch": batch_index}
            record.update(bd.floats())
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            global_step += 1
        val_mae = _val_mae(model, val_samples)
        if val_mae < best_val:
            best_val = val_mae
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
    final_val = val_mae
    assert best_state is not None
    model.load_state_dict(best_state)
    summary = {
        "phase": phase_label,
        "domains": sorted(allowed),
        "best_epoch": best_epoch,
        "best_val_mae": best_val,
        "final_val_mae": final_val,
    }
    stats.phases.append(summary)
    return summary, global_step


def _prepare_run_dir(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"run directory {out_dir} is not empty (use --force to overwrite)")
    out_dir.mkdir(parents=True, exist_ok=True)


def run_lifelong(
    cfg: RunConfig,
    datasets: dict[str, DomainDataset],
    out_dir=None,
    force: bool = False,
) -> RunResult:
    """Execute one full run in the configured mode and write all artifacts.

    datasets must contain every domain in cfg.order plus cfg.unseen if set.
    """
    cfg.validate()
    for name in cfg.order:
        if name not in datasets:
            raise ValueError(f"dataset for domain {name!r} not provided")
    unseen_ds = None
    if cfg.unseen is not None:
        if cfg.unseen not in datasets:
            raise ValueError(f"dataset for unseen domain {cfg.unseen!r} not provided")
        unseen_ds = datasets[cfg.unseen]

    out = Path(out_dir) if out_dir is not None else Path(cfg.output_dir)
    _prepare_run_dir(out, force)
    cfg.save(out / "config.json")

    # sequential is, by definition, the distillation pipeline with lambda=0.
    loss_cfg = cfg.loss.with_lambda(0.0) if cfg.mode == "sequential" else cfg.loss
    init_seed = cfg.model.seed if cfg.model.seed is not None else cfg.seed
    model = DensityRegressor(seed=init_seed)
    optimizer = make_optimizer(model, cfg.model)

    ordered = [datasets[name] for name in cfg.order]
    queues = DomainQueues(ordered)
    stats = RunStats(union_train_images=sum(len(ds.train) for ds in ordered))
    eval_matrix = EvalMatrix(domain_names=list(cfg.order))
    unseen_rows: list[dict] = []
    ckpt_dir = out / "checkpoints"

    def _eval_unseen(step: int) -> None:
        if unseen_ds is None:
            return
        preds = predict_counts(model, [im.image for im in unseen_ds.test])
        truths = [im.count for im in unseen_ds.test]
        unseen_rows.append(
            {"step": step, "domain": unseen_ds.spec.name, "mae": _mae(preds, truths), "rmse": _rmse(preds, truths)}
        )

    seed64 = int(cfg.seed) & _MASK64
    with open(out / "loss_log.jsonl", "w") as log_file:
        if cfg.mode == "joint":
            rng = np.random.default_rng([seed64, 7, 1])
            _train_phase(
                model, optimizer, ordered, None, loss_cfg, cfg, rng, log_file, stats, "joint", 0
            )
            for _ in cfg.order:
                queues.advance()
            rows = evaluate_seen(lambda ims: predict_counts(model, ims), queues.seen)
            t = len(cfg.order)
            eval_matrix.set_row(t, [r[0] for r in rows], [r[1] for r in rows])
            save_checkpoint(model, ckpt_dir / f"step_{t}.bin", step=t)
            _eval_unseen(t)
        else:
            teacher: FrozenSnapshot | None = None
            global_step = 0
            for t, name in enumerate(cfg.order, start=1):
                ds = queues.front()
                if ds.spec.name != name:
                    raise RuntimeError(f"queue order mismatch: expected {name}, got {ds.spec.name}")
                digest_before = None
                if t >= 2:
                    teacher = snapshot(model, taken_after_domain=t - 1)
                    digest_before = teacher.digest()
                rng = np.random.default_rng([seed64, 7, t])
                _, global_step = _train_phase(
                    model,
                    optimizer,
                    [ds],
                    teacher,
                    loss_cfg,
                    cfg,
                    rng,
                    log_file,
                    stats,
                    name,
                    global_step,
                )
                if teacher is not None:
                    stats.teacher_digests.append(
                        {"step": t, "before": digest_before, "after": teacher.digest()}
                    )
                queues.advance()
                rows = evaluate_seen(lambda ims: predict_counts(model, ims), queues.seen)
                eval_matrix.set_row(t, [r[0] for r in rows], [r[1] for r in rows])
                save_checkpoint(model, ckpt_dir / f"step_{t}.bin", step=t)
                _eval_unseen(t)

    matrix_to_csv(eval_matrix.mae, eval_matrix.domain_names, out / "e_matrix_mae.csv")
    matrix_to_csv(eval_matrix.rmse, eval_matrix.domain_names, out / "e_matrix_rmse.csv")
    with open(out / "stats.json", "w") as f:
        json.dump(stats.to_dict(), f, indent=2, sort_keys=True)
    if unseen_rows:
        with open(out / "unseen.csv", "w") as f:
            f.write("step,domain,mae,rmse\n")
            for row in unseen_rows:
                f.write(f"{row['step']},{row['domain']},{row['mae']!r},{row['rmse']!r}\n")
    return RunResult(run_dir=out, eval=eval_matrix, stats=stats, unseen_rows=unseen_rows, model=model)
