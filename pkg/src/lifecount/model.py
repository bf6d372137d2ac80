"""Tiny fully-convolutional density regressor.

Fixed architecture with an explicit backbone/head split: the backbone
(3x3 conv 1->16, 3x3 stride-2 conv 16->16, 3x3 stride-2 conv 16->8, ReLU
after each) produces the stride-4 feature grid used for feature-level
distillation; a 1x1 conv plus ReLU maps features to the non-negative
density map. Everything runs in double precision so gradients can be
verified against central finite differences.

Checkpoints are raw little-endian float64 tensor blobs plus a JSON
manifest; reload reproduces forward outputs bit for bit.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .losses import LossBreakdown, LossConfig, bdf_loss

FEATURE_CHANNELS = 8
OUTPUT_STRIDE = 4

_MASK64 = (1 << 64) - 1


@dataclass
class ModelConfig:
    """Init seed and optimizer knobs.

    The 1e-3 learning rate is the desk-scale default for this from-scratch
    tiny net; pretrained full-scale backbones typically want 1e-5.
    """

    seed: int | None = None  # None: derived from the run seed
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4

    def to_dict(self) -> dict:
        return {"seed": self.seed, "learning_rate": self.learning_rate, "weight_decay": self.weight_decay}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            seed=d.get("seed"),
            learning_rate=float(d.get("learning_rate", 1e-3)),
            weight_decay=float(d.get("weight_decay", 5e-4)),
        )


class DensityRegressor(nn.Module):
    def __init__(self, seed: int = 0):
        super().__init__()
        self.seed = int(seed)
        self.backbone = nn.Sequential(
            nn.Conv2d(1, 16, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, 16, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(16, FEATURE_CHANNELS, 3, stride=2, padding=1),
            nn.ReLU(),
        )
        self.head = nn.Conv2d(FEATURE_CHANNELS, 1, 1)
        self.double()
        self._init_parameters(seed)

    def _init_parameters(self, seed: int) -> None:
        # Centered uniform with fan-in scaling, drawn from a numpy stream so
        # initialization is deterministic and independent of torch's RNG.
        # Exception: the head bias is drawn positive, otherwise roughly half
        # of all seeds start with every ReLU-clipped output cell at exactly
        # zero and no gradient ever reaches the parameters.
        rng = np.random.default_rng([int(seed) & _MASK64, 0x1D17])
        with torch.no_grad():
            for mod in self.modules():
                if isinstance(mod, nn.Conv2d):
                    fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
                    bound = 1.0 / math.sqrt(fan_in)
                    mod.weight.copy_(
                        torch.from_numpy(rng.uniform(-bound, bound, size=tuple(mod.weight.shape)))
                    )
                    lo = 0.0 if mod is self.head else -bound
                    mod.bias.copy_(
                        torch.from_numpy(rng.uniform(lo, bound, size=tuple(mod.bias.shape)))
                    )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 1, H, W) image batch -> (features (B, 8, h, w), density (B, h, w)).

        Inputs are zero-padded on the right/bottom to multiples of 4, so
        h = ceil(H/4), w = ceil(W/4).
        """
        if x.dim() != 4 or x.shape[1] != 1:
            raise ValueError(f"expected a (B, 1, H, W) batch, got shape {tuple(x.shape)}")
        h, w = int(x.shape[2]), int(x.shape[3])
        pad_h = (-h) % OUTPUT_STRIDE
        pad_w = (-w) % OUTPUT_STRIDE
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h))
        feats = self.backbone(x)
        density = torch.relu(self.head(feats)).squeeze(1)
        return feats, density


class FrozenSnapshot:
    """Immutable value copy of a regressor, used as the distillation teacher.

    Forward passes run under no_grad and never produce parameter gradients;
    later student updates cannot alter the snapshot.
    """

    def __init__(self, model: DensityRegressor, taken_after_domain: int | None = None):
        for p in model.parameters():
            if not torch.isfinite(p).all():
                raise ValueError("cannot snapshot a model with non-finite parameters")
        net = copy.deepcopy(model)
        net.eval()
        net.requires_grad_(False)
        self._net = net
        self.taken_after_domain = taken_after_domain

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        with torch.no_grad():
            return self._net(x)

    __call__ = forward

    def parameter_bytes(self) -> bytes:
        return parameter_bytes(self._net)

    def digest(self) -> str:
        return hashlib.sha256(self.parameter_bytes()).hexdigest()


def snapshot(model: DensityRegressor, taken_after_domain: int | None = None) -> FrozenSnapshot:
    return FrozenSnapshot(model, taken_after_domain)


def parameter_bytes(model: nn.Module) -> bytes:
    """Deterministic little-endian float64 serialization of all parameters."""
    chunks = []
    for _, tensor in sorted(model.state_dict().items()):
        chunks.append(np.ascontiguousarray(tensor.detach().numpy(), dtype="<f8").tobytes())
    return b"".join(chunks)


def make_optimizer(model: DensityRegressor, cfg: ModelConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def train_step(
    model: DensityRegressor,
    optimizer: torch.optim.Optimizer,
    batch: tuple[torch.Tensor, torch.Tensor],
    teacher: FrozenSnapshot | None,
    cfg: LossConfig,
) -> LossBreakdown:
    """One Adam update on the full training loss; returns the pre-update breakdown."""
    images, gt = batch
    feats, density = model(images)
    if teacher is not None and (cfg.distill_output or cfg.distill_feature):
        t_feats, t_density = teacher(images)
        bd = bdf_loss(
            gt, density, cfg, teacher_out=t_density, teacher_feat=t_feats, student_feat=feats
        )
    else:
        bd = bdf_loss(gt, density, cfg)
    if not torch.isfinite(bd.total):
        raise RuntimeError(
            f"non-finite training loss ({float(bd.total)}); "
            "lower the learning rate or increase the transport eps"
        )
    optimizer.zero_grad(set_to_none=True)
    bd.total.backward()
    optimizer.step()
    return bd


def predict_counts(net, images: list[np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Predicted person counts (density-map masses) for a list of images."""
    counts = np.empty(len(images), dtype=np.float64)
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            chunk = images[i : i + batch_size]
            x = torch.from_numpy(np.stack(chunk)[:, None, :, :].astype(np.float64))
            _, density = net(x)
            counts[i : i + len(chunk)] = density.sum(dim=(1, 2)).numpy()
    return counts


def save_checkpoint(model: DensityRegressor, path, *, step: int) -> None:
    """Raw little-endian float64 blob + JSON manifest next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors = []
    with open(path, "wb") as f:
        for name, tensor in sorted(model.state_dict().items()):
            arr = np.ascontiguousarray(tensor.detach().numpy(), dtype="<f8")
            f.write(arr.tobytes())
            tensors.append({"name": name, "shape": list(arr.shape)})
    manifest = {"format": "raw-f8-le", "seed": model.seed, "step": step, "tensors": tensors}
    with open(path.with_suffix(".json"), "w") as f:
        json.dump(manifest, f, indent=2)


def load_checkpoint(path) -> DensityRegressor:
    path = Path(path)
    manifest_path = path.with_suffix(".json")
    if not path.is_file():
        raise FileNotFoundError(f"missing checkpoint blob: {path}")
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing checkpoint manifest: {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    model = DensityRegressor(seed=manifest["seed"])
    blob = path.read_bytes()
    state = model.state_dict()
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += n * 8
        state[entry["name"]] = torch.from_numpy(arr.copy())
    if offset != len(blob):
        raise ValueError(f"checkpoint blob size mismatch in {path}: {len(blob)} bytes, used {offset}")
    model.load_state_dict(state)
    return model
