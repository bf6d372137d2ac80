"""Run configuration: one JSON document drives generation, training, reporting.

CLI flags override individual fields; the resolved config is snapshotted
into the run directory so a run can be reproduced from that file alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossConfig
from .model import ModelConfig
from .synth import DomainSpec

MODES = ("flcb", "sequential", "joint")


@dataclass
class AugmentConfig:
    enabled: bool = True
    crop: int | None = None  # None: half the image side

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "crop": self.crop}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        return cls(enabled=bool(d.get("enabled", True)), crop=d.get("crop"))


@dataclass
class RunConfig:
    domains: list[DomainSpec]
    order: list[str]
    mode: str = "flcb"
    unseen: str | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs_per_domain: int = 20
    batch_size: int = 10
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data_dir: str = "data"
    output_dir: str = "runs/run"

    def domain_by_name(self, name: str) -> DomainSpec:
        for spec in self.domains:
            if spec.name == name:
                return spec
        raise KeyError(f"unknown domain {name!r}")

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.domains:
            raise ValueError("at least one domain spec is required")
        names = [s.name for s in self.domains]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate domain names in config: {names}")
        for spec in self.domains:
            spec.validate()
        if self.unseen is not None and self.unseen not in names:
            raise ValueError(f"unseen domain {self.unseen!r} is not declared")
        trainable = [n for n in names if n != self.unseen]
        if sorted(self.order) != sorted(set(self.order)):
            raise ValueError(f"order contains duplicates: {self.order}")
        for name in self.order:
            if name not in names:
                raise ValueError(f"order references undeclared domain {name!r}")
            if name == self.unseen:
                raise ValueError(f"unseen domain {name!r} cannot appear in the training order")
        if sorted(self.order) != sorted(trainable):
            missing = sorted(set(trainable) - set(self.order))
            raise ValueError(f"order must cover every non-unseen domain exactly once; missing {missing}")
        if self.epochs_per_domain < 1:
            raise ValueError(f"epochs_per_domain must be >= 1, got {self.epochs_per_domain}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        self.loss.validate()

    def to_dict(self) -> dict:
        return {
            "domains": [s.to_dict() for s in self.domains],
            "order": list(self.order),
            "mode": self.mode,
            "unseen": self.unseen,
            "loss": self.loss.to_dict(),
            "model": self.model.to_dict(),
            "epochs_per_domain": self.epochs_per_domain,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "augment": self.augment.to_dict(),
            "data_dir": self.data_dir,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        domains = [DomainSpec.from_dict(x) for x in d.get("domains", [])]
        unseen = d.get("unseen")
        # omitted order: declaration order of the trainable domains
        order = list(d.get("order") or [s.name for s in domains if s.name != unseen])
        return cls(
            domains=domains,
            order=order,
            mode=d.get("mode", "flcb"),
            unseen=d.get("unseen"),
            loss=LossConfig.from_dict(d.get("loss", {})),
            model=ModelConfig.from_dict(d.get("model", {})),
            epochs_per_domain=int(d.get("epochs_per_domain", 20)),
            batch_size=int(d.get("batch_size", 10)),
            seed=int(d.get("seed", 0)),
            augment=AugmentConfig.from_dict(d.get("augment", {})),
            data_dir=d.get("data_dir", "data"),
            output_dir=d.get("output_dir", "runs/run"),
        )

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"missing config file: {path}")
        with open(path) as f:
            return cls.from_dict(json.load(f))
