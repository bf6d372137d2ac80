"""Canonical desk-scale experiment presets.

The forgetting benchmark uses three synthetic domains that differ in their
count distribution (Poisson means 8 / 40 / 100 on 64x64 images, 100 train
and 50 test images each) with shared rendering statistics; the count shift
alone is enough to induce measurable forgetting in plain sequential
fine-tuning because per-blob calibration depends on the overlap/clipping
regime of the training domain.
"""

from __future__ import annotations

from .config import RunConfig
from .synth import CountDistribution, DomainSpec


def forgetting_benchmark_specs() -> list[DomainSpec]:
    return [
        DomainSpec(
            name="sparse",
            count_distribution=CountDistribution("poisson", mean=8.0),
            seed=101,
        ),
        DomainSpec(
            name="mid",
            count_distribution=CountDistribution("poisson", mean=40.0),
            seed=202,
        ),
        DomainSpec(
            name="dense",
            count_distribution=CountDistribution("poisson", mean=100.0),
            seed=303,
        ),
    ]


def forgetting_benchmark_config(
    mode: str = "flcb",
    seed: int = 0,
    epochs_per_domain: int = 20,
    output_dir: str = "runs/forgetting",
) -> RunConfig:
    return RunConfig(
        domains=forgetting_benchmark_specs(),
        order=["sparse", "mid", "dense"],
        mode=mode,
        epochs_per_domain=epochs_per_domain,
        batch_size=10,
        seed=seed,
        output_dir=output_dir,
    )
