"""Full generators ``f(beta, r)`` and dataset construction."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .decision import CSG_LAYOUT, DecisionLayout
from .grammar import sample_shape
from .render import render, sample_render, split_beta
from .sample import Sample
from .sampling import SeedString
from .sdf import compile_tree


class Pipeline(Protocol):
    layout: DecisionLayout
    task: str

    @property
    def image_shape(self) -> tuple[int, int, int]: ...

    @property
    def target_shape(self) -> tuple[int, int, int]: ...

    def __call__(self, beta, seed: SeedString) -> Sample: ...


@dataclass(frozen=True)
class CsgPipeline:
    """Grammar-sampled CSG shape rendered under a sampled camera and light."""

    resolution: tuple[int, int] = (16, 16)
    task: str = "normal"
    depth_cap: int = 6
    frame_scale: float = 2.0
    layout: DecisionLayout = CSG_LAYOUT

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (*self.resolution, 1)

    @property
    def target_shape(self) -> tuple[int, int, int]:
        return (*self.resolution, 3 if self.task == "normal" else 1)

    def __call__(self, beta, seed: SeedString) -> Sample:
        beta_s, beta_r = split_beta(beta)
        tree = sample_shape(beta_s, seed, depth_cap=self.depth_cap)
        config = sample_render(beta_r, seed, frame_scale=self.frame_scale)
        return render(compile_tree(tree), config, resolution=self.resolution, task=self.task)


def generate_dataset(pipeline: Pipeline, beta, seeds: Sequence[SeedString]) -> list[Sample]:
    """``[f(beta, r) for r in seeds]``; sample ``i`` depends only on ``seeds[i]``."""
    if len(seeds) < 1:
        raise ValueError("need at least one seed")
    beta = np.asarray(beta, dtype=np.float64)
    return [pipeline(beta, r) for r in seeds]
