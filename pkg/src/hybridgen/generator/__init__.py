"""Procedural training-data generators driven by a decision vector."""

from .container import read_sample, read_samples, write_sample, write_samples
from .decision import (
    CSG_LAYOUT,
    CSG_SHAPE_LAYOUT,
    RENDER_LAYOUT,
    DecisionLayout,
    DecisionVector,
    clip_to_valid,
)
from .grammar import CsgTree, Transform, sample_shape
from .pipeline import CsgPipeline, Pipeline, generate_dataset
from .render import RenderConfig, render, sample_render
from .sample import Sample
from .sampling import SeedString, seed_range, stream_id
from .sdf import compile_tree, sdf_eval
from .toy import TOY_LAYOUT, ToyPipeline

__all__ = [
    "CSG_LAYOUT",
    "CSG_SHAPE_LAYOUT",
    "RENDER_LAYOUT",
    "TOY_LAYOUT",
    "CsgPipeline",
    "CsgTree",
    "DecisionLayout",
    "DecisionVector",
    "Pipeline",
    "RenderConfig",
    "Sample",
    "SeedString",
    "ToyPipeline",
    "Transform",
    "clip_to_valid",
    "compile_tree",
    "generate_dataset",
    "read_sample",
    "read_samples",
    "render",
    "sample_render",
    "sample_shape",
    "sdf_eval",
    "seed_range",
    "stream_id",
    "write_sample",
    "write_samples",
]
