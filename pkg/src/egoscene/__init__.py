"""Egocentric scene reasoning toolkit.

Linguistic scene graphs merged across frames, progressive spatial
analysis with deterministic answering, a structured chain-of-thought
format with a binary reward, group-relative policy-optimization math, a
synthetic scene simulator with a brute-force oracle, a resumable data
generation pipeline, and an evaluation harness.
"""

__version__ = "0.1.0"

from .config import Config, load_config
from .cot import CoTDocument, format_reward, parse, render
from .psa import StructuredQuestion, answer_from_graph, build_task_context
from .rewards import combined_reward, group_advantages, grpo_objective, mra
from .scene_graph import GlobalSceneGraph, merge_observations, neighborhood

__all__ = [
    "Config",
    "load_config",
    "CoTDocument",
    "format_reward",
    "parse",
    "render",
    "StructuredQuestion",
    "answer_from_graph",
    "build_task_context",
    "combined_reward",
    "group_advantages",
    "grpo_objective",
    "mra",
    "GlobalSceneGraph",
    "merge_observations",
    "neighborhood",
    "__version__",
]
