"""Shape template spaces, prior anchors, truncated diffusion and Chamfer AP
for vectorized road elements."""

from .anchors import AnchorSet, ClusterConfig, random_anchor_baseline, select_prior_anchors
from .dataset import SceneRecord, SynthConfig, generate_synthetic, load_dataset, save_dataset
from .diffusion import NoiseSchedule, oracle_denoiser, truncated_denoise_loop
from .evaluation import EvalReport, Prediction, evaluate
from .geometry import (
    DEFAULT_BOX,
    ElementClass,
    PerceptionBox,
    RoadElement,
    canonicalize,
    chamfer_distance,
    make_element,
    resample,
)
from .template_space import ElementMatrix, TemplateSpace, fit, shape_space_loss

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "ClusterConfig", "random_anchor_baseline", "select_prior_anchors",
    "SceneRecord", "SynthConfig", "generate_synthetic", "load_dataset", "save_dataset",
    "NoiseSchedule", "oracle_denoiser", "truncated_denoise_loop",
    "EvalReport", "Prediction", "evaluate",
    "DEFAULT_BOX", "ElementClass", "PerceptionBox", "RoadElement", "canonicalize",
    "chamfer_distance", "make_element", "resample",
    "ElementMatrix", "TemplateSpace", "fit", "shape_space_loss",
]
