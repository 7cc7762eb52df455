"""Learning emitter classifiers from I/Q datasets with corrupted labels.

Stages: contrastive pre-training of a complex-valued CNN encoder, KNN
label-consistency filtering in its feature space, iterative rescue of
discarded samples, and a final supervised classifier on the clean set.
A synthetic emitter simulator and symmetric label-noise injector provide
data with known ground truth.
"""
from .config import PipelineConfig, load_config
from .pipeline import RunReport, run_baseline_ce, run_pipeline

__version__ = "0.1.0"
__all__ = ["PipelineConfig", "load_config", "RunReport", "run_pipeline", "run_baseline_ce"]
