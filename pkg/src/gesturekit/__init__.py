"""Co-speech gesture toolkit: alignment losses, residual quantization,
masked token decoding, thin-plate spline warping, edge heatmaps and metrics."""

from .alignment import SimilarityMatrix, build_chronological_negative, infonce_loss, retrieval_recall
from .config import PipelineConfig, demo_config, load_config, parse_config
from .errors import DegenerateConfigurationError, GestureKitError, NumericalError, StageError, ValidationError
from .generator import CorruptionPolicy, TokenSequence, corrupt_tokens, iterative_decode, residual_decode
from .heatmap import HeatmapConfig, edge_map, render_heatmap
from .metrics import MetricReport, diversity, fgd, frechet_distance
from .rvq import CodebookStack, rvq_decode, rvq_encode, train_codebooks
from .synth import SyntheticSpec, synth_generate
from .tps import TPSParams, tps_eval, tps_fit, warp_image
from .types import FeatureSequence, GestureSequence, ImageGrid, KeypointLayout, TimedTranscript

__version__ = "0.1.0"
