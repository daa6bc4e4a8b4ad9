"""ipost: a desk-scale cashier-less checkout engine.

Modules:

- ``tensor``: convolution, pooling and matrix kernels on numpy arrays
- ``layers``: layer specs, forward/backward passes and the network builder
- ``training``: losses, Adam, the training loop and metrics
- ``recognizers``: item classification and the face embedding gallery
- ``protocol``: tokens, sessions, checkout and the settlement journal
- ``synthetic``: glyph datasets and pixmap files
- ``persistence``: checkpoint and gallery files
- ``simulator``: the discrete-event store simulation
- ``pipeline``: training recipes used by the demos and acceptance tests
- ``cli``: the ``ipost`` command
"""

from .layers import LayerSpec, NetworkGraph, build_ipost_cnn, softmax
from .persistence import FormatError, load_checkpoint, load_gallery, save_checkpoint, save_gallery
from .protocol import DetectionEvent, Engine, Journal, Rejected, SettlementRecord, validate_token
from .recognizers import (
    DEFAULT_THRESHOLD,
    EmbeddingGallery,
    MatchResult,
    classify_item,
    embed_face,
    enroll,
    match_face,
)
from .simulator import ScenarioConfig, SimulationReport, simulate
from .synthetic import SyntheticDatasetSpec, generate_dataset, load_dataset
from .tensor import NonFiniteError, ShapeError, conv2d_valid, maxpool2d
from .training import AdamState, Dataset, TrainConfig, evaluate, fit

__version__ = "0.1.0"

__all__ = [
    "AdamState", "DEFAULT_THRESHOLD", "Dataset", "DetectionEvent", "EmbeddingGallery", "Engine",
    "FormatError", "Journal", "LayerSpec", "MatchResult", "NetworkGraph", "NonFiniteError",
    "Rejected", "ScenarioConfig", "SettlementRecord", "ShapeError", "SimulationReport",
    "SyntheticDatasetSpec", "TrainConfig", "build_ipost_cnn", "classify_item", "conv2d_valid",
    "embed_face", "enroll", "evaluate", "fit", "generate_dataset", "load_checkpoint",
    "load_dataset", "load_gallery", "match_face", "maxpool2d", "save_checkpoint", "save_gallery",
    "simulate", "softmax", "validate_token",
]
