"""heightbins: adaptive-bin height estimation with distribution-constrained losses."""

from .config import ModelConfig, OptimizerConfig, RunConfig, load_run_config
from .errors import (
    ConfigError,
    ContractViolation,
    DataError,
    DomainError,
    GradCheckError,
    HeightbinsError,
    NumericError,
    RasterParseError,
)
from .head import AdaBinsHead, BinSet, HeadConfig, HeadOutput
from .losses import FAMILIES, LossConfig, total_loss
from .metrics import EvalReport, compute_report
from .model import HTCDCNet
from .raster import RasterPatch, read_manifest, read_raster, write_manifest, write_raster
from .synth import SceneSpec, generate_corpus, generate_scene
from .tensor import Tape, Tensor
from .train import evaluate_split, load_model_from_checkpoint, run_training

__version__ = "0.1.0"
