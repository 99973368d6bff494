"""Toy-scale training harness for exported .kfrg reconstruction datasets."""

from .data import Example, load_examples, load_manifest, manifest_hash
from .errors import (ChecksumError, FormatError, KtrainError,
                     MissingInputError, NumericalError, ValidationError)
from .losses import ssim, ssim_loss
from .models import (FastDVDNet, ModelConfig, UNet3dModel, VarNet,
                     build_model, count_parameters)
from .records import Record, read_record
from .train import (ModelBundle, TrainConfig, collate, evaluate_model,
                    mean_ssim, predict, train, write_curve_csv,
                    write_metrics_csv)

__version__ = "0.1.0"
