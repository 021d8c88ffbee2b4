"""Scene-to-patch multiple-instance learning for land-cover segmentation.

Models are trained on scene-level class-coverage proportions only and produce
patch-level (S2P) or pixel-level (UNet activation map) segmentations.
"""

from . import data, metrics, models, ndcore, training
from .metrics import MetricsReport
from .models import MODEL_IDS, build_model, load_model, save_model
from .training import TrainConfig, evaluate_model, run_cv_experiment, train_model

__version__ = "0.1.0"
