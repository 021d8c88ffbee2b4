from .base import Model, PredictionBundle
from .registry import (
    HYPERPARAMETERS,
    MODEL_IDS,
    Hyperparameters,
    UnknownModelError,
    build_model,
    load_model,
    read_model,
    save_model,
    validate_model_id,
)
from .s2p import (
    CONV_STAGES,
    GRID_SIZES,
    PATCH_SIZES,
    S2PConfig,
    S2PModel,
    build_s2p,
    build_scene_baseline,
    embedding_size,
    s2p_forward,
    scene_baseline_forward,
)
from .unet import UNetModel, build_unet, class_activation_maps, unet_forward
