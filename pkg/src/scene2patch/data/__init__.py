from .codec import (
    CLASS_NAMES,
    COLOR_TABLE,
    N_CLASSES,
    MaskColorError,
    compute_proportions,
    decode_mask,
    encode_mask,
    off_table_count,
    patch_majority_labels,
)
from .folds import FoldSplit, make_folds
from .imageio import load_rgb, save_png
from .manifest import DatasetManifest, ManifestEntry, ManifestError, prepare_manifest, write_synth_dataset
from .synth import SynthScene, channel_statistics, render_scene, synth_generate
from .tiling import (
    DEEPGLOBE_MEAN,
    DEEPGLOBE_STD,
    Bag,
    GeometryError,
    assemble_cells,
    build_bag,
    extract_patches,
    normalize,
    resize_bilinear,
    split_cells,
)
