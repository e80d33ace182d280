"""Synthetic material-image datasets and a dual-stream material classifier."""

__version__ = "0.1.0"

from .prompts import (  # noqa: F401
    DEFAULT_CLASSES,
    FMD_CLASSES,
    TABLE_ROW_ORDER,
    DenyList,
    MaterialTaxonomy,
    PromptTriplet,
    filter_triplets,
    propose_triplets,
    render_prompt,
)
from .generation import ImageRecord, generate_images  # noqa: F401
from .labeling import MaskedSample, Rejection, assign_label, filter_regions, segment_object  # noqa: F401
from .dataset import (  # noqa: F401
    ClassStats,
    DatasetManifest,
    append_sample,
    build_test_split,
    class_stats,
    import_external,
    sample_subset,
)
from .classifier import (  # noqa: F401
    ClassDescriptorBank,
    Encoders,
    MlpHead,
    TrainConfig,
    downsample_mask,
    forward,
    fuse,
    masked_max_pool,
    predict,
    train,
)
from .evaluation import (  # noqa: F401
    EvalReport,
    confusion,
    mean_accuracy,
    mean_iou,
    pca_overlay,
    per_class_table,
    scale_ablation,
)
