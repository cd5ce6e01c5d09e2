"""Class-irrelevant saliency mapping pipeline.

Feature-map channels act as dictionary bases; fitting the image's feature
vector with non-negative sparse coefficients yields per-channel weights
that need no class label and no backpropagation. The weighted channel sum
becomes a heatmap, which is normalized, rendered, and scored against
bounding boxes with the FLA-1/FLA-2 localization metrics.
"""

from .errors import (
    CimError,
    EmptyBox,
    EmptyInput,
    InstanceTooLarge,
    InvalidThreshold,
    MalformedFile,
    NoBoxes,
    NonFiniteIterate,
    NonFiniteValue,
    OutOfImageBounds,
    ShapeMismatch,
    SingularSystem,
    UnsupportedDtype,
    UnsupportedRank,
)
from .fla import (
    FlaReport,
    FlaScore,
    FocusRegion,
    aggregate,
    score,
    threshold_focus,
)
from .mapping import (
    Heatmap,
    NormalizedHeatmap,
    RenderSpec,
    bilinear_upsample,
    normalize_and_upsample,
    render,
    synthesize,
)
from .solver import (
    SolverConfig,
    SolverState,
    WeightVector,
    kkt_violation,
    objective,
    oracle_solve,
    solve,
)
from .tensor_io import (
    BoundingBox,
    FeatureMap,
    FeatureVector,
    RgbImage,
    flatten_to_dictionary,
    load_bboxes,
    load_image,
    load_tensor,
    save_image,
    save_tensor,
    unflatten_dictionary,
)

__version__ = "0.1.0"
