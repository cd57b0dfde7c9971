from .layers import (
    AvgPool,
    BatchNorm,
    Conv,
    Dense,
    LayerError,
    LayerSpec,
    MaxPool,
    Relu,
    ResidualAdd,
    UpsampleBilinear,
    resample_matrix,
)
from .network import (
    NetworkSpec,
    Parameters,
    backward,
    forward,
    infer_shapes,
    init_parameters,
    spec_from_text,
    spec_to_text,
)
from .loss import pixel_grad_unflatten, pixel_scores_flatten, softmax, weighted_softmax_loss
from .optim import SGDConfig, SGDMomentum, sgd_update
from .gradcheck import GradCheckReport, finite_diff_grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "AvgPool",
    "BatchNorm",
    "Conv",
    "Dense",
    "LayerError",
    "LayerSpec",
    "MaxPool",
    "NetworkSpec",
    "Parameters",
    "Relu",
    "ResidualAdd",
    "SGDConfig",
    "SGDMomentum",
    "UpsampleBilinear",
    "backward",
    "GradCheckReport",
    "finite_diff_grad_check",
    "forward",
    "infer_shapes",
    "init_parameters",
    "load_checkpoint",
    "pixel_grad_unflatten",
    "pixel_scores_flatten",
    "resample_matrix",
    "save_checkpoint",
    "sgd_update",
    "softmax",
    "spec_from_text",
    "spec_to_text",
    "weighted_softmax_loss",
]
