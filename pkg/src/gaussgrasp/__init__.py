"""Gaussian-guided grasp detection toolkit."""

from .geometry import (
    CameraModel,
    GraspPose,
    GraspRectangle,
    MetricConfig,
    WorldGrasp,
    angle_difference,
    image_to_world,
    jaccard,
    rect_corners,
    rectangle_metric,
)
from .codec import (
    AngleQualityVector,
    EncoderConfig,
    GraspMaps,
    angle_quality_vector,
    angle_to_bin,
    decode,
    encode,
    encode_pyramid,
    point_quality,
    pose_to_rectangle,
)
from .dataset import (
    GraspSample,
    SplitSpec,
    augment,
    make_split,
    parse_cornell,
    parse_jacquard,
    to_network_input,
)
from .network import GraspNetwork, NetworkConfig, deform_conv2d
from .training import LossReport, TrainConfig, smooth_l1, total_loss, train
from .evaluation import EvalResult, SweepResult, ablate, evaluate_model, sweep

__version__ = "0.1.0"
