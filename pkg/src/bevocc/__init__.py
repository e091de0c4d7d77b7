"""BEV occupancy prediction on CPU: a 2D-conv + channel-to-height head compared
against a 3D voxel-conv reference, with the geometry, data and benchmark
plumbing needed to exercise both."""

from ._accel import HAVE_NUMBA, get_backend, set_backend, use_backend
from .bench import analytic_flops, bench, flops
from .config import PipelineConfig, load_config, preset
from .errors import ConfigError, DataFormatError, DivergenceError, ShapeError
from .evaluation import CLASS_NAMES, FREE_CLASS, NUM_CLASSES, OccupancyGrid, VisibilityMask, confusion, miou
from .geometry import Camera, CameraIntrinsics, CameraRig, RigidTransform
from .occupancy_head import channel_to_height, height_to_channel, predict_labels
from .pipeline import FrameInput, Pipeline, build, frame_from_scene, infer
from .scene import Scene, ScenePrimitive, generate_scene, render_oracle, visibility_mask, voxelize
from .tensor import TensorTracker, conv2d, conv3d
from .view_transform import BevGridSpec

__version__ = "0.1.0"
