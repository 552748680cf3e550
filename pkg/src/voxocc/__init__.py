"""Voxel occupancy toolkit: volume-rendered depth with analytic gradients,
occupancy labels from point clouds, discrete depth / depth-map /
classification metrics, supervised and self-supervised losses, synthetic
scene fitting, and isosurface meshing."""

from .geometry import (Camera, CameraIntrinsics, CameraRig, GridSpec, Pose,
                       Ray, backproject, bilinear_sample, project,
                       voxel_center, world_to_voxel)
from .volume import GridMode, Interp, ScalarGrid, activate, sample_grid
from .depthmap import DepthMap
from .render import RenderConfig, composite, composite_backward, render_depth_map, sample_ray
from .labels import LabelSet, PointCloud, generate_labels, project_depth_map, voxelize
from .metrics import (ConfusionReport, MetricReport, classification_metrics,
                      depth_map_metrics, discrete_depth_metrics,
                      first_occupied_depth, occupied_at, threshold_sweep)
from .losses import LossValue, bce, photometric_loss, silog, warp, weighted_l1
from .fitting import OptimConfig, Scene, fit, make_default_scene, synthesize_views
from .meshing import Mesh, marching_cubes, write_ply

__version__ = "0.1.0"
