"""Spatiotemporally decoupled occupancy grids: labels, refinement and metrics."""

__version__ = "0.1.0"

from .grid import (Box3D, HeightMap, Pose2D, VoxelConfig, index_to_center,  # noqa: E402
                   world_to_index)
from .labelgen import (LabeledFrame, LabeledSequence, build_fine_grained,  # noqa: E402
                       compress_to_bev, extract_heights, generate_labels, gt_backward_flow,
                       rasterize_boxes_3d, rasterize_instances_bev)
from .losses import LossWeights, bce_loss, smooth_l1_loss, total_loss  # noqa: E402
from .metrics import (ConfusionCounts, EvalWindow, MetricsReport, c_iou_window,  # noqa: E402
                      confusion, evaluate_sequence, iou_window, vpq)
from .pooling import (PoolWeights, adaptive_dual_pool, aggregate_frames, avg_pool_z,  # noqa: E402
                      max_pool_z, warp_to_present)
from .refine import (ForecastBundle, InstanceCenter, NMSParams, RefineParams,  # noqa: E402
                     associate_step, clip_mask, extract_centers_nms, lift_to_3d,
                     refine_occupancy, refine_sequence)
from .sim import (ActorSpec, CorruptionSpec, SceneSpec, corrupt_predictions,  # noqa: E402
                  generate_scene, random_scene)
