"""Prompt-propagated multi-view object segmentation and depth-supervised
voxel radiance fields, with synthetic ground-truth oracles for every stage."""

from .scene import (CameraIntrinsics, CameraPose, Mask, MaskStatus, Ray,
                    ViewImage, project_point, project_points, ray_for_pixel)
from .colmap import SparseCloud, load_colmap_model, save_colmap_model
from .segmenter import BridgeSegmenter, OracleSegmenter, PromptSet
from .propagation import (ObjectPointList, PropagationConfig, export_object_cloud,
                          init_object, propagate, select_prompts)
from .occlusion import (OcclusionConfig, estimate_mask_from_cloud, filter_views,
                        occlusion_iou)
from .selfprompt import (SelfPromptConfig, box_to_mask, distance_map,
                         edge_band_points, kmeans_prompts, self_prompt_dataset)
from .field import (RayBatch, TrainConfig, VoxelField, loss, object_aabb,
                    prune_rays, render_ray, render_view, train)
from .editor import RigidTransform, camera_path, compose, removal_masks
from .config import PipelineConfig, load_config

__version__ = "0.1.0"
