"""Active splat-reconstruction planning at desk scale.

The package pairs a deterministic CPU splat renderer with entropy-based view
uncertainty, an object-centered voxel field, rule-based (or LLM-backed)
reconstruction-state reasoning, free-space viewpoint planning, topple-style
manipulation planning, closed-loop pose correction, and a capture-repair
simulator with the evaluation metrics and benchmark harness to compare
planning policies.
"""

from .closed_loop import Abort, Accept, ClosedLoopConfig, Correction, StateDescriptor, correct, discrepancy
from .geometry import (
    CameraIntrinsics,
    GaussianPrimitive,
    GroundTruth,
    Pose,
    SplatModel,
    apply_rigid_transform,
    covariance,
    look_at,
)
from .harness import EpisodeLog, PolicyConfig, bench, run_episode
from .manipulation import ManipulationPlan, execute_manipulation, greedy_trajectory, plan_topple, score_action_cells, smooth
from .metrics import MetricsRecord, acr, chamfer_suite, episode_cost, psnr, ssim
from .planner import PlannerConfig, ViewPlan, default_planner_config, plan_views
from .reasoner import HighLevelUnderstanding, ReasonerEvidence, ServiceConfig, llm_understand, repetition_rate, understand
from .render import DepthWeightProfile, RenderConfig, RenderOutput, project_gaussian, render
from .scenes import SceneConfig, make_object, scene_config_by_name
from .simworld import DegradationSpec, NoiseConfig, SimWorld, degrade
from .uncertainty import UncertaintyConfig, UncertaintyMap, calibrate_threshold, pixel_entropy, view_uncertainty
from .voxel import UncertaintySample, VoxelField, annotate, build_field, remap, sample_sphere, scatter_and_fill

__version__ = "0.1.0"
