"""Monocular visual localization with a nudged, adaptive particle filter.

The package couples a deterministic raycast scene (standing in for a
renderable map), a compact image descriptor with anchor-based place
recognition, and a particle filter that nudges retrieval results into its
support while switching between coarse global localization and fine pose
tracking.
"""

__version__ = "0.1.0"

from .geometry import Pose, Twist, PoseGaussian, compose, exp_map, log_map
from .scene import ArtifactSpec, CameraIntrinsics, SceneModel, observe, render
from .vpr import AnchorDatabase, Descriptor, GridSpec, build_anchor_db, encode, retrieve_top_m
from .particle_filter import FilterConfig, Particle, ParticleSet, init_global, step

__all__ = [
    "Pose",
    "Twist",
    "PoseGaussian",
    "compose",
    "exp_map",
    "log_map",
    "ArtifactSpec",
    "CameraIntrinsics",
    "SceneModel",
    "observe",
    "render",
    "AnchorDatabase",
    "Descriptor",
    "GridSpec",
    "build_anchor_db",
    "encode",
    "retrieve_top_m",
    "FilterConfig",
    "Particle",
    "ParticleSet",
    "init_global",
    "step",
]
