"""lidarsynth: synthesize off-trajectory LiDAR scans and waypoint labels
from a single unlabeled drive, via ICP odometry, scan fusion, ball-pivoting
meshing, and BVH ray casting."""

from .bvh import BvhIndex, Hit
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    EmptyInputError,
    EmptyMeshError,
    InvalidInputError,
    LidarSynthError,
    PipelineStageError,
    PlyParseError,
)
from .fileio import (
    DatasetSample,
    ScanSequence,
    SequenceManifest,
    export_dataset,
    load_sequence,
    read_cloud,
    read_manifest,
    read_mesh,
    read_trajectory,
    write_cloud,
    write_manifest,
    write_mesh,
    write_trajectory,
)
from .geometry import Point3, PointCloud, PoseSE3, TriangleMesh, transform_cloud
from .labels import (
    ControlCommand,
    LabelConfig,
    PidConfig,
    PidState,
    WaypointLabel,
    offset_label,
    reference_label,
    waypoints_to_control,
)
from .odometry import IcpConfig, OdometryConfig, Trajectory, estimate_trajectory, icp_align
from .pipeline import PipelineConfig, load_config, run_pipeline
from .scene import BpaConfig, FusedCloud, accumulate, reconstruct_mesh
from .spatial import KdIndex, voxel_downsample
from .synthesis import (
    BeamModel,
    NoiseConfig,
    ViewpointSet,
    apply_noise,
    build_directions,
    default_beam_model,
    offset_pose,
    sample_viewpoints,
    synthesize_scan,
)
from .testbed import (
    SyntheticScene,
    coverage_comparison,
    evaluate_pipeline,
    generate_scene,
    simulate_sequence,
)

__version__ = "0.1.0"
