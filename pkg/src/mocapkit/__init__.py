"""mocapkit: batch multi-camera markerless motion capture toolkit.

Turns per-camera 2D landmark detections plus calibration-board corner
observations into synchronised, calibrated 3D marker trajectories, and
computes tracking-quality metrics and interpretable kinematic features.
"""

from .calibration import (
    BoardSpec,
    CalibrateOptions,
    CalibrationResult,
    CornerObservation,
    calibrate_rig,
    estimate_homography,
    zhang_intrinsics_init,
)
from .calib_io import read_calibration, write_calibration
from .cameras import (
    Camera,
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    camera_depth,
    project_point,
    rodrigues,
    undistort_point,
)
from .features import (
    LandmarkSchema,
    feature_table,
    get_schema,
    hull_volume,
    joint_angle,
)
from .metrics import (
    compute_trial_metrics,
    error_summary,
    icc_a1,
    interframe_correlation,
    ldj,
    trial_ldj,
)
from .sync import (
    IntensityTrace,
    RoiSpec,
    TrimOptions,
    TrimPlan,
    TrimWindow,
    detect_events,
    manual_window,
    plan_trims,
    roi_red_counts,
)
from .synthetic import (
    SyntheticScene,
    make_rig,
    make_scene,
    min_jerk_trajectory,
    project_scene,
    synth_led_trace,
)
from .trajectory import (
    Trajectory3D,
    detect_reversals,
    interpolate_gaps,
    kinematics,
    resample_uniform,
)
from .triangulate import (
    Detections2D,
    Point3DRecord,
    TriangulationOptions,
    px_to_mm,
    triangulate_point,
    triangulate_ransac,
    triangulate_trial,
)

__version__ = "0.1.0"
