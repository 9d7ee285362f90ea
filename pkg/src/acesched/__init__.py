"""Accuracy/complexity/energy aware scheduling for gesture detection pipelines.

Submodules:

- ``config_synth``: scaled detector families from a base configuration graph
- ``temporal_metrics``: frame and event F1 with hold-last imputation
- ``ace_profiler``: per-configuration accuracy, latency and energy tables
- ``runtime_selector``: telemetry-driven weight adaptation and tier selection
- ``roi_tracker``: Kalman-gated region-of-interest detection
- ``sim_harness``: synthetic detectors, device model and closed-loop runs
"""
from .ace_profiler import AceProfile, ConfigPoint, build_table, load_profiles, save_profiles
from .config_synth import DetectorGraph, FamilySpec, load_config, synthesize_family
from .roi_tracker import RoiTracker, TrackerParams, run_tracker
from .runtime_selector import (
    AceWeights,
    Constraints,
    RuntimeSelector,
    TelemetrySample,
    adaptive_weights,
    rank,
)
from .sim_harness import (
    GestureScript,
    OracleCalibration,
    SyntheticDetector,
    compare_fixed_vs_adaptive,
    generate_timeline,
    load_calibration,
    load_scenario,
    run_closed_loop,
)
from .temporal_metrics import Detection, GestureEvent, MetricsReport, evaluate

__version__ = "0.1.0"

__all__ = [
    "AceProfile",
    "AceWeights",
    "ConfigPoint",
    "Constraints",
    "Detection",
    "DetectorGraph",
    "FamilySpec",
    "GestureEvent",
    "GestureScript",
    "MetricsReport",
    "OracleCalibration",
    "RoiTracker",
    "RuntimeSelector",
    "SyntheticDetector",
    "TelemetrySample",
    "TrackerParams",
    "adaptive_weights",
    "build_table",
    "compare_fixed_vs_adaptive",
    "evaluate",
    "generate_timeline",
    "load_calibration",
    "load_config",
    "load_profiles",
    "load_scenario",
    "rank",
    "run_closed_loop",
    "run_tracker",
    "save_profiles",
    "synthesize_family",
]
