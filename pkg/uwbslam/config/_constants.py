"""
Constants shared across the package: wire sizes, default file names and the
experiment presets.
"""

DATA_UNIT_MAP = {"B": 1, "KB": 1.0e3, "MB": 1.0e6, "GB": 1.0e9}

# every transmitted scalar is a double
SCALAR_BYTES = 8
POSE_BYTES = 3 * SCALAR_BYTES
# sender, receiver, kind, timestamp at 4 bytes each
HEADER_BYTES = 16

# t, x, y, theta
ODOM_SAMPLE_SCALARS = 4
# uid, t, keyframe, x, y, theta, 6 covariance terms
LOOP_CLOSURE_SCALARS = 12
VERDICT_ID_SCALARS = 1

DATASET_FILE = "dataset.txt"
TRAJECTORY_FILE = "trajectories.txt"
DEAD_RECKONING_FILE = "dead_reckoning.txt"
RAW_CLOSURES_FILE = "closures_raw.csv"
INLIER_CLOSURES_FILE = "closures_inlier.csv"
COST_TRACE_FILE = "cost_trace.csv"
COMM_REPORT_FILE = "comm_report.txt"
COMM_REPORT_CSV = "comm_report.csv"
METRICS_FILE = "metrics.json"
METRICS_TEXT_FILE = "metrics.txt"
CONFIG_FILE = "config.ini"

# kind: "estimation" runs windowed estimators only, "pipeline" runs the whole
# multi-robot simulation, "landscape" dumps the residual grid of one window.
PRESETS = {
    "tab1": {"kind": "estimation", "key": "estimator.tau", "values_field": "taus",
             "fixed": {"estimator.min_excitation": 0.0},
             "description": "estimation error vs window size for each estimator mode"},
    "tab2": {"kind": "pipeline", "key": "pcm.epsilon", "values_field": "epsilons",
             "fixed": {"estimator.tau": 100, "estimator.ambiguity_ratio": 0.0},
             "description": "inliers and stage errors vs significance level"},
    "fig4": {"kind": "landscape", "key": "search.delta", "values_field": "deltas",
             "fixed": {}, "description": "residual landscape of a crafted near-collinear window"},
    "fig6": {"kind": "estimation", "key": "search.delta", "values_field": "deltas",
             "fixed": {"estimator.tau": 100, "estimator.min_excitation": 0.0},
             "description": "estimation error vs angular step"},
    "fig7": {"kind": "pipeline", "key": "range_fraction", "values_field": "range_fractions",
             "fixed": {"estimator.tau": 100, "estimator.ambiguity_ratio": 0.0},
             "description": "error vs UWB range limit"},
    "fig8": {"kind": "pipeline", "key": "odom_noise_scale", "values_field": "odom_noise_scales",
             "fixed": {"estimator.tau": 100, "estimator.ambiguity_ratio": 0.0},
             "description": "error vs odometry noise"},
    "tab4": {"kind": "pipeline", "key": "dpgo.update_rate", "values_field": "dpgo_rates",
             "fixed": {"estimator.tau": 100, "estimator.ambiguity_ratio": 0.0, "dpgo.finalize": False},
             "description": "time and bytes vs DPGO rate"},
}
