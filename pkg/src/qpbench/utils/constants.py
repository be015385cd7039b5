# src/qpbench/utils/constants.py
# Default values for optional parameters
DEFAULT_TOPOLOGY = "eagle"
DEFAULT_BACKEND = "sim://default"
DEFAULT_SHOTS = 1024
DEFAULT_SEED = 0
DEFAULT_MODE = "strict"
DEFAULT_OUT_DIR = "qpbench-out"
DEFAULT_LOG_LEVEL = "INFO"
DEFAULT_CLOCK = "logical"
DEFAULT_MAX_RERUNS = 0
DEFAULT_WORKERS = 4

# Simulator register limits
DEFAULT_MAX_TRAJECTORY_QUBITS = 24
MAX_DENSITY_MATRIX_QUBITS = 10
# Amplitudes held in memory per trajectory chunk
TRAJECTORY_CHUNK_AMPLITUDES = 1 << 21
NORM_TOLERANCE = 1e-10

# Remote job polling
HTTP_TIMEOUT_SECONDS = 30
POLL_INTERVAL_SECONDS = 2.0
POLL_TIMEOUT_SECONDS = 600.0

# Persisted document versions
TOPOLOGY_SCHEMA_VERSION = 1
PROTOCOL_DOC_SCHEMA_VERSION = 1
CIRCUIT_SCHEMA_VERSION = 1
JOURNAL_SCHEMA_VERSION = 1
JOB_SCHEMA_VERSION = 1

# Output file names under --out
JOURNAL_FILENAME = "journal.jsonl"
VECTOR_FILENAME = "protocol_vector.json"
SCORES_FILENAME = "scores.json"
PAIRS_FILENAME = "pairs.json"
SWAPDIST_FILENAME = "swap_distance.json"
CHARTS_FILENAME = "charts.json"
CHARTS_DIRNAME = "charts"

# Logical clock epoch used when journals must be byte-identical
LOGICAL_CLOCK_EPOCH = "2000-01-01T00:00:00+00:00"
