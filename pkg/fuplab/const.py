"""Constants for the fuplab numerical laboratory."""

from fractions import Fraction

# Grid sets
GSET_MAGIC = b"GSET1"
MEMORY_CAP = 10 ** 7
SUPPORTED_DIMS = (1, 2, 3)

# Set transforms
TRANSFORM_DILATE = "dilate"
TRANSFORM_TRANSLATE = "translate"
TRANSFORM_THICKEN = "thicken"

# Porosity kinds
POROSITY_BALL = "ball"
POROSITY_LINE = "line"
POROSITY_BOX = "box"

# Porosity search lattice
NU_CAP = Fraction(1, 3)
NU_STEPS = 64
NU_DENOMINATOR = 3 * NU_STEPS
SCALE_RATIO = 1.5
EXHAUSTIVE_SIDE_LIMIT = 3 ** 6
SAMPLED_POSITIONS = 20000
MIN_DIRECTIONS = 8
SUPERSAMPLING = {1: 9, 2: 3, 3: 3}
MIN_RESOLVED_CELLS = 3
LATTICE_NOTE = (
    "certified on the search lattice only (cell-centred positions, holes on an odd refinement "
    "of the cell lattice, sampled directions, nu in steps of 1/192); continuum porosity may "
    "differ by a constant factor"
)

# Power iteration
POWER_TOLERANCE = 1e-10
POWER_MAX_ITERATIONS = 10 ** 4
POWER_SEED = 20240229
RESIDUAL_TOLERANCE = 1e-4
DENSE_ORACLE_LIMIT = 10 ** 4
MIN_FIT_POINTS = 3

# Damping weights
DEFAULT_S = 0.2
GAMMA_ALPHA_SLOPE = 0.1
SMOOTHSTEP_ORDER = 9
MAX_DERIVATIVE = 3
MODIFICATION_START = 5
OMEGA_ZERO_INNER = 5.0
OMEGA_ZERO_OUTER = 10.0
LOWER_BOUND_FACTOR = 1.0 / 20.0

# Quadrature
RADIAL_PANELS = 96
GAUSS_NODES = 8
QUAD_START_PANELS = 16
QUAD_MAX_PANELS = 4096
CONFIRMING_PASSES = 2
EXTENSION_TOLERANCE = 1e-8
HILBERT_TOLERANCE = 1e-7
LINE_TOLERANCE = 1e-7
PROJECTION_TOLERANCE = 1e-5
HILBERT_T0_SAMPLES = 64

# Modification
ANGULAR_SAMPLES = 512
ANGULAR_MAX_SAMPLES = 16384
ANGULAR_REFINEMENT = 16
MODIFICATION_TOLERANCE = 1e-6
TRIG_CUTOFF = 1e-13

# Growth and regularity
GROWTH_DIRECTIONS = 64
GROWTH_RADII_PER_SHELL = 16
GROWTH_PANELS = 32
UNBOUNDED_SHELL = 20
REGULARITY_INTERIOR_POINTS = 4

# Complex Hessians and certificates
FD_RELATIVE_STEP = 1e-4
PSH_TOLERANCE = 1e-6
SAMPLE_Y_MIN = 1e-3
SAMPLE_Y_MAX = 10.0
OMEGA_ZERO_SCALE = 0.1
EXTENSION_TAIL_REACH = 1e8
GRADING_RATIO = 4.0
PSH_SAMPLES = 1000
HILBERT_LINES = 200
PENCIL_ANGLES = 180
LOG_SUP_FACTOR = 20

# Plurisubharmonic terms
TERM_EXTENSION = "extension"
TERM_Y_NORM = "y_norm"
TERM_Y_BRACKET = "y_bracket"
TERM_LOG_SUP = "log_sup"

# Experiment harness
STAGE_TIMEOUT = 3600
THREADS_ENV = "FUPLAB_THREADS"
MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "summary.txt"
STAGE_GENERATOR = "generator"
STAGE_POROSITY = "porosity"
STAGE_WEIGHT_BUILD = "weight-build"
STAGE_MODIFY = "modify"
STAGE_PSH_CHECK = "psh-check"
STAGE_FUP_SCAN = "fup-scan"
STAGE_FUP_NORM = "fup-norm"
STAGE_KINDS = (
    STAGE_GENERATOR,
    STAGE_POROSITY,
    STAGE_WEIGHT_BUILD,
    STAGE_MODIFY,
    STAGE_PSH_CHECK,
    STAGE_FUP_SCAN,
    STAGE_FUP_NORM,
)

# Stage states
STATUS_PASSED = "passed"
STATUS_FAILED = "failed"
STATUS_SKIPPED = "skipped"

# Exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
