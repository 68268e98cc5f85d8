DEFAULT_CLAMP = 1e-6
DEFAULT_GRID_POINTS = 4001
DEFAULT_SIGN_DRAWS = 256

# Threshold classifiers live on [-1, 1]
RHO_MIN = -1.0
RHO_MAX = 1.0

# Cell assignment meaning "no label"; errs on every label
ABSTAIN = -1

MASS_TOL = 1e-12
RISK_TOL = 1e-12
SLACK_TOL = 1e-9

FLOAT_FORMAT = "%.17g"
SCHEMA_VERSION = 1

SUITE_SIGMA = 0.3
SUITE_RADIUS = 1.0
