"""Avatar-conditioned latent video diffusion at desk scale."""

import os

# Single-threaded BLAS is the determinism baseline; only effective if numpy
# has not been imported yet.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
