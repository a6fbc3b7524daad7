from .baselines import BaselineResult, bch_reconcile, bch_syndrome, parity_reconcile
from .bounds import (SecurityBounds, bounds_from_agreement, measurement_floor,
                     rip_measurement_bound, security_bounds)
from .mac import mac_tag, verify_tag
from .matrix import SamplingMatrix, mutual_coherence, optimize_matrix, random_bernoulli
from .solvers import (MismatchVector, ReconConfig, RecoveryError, apply_mismatch, compress,
                      compress_counts, consistent, homotopy_bpdn,
                      integer_recover, mismatch_between, recover_mismatch)

__all__ = [
    "BaselineResult", "MismatchVector", "ReconConfig", "RecoveryError", "SamplingMatrix",
    "SecurityBounds", "apply_mismatch", "bch_reconcile", "bch_syndrome", "bounds_from_agreement",
    "compress", "compress_counts", "consistent", "homotopy_bpdn", "integer_recover", "mac_tag", "measurement_floor",
    "mismatch_between", "mutual_coherence", "optimize_matrix", "parity_reconcile",
    "random_bernoulli", "recover_mismatch", "rip_measurement_bound", "security_bounds",
    "verify_tag",
]
