"""Gaussian-beam FBI probes for wave front sets on conformally flat disks."""
__version__ = "0.1.0"

from .manifold import ChartMetric, covector_norm, unit_covector
from .geodesic import GeodesicPath, shoot, su_check, jacobi_scan
from .pairing import pair_field, pair_map, admissible_check
from .beam import gaussian_beam, riccati_solve, residual_norm, l2_norm
from .fbi import probe_build, phase_audit, transform, decay_fit, wf_scan, direction_fan
from .functions import make_test_function

__all__ = [
    "ChartMetric", "covector_norm", "unit_covector", "GeodesicPath", "shoot", "su_check", "jacobi_scan",
    "pair_field", "pair_map", "admissible_check", "gaussian_beam", "riccati_solve", "residual_norm",
    "l2_norm", "probe_build", "phase_audit", "transform", "decay_fit", "wf_scan", "direction_fan",
    "make_test_function",
]
