"""FBI transforms with generalized phases and microlocal regularity classes."""

__version__ = "0.1.0"

from .sequences import RegularSequence, make_gevrey, from_entries  # noqa: E402
from .phase import PhasePolynomial, PhaseRejected, certify, square_phase  # noqa: E402
from .functionals import from_descriptor as functional_from_descriptor, named_test  # noqa: E402
from .transform import SampleGrid, fbi, fbi_grid, fbi_ray, invert  # noqa: E402
from .classify import Caps, SheafCondition, WavefrontEstimate, wavefront  # noqa: E402
from .cones import CoverSpec, build_cover, validate_cover  # noqa: E402
from .elliptic import DifferentialOperator, parametrix, elliptic_wf_audit  # noqa: E402

__all__ = [
    "RegularSequence", "make_gevrey", "from_entries",
    "PhasePolynomial", "PhaseRejected", "certify", "square_phase",
    "functional_from_descriptor", "named_test",
    "SampleGrid", "fbi", "fbi_grid", "fbi_ray", "invert",
    "Caps", "SheafCondition", "WavefrontEstimate", "wavefront",
    "CoverSpec", "build_cover", "validate_cover",
    "DifferentialOperator", "parametrix", "elliptic_wf_audit",
]
