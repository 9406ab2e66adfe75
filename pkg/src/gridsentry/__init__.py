"""Attack detection and identification for linearized power networks."""

from .errors import (
    DesignError,
    DetectableAttackError,
    GeometricError,
    GridSentryError,
    ModelError,
    SimulationError,
    ValidationError,
)
from .netmodel import (
    DescriptorSystem,
    MeasurementSpec,
    NetworkSpec,
    Selector,
    assemble_laplacian,
    build_descriptor,
    build_measurement_matrix,
    bundled,
    load_measurements,
    load_network,
)
from .kron import KronReducedSystem, kron_reduce, map_signature, recover_algebraic

__version__ = "0.1.0"
