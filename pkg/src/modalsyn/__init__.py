"""Control co-design toolkit for position-dependent flexible motion systems.

Converts mechanical models with position-dependent actuation/sensing into
modal form, builds rigid-body and extended modal decouplings, constructs
modal observers, and synthesizes structured controllers by weighted
closed-loop H-infinity minimization with gridded stability certification.
"""

from modalsyn.statespace import (
    StateSpaceModel,
    FrequencyResponse,
    RationalDiagonalFilter,
    ModelError,
    NumericError,
)

__all__ = [
    "StateSpaceModel",
    "FrequencyResponse",
    "RationalDiagonalFilter",
    "ModelError",
    "NumericError",
]

__version__ = "0.1.0"
