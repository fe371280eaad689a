"""Magnetic-resonance simulation of donor-bridge-acceptor radical pairs with a qubit probe."""

__version__ = "0.1.0"

from .spinsys import (  # noqa: E402
    CouplingTensor,
    NuclearSpin,
    SpinCenter,
    SpinSystem,
    build_static_hamiltonian,
    dipolar_couplings,
    dipolar_tensor,
    rotate_system,
    spin_operator,
    transition_table,
)
from .states import (  # noqa: E402
    Polarized,
    PsiU,
    SensorState,
    Singlet,
    acceptor_polarization,
    assemble_initial,
    rp_density,
)
from .liouville import DissipationSpec, DriveSpec, build_generator, expectation, propagate  # noqa: E402
from .results import Axis, SpectrumResult  # noqa: E402
