"""Physical constants in the unit system used throughout the package.

Energies are frequencies in MHz (E/h), fields in tesla, distances in angstrom
and times in microseconds.
"""

import math

from scipy import constants as _c

G_E = -_c.physical_constants["electron g factor"][0]
MU_B = _c.physical_constants["Bohr magneton"][0]

#: Bohr magneton over Planck constant, MHz per tesla.
MU_B_MHZ_PER_T = MU_B / _c.h / 1e6

#: (mu0 / 4 pi) * mu_B**2 / h at a separation of 1 angstrom, in MHz.
DIPOLAR_MHZ_A3 = _c.mu_0 / (4 * math.pi) * MU_B**2 / _c.h / 1e-30 / 1e6

TWO_PI = 2 * math.pi
