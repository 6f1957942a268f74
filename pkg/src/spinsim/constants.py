"""Physical constants (CODATA 2018) and unit conversions used across the package."""

import math

PLANCK_H = 6.62607015e-34          # J s (exact)
BOHR_MAGNETON = 9.2740100783e-24   # J/T
NUCLEAR_MAGNETON = 5.0507837461e-27  # J/T
MU0 = 1.25663706212e-6             # N/A^2
MU0_OVER_4PI = MU0 / (4.0 * math.pi)

G_ELECTRON = 2.0                   # bare electron g-factor assumed throughout

GAUSS_TO_TESLA = 1e-4

# Larmor scale: g*mu_B/h in MHz per gauss (for g=1)
MHZ_PER_GAUSS = BOHR_MAGNETON * GAUSS_TO_TESLA / PLANCK_H / 1e6


def zeeman_mhz(b_gauss, g=G_ELECTRON):
    """Zeeman energy g*mu_B*B in MHz for a field in gauss."""
    return g * MHZ_PER_GAUSS * b_gauss
