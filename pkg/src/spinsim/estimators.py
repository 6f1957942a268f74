"""Order-of-magnitude estimators for zero-field splitting and hyperfine couplings.

The ZFS estimator treats the two unpaired electrons as point charges separated
by a fixed displacement (single-configuration average of the spin-spin
integrals); the hyperfine estimator combines Fermi-contact and dipolar terms
for a valence orbital of mixed s/p character. Atomic inputs (|phi_s(0)|^2,
<1/r^3>, g_n) ship as a JSON table so users can substitute literature values.
"""

import json
import math
from dataclasses import dataclass
from importlib import resources

from .constants import (
    BOHR_MAGNETON,
    G_ELECTRON,
    MU0_OVER_4PI,
    NUCLEAR_MAGNETON,
    PLANCK_H,
)

ANGSTROM = 1e-10


@dataclass(frozen=True)
class GeometryParams:
    """Electron-pair displacement vector components in angstrom."""

    x12: float
    y12: float
    z12: float

    @property
    def r12(self):
        return math.sqrt(self.x12**2 + self.y12**2 + self.z12**2)


@dataclass(frozen=True)
class OrbitalComposition:
    """s/p character |c_s|^2, |c_p|^2 and the spin-density fraction eta."""

    cs2: float
    cp2: float
    eta: float = 1.0

    def __post_init__(self):
        if abs(self.cs2 + self.cp2 - 1.0) > 1e-12:
            raise ValueError("|c_s|^2 + |c_p|^2 must equal 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")

    @classmethod
    def sigma(cls, eta=1.0):
        """In-plane sp2 orbital: |c_s|^2 = 1/3, |c_p|^2 = 2/3."""
        return cls(cs2=1.0 / 3.0, cp2=2.0 / 3.0, eta=eta)

    @classmethod
    def pi(cls, eta=1.0):
        """Out-of-plane p orbital: pure dipolar coupling."""
        return cls(cs2=0.0, cp2=1.0, eta=eta)


@dataclass(frozen=True)
class NuclearSpecies:
    """Nuclear g-factor and single-atom orbital densities (m^-3)."""

    label: str
    g_n: float
    phi_s0_sq: float
    inv_r3: float

    def __post_init__(self):
        if self.g_n <= 0 or self.phi_s0_sq <= 0 or self.inv_r3 <= 0:
            raise ValueError("atomic parameters must be positive")


def load_species_table(path=None):
    """Species table from a JSON file (defaults to the bundled one)."""
    if path is None:
        text = resources.files("spinsim.fixtures").joinpath("atomic_parameters.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {
        label: NuclearSpecies(label=label, **entry)
        for label, entry in raw.items()
        if label != "comment"
    }


_DEFAULT_SPECIES = None


def get_species(label, path=None):
    global _DEFAULT_SPECIES
    if path is not None:
        return load_species_table(path)[label]
    if _DEFAULT_SPECIES is None:
        _DEFAULT_SPECIES = load_species_table()
    return _DEFAULT_SPECIES[label]


def estimate_zfs(geom, g=G_ELECTRON):
    """Spin-spin ZFS estimate (D, E) in GHz for a point electron pair.

    D = (3/2)(mu0/4pi) g^2 mu_B^2 (1 - 3 x12^2/r12^2)/r12^3
    E = (3/2)(mu0/4pi) g^2 mu_B^2 (z12^2 - y12^2)/r12^5
    """
    r = geom.r12 * ANGSTROM
    if r == 0:
        raise ValueError("electron separation r12 must be nonzero")
    x, y, z = (v * ANGSTROM for v in (geom.x12, geom.y12, geom.z12))
    pref = 1.5 * MU0_OVER_4PI * (g * BOHR_MAGNETON) ** 2
    d_joule = pref * (1.0 - 3.0 * x**2 / r**2) / r**3
    e_joule = pref * (z**2 - y**2) / r**5
    to_ghz = 1.0 / (PLANCK_H * 1e9)
    return d_joule * to_ghz, e_joule * to_ghz


def hyperfine(species, orbital, g=G_ELECTRON):
    """Hyperfine parameters (f, d, A_par, A_perp) in MHz.

    Fermi contact f and dipolar d follow the single-orbital expressions;
    A_par = f + d and A_perp = f - 2d. All four scale linearly with eta.
    """
    if isinstance(species, str):
        species = get_species(species)
    base = MU0_OVER_4PI * g * BOHR_MAGNETON * species.g_n * NUCLEAR_MAGNETON
    to_mhz = 1.0 / (PLANCK_H * 1e6)
    f = (8.0 * math.pi / 3.0) * base * orbital.cs2 * orbital.eta * species.phi_s0_sq * to_mhz
    d = 0.4 * base * orbital.cp2 * orbital.eta * species.inv_r3 * to_mhz
    return f, d, f + d, f - 2.0 * d
