"""Spin-dependent quantum-emitter photophysics toolkit.

Builds C2v spin Hamiltonians and level diagrams, simulates magnetic-field
dependent photoluminescence and photon correlations with a semiclassical
master equation, and analyzes photon streams with background-corrected
multi-exponential fits and analytic rate inversion.
"""

__version__ = "0.1.0"

from .dynamics import (
    G2Curve,
    RateMatrix,
    RateParameters,
    build_rate_matrix,
    default_delays,
    emission_initial_state,
    odmr_linewidth_floor_khz,
    odmr_pl_variation,
    pl_variation,
    rk4_propagate,
    simulate_g2,
    simulate_g2_bin_averaged,
    steady_pl,
    steady_state,
)
from .estimators import (
    GeometryParams,
    NuclearSpecies,
    OrbitalComposition,
    estimate_zfs,
    get_species,
    hyperfine,
    load_species_table,
)
from .photonstats import (
    BackgroundRatio,
    EmpiricalFit,
    G2Histogram,
    MonteCarloStream,
    TagStream,
    TimeTagRecord,
    background_correct_amplitudes,
    background_correct_curve,
    background_uncorrect_curve,
    compute_g2,
    estimate_rates_three_level,
    fit_empirical,
    fit_g2_curve,
    monte_carlo_stream,
)
from .spin_models import (
    FieldVector,
    SpinEigensystem,
    ZeroFieldSplitting,
    doublet_hamiltonian,
    eigensystem,
    quartet_eigensystem,
    quartet_hamiltonian,
    triplet_eigensystem,
    triplet_hamiltonian,
)
from .symmetry import (
    DiagramClass,
    GroundSpin,
    Irrep,
    LevelDiagram,
    Polarization,
    SelectionVector,
    SpinAxis,
    classify,
    enumerate_level_diagrams,
    get_diagram,
    irrep_product,
    isc_selection_vector,
    optical_polarization,
    spin_orbit_irrep,
)
