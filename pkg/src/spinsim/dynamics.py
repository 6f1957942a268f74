"""Semiclassical master equation: steady-state PL, g2(t), and ODMR response.

Rates are in MHz and internal times in microseconds; g2 delay axes are in
seconds at the API boundary. The rate matrix R acts on column population
vectors (dx/dt = R x) with R[i, j] the j -> i transition rate, diagonals
chosen so every column sums to zero.

The metastable-triplet ISC weights are m_i = sum_mu p_mu |<s_mu|s_i>|^2 over
the field-dependent eigenstates, so a SpinEigensystem built at the same field
must be supplied alongside the level diagram. Spin relaxation 1/T1 acts
uniformly between all pairs of triplet eigenstates in that same basis.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .symmetry import GroundSpin

COLUMN_SUM_TOL = 1e-12
STEADY_RESIDUAL_TOL = 1e-10
EIG_DEFECT_TOL = 1e-8


class DynamicsError(RuntimeError):
    pass


@dataclass(frozen=True)
class RateParameters:
    """Optical and ISC rates (MHz), metastable T1 (us), and selectivity relaxation."""

    gamma_e: float
    gamma_s: float
    gamma_isc1: float
    gamma_isc2: float
    t1_us: float
    epsilon: float = 0.0

    def __post_init__(self):
        for name in ("gamma_e", "gamma_s", "gamma_isc1", "gamma_isc2", "t1_us"):
            if getattr(self, name) <= 0 or not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be a positive finite rate")
        if not 0.0 <= self.epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 0.5)")

    @property
    def x(self):
        """Saturation parameter Gamma_e / Gamma_s."""
        return self.gamma_e / self.gamma_s

    @classmethod
    def from_saturation(cls, x, gamma_s, gamma_isc1, gamma_isc2, t1_us, epsilon=0.0):
        return cls(
            gamma_e=x * gamma_s,
            gamma_s=gamma_s,
            gamma_isc1=gamma_isc1,
            gamma_isc2=gamma_isc2,
            t1_us=t1_us,
            epsilon=epsilon,
        )


@dataclass(frozen=True)
class RateMatrix:
    """Generator of the master equation plus the state bookkeeping.

    radiative_edges lists (i, j) pairs where the j -> i transition emits a
    photon; ground/excited/shelf index tuples identify the manifolds.
    """

    matrix: np.ndarray
    state_labels: tuple
    radiative_edges: tuple
    ground_indices: tuple
    excited_indices: tuple
    triplet_indices: tuple

    def __post_init__(self):
        m = self.matrix
        n = m.shape[0]
        if m.shape != (n, n) or len(self.state_labels) != n:
            raise ValueError("rate matrix and labels are inconsistent")
        scale = max(np.max(np.abs(m)), 1.0)
        off = m - np.diag(np.diag(m))
        if np.any(off < -COLUMN_SUM_TOL * scale):
            raise ValueError("off-diagonal rates must be nonnegative")
        if np.max(np.abs(m.sum(axis=0))) > COLUMN_SUM_TOL * scale * n:
            raise ValueError("columns must sum to zero (probability conservation)")

    @property
    def dim(self):
        return self.matrix.shape[0]

    def pl_weights(self):
        """Vector w with PL = w . x summing radiative flux out of each state."""
        w = np.zeros(self.dim)
        for i, j in self.radiative_edges:
            w[j] += self.matrix[i, j]
        return w

    def with_mixing(self, pair, rate_mhz):
        """Add a symmetric mixing rate between two states (1-based indices)."""
        i, j = (pair[0] - 1, pair[1] - 1)
        if i == j:
            raise ValueError("mixing pair must be two distinct states")
        for k in (i, j):
            if k not in self.triplet_indices:
                raise ValueError(
                    f"state {k + 1} is not a triplet eigenstate (valid: "
                    f"{tuple(t + 1 for t in self.triplet_indices)})"
                )
        if rate_mhz < 0:
            raise ValueError("mixing rate must be nonnegative")
        m = self.matrix.copy()
        m[i, j] += rate_mhz
        m[j, i] += rate_mhz
        m[j, j] -= rate_mhz
        m[i, i] -= rate_mhz
        return replace(self, matrix=m)


def _couplings(selection, eig):
    """m_i = sum_mu p_mu |<s_mu|s_i>|^2 for eigenstates ordered as in eig."""
    m = np.asarray(selection.p) @ eig.zero_field_projections
    if np.any(m < -1e-14):
        raise DynamicsError("negative ISC coupling computed from projections")
    return np.clip(m, 0.0, None)


def build_rate_matrix(diagram, params, eig):
    """Assemble the 5-state (singlet GS) or 7-state (triplet GS) rate matrix.

    The diagram's sharp selection vectors are relaxed by params.epsilon before
    the projection weights are computed.
    """
    if eig.dim != 3:
        raise DynamicsError("expected a spin-triplet eigensystem (dimension 3)")
    diagram = diagram.with_epsilon(params.epsilon)
    m_prime = _couplings(diagram.m_prime, eig)
    m_vec = _couplings(diagram.m_vec, eig)
    t1_rate = 1.0 / params.t1_us

    if diagram.ground_spin is GroundSpin.SINGLET:
        n = 5
        r = np.zeros((n, n))
        r[1, 0] = params.gamma_e
        r[0, 1] = params.gamma_s
        for k in range(3):
            r[2 + k, 1] = m_prime[k] * params.gamma_isc1
            r[0, 2 + k] = m_vec[k] * params.gamma_isc2
        for a in range(3):
            for b in range(3):
                if a != b:
                    r[2 + a, 2 + b] += t1_rate
        labels = ("gs", "es", "t1", "t2", "t3")
        radiative = ((0, 1),)
        ground, excited, triplet = (0,), (1,), (2, 3, 4)
    else:
        n = 7
        r = np.zeros((n, n))
        for k in range(3):
            r[3 + k, k] = params.gamma_e      # spin-conserving excitation
            r[k, 3 + k] = params.gamma_s      # spin-conserving emission
            r[6, 3 + k] = m_prime[k] * params.gamma_isc1
            r[k, 6] = m_vec[k] * params.gamma_isc2
        for a in range(3):
            for b in range(3):
                if a != b:
                    r[a, b] += t1_rate        # ground-triplet spin relaxation
        labels = ("g1", "g2", "g3", "e1", "e2", "e3", "s")
        radiative = tuple((k, 3 + k) for k in range(3))
        ground, excited, triplet = (0, 1, 2), (3, 4, 5), (0, 1, 2)

    r -= np.diag(r.sum(axis=0))
    return RateMatrix(
        matrix=r,
        state_labels=labels,
        radiative_edges=radiative,
        ground_indices=ground,
        excited_indices=excited,
        triplet_indices=triplet,
    )


def steady_state(rate_matrix):
    """Normalized null-space population of the rate matrix.

    One balance row (the one with the largest diagonal) is replaced by the
    normalization sum(x) = 1 and the square system solved directly, followed
    by one step of iterative refinement.
    """
    r = rate_matrix.matrix if isinstance(rate_matrix, RateMatrix) else np.asarray(rate_matrix)
    n = r.shape[0]
    pivot = int(np.argmax(np.abs(np.diag(r))))
    a = r.copy()
    a[pivot, :] = 1.0
    b = np.zeros(n)
    b[pivot] = 1.0
    try:
        x = np.linalg.solve(a, b)
        x += np.linalg.solve(a, b - a @ x)
    except np.linalg.LinAlgError as exc:
        raise DynamicsError("rate matrix is rank deficient beyond its null direction") from exc
    scale = max(np.max(np.abs(r)), 1.0)
    residual = np.max(np.abs(r @ x))
    if residual > STEADY_RESIDUAL_TOL * scale or not np.all(np.isfinite(x)):
        raise DynamicsError(f"steady-state solve failed (residual {residual:.2e})")
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def steady_pl(rate_matrix, populations=None):
    """Steady-state PL in MHz: radiative flux summed over emitting edges."""
    if populations is None:
        populations = steady_state(rate_matrix)
    return float(rate_matrix.pl_weights() @ populations)


def pl_variation(pl_b, pl_0):
    """Relative PL change (I_B - I_0)/I_0."""
    return (pl_b - pl_0) / pl_0


def emission_initial_state(rate_matrix, populations=None):
    """Population vector right after a photon emission.

    Singlet ground state: all weight in the ground state. Triplet ground
    state: distributed over the ground sublevels by the branching of the
    steady-state excited populations (identity branching for spin-conserving
    emission).
    """
    if populations is None:
        populations = steady_state(rate_matrix)
    x0 = np.zeros(rate_matrix.dim)
    if len(rate_matrix.excited_indices) == 1:
        x0[rate_matrix.ground_indices[0]] = 1.0
        return x0
    es = np.array([populations[j] for j in rate_matrix.excited_indices])
    weights = es / es.sum()
    for (i, j), w in zip(rate_matrix.radiative_edges, weights):
        x0[i] += w
    return x0


@dataclass(frozen=True)
class G2Curve:
    """Second-order correlation samples: delays in seconds, values >= 0."""

    delays: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays, float)
        if d.ndim != 1 or len(d) != len(self.values):
            raise ValueError("delays and values must be 1-d arrays of equal length")
        if np.any(np.diff(d) <= 0):
            raise ValueError("delays must be strictly increasing")
        if np.any(np.asarray(self.values) < 0):
            raise ValueError("g2 values must be nonnegative")


def default_delays(t_min_s=1e-9, t_max_s=1e-2, n=200):
    """Log-uniform delay grid in seconds."""
    return np.logspace(math.log10(t_min_s), math.log10(t_max_s), n)


def _eig_propagator(r, x0):
    """Mode decomposition x(t) = sum_m c_m v_m exp(w_m t); None if defective."""
    w, v = np.linalg.eig(r)
    try:
        c = np.linalg.solve(v, x0)
    except np.linalg.LinAlgError:
        return None
    recon = (v * w) @ np.linalg.inv(v)
    scale = max(np.max(np.abs(r)), 1.0)
    if np.max(np.abs(recon - r)) > EIG_DEFECT_TOL * scale:
        return None
    return w, v, c


def rk4_propagate(r, x0, times_us, rtol=1e-10, atol=1e-13):
    """Populations at the requested times via adaptive step-doubling RK4.

    Classic fourth-order steps with the half-step error estimate and local
    extrapolation; steps are clipped to land exactly on each target time.
    Serves as the integration fallback and as an oracle independent of the
    eigendecomposition path.
    """
    r = np.asarray(r, float)
    times = np.asarray(times_us, float)

    def deriv(x):
        return r @ x

    def step(x, h):
        k1 = deriv(x)
        k2 = deriv(x + 0.5 * h * k1)
        k3 = deriv(x + 0.5 * h * k2)
        k4 = deriv(x + h * k3)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    max_rate = max(np.max(np.abs(np.diag(r))), 1e-12)
    h = 0.1 / max_rate
    out = np.empty((len(times), len(x0)))
    x = np.array(x0, float)
    t = 0.0
    for idx, target in enumerate(times):
        if target < t:
            raise ValueError("times must be sorted ascending")
        while t < target:
            h_try = min(h, target - t)
            full = step(x, h_try)
            half = step(step(x, 0.5 * h_try), 0.5 * h_try)
            err = np.max(np.abs(half - full)) / (atol + rtol * max(np.max(np.abs(half)), 1.0))
            if err > 1.0 and h_try <= 1e-16 * max(t, 1.0):
                raise DynamicsError("integration step size underflow")
            if err <= 1.0:
                t += h_try
                x = half + (half - full) / 15.0
            factor = 0.9 * err ** -0.2 if err > 0 else 5.0
            h = h_try * min(max(factor, 0.2), 5.0)
        out[idx] = x
    return out


def simulate_g2(diagram, params, eig, delays_s=None, initial_state=None, method="eig"):
    """g2(t) = PL(t)/<PL> from the post-emission initial condition.

    method 'eig' uses the mode decomposition of R (exact for diagonalizable
    generators) and falls back to adaptive RK4 when R is defective; 'rk4'
    forces the integrator.
    """
    if delays_s is None:
        delays_s = default_delays()
    delays_s = np.asarray(delays_s, float)
    if np.any(delays_s < 0) or np.any(np.diff(delays_s) <= 0):
        raise ValueError("delays must be sorted, nonnegative and distinct")
    rm = build_rate_matrix(diagram, params, eig)
    xss = steady_state(rm)
    pl_w = rm.pl_weights()
    pl_ss = float(pl_w @ xss)
    if initial_state is None:
        x0 = emission_initial_state(rm, xss)
    elif isinstance(initial_state, str) and initial_state == "steady":
        x0 = xss
    else:
        x0 = np.asarray(initial_state, float)
        if x0.shape != (rm.dim,) or abs(x0.sum() - 1.0) > 1e-9:
            raise ValueError("initial_state must be a normalized population vector")
    t_us = delays_s * 1e6

    modes = _eig_propagator(rm.matrix, x0) if method == "eig" else None
    if modes is not None:
        w, v, c = modes
        coef = (pl_w @ v) * c
        pl_t = np.real(coef @ np.exp(np.outer(w, t_us)))
    elif method in ("eig", "rk4"):
        pl_t = rk4_propagate(rm.matrix, x0, t_us) @ pl_w
    else:
        raise ValueError(f"unknown method {method!r}")
    exact_zero = t_us == 0.0
    if np.any(exact_zero):
        pl_t[exact_zero] = pl_w @ x0
    values = np.maximum(pl_t / pl_ss, 0.0)
    return G2Curve(delays=delays_s, values=values)


def _exp_bin_means(w, a, b):
    """(1/(b-a)) * integral_a^b exp(w t) dt, stable as w -> 0."""
    dz = w * (b - a)
    out = np.empty_like(w, dtype=complex)
    small = np.abs(dz) < 1e-6
    out[small] = 1.0 + dz[small] / 2.0 + dz[small] ** 2 / 6.0
    out[~small] = (np.exp(dz[~small]) - 1.0) / dz[~small]
    return np.exp(w * a) * out


def simulate_g2_bin_averaged(diagram, params, eig, edges_s, initial_state=None):
    """Time-averaged g2 over histogram bins, for comparison with correlators.

    Uses the analytic integral of each relaxation mode across the bins; the
    generator must be diagonalizable.
    """
    edges_s = np.asarray(edges_s, float)
    if np.any(np.diff(edges_s) <= 0) or np.any(edges_s < 0):
        raise ValueError("edges must be sorted, nonnegative and distinct")
    rm = build_rate_matrix(diagram, params, eig)
    xss = steady_state(rm)
    pl_w = rm.pl_weights()
    x0 = emission_initial_state(rm, xss) if initial_state is None else np.asarray(initial_state, float)
    modes = _eig_propagator(rm.matrix, x0)
    if modes is None:
        raise DynamicsError("generator is defective; bin-averaged evaluation unavailable")
    w, v, c = modes
    coef = (pl_w @ v) * c
    edges_us = edges_s * 1e6
    out = np.empty(len(edges_us) - 1)
    for k in range(len(out)):
        out[k] = np.real(coef @ _exp_bin_means(w, edges_us[k], edges_us[k + 1]))
    return np.maximum(out / float(pl_w @ xss), 0.0)


def odmr_pl_variation(diagram, params, eig, pair, gamma_odmr_mhz):
    """Relative PL change (I_MR - I_0)/I_0 under resonant driving of one pair.

    The drive is modeled as a symmetric incoherent mixing rate between two
    triplet eigenstates, indexed 1-based in the rate-matrix state order
    (singlet ground state: the metastable triplet occupies states 3-5).
    """
    rm = build_rate_matrix(diagram, params, eig)
    pl0 = steady_pl(rm)
    pl_mr = steady_pl(rm.with_mixing(pair, gamma_odmr_mhz))
    return pl_variation(pl_mr, pl0)


def odmr_linewidth_floor_khz(params):
    """Decay-limited ODMR linewidth Gamma_ISC2/(2*pi) in kHz."""
    return params.gamma_isc2 * 1e3 / (2.0 * math.pi)
