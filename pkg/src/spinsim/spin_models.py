"""Spin Hamiltonians with zero-field splitting for S = 1/2, 1, 3/2.

Energies are expressed in units of the axial zero-field splitting D (the
coordinate x is the twofold symmetry axis, z is the out-of-plane normal) and
magnetic fields as the dimensionless reduced magnitude b = g*mu_B*B/|D|.
Hamiltonians are returned in the same units the caller supplies for D, with
Zeeman matrix elements b*|D|; the sign of D only enters the zero-field
diagonal.

The triplet Hamiltonian is written in the zero-field eigenbasis
{|s_x>, |s_y>, |s_z>} and the quartet in the S_x projection basis
m_s = {3/2, 1/2, -1/2, -3/2}; in both cases the matrix rows/columns of the
eigensystem projections refer to these bases.
"""

import math
from dataclasses import dataclass

import numpy as np

from .constants import G_ELECTRON, MHZ_PER_GAUSS

HERMITICITY_TOL = 1e-12
DEGENERACY_TOL = 1e-9
_SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class ZeroFieldSplitting:
    """Axial (D) and transverse (E) zero-field splitting, any consistent unit.

    D sets the energy scale and must be nonzero for triplet/quartet models.
    |E/D| is not restricted: ratios beyond 1/3 and either sign are legal.
    """

    d: float
    e: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.e)):
            raise ValueError("zero-field splitting parameters must be finite")

    @property
    def e_over_d(self):
        return self.e / self.d

    @classmethod
    def from_ratio(cls, e_over_d, d=1.0):
        return cls(d=d, e=e_over_d * d)


@dataclass(frozen=True)
class FieldVector:
    """Reduced magnetic field b = g*mu_B*B/|D| as Cartesian components.

    bx, by are in-plane (x along the C2 axis), bz is out of plane.
    """

    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.bx, self.by, self.bz)):
            raise ValueError("field components must be finite")

    @property
    def b(self):
        """Total reduced magnitude (>= 0)."""
        return math.sqrt(self.bx**2 + self.by**2 + self.bz**2)

    @property
    def b_in_plane(self):
        return math.hypot(self.bx, self.by)

    @property
    def phi(self):
        """In-plane angle from the x axis, radians."""
        return math.atan2(self.by, self.bx)

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def in_plane(cls, b, phi):
        """In-plane field of reduced magnitude b at angle phi from x."""
        if b < 0:
            raise ValueError("reduced magnitude b must be >= 0")
        return cls(b * math.cos(phi), b * math.sin(phi), 0.0)

    @classmethod
    def along_z(cls, bz):
        return cls(0.0, 0.0, bz)

    @classmethod
    def from_polar(cls, b, phi, bz=0.0):
        """In-plane magnitude b at angle phi plus an out-of-plane component."""
        v = cls.in_plane(b, phi)
        return cls(v.bx, v.by, bz)

    @classmethod
    def from_gauss(cls, b_gauss, phi, d_mhz, g=G_ELECTRON, bz_gauss=0.0):
        """Build from laboratory units: field in gauss, D in MHz."""
        if d_mhz == 0:
            raise ValueError("D must be nonzero to define the reduced field")
        scale = g * MHZ_PER_GAUSS / abs(d_mhz)
        return cls.from_polar(scale * b_gauss, phi, scale * bz_gauss)

    def to_gauss(self, d_mhz, g=G_ELECTRON):
        """Total field magnitude in gauss for the given D (MHz) and g."""
        return self.b * abs(d_mhz) / (g * MHZ_PER_GAUSS)


def _check_finite(zfs, field):
    if zfs is not None and zfs.d == 0:
        raise ValueError("D must be nonzero (it sets the energy scale)")
    if not all(math.isfinite(v) for v in (field.bx, field.by, field.bz)):
        raise ValueError("field components must be finite")


def triplet_hamiltonian(zfs, field):
    """S=1 Hamiltonian in the zero-field basis {|s_x>, |s_y>, |s_z>}.

    Diagonal (-2D/3, D/3-E, D/3+E); B_z couples s_x/s_y through an imaginary
    element, B_y couples s_x/s_z and B_x couples s_y/s_z.
    """
    _check_finite(zfs, field)
    d, e = zfs.d, zfs.e
    w = abs(d)
    return np.array(
        [
            [-2.0 * d / 3.0, 1j * field.bz * w, field.by * w],
            [-1j * field.bz * w, d / 3.0 - e, field.bx * w],
            [field.by * w, field.bx * w, d / 3.0 + e],
        ],
        dtype=complex,
    )


def _spin_operators_x_basis(s):
    """Spin matrices (Sx, Sy, Sz) in the eigenbasis of Sx, m descending.

    Realized by the cyclic relabeling x->z_std, y->x_std, z->y_std of the
    standard (Sz-diagonal) representation, which preserves [Sa, Sb] = i e_abc Sc.
    """
    m = np.arange(s, -s - 1, -1.0)
    sz_std = np.diag(m)
    c = np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1))
    sp = np.zeros((len(m), len(m)), dtype=complex)
    sp[np.arange(len(m) - 1), np.arange(1, len(m))] = c
    sx_std = (sp + sp.conj().T) / 2.0
    sy_std = (sp - sp.conj().T) / 2.0j
    return sz_std.astype(complex), sx_std, sy_std


def quartet_hamiltonian(zfs, field):
    """S=3/2 Hamiltonian in the S_x basis m_s = {3/2, 1/2, -1/2, -3/2}.

    Zero-field part diag(D, -D, -D, D) with sqrt(3)*E coupling the
    {3/2, -1/2} and {1/2, -3/2} pairs; two Kramers doublets at
    +/- sqrt(D^2 + 3E^2) when b = 0.
    """
    _check_finite(zfs, field)
    d, e = zfs.d, zfs.e
    w = abs(d)
    sx, sy, sz = _spin_operators_x_basis(1.5)
    h = d * (sx @ sx - (5.0 / 4.0) * np.eye(4)) + e * (sy @ sy - sz @ sz)
    h = h + w * (field.bx * sx + field.by * sy + field.bz * sz)
    return h


def doublet_hamiltonian(field):
    """S=1/2 pure Zeeman Hamiltonian (ZFS vanishes), units of |D|.

    Eigenvalues +/- b/2 for any field direction.
    """
    _check_finite(None, field)
    sx, sy, sz = _spin_operators_x_basis(0.5)
    return field.bx * sx + field.by * sy + field.bz * sz


@dataclass(frozen=True)
class SpinEigensystem:
    """Sorted eigen-decomposition plus populations in the zero-field basis.

    zero_field_projections[mu, i] = |<basis_mu|eigvec_i>|^2; each column sums
    to one. Eigenvalues ascend; eigenvectors are phase-fixed and degenerate
    subspaces canonicalized, so the decomposition is reproducible.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    zero_field_projections: np.ndarray

    @property
    def dim(self):
        return len(self.eigenvalues)


def _jacobi_hermitian(h, tol=1e-14, max_sweeps=60):
    """Cyclic Jacobi diagonalization of a complex Hermitian matrix.

    Returns (eigenvalues, eigenvectors as columns), unsorted.
    """
    a = np.array(h, dtype=complex)
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(np.max(np.abs(a)), 1e-300)
    for _ in range(max_sweeps):
        off = math.sqrt(sum(abs(a[p, q]) ** 2 for p in range(n) for q in range(p + 1, n)))
        if off <= tol * scale:
            break
        for p in range(n):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-30 * scale:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                phase = apq / abs(apq)
                tau = (aqq - app) / (2.0 * abs(apq))
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = t * c
                # columns of the plane rotation; J^dagger A J zeroes (p, q)
                jp = np.zeros(n, dtype=complex)
                jq = np.zeros(n, dtype=complex)
                jp[p], jp[q] = c, -s * np.conj(phase)
                jq[p], jq[q] = s * phase, c
                rot = np.eye(n, dtype=complex)
                rot[:, p] = jp
                rot[:, q] = jq
                a = rot.conj().T @ a @ rot
                v = v @ rot
    w = np.real(np.diag(a))
    return w, v


def _canonicalize_degenerate(w, v, scale):
    """Gram-Schmidt degenerate subspaces against the zero-field basis order."""
    n = len(w)
    tol = DEGENERACY_TOL * max(scale, 1.0)
    i = 0
    while i < n:
        j = i + 1
        while j < n and abs(w[j] - w[i]) <= tol:
            j += 1
        if j - i > 1:
            sub = v[:, i:j]
            proj = sub @ sub.conj().T
            basis = []
            for mu in range(n):
                cand = proj[:, mu].copy()
                for u in basis:
                    cand -= u * (u.conj() @ cand)
                nrm = np.linalg.norm(cand)
                if nrm > 1e-8:
                    basis.append(cand / nrm)
                if len(basis) == j - i:
                    break
            if len(basis) == j - i:
                v[:, i:j] = np.column_stack(basis)
        i = j
    return v


def _fix_phases(v):
    for i in range(v.shape[1]):
        k = int(np.argmax(np.abs(v[:, i])))
        pivot = v[k, i]
        if abs(pivot) > 0:
            v[:, i] *= np.conj(pivot) / abs(pivot)
    return v


def eigensystem(h):
    """Diagonalize a Hermitian matrix into a SpinEigensystem.

    Ascending eigenvalue order; exact ties broken by descending projection
    onto the first, then second, zero-field basis state.
    """
    h = np.asarray(h, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(float(np.max(np.abs(h))), 1.0)
    if np.max(np.abs(h - h.conj().T)) > HERMITICITY_TOL * scale:
        raise ValueError("matrix is not Hermitian")
    w, v = _jacobi_hermitian(h)
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    v = _canonicalize_degenerate(w, v, scale)
    # tie-break inside exactly-degenerate groups: largest |<s_x|.>|^2 first
    tol = DEGENERACY_TOL * scale
    keys = [
        (round(float(w[i]) / tol) if tol else w[i], -abs(v[0, i]) ** 2, -abs(v[1, i]) ** 2)
        for i in range(len(w))
    ]
    order = sorted(range(len(w)), key=lambda i: keys[i])
    w, v = w[order], v[:, order]
    v = _fix_phases(v)
    proj = np.abs(v) ** 2
    return SpinEigensystem(eigenvalues=w, eigenvectors=v, zero_field_projections=proj)


def triplet_eigensystem(zfs, field):
    return eigensystem(triplet_hamiltonian(zfs, field))


def quartet_eigensystem(zfs, field):
    return eigensystem(quartet_hamiltonian(zfs, field))
