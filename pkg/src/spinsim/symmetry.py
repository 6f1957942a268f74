"""C2v representation algebra, optical/ISC selection rules, and level diagrams.

Irreps follow the convention with x along the twofold axis: the linear
function x transforms as A1, y as B1 and z as B2, while the triplet
zero-field states map as s_x ~ A2, s_y ~ B2, s_z ~ B1. The single-group
product table is the Klein four-group (XOR on Cotton-ordered indices).
"""

import enum
from dataclasses import dataclass, field, replace

NORMALIZATION_TOL = 1e-12


class Irrep(enum.Enum):
    A1 = 0
    A2 = 1
    B1 = 2
    B2 = 3
    E_HALF = 4  # double-group representation, excluded from orbital products

    def __str__(self):
        return "E1/2" if self is Irrep.E_HALF else self.name


class SpinAxis(enum.Enum):
    """Triplet zero-field basis labels and their irreps."""

    S_X = 0
    S_Y = 1
    S_Z = 2

    @property
    def irrep(self):
        return {SpinAxis.S_X: Irrep.A2, SpinAxis.S_Y: Irrep.B2, SpinAxis.S_Z: Irrep.B1}[self]


class Polarization(enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"
    FORBIDDEN = "forbidden"


class GroundSpin(enum.Enum):
    SINGLET = "singlet"
    TRIPLET = "triplet"


class DiagramClass(enum.Enum):
    """Qualitative PL-anisotropy classes by ISC selection-rule arrangement."""

    I = 1    # no spin selectivity
    II = 2   # symmetric, single in-plane axis
    III = 3  # s_z only
    IV = 4   # asymmetric, both in-plane axes
    V = 5    # asymmetric, one in-plane axis plus s_z


def irrep_product(a, b):
    """Product of two single-group irreps (commutative, every element self-inverse)."""
    if Irrep.E_HALF in (a, b):
        raise ValueError("E1/2 is not a single-group irrep; only spin_orbit_irrep handles the double group")
    return Irrep(a.value ^ b.value)


_POLARIZATION_OF_PRODUCT = {
    Irrep.A1: Polarization.X,
    Irrep.B1: Polarization.Y,
    Irrep.B2: Polarization.Z,
    Irrep.A2: Polarization.FORBIDDEN,
}


def optical_polarization(initial, final):
    """Electric-dipole polarization of a transition between two orbital irreps."""
    return _POLARIZATION_OF_PRODUCT[irrep_product(initial, final)]


def spin_orbit_irrep(orbital, axis):
    """Total spin-orbit irrep of a triplet sublevel |axis> on the given orbital."""
    return irrep_product(orbital, axis.irrep)


@dataclass(frozen=True)
class SelectionVector:
    """Normalized ISC weights (p_x, p_y, p_z) over the zero-field spin axes."""

    p: tuple

    def __post_init__(self):
        if len(self.p) != 3 or any(v < 0 for v in self.p):
            raise ValueError("selection vector needs three nonnegative weights")
        if abs(sum(self.p) - 1.0) > NORMALIZATION_TOL:
            raise ValueError("selection vector must sum to 1")

    @classmethod
    def uniform(cls):
        return cls((1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))

    @classmethod
    def sharp(cls, axis):
        p = [0.0, 0.0, 0.0]
        p[axis.value] = 1.0
        return cls(tuple(p))

    @classmethod
    def mixture(cls, axes):
        p = [0.0, 0.0, 0.0]
        for ax in axes:
            p[ax.value] += 1.0 / len(axes)
        return cls(tuple(p))

    @property
    def is_uniform(self):
        return all(abs(v - 1.0 / 3.0) <= NORMALIZATION_TOL for v in self.p)

    @property
    def support(self):
        """Spin axes carrying nonzero weight (empty-by-convention if uniform)."""
        if self.is_uniform:
            return frozenset()
        return frozenset(ax for ax in SpinAxis if self.p[ax.value] > NORMALIZATION_TOL)

    def relaxed(self, epsilon):
        """Soften a sharp single-axis vector to (1-2*eps) on the allowed axis.

        Only sharp vectors are relaxed; mixtures and the nonselective vector
        are returned unchanged.
        """
        if epsilon == 0.0 or max(self.p) < 1.0 - NORMALIZATION_TOL:
            return self
        if not 0.0 <= epsilon < 0.5:
            raise ValueError("epsilon must lie in [0, 0.5)")
        k = max(range(3), key=lambda i: self.p[i])
        p = [epsilon] * 3
        p[k] = 1.0 - 2.0 * epsilon
        return SelectionVector(tuple(p))


def isc_selection_vector(triplet_orbital, singlet_orbital, epsilon=None):
    """Selection weights for an ISC between a triplet and a singlet orbital.

    Weight concentrates on the spin axis whose spin-orbit irrep matches the
    singlet; with no matching axis the transition is treated as nonselective.
    """
    allowed = [ax for ax in SpinAxis if spin_orbit_irrep(triplet_orbital, ax) == singlet_orbital]
    if not allowed:
        return SelectionVector.uniform()
    vec = SelectionVector.sharp(allowed[0])
    if epsilon:
        vec = vec.relaxed(epsilon)
    return vec


@dataclass(frozen=True)
class LevelDiagram:
    """One admissible level structure with its ISC coupling vectors.

    m_prime weights the excited-state ISC (rate Gamma_ISC1 into the
    metastable manifold), m_vec the metastable decay (rate Gamma_ISC2).
    Identity is carried by the coupling-vector pair plus the emission
    polarization; orbital labels are recorded for reference only.
    """

    ground_spin: GroundSpin
    diagram_id: str
    m_prime: SelectionVector
    m_vec: SelectionVector
    emission_polarization: Polarization
    orbitals: tuple = ()
    m_prime_alternatives: tuple = field(default=(), compare=False)

    def with_epsilon(self, epsilon):
        """Relax sharp coupling vectors by epsilon (nonselective ones unchanged)."""
        if not epsilon:
            return self
        return replace(
            self,
            m_prime=self.m_prime.relaxed(epsilon),
            m_vec=self.m_vec.relaxed(epsilon),
            m_prime_alternatives=tuple(v.relaxed(epsilon) for v in self.m_prime_alternatives),
        )

    def variants(self):
        """This diagram followed by copies using each alternative m_prime."""
        yield self
        for k, vec in enumerate(self.m_prime_alternatives):
            yield replace(
                self,
                diagram_id=f"{self.diagram_id}{k + 2}",
                m_prime=vec,
                m_prime_alternatives=(),
            )

    def to_dict(self):
        return {
            "ground_spin": self.ground_spin.value,
            "diagram_id": self.diagram_id,
            "emission_polarization": self.emission_polarization.value,
            "m_prime": list(self.m_prime.p),
            "m": list(self.m_vec.p),
            "m_prime_alternatives": [list(v.p) for v in self.m_prime_alternatives],
            "orbitals": [str(x) for x in self.orbitals],
            "class": classify(self).name,
        }


_SINGLE_GROUP = (Irrep.A1, Irrep.A2, Irrep.B1, Irrep.B2)


def _upper_isc_vectors(excited_orbital, shelf_orbitals):
    """Main and alternative m' for decay from an excited orbital into singlets.

    The direct route targets the lowest singlet (always A1); indirect routes
    pass through higher singlets of the given orbital symmetries. When both a
    direct and an indirect route are spin-orbit allowed, the equal mixture and
    the pure indirect vector are exposed as alternatives.
    """
    direct = isc_selection_vector(excited_orbital, Irrep.A1)
    indirect = []
    for sym in shelf_orbitals:
        vec = isc_selection_vector(excited_orbital, sym)
        if not vec.is_uniform and vec != direct:
            indirect.append(vec)
    if direct.is_uniform and indirect:
        return indirect[0], ()
    if not direct.is_uniform and indirect:
        alt = indirect[0]
        axes = sorted(direct.support | alt.support, key=lambda ax: ax.value)
        return direct, (SelectionVector.mixture(axes), alt)
    return direct, ()


def enumerate_level_diagrams(ground):
    """All level diagrams with in-plane optical dipoles for the given ground spin.

    Singlet ground state: two diagrams (only (b) is spin selective).
    Triplet ground state: the eight orbital combinations that survive the
    in-plane polarization constraint (X = Y for x-polarized emission,
    {X, Y} in {A1, B1} or {A2, B2} for y-polarized).
    """
    if isinstance(ground, str):
        ground = GroundSpin(ground)
    diagrams = []
    if ground is GroundSpin.SINGLET:
        for label, x in (("a", Irrep.A1), ("b", Irrep.B1)):
            pol = optical_polarization(Irrep.A1, x)
            m_prime = isc_selection_vector(x, x)  # ES singlet and shelf triplet share the orbital
            m_vec = isc_selection_vector(x, Irrep.A1)
            diagrams.append(
                LevelDiagram(
                    ground_spin=ground,
                    diagram_id=label,
                    m_prime=m_prime,
                    m_vec=m_vec,
                    emission_polarization=pol,
                    orbitals=(x,),
                )
            )
        return diagrams

    labels = iter("abcdefgh")
    combos = [(x, x) for x in _SINGLE_GROUP]
    combos += [
        (Irrep.A1, Irrep.B1),
        (Irrep.B1, Irrep.A1),
        (Irrep.A2, Irrep.B2),
        (Irrep.B2, Irrep.A2),
    ]
    for x, y in combos:
        pol = optical_polarization(x, y)
        m_prime, alternatives = _upper_isc_vectors(y, (x,))
        m_vec = isc_selection_vector(x, Irrep.A1)
        diagrams.append(
            LevelDiagram(
                ground_spin=ground,
                diagram_id=next(labels),
                m_prime=m_prime,
                m_vec=m_vec,
                emission_polarization=pol,
                orbitals=(x, y),
                m_prime_alternatives=alternatives,
            )
        )
    return diagrams


def get_diagram(ground, diagram_id, epsilon=None):
    """Look up one diagram (including 'g2'/'h3'-style variant ids) by label."""
    for diagram in enumerate_level_diagrams(ground):
        for variant in diagram.variants():
            if variant.diagram_id == diagram_id:
                return variant.with_epsilon(epsilon) if epsilon else variant
    raise KeyError(f"unknown diagram id {diagram_id!r} for {ground} ground state")


def classify(diagram):
    """Assign the qualitative anisotropy class from the (m', m) support."""
    selective = [v for v in (diagram.m_prime, diagram.m_vec) if not v.is_uniform]
    if not selective:
        return DiagramClass.I
    support = frozenset().union(*(v.support for v in selective))
    if support == {SpinAxis.S_Z}:
        return DiagramClass.III
    if SpinAxis.S_Z in support:
        return DiagramClass.V
    if len(support) == 1:
        return DiagramClass.II
    return DiagramClass.IV
