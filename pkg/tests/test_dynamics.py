import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from spinsim.dynamics import (
    DynamicsError,
    RateParameters,
    build_rate_matrix,
    emission_initial_state,
    odmr_linewidth_floor_khz,
    odmr_pl_variation,
    pl_variation,
    rk4_propagate,
    simulate_g2,
    steady_pl,
    steady_state,
)
from spinsim.photonstats import fit_g2_curve
from spinsim.spin_models import FieldVector, ZeroFieldSplitting, triplet_eigensystem
from spinsim.symmetry import get_diagram

# reference parameter sets used throughout (rates MHz, T1 us)
SINGLET_PARAMS = RateParameters(gamma_e=82.0, gamma_s=820.0, gamma_isc1=7.7, gamma_isc2=0.85, t1_us=50.0, epsilon=0.02)
TRIPLET_PARAMS = RateParameters(gamma_e=82.0, gamma_s=820.0, gamma_isc1=33.0, gamma_isc2=0.13, t1_us=50.0, epsilon=0.05)
ZFS = ZeroFieldSplitting.from_ratio(-0.33)


def singlet_model(field, params=SINGLET_PARAMS, e_over_d=-0.33):
    eig = triplet_eigensystem(ZeroFieldSplitting.from_ratio(e_over_d), field)
    return build_rate_matrix(get_diagram("singlet", "b"), params, eig), eig


def triplet_model(field, params=TRIPLET_PARAMS, e_over_d=-0.33):
    eig = triplet_eigensystem(ZeroFieldSplitting.from_ratio(e_over_d), field)
    return build_rate_matrix(get_diagram("triplet", "e"), params, eig), eig


def two_level_matrix(gamma_e, gamma_s):
    r = np.array([[-gamma_e, gamma_s], [gamma_e, -gamma_s]])
    return r


class TestRateParameters:
    def test_saturation_parameter(self):
        assert SINGLET_PARAMS.x == pytest.approx(0.1, rel=1e-12)
        p = RateParameters.from_saturation(x=0.5, gamma_s=600.0, gamma_isc1=1.8, gamma_isc2=0.11, t1_us=10.0)
        assert p.gamma_e == pytest.approx(300.0, rel=1e-12)

    def test_rejects_nonpositive_rates(self):
        with pytest.raises(ValueError):
            RateParameters(gamma_e=0.0, gamma_s=1.0, gamma_isc1=1.0, gamma_isc2=1.0, t1_us=1.0)


class TestBuildRateMatrix:
    def test_uniform_upper_isc_is_field_independent(self):
        for field in (FieldVector.zero(), FieldVector.in_plane(0.7, 0.9), FieldVector(0.2, 0.1, 0.4)):
            rm, _ = singlet_model(field, SINGLET_PARAMS)
            upper = [rm.matrix[2 + k, 1] for k in range(3)]
            np.testing.assert_allclose(upper, SINGLET_PARAMS.gamma_isc1 / 3.0, rtol=1e-12)

    def test_zero_field_couplings_follow_selection_vector(self):
        # E/D = +0.2 keeps the eigenbasis in (s_x, s_y, s_z) order
        params = RateParameters(gamma_e=82.0, gamma_s=820.0, gamma_isc1=7.7, gamma_isc2=0.85, t1_us=50.0)
        eig = triplet_eigensystem(ZeroFieldSplitting(1.0, 0.2), FieldVector.zero())
        rm = build_rate_matrix(get_diagram("singlet", "b"), params, eig)
        lower = np.array([rm.matrix[0, 2 + k] for k in range(3)])
        np.testing.assert_allclose(lower, [0.0, 0.0, params.gamma_isc2], atol=1e-14)

    def test_in_plane_field_splits_sz_weight(self):
        params = RateParameters(gamma_e=82.0, gamma_s=820.0, gamma_isc1=7.7, gamma_isc2=1.0, t1_us=50.0)
        eig = triplet_eigensystem(ZeroFieldSplitting(1.0, 0.2), FieldVector.in_plane(0.5, 0.0))
        rm = build_rate_matrix(get_diagram("singlet", "b"), params, eig)
        lower = np.array([rm.matrix[0, 2 + k] for k in range(3)])
        np.testing.assert_allclose(lower, [0.0, 0.3143, 0.6857], atol=5e-5)

    def test_columns_sum_to_zero_and_t1_wiring(self):
        rm, _ = triplet_model(FieldVector.in_plane(0.4, 0.3))
        m = rm.matrix
        assert np.max(np.abs(m.sum(axis=0))) < 1e-10
        for a in range(3):
            for b in range(3):
                if a != b:
                    assert m[a, b] == pytest.approx(1.0 / TRIPLET_PARAMS.t1_us, rel=1e-12)
        # metastable singlet is state 7
        assert rm.state_labels[6] == "s"
        assert len(rm.radiative_edges) == 3


class TestSteadyState:
    def test_two_level_detailed_balance(self):
        x = steady_state(two_level_matrix(5.0, 5.0))
        np.testing.assert_allclose(x, [0.5, 0.5], atol=1e-12)

    def test_three_level_matches_rk4_relaxation(self):
        # GS/ES/shelf with the singlet-GS reference rates
        ge, gs, g1, g2 = 82.0, 820.0, 7.7, 0.85
        r = np.array(
            [
                [-ge, gs, g2],
                [ge, -(gs + g1), 0.0],
                [0.0, g1, -g2],
            ]
        )
        x_ss = steady_state(r)
        x0 = np.array([1.0, 0.0, 0.0])
        x_rk4 = rk4_propagate(r, x0, [40.0])[0]
        np.testing.assert_allclose(x_rk4, x_ss, atol=1e-8)

    def test_residual_and_normalization(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            rm, _ = singlet_model(FieldVector(*rng.uniform(-1, 1, 3)))
            x = steady_state(rm)
            assert np.max(np.abs(rm.matrix @ x)) < 1e-10 * max(np.max(np.abs(rm.matrix)), 1)
            assert x.sum() == pytest.approx(1.0, abs=1e-10)
            assert np.all(x >= -1e-12)

    def test_rank_deficient_rejected(self):
        # two disconnected two-level systems: a two-dimensional null space
        r = np.zeros((4, 4))
        r[:2, :2] = two_level_matrix(1.0, 1.0)
        r[2:, 2:] = two_level_matrix(2.0, 2.0)
        with pytest.raises(DynamicsError):
            steady_state(r)


class TestSteadyPl:
    def test_two_level_half_gamma_s(self):
        params = RateParameters(gamma_e=5.0, gamma_s=5.0, gamma_isc1=1e-9, gamma_isc2=1e9, t1_us=1.0)
        # effectively two-level: shelving negligible, shelf drains instantly
        rm, _ = singlet_model(FieldVector.zero(), params)
        assert steady_pl(rm) == pytest.approx(2.5, rel=1e-6)

    def test_in_plane_field_brightens_singlet_model(self):
        rm0, _ = singlet_model(FieldVector.zero())
        rmb, _ = singlet_model(FieldVector.in_plane(0.5, math.radians(22.5)))
        assert steady_pl(rmb) > steady_pl(rm0)

    def test_homogeneity_under_rate_rescaling(self):
        lam = 3.7
        rm, eig = singlet_model(FieldVector.in_plane(0.3, 0.2))
        scaled = RateParameters(
            gamma_e=SINGLET_PARAMS.gamma_e * lam,
            gamma_s=SINGLET_PARAMS.gamma_s * lam,
            gamma_isc1=SINGLET_PARAMS.gamma_isc1 * lam,
            gamma_isc2=SINGLET_PARAMS.gamma_isc2 * lam,
            t1_us=SINGLET_PARAMS.t1_us / lam,
            epsilon=SINGLET_PARAMS.epsilon,
        )
        rm2 = build_rate_matrix(get_diagram("singlet", "b"), scaled, eig)
        assert steady_pl(rm2) == pytest.approx(lam * steady_pl(rm), rel=1e-10)

    def test_z_field_leaves_singlet_pl_unchanged(self):
        pl0 = steady_pl(singlet_model(FieldVector.zero())[0])
        for bz in (0.2, 0.7, 1.5):
            plz = steady_pl(singlet_model(FieldVector.along_z(bz))[0])
            assert plz == pytest.approx(pl0, rel=1e-9)


class TestPlVariation:
    def test_examples(self):
        assert pl_variation(110.0, 100.0) == pytest.approx(0.10, rel=1e-12)
        assert pl_variation(42.0, 42.0) == 0.0

    def test_four_bright_lobes_off_axis(self):
        values = {}
        for phi_deg in (0.0, 45.0, 90.0):
            rm, _ = singlet_model(FieldVector.in_plane(0.5, math.radians(phi_deg)))
            values[phi_deg] = steady_pl(rm)
        assert values[45.0] > values[0.0]
        assert values[45.0] > values[90.0]


class TestAngleMapPatterns:
    def test_triplet_e_pattern_inverts_singlet_b(self):
        # singlet model: global PL minimum at B=0; triplet model: maximum
        pl0_s = steady_pl(singlet_model(FieldVector.zero())[0])
        pl0_t = steady_pl(triplet_model(FieldVector.zero())[0])
        for phi in np.linspace(0, math.pi, 12):
            for b in (0.3, 0.5, 1.0):
                field = FieldVector.in_plane(b, phi)
                assert steady_pl(singlet_model(field)[0]) > pl0_s
                assert steady_pl(triplet_model(field)[0]) < pl0_t


def _angle_contrast(diagram, params, b=0.5, n=24):
    pls = []
    for phi in np.linspace(0, math.pi, n, endpoint=False):
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(b, phi))
        pls.append(steady_pl(build_rate_matrix(diagram, params, eig)))
    pls = np.array(pls)
    return (pls.max() - pls.min()) / pls.min()


class TestAnisotropyContrast:
    def test_contrast_grows_with_t1(self):
        diagram = get_diagram("singlet", "b")
        contrasts = []
        for t1 in (5.0, 50.0, 200.0):
            params = RateParameters(
                gamma_e=82.0, gamma_s=820.0, gamma_isc1=7.7, gamma_isc2=0.85, t1_us=t1, epsilon=0.02
            )
            contrasts.append(_angle_contrast(diagram, params))
        assert contrasts[0] < contrasts[1] < contrasts[2]

    def test_class_contrast_hierarchy(self):
        # nonselective < same-axis in-plane (sub-percent) << s_z-selective
        params = RateParameters(gamma_e=300.0, gamma_s=600.0, gamma_isc1=1.8, gamma_isc2=0.11, t1_us=50.0)
        c_none = _angle_contrast(get_diagram("triplet", "a"), params)
        c_sym = _angle_contrast(get_diagram("triplet", "b"), params)
        c_sz = _angle_contrast(get_diagram("triplet", "e"), params)
        assert c_none < 1e-12
        assert 0.0003 < c_sym < 0.003
        assert c_sz > 0.1


class TestSteadyPlSymmetry:
    def test_sign_of_d_does_not_change_pl(self):
        # H(-D,-E) = -H(D,E): same eigenvectors in reversed order, and the
        # uniform T1/m' wiring makes the dynamics order-independent
        diagram = get_diagram("singlet", "b")
        for phi in (0.0, 0.4, 1.2):
            field = FieldVector.in_plane(0.5, phi)
            pl_pos = steady_pl(build_rate_matrix(
                diagram, SINGLET_PARAMS,
                triplet_eigensystem(ZeroFieldSplitting(1.0, -0.33), field)))
            pl_neg = steady_pl(build_rate_matrix(
                diagram, SINGLET_PARAMS,
                triplet_eigensystem(ZeroFieldSplitting(-1.0, 0.33), field)))
            assert pl_neg == pytest.approx(pl_pos, rel=1e-10)

    @pytest.mark.parametrize("model", [singlet_model, triplet_model])
    def test_180_and_reflection(self, model):
        for phi in np.linspace(0.1, math.pi, 7):
            pl = steady_pl(model(FieldVector.in_plane(0.5, phi))[0])
            pl_180 = steady_pl(model(FieldVector.in_plane(0.5, phi + math.pi))[0])
            pl_neg = steady_pl(model(FieldVector.in_plane(0.5, -phi))[0])
            assert pl_180 == pytest.approx(pl, rel=1e-9)
            assert pl_neg == pytest.approx(pl, rel=1e-9)


class TestSimulateG2:
    def test_singlet_g2_zero_is_exactly_zero(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, 0.4))
        curve = simulate_g2(diagram, SINGLET_PARAMS, eig, np.array([0.0, 1e-9, 1e-6]))
        assert curve.values[0] == 0.0

    def test_long_time_limit_is_one(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, 0.4))
        horizon = 100.0 * max(1.0 / SINGLET_PARAMS.gamma_isc2, SINGLET_PARAMS.t1_us) * 1e-6
        curve = simulate_g2(diagram, SINGLET_PARAMS, eig, np.array([horizon]))
        assert curve.values[0] == pytest.approx(1.0, abs=1e-6)

    def test_default_horizon_relaxes_to_one(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, 0.2))
        curve = simulate_g2(diagram, SINGLET_PARAMS, eig)
        last_decade = curve.values[curve.delays >= curve.delays[-1] / 10.0]
        assert abs(np.mean(last_decade) - 1.0) < 1e-6

    def test_steady_state_initial_condition_is_flat(self):
        diagram = get_diagram("triplet", "e")
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, 1.0))
        delays = np.logspace(-9, -3, 50)
        curve = simulate_g2(diagram, TRIPLET_PARAMS, eig, delays, initial_state="steady")
        np.testing.assert_allclose(curve.values, 1.0, atol=1e-9)

    def test_triplet_initial_state_uses_excited_branching(self):
        rm, _ = triplet_model(FieldVector.in_plane(0.5, 0.7))
        x0 = emission_initial_state(rm)
        xss = steady_state(rm)
        es = xss[list(rm.excited_indices)]
        np.testing.assert_allclose(x0[:3], es / es.sum(), atol=1e-12)
        assert x0[3:].sum() == 0.0

    def test_conservation_along_trajectory(self):
        rm, _ = triplet_model(FieldVector.in_plane(0.4, 0.9))
        x0 = emission_initial_state(rm)
        times = np.logspace(-3, 3, 30)
        xs = rk4_propagate(rm.matrix, x0, times)
        np.testing.assert_allclose(xs.sum(axis=1), 1.0, atol=1e-9)
        assert np.max(np.abs(np.ones(rm.dim) @ rm.matrix)) < 1e-10

    @pytest.mark.parametrize("ground,diagram_id,params", [
        ("singlet", "b", SINGLET_PARAMS),
        ("triplet", "e", TRIPLET_PARAMS),
    ])
    def test_eig_matches_rk4(self, ground, diagram_id, params):
        diagram = get_diagram(ground, diagram_id)
        eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, 0.6))
        delays = np.logspace(-9, -4.5, 40)
        a = simulate_g2(diagram, params, eig, delays, method="eig").values
        b = simulate_g2(diagram, params, eig, delays, method="rk4").values
        np.testing.assert_allclose(a, b, atol=1e-6 * max(1.0, a.max()))


class TestOdmr:
    def test_zero_field_pair_drive_brightens(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.zero())
        assert odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (3, 4), 100.0) > 0.0

    def test_vanishes_with_drive_strength(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.zero())
        weak = odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (3, 4), 1e-9)
        weaker = odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (3, 4), 1e-12)
        assert abs(weak) < 1e-7
        assert abs(weaker) == pytest.approx(abs(weak) * 1e-3, rel=1e-3)

    def test_pre_mixed_triplet_shows_no_contrast(self):
        params = RateParameters(gamma_e=82.0, gamma_s=820.0, gamma_isc1=7.7, gamma_isc2=0.85, t1_us=1e-4, epsilon=0.02)
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.zero())
        assert abs(odmr_pl_variation(diagram, params, eig, (3, 4), 100.0)) < 1e-3

    def test_pairs_involving_the_bright_escape_state_dominate(self):
        # at B=0 the middle eigenstate is s_z, the only strongly-decaying
        # shelf level; driving the two dark states against each other does
        # nearly nothing
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.zero())
        var_34 = odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (3, 4), 100.0)
        var_45 = odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (4, 5), 100.0)
        var_35 = odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (3, 5), 100.0)
        assert var_34 > 10.0 * abs(var_35)
        assert var_45 > 10.0 * abs(var_35)

    def test_pair_must_be_in_triplet_manifold(self):
        diagram = get_diagram("singlet", "b")
        eig = triplet_eigensystem(ZFS, FieldVector.zero())
        with pytest.raises(ValueError):
            odmr_pl_variation(diagram, SINGLET_PARAMS, eig, (1, 3), 100.0)

    def test_linewidth_floor(self):
        assert odmr_linewidth_floor_khz(SINGLET_PARAMS) == pytest.approx(135.28, abs=0.01)
        params = RateParameters(gamma_e=1.0, gamma_s=1.0, gamma_isc1=1.0, gamma_isc2=2e-3 * math.pi, t1_us=1.0)
        assert odmr_linewidth_floor_khz(params) == pytest.approx(1.0, rel=1e-12)
        doubled = RateParameters(gamma_e=1.0, gamma_s=1.0, gamma_isc1=1.0, gamma_isc2=4e-3 * math.pi, t1_us=1.0)
        assert odmr_linewidth_floor_khz(doubled) == pytest.approx(2.0, rel=1e-12)


class TestBunchingAnticorrelation:
    def test_c2_tracks_inverse_pl_over_angle_sweep(self):
        diagram = get_diagram("singlet", "b")
        delays = np.logspace(-9, -2.5, 160)
        pls, c2s = [], []
        for phi in np.linspace(0, math.pi, 8, endpoint=False):
            eig = triplet_eigensystem(ZFS, FieldVector.in_plane(0.5, phi))
            rm = build_rate_matrix(diagram, SINGLET_PARAMS, eig)
            pls.append(steady_pl(rm))
            fit = fit_g2_curve(simulate_g2(diagram, SINGLET_PARAMS, eig, delays), orders=(2,))
            c2s.append(fit.amplitudes[1])
        rho = spearmanr(c2s, pls).statistic
        assert rho < 0.0
