import numpy as np
import pytest

from modalsyn.benchplant import make_mmpa_lite, make_two_mass, mmpa_lite_spec
from modalsyn.decoupling import (
    DecouplingPair,
    apply_decoupling,
    apply_decoupling_partitioned,
    extended_input_decoupling,
    rb_decoupling,
    velocity_rows,
)
from modalsyn.mechanics import (
    MechanicalModel,
    PositionMap,
    evaluate_local,
    group_and_partition,
    modal_decompose,
)
from modalsyn.statespace import ModelError, NumericError, freq_response


def partitioned(model, retain=None):
    dec = modal_decompose(model)
    n_rb = dec.n_rb
    if retain is None:
        retain = range(n_rb, dec.n_modes)
    return group_and_partition(dec, model, n_rb, retain)


def rb_only_model(phi_a, n_rb):
    """n_rb free masses (zero stiffness), arbitrary actuator map."""
    n = n_rb
    dom = np.array([[0.0, 1.0]])
    return MechanicalModel(np.eye(n), np.zeros((n, n)), np.zeros((n, n)),
                           PositionMap.constant(phi_a, dom),
                           PositionMap.constant(np.eye(n), dom))


class TestRbDecoupling:
    def test_already_decoupled(self):
        pm = partitioned(rb_only_model(np.eye(1), 1))
        pair = rb_decoupling(pm, 0.0)
        np.testing.assert_allclose(pair.T_u, np.eye(1), atol=1e-12)

    def test_two_identical_actuators(self):
        pm = partitioned(rb_only_model(np.array([[1.0, 1.0]]), 1))
        pair = rb_decoupling(pm, 0.0)
        np.testing.assert_allclose(pair.T_u, [[0.5], [0.5]], atol=1e-12)

    def test_underactuated_rank_error(self):
        pm = partitioned(rb_only_model(np.array([[1.0], [1.0]]), 2))
        with pytest.raises(NumericError):
            rb_decoupling(pm, 0.0)

    def test_consistency_two_mass(self):
        pm = partitioned(make_two_mass())
        pair = rb_decoupling(pm, 0.3)
        Bv = pm.B_RB(0.3)[velocity_rows(1), :]
        np.testing.assert_allclose(Bv @ pair.T_u, np.eye(1), atol=1e-10)

    def test_consistency_mmpa(self):
        spec = mmpa_lite_spec()
        pm = partitioned(spec.model)
        pair = rb_decoupling(pm, spec.p_star)
        Bv = pm.B_RB(spec.p_star)[velocity_rows(3), :]
        Cp = pm.C_RB(spec.p_star)[:, [0, 2, 4]]
        np.testing.assert_allclose(Bv @ pair.T_u, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(pair.T_y @ Cp, np.eye(3), atol=1e-10)


class TestExtendedDecoupling:
    def test_nflex_zero_reduces_to_rb(self):
        pm = partitioned(make_two_mass())
        rb = rb_decoupling(pm, 0.3)
        ext = extended_input_decoupling(pm, 0.3, 0)
        np.testing.assert_allclose(ext.T_u, rb.T_u)
        np.testing.assert_allclose(ext.T_y, rb.T_y)

    def test_two_mass_exact_inverse(self):
        pm = partitioned(make_two_mass())
        pair = extended_input_decoupling(pm, 0.3, 1)
        stacked = np.vstack([pm.B_RB(0.3)[[1], :], pm.B_FM_r(0.3)[[1], :]])
        np.testing.assert_allclose(stacked @ pair.T_u, np.eye(2), atol=1e-12)
        # square case: pseudo-inverse equals the plain inverse
        np.testing.assert_allclose(pair.T_u, np.linalg.inv(stacked), atol=1e-12)

    def test_too_many_modes_requested(self):
        pm = partitioned(make_two_mass())
        with pytest.raises(ModelError):
            extended_input_decoupling(pm, 0.3, 2)

    def test_mmpa_extended(self):
        spec = mmpa_lite_spec()
        pm = partitioned(spec.model)
        pair = extended_input_decoupling(pm, spec.p_star, 1)
        stacked = np.vstack([pm.B_RB(spec.p_star)[velocity_rows(3), :],
                             pm.B_FM_r(spec.p_star)[[1], :]])
        np.testing.assert_allclose(stacked @ pair.T_u, np.eye(4), atol=1e-10)


class TestApplyDecoupling:
    def test_identity_pair(self):
        pm = partitioned(make_two_mass())
        g = evaluate_local(pm, 0.3)
        pair = DecouplingPair(np.eye(2), np.eye(1), None, 1, 1)
        g2 = apply_decoupling(g, pair)
        np.testing.assert_array_equal(g2.B, g.B)
        np.testing.assert_array_equal(g2.C, g.C)

    def test_rb_channel_double_integrator_slope(self):
        pm = partitioned(make_two_mass())
        pair = extended_input_decoupling(pm, 0.3, 1)
        g = apply_decoupling(evaluate_local(pm, 0.3), pair)
        # RB channel: input 0 -> output 0, -40 dB/dec well below the 50 Hz mode
        f = np.array([0.5, 5.0])
        mags = np.abs(freq_response(g, f).values[:, 0, 0])
        slope = np.log10(mags[1] / mags[0])  # per decade
        assert slope == pytest.approx(-2.0, abs=0.01)

    def test_flexible_mode_not_excited_by_rb_input(self):
        pm = partitioned(make_two_mass())
        pair = extended_input_decoupling(pm, 0.3, 1)
        dpm = apply_decoupling_partitioned(pm, pair)
        B_flex = dpm.B_FM_r(0.3)
        # RB input column of the retained flexible mode rows vanishes at p*
        assert np.max(np.abs(B_flex[:, 0])) <= 1e-10
        # and the flexible input column is the unit selection on the velocity row
        np.testing.assert_allclose(B_flex[:, 1], [0.0, 1.0], atol=1e-10)

    def test_decoupled_transfer_oracle(self):
        pm = partitioned(make_two_mass())
        pair = extended_input_decoupling(pm, 0.3, 1)
        g = evaluate_local(pm, 0.3)
        gd = apply_decoupling(g, pair)
        f = np.logspace(0, 2.5, 25)
        want = np.einsum("ij,kjl,lm->kim", pair.T_y,
                         freq_response(g, f).values, pair.T_u)
        np.testing.assert_allclose(freq_response(gd, f).values, want,
                                   rtol=1e-10, atol=1e-12)


class TestPositionDependentDecoupling:
    def make_varying_model(self):
        # actuator effectiveness drifts with p so decoupling is exact only at p*
        w = 2 * np.pi * 30.0
        K = 0.5 * w ** 2 * np.array([[1.0, -1.0], [-1.0, 1.0]])
        D = (2 * 0.02 / w) * K
        dom = np.array([[0.0, 1.0]])
        phi_a = PositionMap((2, 2), {(0,): np.eye(2),
                                     (1,): np.array([[0.0, 0.3], [0.0, 0.0]])}, dom)
        phi_s = PositionMap.constant(np.array([[1.0, 0.0]]), dom)
        return MechanicalModel(np.eye(2), D, K, phi_a, phi_s)

    def test_unit_selection_only_at_design_point(self):
        pm = partitioned(self.make_varying_model())
        p_star = 0.4
        pair = extended_input_decoupling(pm, p_star, 1)
        dpm = apply_decoupling_partitioned(pm, pair)
        np.testing.assert_allclose(dpm.B_FM_r(p_star)[1, :], [0.0, 1.0], atol=1e-10)
        dev_near = np.abs(dpm.B_FM_r(0.5)[1, :] - [0.0, 1.0]).max()
        dev_far = np.abs(dpm.B_FM_r(1.0)[1, :] - [0.0, 1.0]).max()
        assert 0 < dev_near < dev_far

    def test_pair_records_design_point(self):
        pm = partitioned(self.make_varying_model())
        pair = extended_input_decoupling(pm, 0.4, 1)
        np.testing.assert_allclose(pair.p_design, [0.4])
        const_pair = extended_input_decoupling(partitioned(make_two_mass()), 0.3, 1)
        assert const_pair.is_constant


def test_json_roundtrip(tmp_path):
    pm = None
    dec_pm = partitioned(make_two_mass())
    pair = extended_input_decoupling(dec_pm, 0.3, 1)
    path = tmp_path / "pair.json"
    pair.to_json(path)
    import json
    pair2 = DecouplingPair.from_dict(json.loads(path.read_text()))
    np.testing.assert_allclose(pair2.T_u, pair.T_u)
    np.testing.assert_allclose(pair2.T_y, pair.T_y)
