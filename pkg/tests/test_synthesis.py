import numpy as np
import pytest

from modalsyn.benchplant import by_name, make_two_mass
from modalsyn.decoupling import (
    apply_decoupling_partitioned,
    extended_input_decoupling,
)
from modalsyn.mechanics import evaluate_local, group_and_partition, modal_decompose
from modalsyn.shaping import (
    compute_scalings,
    design_weights_4block,
    design_weights_6block,
)
from modalsyn.statespace import (
    ModelError,
    NumericError,
    freq_response,
    is_hurwitz,
    spectral_abscissa,
)
from modalsyn.synthesis import (
    ClosedLoopMap,
    ConventionalView,
    StructuredControllerParams,
    _compass_search,
    build_uncertain_plant,
    close_full_loop,
    grid_stability_check,
    initial_params,
    physical_rb_controller,
    synthesize,
)

F_BW = [10.0]
EXPECTED_ERROR = [1e-4]


def _decoupled_two_mass(p_star):
    model = make_two_mass()
    dec = modal_decompose(model)
    pm = group_and_partition(dec, model, dec.n_rb, [1])
    pair = extended_input_decoupling(pm, p_star, 1)
    return apply_decoupling_partitioned(pm, pair)


def _make_cl(kind, p_star=0.3):
    dpm = _decoupled_two_mass(p_star)
    g_nom = evaluate_local(dpm, p_star)
    sc = compute_scalings(g_nom, F_BW, EXPECTED_ERROR, n_flex=1)
    f_flex = [float(dpm.omega[1]) / (2 * np.pi)]
    make = design_weights_6block if kind == "6block" else design_weights_4block
    ws = make(F_BW, f_flex)
    return ClosedLoopMap(kind, dpm, p_star, sc, ws, [1], Q=10.0, f_bw=F_BW)


@pytest.fixture(scope="module")
def cl6():
    return _make_cl("6block")


@pytest.fixture(scope="module")
def cl4():
    return _make_cl("4block")


def _active_params(cl, xi=2.0):
    """Initialization with the flexible gain switched on."""
    init = initial_params(cl)
    return StructuredControllerParams(init.krb, init.L,
                                      xi * np.ones(init.xi.size),
                                      init.omega, init.Q)


def _diag_eval(filt, s):
    return filt.evaluate(np.array([s]))[:, 0]


class TestClosedLoopFormulas:
    """The routed interconnection must reproduce the textbook block formulas
    computed independently, frequency point by frequency point."""

    def test_output_based_map_matches_block_formula(self, cl6):
        params = _active_params(cl6)
        M = cl6.evaluate(params)
        Gd = cl6.g_delta(params)
        K = params.krb_filter().to_ss()
        for f in np.logspace(-1, 3, 100):
            s = 2j * np.pi * f
            G = Gd.transfer_at(s)       # 1 x 2: RB column, flexible column
            g1, g2 = G[0, 0], G[0, 1]
            k = K.transfer_at(s)[0, 0]
            wz1 = _diag_eval(cl6.wz1_reg, s)[0]
            wz2 = _diag_eval(cl6.weights.wz2, s)[0]
            ww3 = _diag_eval(cl6.weights.ww3, s)[0]
            S = 1.0 / (1.0 + g1 * k)
            # w1/w2 shaping is identity on this problem
            oracle = np.array([
                [wz1 * S, wz1 * S * g1, wz1 * S * g2 * ww3],
                [wz2 * k * S, wz2 * k * S * g1, wz2 * k * S * g2 * ww3]])
            np.testing.assert_allclose(M.transfer_at(s), oracle, rtol=1e-8,
                                       atol=1e-12)

    def test_error_based_map_matches_block_formula(self, cl4):
        params = _active_params(cl4)
        M = cl4.evaluate(params)
        Gt = cl4.g_delta(params)
        K = params.krb_filter().to_ss()
        Sig = cl4.sigma(params)
        for f in np.logspace(-1, 3, 100):
            s = 2j * np.pi * f
            G = Gt.transfer_at(s)
            g1, g2 = G[0, 0], G[0, 1]
            k = K.transfer_at(s)[0, 0]
            sg = Sig.transfer_at(s)[0, 0]
            wz1 = _diag_eval(cl4.wz1_reg, s)[0]
            ww1 = _diag_eval(cl4.weights.ww1, s)[0]
            ww2 = _diag_eval(cl4.weights.ww2, s)[0]
            S = 1.0 / (1.0 + g1 * k + g2 * sg)
            oracle = np.array([
                [wz1 * S * g1 * ww1, wz1 * S * g2 * ww2],
                [k * S * g1 * ww1, k * S * g2 * ww2]])
            np.testing.assert_allclose(M.transfer_at(s), oracle, rtol=1e-8,
                                       atol=1e-12)

    def test_zero_xi_gdelta_is_scaled_plant(self, cl6):
        """With the flexible controller off, the inner loop is transparent."""
        init = initial_params(cl6)
        assert np.all(init.xi == 0.0)
        gd = cl6.g_delta(init)
        sc = cl6.scalings
        plant = evaluate_local(cl6.pm, cl6.p_star)
        for f in (0.3, 5.0, 50.0, 500.0):
            s = 2j * np.pi * f
            raw = plant.transfer_at(s)
            scaled = np.diag(sc.wz) @ raw @ np.diag(
                np.concatenate([sc.ww1, sc.ww2[:1]]))
            np.testing.assert_allclose(gd.transfer_at(s), scaled, rtol=1e-9)

    def test_flexible_column_is_last_input(self, cl6):
        params = _active_params(cl6)
        M = cl6.evaluate(params)
        col = cl6.flexible_column(params)
        assert col.n_inputs == 1
        s = 2j * np.pi * 42.0
        np.testing.assert_allclose(col.transfer_at(s),
                                   M.transfer_at(s)[:, 2:], rtol=1e-12)

    def test_conventional_view_drops_flexible_column(self, cl6):
        params = _active_params(cl6)
        view = ConventionalView(cl6)
        Mv = view.evaluate(params)
        M = cl6.evaluate(params)
        assert Mv.n_inputs == 2 and M.n_inputs == 3
        s = 2j * np.pi * 7.0
        np.testing.assert_allclose(Mv.transfer_at(s),
                                   M.transfer_at(s)[:, :2], rtol=1e-12)


class TestStructuredParams:
    def test_vector_roundtrip(self, cl6):
        params = _active_params(cl6, xi=1.7)
        back = params.with_vector(params.to_vector())
        np.testing.assert_allclose(back.krb, params.krb, rtol=1e-13)
        np.testing.assert_array_equal(back.L, params.L)
        np.testing.assert_array_equal(back.xi, params.xi)

    def test_log_mask_covers_krb_only(self, cl6):
        params = initial_params(cl6)
        mask = params.log_mask
        assert mask.sum() == params.krb.size
        assert not mask[params.krb.size:].any()

    def test_dict_roundtrip_rebuilds_identical_map(self, cl6):
        params = _active_params(cl6, xi=0.9)
        back = StructuredControllerParams.from_dict(params.to_dict())
        M1 = cl6.evaluate(params)
        M2 = cl6.evaluate(back)
        np.testing.assert_array_equal(M1.A, M2.A)
        np.testing.assert_array_equal(M1.B, M2.B)
        np.testing.assert_array_equal(M1.C, M2.C)
        np.testing.assert_array_equal(M1.D, M2.D)

    def test_rejects_nonpositive_krb(self):
        krb = np.array([[1.0, 1.0, -1.0, 1.0, 1.0, 0.7]])
        with pytest.raises(ModelError):
            StructuredControllerParams(krb, np.zeros((2, 1)), [0.0], [10.0], 5.0)

    def test_rejects_wrong_vector_length(self, cl6):
        params = initial_params(cl6)
        with pytest.raises(ModelError):
            params.with_vector(np.zeros(params.n_params + 1))

    def test_initial_loop_crosses_unity_at_bandwidth(self, cl6):
        init = initial_params(cl6)
        wb = 2j * np.pi * F_BW[0]
        k = np.abs(init.krb_filter().evaluate(np.array([wb]))[0, 0])
        assert k == pytest.approx(1.0, rel=1e-12)


class TestPhysicalController:
    def test_unscaling_gains(self, cl6):
        params = initial_params(cl6)
        kp = physical_rb_controller(params, cl6.scalings)
        s = np.array([2j * np.pi * 3.0])
        expect = (cl6.scalings.ww1[0] * cl6.scalings.wz[0]
                  * params.krb_filter().evaluate(s)[0, 0])
        assert kp.evaluate(s)[0, 0] == pytest.approx(expect, rel=1e-12)

    def test_full_loop_dc_disturbance_rejection(self, cl6):
        """The loop reports the tracking error: integral action rejects a
        constant output disturbance, while far above crossover the
        disturbance passes straight through."""
        params = initial_params(cl6)
        g = evaluate_local(cl6.pm, cl6.p_star)
        closed = close_full_loop(g, cl6, params)
        assert is_hurwitz(closed)
        assert abs(closed.transfer_at(2j * np.pi * 1e-7)[0, 0]) < 1e-3
        assert abs(closed.transfer_at(2j * np.pi * 1e4)[0, 0]) \
            == pytest.approx(1.0, rel=1e-3)

    def test_full_loop_stable_both_kinds(self, cl6, cl4):
        for cl in (cl6, cl4):
            params = initial_params(cl)
            g = evaluate_local(cl.pm, cl.p_star)
            assert spectral_abscissa(close_full_loop(g, cl, params)) < 0


class TestGridCertificate:
    def test_structure_and_consistency(self, cl6):
        params = initial_params(cl6)
        grid = [np.array([p]) for p in np.linspace(0.0, 1.0, 11)]
        cert = grid_stability_check(cl6, params, grid)
        assert len(cert.points) == len(cert.stable) == len(cert.abscissa) == 11
        for ok, a in zip(cert.stable, cert.abscissa):
            assert ok == (a < 0)
        assert cert.all_stable == all(cert.stable)
        doc = cert.to_dict()
        assert doc["points"][3] == [grid[3][0]]

    def test_high_gain_destabilizes(self, cl6):
        init = initial_params(cl6)
        hot = StructuredControllerParams(
            init.krb * np.array([1e4, 1, 1, 1, 1, 1]),
            init.L, init.xi, init.omega, init.Q)
        cert = grid_stability_check(cl6, hot, [np.array([0.3])])
        assert not cert.all_stable


class TestUncertainPlant:
    def test_identical_grid_gives_no_weight(self, cl6):
        g = evaluate_local(cl6.pm, cl6.p_star)
        up = build_uncertain_plant([(0.3, g), (0.7, g), (1.0, g)], 0)
        assert up.weight is None

    def test_weight_dominates_grid_deviation(self):
        dpm = _decoupled_two_mass(0.3)
        grid = [(p, evaluate_local(dpm, p)) for p in (0.0, 0.3, 0.6, 1.0)]
        up = build_uncertain_plant(grid, 1)
        assert up.weight is not None
        freqs = np.logspace(-1, 4, 600)
        nom = freq_response(up.nominal, freqs).values
        bound = np.abs(up.weight.evaluate(2j * np.pi * freqs))
        for _, g in grid:
            dev = np.linalg.norm(
                freq_response(g, freqs).values - nom, axis=2).T
            assert np.all(dev <= bound * (1 + 1e-9))

    def test_needs_two_points(self, cl6):
        g = evaluate_local(cl6.pm, cl6.p_star)
        with pytest.raises(ModelError):
            build_uncertain_plant([(0.3, g)], 0)


class TestOptimizer:
    def test_compass_search_quadratic(self):
        target = np.array([1.3, -0.4, 2.2])
        count = [0]

        def f(x):
            count[0] += 1
            return float(np.sum((x - target) ** 2)) + 5.0, True

        x, fx = _compass_search(f, np.zeros(3), 4000, count)
        assert fx == pytest.approx(5.0, abs=1e-4)
        np.testing.assert_allclose(x, target, atol=0.02)

    def test_budget_zero_returns_initialization(self, cl6):
        init = initial_params(cl6)
        res = synthesize(cl6, init, budget=0)
        np.testing.assert_array_equal(res.params.to_vector(), init.to_vector())
        assert res.gamma > 0 and res.stable
        assert res.log == [(1, res.gamma)]

    def test_log_monotone_and_gamma_improves(self, cl6):
        init = initial_params(cl6)
        res = synthesize(cl6, init, budget=150, seed=0, n_starts=1)
        gammas = [v for _, v in res.log]
        evals = [n for n, _ in res.log]
        assert all(b < a for a, b in zip(gammas, gammas[1:]))
        assert all(b >= a for a, b in zip(evals, evals[1:]))
        res0 = synthesize(cl6, init, budget=0)
        assert res.gamma <= res0.gamma
        assert res.n_evals <= 150 + len(res.log)

    def test_deterministic_given_seed(self, cl6):
        init = initial_params(cl6)
        r1 = synthesize(cl6, init, budget=60, seed=3, n_starts=2)
        r2 = synthesize(cl6, init, budget=60, seed=3, n_starts=2)
        np.testing.assert_array_equal(r1.params.to_vector(),
                                      r2.params.to_vector())
        assert r1.gamma == r2.gamma

    def test_freeze_xi_keeps_flexible_gain(self, cl6):
        init = initial_params(cl6)
        res = synthesize(ConventionalView(cl6), init, budget=100, seed=0,
                         n_starts=1, freeze_xi=True)
        np.testing.assert_array_equal(res.params.xi, init.xi)
