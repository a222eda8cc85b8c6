"""Structured H-infinity synthesis of diag(K_RB, L, K_FM).

Assembles the scaled uncertain plant, the output-based 2x3 ("6-block") and
the error-based 2x2 ("4-block") weighted closed-loop maps, and minimizes the
closed-loop H-infinity norm over the structured parameter set with a
derivative-free pattern search.  A grid certificate closes the full loop at
every frozen scheduling point and checks local stability.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la

from modalsyn.mechanics import PartitionedModalModel, evaluate_local
from modalsyn.observer import (
    ModalObserver,
    build_error_observer,
    build_output_observer,
    selection_matrix,
    sigma_subsystem,
    truncate_with_compliance,
)
from modalsyn.shaping import (
    FlexControllerParams,
    ScalingSet,
    ShapingFilterSet,
    make_kfm,
    regularize_integral_filter,
)
from modalsyn.statespace import (
    ModelError,
    NumericError,
    RationalDiagonalFilter,
    StateSpaceModel,
    care_solve,
    freq_response,
    hinf_norm,
    is_hurwitz,
    lmul,
    rmul,
    route,
    spectral_abscissa,
)

STABILITY_MARGIN = 0.0
PENALTY_BASE = 1e6


# ---------------------------------------------------------------------------
# uncertain plant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UncertainPlant:
    """Nominal scaled plant plus an additive output uncertainty bound.

    ``weight`` over-bounds, per output channel, the largest deviation of any
    grid model from the nominal; ``None`` means the grid shows no deviation.
    """

    nominal: StateSpaceModel
    grid: tuple                 # ((p, StateSpaceModel), ...)
    nominal_index: int
    weight: RationalDiagonalFilter | None
    delta_in: int
    delta_out: int


def _verification_freqs(grid_ss, f_lo, f_hi, n):
    """Log grid augmented with every model's resonance frequencies, so
    narrow lightly damped deviation peaks cannot slip between samples."""
    freqs = np.logspace(np.log10(f_lo), np.log10(f_hi), n)
    extra = []
    for g in grid_ss:
        fi = np.abs(g.poles().imag) / (2 * np.pi)
        extra.append(fi[(fi > f_lo) & (fi < f_hi)])
    return np.unique(np.concatenate([freqs] + extra))


def _deviation_bound(grid_ss, nominal, freqs):
    """Per-output-channel worst deviation magnitude over the grid."""
    nom = freq_response(nominal, freqs).values
    dev = np.zeros((nominal.n_outputs, freqs.size))
    for g in grid_ss:
        d = freq_response(g, freqs).values - nom
        dev = np.maximum(dev, np.linalg.norm(d, axis=2).T)
    return dev


def build_uncertain_plant(grid, nominal_index, n_verify: int = 200,
                          f_lo: float = 1e-1, f_hi: float = 1e4) -> UncertainPlant:
    """Fit a per-channel second-order peak filter dominating the grid deviation.

    ``grid`` is a sequence of ``(p, StateSpaceModel)`` frozen local models.
    The fitted weight is inflated until it dominates the deviation at every
    verification frequency; failure to dominate raises with the worst
    frequency reported.
    """
    grid = tuple(grid)
    if len(grid) < 2:
        raise ModelError("uncertainty fit needs at least two grid points")
    nominal = grid[nominal_index][1]
    shapes = {(g.n_outputs, g.n_inputs) for _, g in grid}
    if len(shapes) != 1:
        raise ModelError("grid models must share input/output dimensions")
    freqs = _verification_freqs([g for _, g in grid], f_lo, f_hi, n_verify)
    dev = _deviation_bound([g for _, g in grid], nominal, freqs)
    if dev.max() < 1e-14:
        return UncertainPlant(nominal, grid, nominal_index, None,
                              nominal.n_inputs, nominal.n_outputs)
    chans = []
    for i in range(nominal.n_outputs):
        d = dev[i]
        if d.max() < 1e-14:
            chans.append([(np.array([0.0]), np.array([1.0]))])
            continue
        k = int(np.argmax(d))
        w_pk = 2 * np.pi * freqs[k]
        base = max(d[0], d[-1], 1e-8 * d.max())
        beta2 = 0.05
        beta1 = min(beta2 * d[k] / base, 50.0)
        num = base * np.array([1.0 / w_pk ** 2, 2 * beta1 / w_pk, 1.0])
        den = np.array([1.0 / w_pk ** 2, 2 * beta2 / w_pk, 1.0])
        # inflate until the filter dominates everywhere on the grid
        scale = 1.05
        for _ in range(60):
            mag = np.abs(np.polyval(scale * num, 2j * np.pi * freqs)
                         / np.polyval(den, 2j * np.pi * freqs))
            short = d - mag
            if short.max() <= 0:
                break
            scale *= 1.15
        else:
            worst = freqs[int(np.argmax(short))]
            raise NumericError(
                f"uncertainty weight fit fails to dominate channel {i} "
                f"(worst at {worst:.3g} Hz)")
        chans.append([(scale * num, den)])
    return UncertainPlant(nominal, grid, nominal_index,
                          RationalDiagonalFilter(tuple(chans)),
                          nominal.n_inputs, nominal.n_outputs)


# ---------------------------------------------------------------------------
# structured controller parameterization
# ---------------------------------------------------------------------------

# per rigid-body channel: gain, integrator corner, lead zero, lead pole,
# low-pass corner, low-pass damping -- all positive
KRB_PARAM_NAMES = ("gain", "w_int", "w_zero", "w_pole", "w_lp", "zeta_lp")


@dataclass(frozen=True)
class StructuredControllerParams:
    """Decision variables (K_RB sections, L, xi) plus the fixed backbone.

    K_RB is diagonal; each channel is gain * integrator * lead-lag *
    second-order low-pass.  The flexible-mode controller keeps its band-pass
    backbone (omega, Q) fixed; only the gains xi move.
    """

    krb: np.ndarray      # (n_rb, 6) positive entries
    L: np.ndarray        # observer gain
    xi: np.ndarray       # (n_ctrl,)
    omega: np.ndarray    # (n_ctrl,) fixed band-pass centers, rad/s
    Q: float

    def __post_init__(self):
        krb = np.atleast_2d(np.asarray(self.krb, dtype=float))
        if krb.shape[1] != len(KRB_PARAM_NAMES):
            raise ModelError(f"krb needs {len(KRB_PARAM_NAMES)} columns")
        if np.any(krb <= 0) or not np.all(np.isfinite(krb)):
            raise ModelError("krb entries must be positive and finite")
        object.__setattr__(self, "krb", krb)
        object.__setattr__(self, "L", np.atleast_2d(np.asarray(self.L, float)))
        object.__setattr__(self, "xi", np.atleast_1d(np.asarray(self.xi, float)))
        object.__setattr__(self, "omega", np.atleast_1d(np.asarray(self.omega, float)))
        if self.xi.shape != self.omega.shape:
            raise ModelError("xi and omega lengths must match")

    @property
    def n_rb(self):
        return self.krb.shape[0]

    @property
    def n_params(self):
        return self.krb.size + self.L.size + self.xi.size

    def krb_filter(self) -> RationalDiagonalFilter:
        chans = []
        for g, wi, wz, wp, wlp, zlp in self.krb:
            chans.append([
                (g * np.array([1.0, wi]), np.array([1.0, 0.0])),
                (np.array([1.0 / wz, 1.0]), np.array([1.0 / wp, 1.0])),
                (np.array([1.0]), np.array([1.0 / wlp ** 2, 2 * zlp / wlp, 1.0])),
            ])
        return RationalDiagonalFilter(tuple(chans))

    def kfm_filter(self) -> RationalDiagonalFilter:
        return make_kfm(FlexControllerParams(self.xi, self.omega, self.Q))

    # -- flat vector mapping: log10 for the positive K_RB entries, linear
    #    for L and xi ---------------------------------------------------
    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.log10(self.krb).ravel(),
                               self.L.ravel(), self.xi])

    def with_vector(self, vec) -> "StructuredControllerParams":
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ModelError(f"expected {self.n_params} entries, got {vec.size}")
        nk = self.krb.size
        nl = self.L.size
        return replace(self,
                       krb=10.0 ** vec[:nk].reshape(self.krb.shape),
                       L=vec[nk:nk + nl].reshape(self.L.shape),
                       xi=vec[nk + nl:])

    @property
    def log_mask(self):
        """True for coordinates stored in log10 scale."""
        return np.concatenate([np.ones(self.krb.size, bool),
                               np.zeros(self.L.size + self.xi.size, bool)])

    def to_dict(self):
        return {"krb": self.krb.tolist(), "L": self.L.tolist(),
                "xi": self.xi.tolist(), "omega": self.omega.tolist(),
                "Q": self.Q}

    @classmethod
    def from_dict(cls, doc):
        return cls(np.array(doc["krb"], ndmin=2), np.array(doc["L"], ndmin=2),
                   np.array(doc["xi"], ndmin=1), np.array(doc["omega"], ndmin=1),
                   float(doc["Q"]))


def initial_params(cl: "ClosedLoopMap", q_weight: float = 1e4,
                   v_weight: float = 1.0) -> StructuredControllerParams:
    """Default starting point: Riccati observer gain, xi = 0, and a classical
    loop-shaping K_RB with crossover at the target bandwidth.

    The default process-noise weight is deliberately large: the observer must
    reconstruct the lightly damped modal velocity much faster than the mode
    decays for modal-rate feedback to inject damping, and a low-gain observer
    leaves the damping channel with no leverage regardless of the modal gain.
    """
    pm, p = cl.pm, cl.p_star
    if cl.kind == "6block":
        tm = truncate_with_compliance(pm, p)
        A, C = tm.ss.A, tm.ss.C
    else:
        A, C = pm.A_FM_r, -pm.C_FM_r(np.atleast_1d(p))
    _, L = care_solve(A, C, q_weight * np.eye(A.shape[0]),
                      v_weight * np.eye(C.shape[0]))
    krb = np.empty((cl.n_rb, 6))
    for i, f in enumerate(cl.f_bw):
        wb = 2 * np.pi * f
        row = np.array([1.0, wb / 4, wb / 3, 3 * wb, 6 * wb, 0.7])
        # normalize so the scaled loop crosses 0 dB at f_bw
        probe = StructuredControllerParams(row[None, :], np.zeros((1, 1)),
                                           [], [], 1.0)
        mag = np.abs(probe.krb_filter().evaluate(np.array([1j * wb]))[0, 0])
        row[0] = 1.0 / mag
        krb[i] = row
    return StructuredControllerParams(krb, L, np.zeros(cl.n_ctrl),
                                      cl.omega_ctrl, cl.Q)


# ---------------------------------------------------------------------------
# generalized plant assembly
# ---------------------------------------------------------------------------

def _embedding(n_flex, controlled):
    E = np.zeros((n_flex, len(controlled)))
    for col, j in enumerate(controlled):
        E[j, col] = 1.0
    return E


class ClosedLoopMap:
    """Bound generalized plant: ``evaluate(params)`` realizes the weighted
    closed-loop matrix M for the structured controller parameters.

    The channel map records which rows/columns of M carry which weighted
    signal block.
    """

    def __init__(self, kind, pm, p_star, scalings, weights, controlled_modes,
                 Q, f_bw, uncertain=None):
        if kind not in ("6block", "4block"):
            raise ModelError(f"unknown interconnection kind {kind!r}")
        self.kind = kind
        self.pm = pm                      # decoupled partitioned model
        self.p_star = np.atleast_1d(np.asarray(p_star, dtype=float))
        self.scalings = scalings
        self.weights = weights
        self.wz1_reg = regularize_integral_filter(weights.wz1)
        self.controlled_modes = tuple(int(i) for i in controlled_modes)
        self.Q = float(Q)
        self.f_bw = np.atleast_1d(np.asarray(f_bw, dtype=float))
        self.uncertain = uncertain
        self.n_rb = pm.n_rb
        self.n_flex = pm.n_flex
        self.n_ctrl = len(self.controlled_modes)
        self.omega_ctrl = pm.omega[list(self.controlled_modes)]
        self.plant = evaluate_local(pm, self.p_star)
        if self.plant.n_outputs != self.n_rb:
            raise ModelError("decoupled plant must have one output per "
                             "rigid-body channel")
        if kind == "6block":
            self.tm = truncate_with_compliance(pm, self.p_star)
            self.Psi = selection_matrix(pm, self.controlled_modes, kind="output")
        else:
            self.Psi = selection_matrix(pm, self.controlled_modes, kind="error")
        nrb, nfl = self.n_rb, self.n_flex
        if kind == "6block":
            self.channel_map = {"z1": (0, nrb), "z2": (nrb, 2 * nrb),
                                "w1": (0, nrb), "w2": (nrb, 2 * nrb),
                                "w3": (2 * nrb, 2 * nrb + nfl)}
        else:
            self.channel_map = {"z1": (0, nrb), "z2": (nrb, 2 * nrb),
                                "w1": (0, nrb), "w2": (nrb, nrb + nfl)}

    # -- observers and inner loops -------------------------------------
    def observer(self, params) -> ModalObserver:
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # instability is scored, not fatal
            if self.kind == "6block":
                return build_output_observer(self.tm, params.L, self.Psi)
            return build_error_observer(self.pm, self.p_star, params.L, self.Psi)

    def g_delta(self, params) -> StateSpaceModel:
        """Scaled plant seen by the synthesis loop.

        For the output-based problem this closes the observer + K_FM loop
        inside; the observer taps the full rigid-body channel input and the
        K_FM contribution of the flexible channel (not exogenous injections).
        For the error-based problem it is the scaled nominal plant itself.
        """
        sc = self.scalings
        left = np.diag(sc.wz)
        right = la.block_diag(np.diag(sc.ww1), np.diag(sc.ww2[:self.n_flex]))
        if self.kind == "4block":
            return lmul(left, rmul(self.plant, right))
        obs = self.observer(params)
        kf = params.kfm_filter().to_ss()
        G = self.plant
        nrb, nfl, nc = self.n_rb, self.n_flex, self.n_ctrl
        ny = G.n_outputs
        E = _embedding(nfl, obs.controlled)
        n_w = nrb + nfl
        # block input stack: u_G (nrb+nfl), u_O (nrb+nfl+ny), u_K (nc)
        # block output stack: y_G (ny), y_O (nc), y_K (nc)
        E_w = np.vstack([np.eye(n_w),
                         np.hstack([np.eye(nrb), np.zeros((nrb, nfl))]),
                         np.zeros((nfl + ny + nc, n_w))])
        E_y = np.zeros((n_w + (n_w + ny) + nc, ny + 2 * nc))
        E_y[nrb:n_w, ny + nc:] = E                     # plant flex input += E y_K
        E_y[n_w + nrb:n_w + n_w, ny + nc:] = E         # observer sees E y_K
        E_y[n_w + n_w:n_w + n_w + ny, :ny] = np.eye(ny)  # observer sees y_G
        E_y[n_w + n_w + ny:, ny:ny + nc] = np.eye(nc)    # K_FM sees eta_hat
        F_w = np.zeros((ny, n_w))
        F_y = np.hstack([np.eye(ny), np.zeros((ny, 2 * nc))])
        g_phys = route([G, obs.realization, kf], E_w, E_y, F_w, F_y)
        return lmul(left, rmul(g_phys, right))

    def sigma(self, params) -> StateSpaceModel:
        """Scaled flexible-loop subsystem (error-based problems only)."""
        obs = self.observer(params)
        sig = sigma_subsystem(obs, params.kfm_filter())
        sc = self.scalings
        return lmul(np.diag(1.0 / sc.ww2[:self.n_flex]),
                    rmul(sig, np.diag(1.0 / sc.wz)))

    # -- M assembly ----------------------------------------------------
    def evaluate(self, params) -> StateSpaceModel:
        if self.kind == "6block":
            return self._evaluate_6block(params)
        return self._evaluate_4block(params)

    def _evaluate_6block(self, params):
        nrb, nfl = self.n_rb, self.n_flex
        Gd = self.g_delta(params)
        K = params.krb_filter().to_ss()
        Wz1 = self.wz1_reg.to_ss()
        Wz2 = self.weights.wz2.to_ss()
        Ww1 = self.weights.ww1.to_ss()
        Ww2 = self.weights.ww2.to_ss()
        Ww3 = self.weights.ww3.to_ss()
        blocks = [Gd, K, Wz1, Wz2, Ww1, Ww2, Ww3]
        n_w = 2 * nrb + nfl
        # output stack: yG(nrb) yK(nrb) yz1 yz2 yw1 yw2 (nrb each) yw3(nfl)
        oG, oK, oz1, oz2, ow1, ow2, ow3 = _offsets(
            [nrb, nrb, nrb, nrb, nrb, nrb, nfl])
        n_y = 6 * nrb + nfl
        # input stack: uG(nrb+nfl) uK uz1 uz2 uw1 uw2 (nrb each) uw3(nfl)
        iG, iK, iz1, iz2, iw1, iw2, iw3 = _offsets(
            [nrb + nfl, nrb, nrb, nrb, nrb, nrb, nfl])
        n_u = 5 * nrb + 2 * nfl + nrb
        E_w = np.zeros((n_u, n_w))
        E_y = np.zeros((n_u, n_y))
        # plant RB channel: W_w2 w2 - K_RB eps
        _put(E_y, iG, ow2, np.eye(nrb))
        _put(E_y, iG, oK, -np.eye(nrb))
        # plant flexible channel: W_w3 w3
        _put(E_y, iG + nrb, ow3, np.eye(nfl))
        # eps = y_Ww1 + y_G feeds K_RB and W_z1
        for row in (iK, iz1):
            _put(E_y, row, ow1, np.eye(nrb))
            _put(E_y, row, oG, np.eye(nrb))
        _put(E_y, iz2, oK, np.eye(nrb))
        _put(E_w, iw1, 0, np.eye(nrb))
        _put(E_w, iw2, nrb, np.eye(nrb))
        _put(E_w, iw3, 2 * nrb, np.eye(nfl))
        F_w = np.zeros((2 * nrb, n_w))
        F_y = np.zeros((2 * nrb, n_y))
        _put(F_y, 0, oz1, np.eye(nrb))
        _put(F_y, nrb, oz2, np.eye(nrb))
        return route(blocks, E_w, E_y, F_w, F_y)

    def _evaluate_4block(self, params):
        nrb, nfl = self.n_rb, self.n_flex
        Gt = self.g_delta(params)
        K = params.krb_filter().to_ss()
        Sig = self.sigma(params)
        Wz1 = self.wz1_reg.to_ss()
        Wz2 = self.weights.wz2.to_ss()
        Ww1 = self.weights.ww1.to_ss()
        Ww2 = self.weights.ww2.to_ss()
        blocks = [Gt, K, Sig, Wz1, Wz2, Ww1, Ww2]
        n_w = nrb + nfl
        # outputs: yG(nrb) yK(nrb) ySig(nfl) yz1 yz2 yw1 (nrb each) yw2(nfl)
        oG, oK, oS, oz1, oz2, ow1, ow2 = _offsets(
            [nrb, nrb, nfl, nrb, nrb, nrb, nfl])
        n_y = 5 * nrb + 2 * nfl
        # inputs: uG(nrb+nfl) uK(nrb) uSig(nrb) uz1 uz2 (nrb) uw1(nrb) uw2(nfl)
        iG, iK, iS, iz1, iz2, iw1, iw2 = _offsets(
            [nrb + nfl, nrb, nrb, nrb, nrb, nrb, nfl])
        n_u = 6 * nrb + 2 * nfl
        E_w = np.zeros((n_u, n_w))
        E_y = np.zeros((n_u, n_y))
        # plant RB channel: W_w1 w1 - K_RB eps; flexible: W_w2 w2 - Sigma eps
        _put(E_y, iG, ow1, np.eye(nrb))
        _put(E_y, iG, oK, -np.eye(nrb))
        _put(E_y, iG + nrb, ow2, np.eye(nfl))
        _put(E_y, iG + nrb, oS, -np.eye(nfl))
        # eps = y_G feeds K_RB, Sigma and W_z1
        for row in (iK, iS, iz1):
            _put(E_y, row, oG, np.eye(nrb))
        _put(E_y, iz2, oK, np.eye(nrb))
        _put(E_w, iw1, 0, np.eye(nrb))
        _put(E_w, iw2, nrb, np.eye(nfl))
        F_w = np.zeros((2 * nrb, n_w))
        F_y = np.zeros((2 * nrb, n_y))
        _put(F_y, 0, oz1, np.eye(nrb))
        _put(F_y, nrb, oz2, np.eye(nrb))
        return route(blocks, E_w, E_y, F_w, F_y)

    def flexible_column(self, params) -> StateSpaceModel:
        """Sub-map of M carrying the flexible injection channel."""
        M = self.evaluate(params)
        key = "w3" if self.kind == "6block" else "w2"
        lo, hi = self.channel_map[key]
        return M.select_inputs(range(lo, hi))


class ConventionalView:
    """Synthesis objective restricted to the rigid-body disturbance columns.

    Mirrors the classical mixed-sensitivity comparison design: the flexible
    injection channel is dropped from the norm, everything else (structure,
    weights, grid closure) is shared with the wrapped problem.
    """

    def __init__(self, cl: ClosedLoopMap):
        self._cl = cl

    def __getattr__(self, name):
        return getattr(self._cl, name)

    def evaluate(self, params) -> StateSpaceModel:
        n = 2 * self._cl.n_rb if self._cl.kind == "6block" else self._cl.n_rb
        return self._cl.evaluate(params).select_inputs(range(n))


def _offsets(sizes):
    out, acc = [], 0
    for s in sizes:
        out.append(acc)
        acc += s
    return out


def _put(M, r, c, block):
    M[r:r + block.shape[0], c:c + block.shape[1]] += block


# ---------------------------------------------------------------------------
# controller realization helpers
# ---------------------------------------------------------------------------

def physical_rb_controller(params: StructuredControllerParams,
                           scalings: ScalingSet) -> RationalDiagonalFilter:
    """Unscale the synthesized K_RB: K_phys = W_w1_sc K_RB W_z_sc per channel."""
    n_rb = params.n_rb
    gains = scalings.ww1[:n_rb] * scalings.wz[:n_rb]
    return params.krb_filter().scaled(gains)


def close_full_loop(g_local: StateSpaceModel, cl: ClosedLoopMap,
                    params: StructuredControllerParams) -> StateSpaceModel:
    """Close K_RB, the observer and K_FM around a frozen local plant.

    The loop matches the synthesis interconnection with the shaping weights
    removed.  Inputs are (output disturbance, flexible-input disturbance);
    the output is the tracking error, so the A matrix carries the local
    closed-loop poles and the response doubles as the validation model.
    """
    nrb, nfl, nc = cl.n_rb, cl.n_flex, cl.n_ctrl
    ny = g_local.n_outputs
    n_w = ny + nfl
    Kp = physical_rb_controller(params, cl.scalings).to_ss()
    if cl.kind == "6block":
        obs = cl.observer(params)
        kf = params.kfm_filter().to_ss()
        E = _embedding(nfl, obs.controlled)
        blocks = [g_local, Kp, obs.realization, kf]
        # outputs: yG(ny) yKp(nrb) yO(nc) yKf(nc)
        oG, oKp, oO, oKf = _offsets([ny, nrb, nc, nc])
        n_y = ny + nrb + 2 * nc
        # inputs: uG(nrb+nfl) uKp(ny) uO(nrb+nfl+ny) uKf(nc)
        iG, iKp, iO, iKf = _offsets([nrb + nfl, ny, nrb + nfl + ny, nc])
        n_u = (nrb + nfl) + ny + (nrb + nfl + ny) + nc
        E_w = np.zeros((n_u, n_w))
        E_y = np.zeros((n_u, n_y))
        _put(E_y, iG, oKp, -np.eye(nrb))          # u1 = -K_RB eps
        _put(E_y, iG + nrb, oKf, E)               # u2 = E K_FM eta_hat + d_fm
        _put(E_w, iG + nrb, ny, np.eye(nfl))
        _put(E_w, iKp, 0, np.eye(ny))             # eps = d + y
        _put(E_y, iKp, oG, np.eye(ny))
        _put(E_y, iO, oKp, -np.eye(nrb))          # observer sees u1 ...
        _put(E_y, iO + nrb, oKf, E)               # ... and the K_FM part of u2
        _put(E_y, iO + nrb + nfl, oG, np.eye(ny))  # ... and y
        _put(E_y, iKf, oO, np.eye(nc))
        F_w = np.zeros((ny, n_w))
        _put(F_w, 0, 0, np.eye(ny))
        F_y = np.hstack([np.eye(ny), np.zeros((ny, nrb + 2 * nc))])
        return route(blocks, E_w, E_y, F_w, F_y)
    # error-based: u2 = -Sigma eps in physical coordinates
    obs = cl.observer(params)
    sig = sigma_subsystem(obs, params.kfm_filter())
    blocks = [g_local, Kp, sig]
    oG, oKp, oS = _offsets([ny, nrb, nfl])
    n_y = ny + nrb + nfl
    iG, iKp, iS = _offsets([nrb + nfl, ny, ny])
    n_u = (nrb + nfl) + 2 * ny
    E_w = np.zeros((n_u, n_w))
    E_y = np.zeros((n_u, n_y))
    _put(E_y, iG, oKp, -np.eye(nrb))
    _put(E_y, iG + nrb, oS, -np.eye(nfl))
    _put(E_w, iG + nrb, ny, np.eye(nfl))
    _put(E_w, iKp, 0, np.eye(ny))
    _put(E_y, iKp, oG, np.eye(ny))
    _put(E_w, iS, 0, np.eye(ny))
    _put(E_y, iS, oG, np.eye(ny))
    F_w = np.zeros((ny, n_w))
    _put(F_w, 0, 0, np.eye(ny))
    F_y = np.hstack([np.eye(ny), np.zeros((ny, nrb + nfl))])
    return route(blocks, E_w, E_y, F_w, F_y)


def rb_crossover(cl: ClosedLoopMap, params, n_points: int = 300) -> np.ndarray:
    """Unity-gain crossing frequency (Hz) of each scaled rigid-body loop.

    Returns the highest frequency at which the open-loop gain of the diagonal
    rigid-body channel reaches one; NaN if the loop never does.
    """
    gd = cl.g_delta(params)
    f = np.geomspace(min(cl.f_bw) / 20.0, max(cl.f_bw) * 50.0, n_points)
    Gv = freq_response(gd, f).values
    Kv = params.krb_filter().evaluate(2j * np.pi * f)
    out = np.full(cl.n_rb, np.nan)
    for i in range(cl.n_rb):
        L = np.abs(Gv[:, i, i] * Kv[i])
        idx = np.flatnonzero(L >= 1.0)
        if idx.size:
            out[i] = f[idx[-1]]
    return out


@dataclass(frozen=True)
class GridCertificate:
    """Per-grid-point local stability record."""

    points: tuple            # scheduling points
    stable: tuple            # bool per point
    abscissa: tuple          # slowest-pole real part per point

    @property
    def all_stable(self):
        return all(self.stable)

    def to_dict(self):
        return {"points": [np.atleast_1d(p).tolist() for p in self.points],
                "stable": list(self.stable),
                "abscissa": list(self.abscissa)}


def grid_stability_check(cl: ClosedLoopMap, params, grid_points) -> GridCertificate:
    """Close the full structured loop at every frozen point of the grid."""
    points, flags, absc = [], [], []
    for p in grid_points:
        g = evaluate_local(cl.pm, p)
        closed = close_full_loop(g, cl, params)
        a = spectral_abscissa(closed)
        points.append(np.atleast_1d(np.asarray(p, dtype=float)))
        flags.append(bool(a < -STABILITY_MARGIN))
        absc.append(float(a))
    return GridCertificate(tuple(points), tuple(flags), tuple(absc))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class SynthesisResult:
    params: StructuredControllerParams
    gamma: float
    log: list = field(default_factory=list)    # accepted (n_evals, gamma)
    certificate: GridCertificate | None = None
    wall_time: float = 0.0
    n_evals: int = 0
    stable: bool = True

    def to_dict(self):
        doc = {"params": self.params.to_dict(), "gamma": self.gamma,
               "log": [[int(k), float(v)] for k, v in self.log],
               "n_evals": self.n_evals, "stable": self.stable}
        if self.certificate is not None:
            doc["certificate"] = self.certificate.to_dict()
        return doc


def _objective(cl, template, norm_tol, grid_points=None, crossover_band=None):
    count = [0]
    grid_local = ([evaluate_local(cl.pm, p) for p in grid_points]
                  if grid_points is not None else None)

    def f(vec):
        count[0] += 1
        try:
            params = template.with_vector(vec)
            M = cl.evaluate(params)
        except (NumericError, ModelError, FloatingPointError, la.LinAlgError):
            return PENALTY_BASE * 10, False
        a = spectral_abscissa(M)
        if not a < 0:
            return PENALTY_BASE + a, False
        if grid_local is not None:
            worst = max(spectral_abscissa(close_full_loop(g, cl, params))
                        for g in grid_local)
            if not worst < 0:
                return PENALTY_BASE / 10 + worst, False
        if crossover_band is not None:
            lo, hi = crossover_band
            xc = rb_crossover(cl, params)
            if np.any(~np.isfinite(xc)):
                return PENALTY_BASE / 10 + 1.0, False
            miss = np.maximum(lo - xc, 0.0) + np.maximum(xc - hi, 0.0)
            if miss.max() > 0:
                return PENALTY_BASE / 10 + float(miss.max()), False
        try:
            return hinf_norm(M, rel_tol=norm_tol), True
        except NumericError:
            return PENALTY_BASE, False

    return f, count


def _compass_search(f, x0, budget, count, step0=0.25, step_min=1e-3,
                    log=None, offset_evals=0, frozen=None):
    """Deterministic coordinate pattern search; returns (best_x, best_val)."""
    x = np.asarray(x0, dtype=float).copy()
    free = (np.flatnonzero(~frozen) if frozen is not None
            else np.arange(x.size))
    fx, _ = f(x)
    if log is not None:
        log.append((offset_evals + count[0], fx))
    step = np.full(x.size, step0)
    scale = np.maximum(np.abs(x), 1.0)
    while count[0] < budget and step.max() > step_min:
        best_i, best_val, best_x = -1, fx, None
        for i in free:
            for sgn in (1.0, -1.0):
                if count[0] >= budget:
                    break
                cand = x.copy()
                cand[i] += sgn * step[i] * scale[i]
                val, _ = f(cand)
                if val < best_val - 1e-12 * max(abs(best_val), 1.0):
                    best_i, best_val, best_x = i, val, cand
        if best_x is None:
            step *= 0.5
            continue
        x, fx = best_x, best_val
        scale = np.maximum(np.abs(x), 1.0)
        if log is not None:
            log.append((offset_evals + count[0], fx))
    return x, fx


def synthesize(cl: ClosedLoopMap, init: StructuredControllerParams,
               budget: int, seed: int = 0, n_starts: int = 5,
               norm_tol: float = 1e-5, grid_points=None,
               crossover_band=None,
               freeze_xi: bool = False) -> SynthesisResult:
    """Minimize ||M(params)||_inf by seeded multi-start pattern search.

    ``budget`` caps the total number of objective evaluations; 0 returns the
    initialization unchanged.  Unstable candidates are scored by a penalty on
    the spectral abscissa, which doubles as the stabilization pre-phase.
    When ``grid_points`` is given, candidates whose full loop is unstable at
    any frozen point are penalized too, so the returned design certifies.
    ``crossover_band`` (lo, hi), in Hz, pins every rigid-body loop's
    unity-gain crossing inside the band, preserving the target bandwidth
    while the flexible channel is shaped.  ``freeze_xi`` pins the flexible-mode gains
    (conventional comparison runs).
    """
    t0 = time.perf_counter()
    f, count = _objective(cl, init, norm_tol, grid_points, crossover_band)
    x0 = init.to_vector()
    frozen = np.zeros(x0.size, bool)
    if freeze_xi:
        frozen[x0.size - init.xi.size:] = True
    g0, stable0 = f(x0)
    if budget <= 0:
        return SynthesisResult(init, float(g0), [(1, float(g0))],
                               wall_time=time.perf_counter() - t0,
                               n_evals=count[0], stable=stable0)
    rng = np.random.default_rng(seed)
    starts = [x0]
    for _ in range(max(n_starts - 1, 0)):
        pert = 0.2 * rng.standard_normal(x0.size) * np.maximum(np.abs(x0), 1.0)
        pert[frozen] = 0.0
        starts.append(x0 + pert)
    per_start = max(budget // len(starts), 1)
    best_x, best_val, log = x0, g0, [(1, float(g0))]
    used = count[0]
    for k, xs in enumerate(starts):
        sub_log = []
        count[0] = 0
        bx, bv = _compass_search(f, xs, per_start, count, log=sub_log,
                                 offset_evals=used, frozen=frozen)
        used += count[0]
        if bv < best_val:
            best_val, best_x = bv, bx
        if k == 0:
            log.extend(sub_log[1:])
    # the accepted-iterate log tracks the incumbent: never increasing
    mono, cur = [], np.inf
    for n, v in log:
        if v < cur:
            cur = v
            mono.append((n, float(v)))
    if best_val < cur:
        mono.append((used, float(best_val)))
    params = init.with_vector(best_x)
    stable = best_val < PENALTY_BASE / 10
    if not stable:
        raise NumericError("no stabilizing parameters found within budget; "
                           f"best penalized objective {best_val:.6g}")
    return SynthesisResult(params, float(best_val), mono,
                           wall_time=time.perf_counter() - t0,
                           n_evals=used, stable=True)
