"""Continuous-time state-space numerics.

Foundational operations used by every other module: interconnection,
frequency response, stability tests, the H-infinity norm, filter Riccati
solving and fixed-step time simulation.  All functions are pure and operate
on immutable inputs, so they are safe to call concurrently.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la


def _solve_quiet(M, rhs):
    """``la.solve`` without ill-conditioning warnings.

    Frequency responses are routinely evaluated arbitrarily close to poles
    (integrators, lightly damped modes); the resolvent is then legitimately
    near-singular and the resulting large response is the correct answer.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        return la.solve(M, rhs)


class ModelError(ValueError):
    """Raised for inconsistent model construction (dimensions, non-finite data)."""


class NumericError(RuntimeError):
    """Raised when a numerical routine cannot produce a certified result."""


def _as_matrix(x, rows=None, cols=None):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if rows is not None and a.size == 0:
        a = a.reshape(rows if rows is not None else 0, cols if cols is not None else 0)
    return a


@dataclass(frozen=True)
class StateSpaceModel:
    """LTI system x' = Ax + Bu, y = Cx + Du.

    Empty-state systems (pure gains) are allowed: pass ``A`` with shape
    (0, 0) and ``B``/``C`` with conformable zero dimensions.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    input_labels: tuple = None
    output_labels: tuple = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if A.size == 0:
            A = A.reshape(0, 0)
            B = B.reshape(0, B.shape[1] if B.size else D.shape[1])
            C = C.reshape(C.shape[0] if C.size else D.shape[0], 0)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ModelError(f"C has {C.shape[1]} columns, expected {n}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ModelError(f"D shape {D.shape} != ({C.shape[0]}, {B.shape[1]})")
        for name, mat in (("A", A), ("B", B), ("C", C), ("D", D)):
            if mat.size and not np.all(np.isfinite(mat)):
                raise ModelError(f"non-finite entries in {name}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        if self.input_labels is not None:
            object.__setattr__(self, "input_labels", tuple(self.input_labels))
        if self.output_labels is not None:
            object.__setattr__(self, "output_labels", tuple(self.output_labels))

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    @classmethod
    def from_gain(cls, D):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        return cls(np.zeros((0, 0)), np.zeros((0, D.shape[1])),
                   np.zeros((D.shape[0], 0)), D)

    @classmethod
    def identity(cls, n):
        return cls.from_gain(np.eye(n))

    @classmethod
    def from_tf(cls, num, den):
        """SISO realization of num(s)/den(s), coefficients in descending powers."""
        A, B, C, D = _tf_section_realization(np.asarray(num, float),
                                             np.asarray(den, float))
        return cls(A, B, C, D)

    def poles(self):
        if self.n_states == 0:
            return np.zeros(0, dtype=complex)
        return la.eigvals(self.A)

    def transfer_at(self, s):
        """Transfer matrix C (sI - A)^{-1} B + D at a single complex point."""
        if self.n_states == 0:
            return self.D.astype(complex)
        X = _solve_quiet(s * np.eye(self.n_states) - self.A, self.B)
        return self.C @ X + self.D

    def select_outputs(self, idx):
        idx = list(idx)
        return StateSpaceModel(self.A, self.B, self.C[idx, :], self.D[idx, :])

    def select_inputs(self, idx):
        idx = list(idx)
        return StateSpaceModel(self.A, self.B[:, idx], self.C, self.D[:, idx])

    def to_dict(self):
        doc = {"A": self.A.tolist(), "B": self.B.tolist(),
               "C": self.C.tolist(), "D": self.D.tolist()}
        if self.input_labels is not None or self.output_labels is not None:
            doc["labels"] = {"inputs": list(self.input_labels or []),
                             "outputs": list(self.output_labels or [])}
        return doc

    @classmethod
    def from_dict(cls, doc):
        labels = doc.get("labels", {})
        return cls(np.array(doc["A"], dtype=float, ndmin=2),
                   np.array(doc["B"], dtype=float, ndmin=2),
                   np.array(doc["C"], dtype=float, ndmin=2),
                   np.array(doc["D"], dtype=float, ndmin=2),
                   input_labels=tuple(labels.get("inputs", [])) or None,
                   output_labels=tuple(labels.get("outputs", [])) or None)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class FrequencyResponse:
    """Sampled transfer matrix on an ascending frequency grid in Hz."""

    freqs_hz: np.ndarray
    values: np.ndarray  # (n_freq, n_y, n_u) complex

    def __post_init__(self):
        f = np.asarray(self.freqs_hz, dtype=float).ravel()
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 3 or v.shape[0] != f.size:
            raise ModelError("values must be (n_freq, n_y, n_u) with one matrix per grid point")
        if f.size > 1 and not np.all(np.diff(f) > 0):
            raise ModelError("frequency grid must be strictly ascending")
        object.__setattr__(self, "freqs_hz", f)
        object.__setattr__(self, "values", v)

    def magnitude(self):
        return np.abs(self.values)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("freq_hz,out,in,re,im,mag_db,phase_deg\n")
            for k, f in enumerate(self.freqs_hz):
                for i in range(self.values.shape[1]):
                    for j in range(self.values.shape[2]):
                        v = self.values[k, i, j]
                        mag = abs(v)
                        mag_db = 20 * np.log10(mag) if mag > 0 else -np.inf
                        fh.write(f"{f:.12g},{i},{j},{v.real:.12g},{v.imag:.12g},"
                                 f"{mag_db:.12g},{np.degrees(np.angle(v)):.12g}\n")


# ---------------------------------------------------------------------------
# rational diagonal filters
# ---------------------------------------------------------------------------

def _tf_section_realization(num, den):
    """Controllable-canonical realization of a proper rational section."""
    num = np.trim_zeros(np.atleast_1d(num), "f")
    den = np.trim_zeros(np.atleast_1d(den), "f")
    if den.size == 0 or den[0] == 0:
        raise ModelError("section denominator must have a nonzero leading coefficient")
    if num.size == 0:
        num = np.zeros(1)
    if num.size > den.size:
        raise ModelError("section is not proper (numerator degree exceeds denominator)")
    num = np.concatenate([np.zeros(den.size - num.size), num]) / den[0]
    den = den / den[0]
    m = den.size - 1
    if m == 0:
        return (np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                np.array([[num[0]]]))
    d = num[0]
    # strictly proper remainder after removing the feed-through
    rem = num[1:] - d * den[1:]
    A = np.zeros((m, m))
    A[:-1, 1:] = np.eye(m - 1)
    A[-1, :] = -den[1:][::-1]
    B = np.zeros((m, 1))
    B[-1, 0] = 1.0
    C = rem[::-1].reshape(1, m)
    return A, B, C, np.array([[d]])


@dataclass(frozen=True)
class RationalDiagonalFilter:
    """Diagonal transfer matrix, each channel a cascade of rational sections.

    ``channels[i]`` is a list of ``(num, den)`` coefficient pairs in
    descending powers of s.  Every section must be proper.
    """

    channels: tuple

    def __post_init__(self):
        chans = []
        for sections in self.channels:
            sec = []
            for num, den in sections:
                num = np.atleast_1d(np.asarray(num, dtype=float))
                den = np.atleast_1d(np.asarray(den, dtype=float))
                dent = np.trim_zeros(den, "f")
                numt = np.trim_zeros(num, "f")
                if dent.size == 0:
                    raise ModelError("zero denominator in filter section")
                if numt.size > dent.size:
                    raise ModelError("improper filter section")
                sec.append((num, den))
            chans.append(tuple(sec))
        object.__setattr__(self, "channels", tuple(chans))

    @property
    def n_channels(self):
        return len(self.channels)

    @classmethod
    def from_gains(cls, gains):
        return cls(tuple([(np.array([g]), np.array([1.0]))] for g in gains))

    @classmethod
    def identity(cls, n):
        return cls.from_gains([1.0] * n)

    @classmethod
    def zero(cls, n):
        return cls.from_gains([0.0] * n)

    def evaluate(self, s_values):
        """Complex diagonal values, shape (n_channels, len(s_values))."""
        s = np.asarray(s_values, dtype=complex).ravel()
        out = np.ones((self.n_channels, s.size), dtype=complex)
        for i, sections in enumerate(self.channels):
            for num, den in sections:
                out[i] *= np.polyval(num, s) / np.polyval(den, s)
        return out

    def channel_ss(self, i):
        """State-space realization of a single diagonal channel."""
        g = StateSpaceModel.identity(1)
        for num, den in self.channels[i]:
            g = series(g, StateSpaceModel.from_tf(num, den))
        return g

    def to_ss(self):
        """Block-diagonal state-space realization of the full filter."""
        return blockdiag([self.channel_ss(i) for i in range(self.n_channels)])

    def scaled(self, gains):
        """Per-channel multiplication by static gains."""
        gains = np.broadcast_to(np.asarray(gains, float).ravel(), (self.n_channels,))
        chans = []
        for g, sections in zip(gains, self.channels):
            chans.append(list(sections) + [(np.array([g]), np.array([1.0]))])
        return RationalDiagonalFilter(tuple(chans))

    def to_dict(self):
        return {"channels": [[{"num": list(map(float, n)), "den": list(map(float, d))}
                              for n, d in sections] for sections in self.channels]}

    @classmethod
    def from_dict(cls, doc):
        return cls(tuple(tuple((np.array(s["num"]), np.array(s["den"]))
                               for s in sections) for sections in doc["channels"]))


def filter_blockdiag(filters):
    """Concatenate diagonal filters into one larger diagonal filter."""
    chans = []
    for f in filters:
        chans.extend(f.channels)
    return RationalDiagonalFilter(tuple(chans))


# ---------------------------------------------------------------------------
# interconnection
# ---------------------------------------------------------------------------

def series(g1: StateSpaceModel, g2: StateSpaceModel) -> StateSpaceModel:
    """Cascade: output of ``g1`` drives ``g2``; transfer is G2(s) G1(s)."""
    if g1.n_outputs != g2.n_inputs:
        raise ModelError(f"series: {g1.n_outputs} outputs feeding {g2.n_inputs} inputs")
    n1, n2 = g1.n_states, g2.n_states
    A = np.block([[g1.A, np.zeros((n1, n2))],
                  [g2.B @ g1.C, g2.A]])
    B = np.vstack([g1.B, g2.B @ g1.D])
    C = np.hstack([g2.D @ g1.C, g2.C])
    D = g2.D @ g1.D
    return StateSpaceModel(A, B, C, D)


def parallel(g1: StateSpaceModel, g2: StateSpaceModel) -> StateSpaceModel:
    """Sum of two systems sharing the same input and output dimensions."""
    if g1.n_inputs != g2.n_inputs or g1.n_outputs != g2.n_outputs:
        raise ModelError("parallel: input/output dimensions must match")
    n1, n2 = g1.n_states, g2.n_states
    A = la.block_diag(g1.A, g2.A)
    B = np.vstack([g1.B, g2.B])
    C = np.hstack([g1.C, g2.C])
    return StateSpaceModel(A, B, C, g1.D + g2.D)


def blockdiag(systems) -> StateSpaceModel:
    """Stack systems diagonally: independent inputs and outputs."""
    systems = list(systems)
    if not systems:
        return StateSpaceModel.from_gain(np.zeros((0, 0)))
    A = la.block_diag(*[g.A for g in systems])
    B = la.block_diag(*[g.B for g in systems])
    C = la.block_diag(*[g.C for g in systems])
    D = la.block_diag(*[g.D for g in systems])
    return StateSpaceModel(A, B, C, D)


def lmul(M, g: StateSpaceModel) -> StateSpaceModel:
    """Static output transformation y' = M y."""
    M = _as_matrix(M)
    if M.shape[1] != g.n_outputs:
        raise ModelError("lmul: matrix columns must match system outputs")
    return StateSpaceModel(g.A, g.B, M @ g.C, M @ g.D)


def rmul(g: StateSpaceModel, M) -> StateSpaceModel:
    """Static input transformation u = M u'."""
    M = _as_matrix(M)
    if M.shape[0] != g.n_inputs:
        raise ModelError("rmul: matrix rows must match system inputs")
    return StateSpaceModel(g.A, g.B @ M, g.C, g.D @ M)


def feedback(g: StateSpaceModel, h: StateSpaceModel = None,
             sign: int = -1) -> StateSpaceModel:
    """Close the loop y = G(r + sign * H y); returns the map r -> y.

    ``h=None`` means unit feedback (H = I).
    """
    if h is None:
        h = StateSpaceModel.identity(g.n_outputs)
    if g.n_outputs != h.n_inputs or h.n_outputs != g.n_inputs:
        raise ModelError("feedback: loop dimensions do not conform")
    loop_D = np.eye(g.n_outputs) - sign * (g.D @ h.D)
    if np.linalg.cond(loop_D) > 1e12:
        raise NumericError("singular algebraic loop in feedback connection")
    gh = blockdiag([g, h])
    n_r = g.n_inputs
    # block inputs [u_g; u_h], block outputs [y_g; y_h]
    E_w = np.vstack([np.eye(n_r), np.zeros((h.n_inputs, n_r))])
    E_y = np.block([[np.zeros((g.n_inputs, g.n_outputs)), sign * np.eye(g.n_inputs)],
                    [np.eye(h.n_inputs), np.zeros((h.n_inputs, h.n_outputs))]])
    F_w = np.zeros((g.n_outputs, n_r))
    F_y = np.hstack([np.eye(g.n_outputs), np.zeros((g.n_outputs, h.n_outputs))])
    return route([g, h], E_w, E_y, F_w, F_y)


def route(blocks, E_w, E_y, F_w, F_y) -> StateSpaceModel:
    """Close static signal routing around a collection of LTI blocks.

    With stacked block inputs u_b and outputs y_b, imposes
    u_b = E_w w + E_y y_b and returns the system from external input w to
    z = F_w w + F_y y_b.  This is the single interconnection primitive that
    series/feedback/loop-closure helpers reduce to.
    """
    gg = blockdiag(list(blocks))
    E_w, E_y, F_w, F_y = map(_as_matrix, (E_w, E_y, F_w, F_y))
    n_u, n_y = gg.n_inputs, gg.n_outputs
    if E_y.shape != (n_u, n_y) or E_w.shape[0] != n_u:
        raise ModelError("route: routing matrix dimensions do not match blocks")
    if F_y.shape[1] != n_y or F_w.shape[0] != F_y.shape[0] or F_w.shape[1] != E_w.shape[1]:
        raise ModelError("route: output map dimensions do not match")
    loop = np.eye(n_y) - gg.D @ E_y
    if np.linalg.cond(loop) > 1e12:
        raise NumericError("singular algebraic loop in routed interconnection")
    Minv = la.solve(loop, np.eye(n_y))
    A = gg.A + gg.B @ E_y @ Minv @ gg.C
    B = gg.B @ (E_w + E_y @ Minv @ gg.D @ E_w)
    C = F_y @ Minv @ gg.C
    D = F_w + F_y @ Minv @ gg.D @ E_w
    return StateSpaceModel(A, B, C, D)


def ss_inverse(g: StateSpaceModel) -> StateSpaceModel:
    """Inverse of a square system with invertible feed-through."""
    if g.n_inputs != g.n_outputs:
        raise ModelError("inverse requires a square system")
    if g.n_inputs and np.linalg.cond(g.D) > 1e12:
        raise NumericError("system feed-through is singular; inverse is improper")
    Dinv = la.solve(g.D, np.eye(g.n_inputs)) if g.n_inputs else g.D
    return StateSpaceModel(g.A - g.B @ Dinv @ g.C, g.B @ Dinv,
                           -Dinv @ g.C, Dinv)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

def freq_response(g: StateSpaceModel, freqs_hz) -> FrequencyResponse:
    """Evaluate C (j 2 pi f I - A)^{-1} B + D on an ascending Hz grid."""
    f = np.asarray(freqs_hz, dtype=float).ravel()
    if f.size == 0 or np.any(f < 0):
        raise ModelError("frequency grid must be nonnegative")
    if f.size > 1 and not np.all(np.diff(f) > 0):
        raise ModelError("frequency grid must be strictly ascending")
    vals = np.empty((f.size, g.n_outputs, g.n_inputs), dtype=complex)
    n = g.n_states
    I = np.eye(n)
    for k, fk in enumerate(f):
        if n == 0:
            vals[k] = g.D
            continue
        s = 2j * np.pi * fk
        M = s * I - g.A
        try:
            X = _solve_quiet(M, g.B)
        except la.LinAlgError as exc:
            raise NumericError(f"frequency {fk} Hz coincides with a system pole") from exc
        if g.B.size and not np.all(np.isfinite(X)):
            raise NumericError(f"frequency {fk} Hz coincides with a system pole")
        res = np.linalg.norm(M @ X - g.B)
        if res > 1e-6 * max(1.0, np.linalg.norm(g.B)):
            raise NumericError(f"near-singular resolvent at {fk} Hz")
        vals[k] = g.C @ X + g.D
    return FrequencyResponse(f, vals)


def spectral_abscissa(g) -> float:
    A = g.A if isinstance(g, StateSpaceModel) else np.atleast_2d(np.asarray(g, float))
    if A.shape[0] == 0:
        return -np.inf
    return float(np.max(la.eigvals(A).real))


def is_hurwitz(g, margin: float = 0.0) -> bool:
    """True iff every eigenvalue of A has real part < -margin."""
    return spectral_abscissa(g) < -margin


def _default_freq_grid(g: StateSpaceModel, n_points: int):
    pole_f = np.abs(g.poles()) / (2 * np.pi)
    pole_f = pole_f[pole_f > 0]
    lo = min(pole_f.min() / 100 if pole_f.size else 1e-3, 1e-3)
    hi = max(pole_f.max() * 100 if pole_f.size else 1e3, 1e3)
    return np.logspace(np.log10(lo), np.log10(hi), n_points)


def _sigma_max(g: StateSpaceModel, f_hz: float) -> float:
    return float(la.svdvals(g.transfer_at(2j * np.pi * f_hz)).max()) \
        if min(g.n_inputs, g.n_outputs) else 0.0


def hinf_norm_grid(g: StateSpaceModel, n_points: int = 100_000) -> float:
    """Dense log-grid fallback: max over the grid of the largest singular value."""
    if not is_hurwitz(g):
        raise NumericError("H-infinity norm undefined: system is not Hurwitz")
    if min(g.n_inputs, g.n_outputs) == 0:
        return 0.0
    if g.n_states == 0:
        return float(la.svdvals(g.D).max()) if g.D.size else 0.0
    freqs = np.concatenate([[0.0], _default_freq_grid(g, n_points)])
    s = 2j * np.pi * freqs
    # diagonalize once so the whole grid is a batched outer product; fall
    # back to per-frequency solves when the eigenbasis is ill-conditioned
    lam, T = la.eig(g.A)
    if np.linalg.cond(T) < 1e8:
        Bt = la.solve(T, g.B.astype(complex))
        Ct = g.C.astype(complex) @ T
        H = np.einsum("ik,fk,kj->fij", Ct, 1.0 / (s[:, None] - lam), Bt)
        H += g.D
        return float(np.linalg.svd(H, compute_uv=False).max())
    best = 0.0
    for sk in s:
        H = g.C @ _solve_quiet(sk * np.eye(g.n_states) - g.A, g.B) + g.D
        best = max(best, float(la.svdvals(H).max()))
    return best


def _hamiltonian_has_imag_eig(g: StateSpaceModel, gamma: float) -> bool:
    A, B, C, D = g.A, g.B, g.C, g.D
    n = A.shape[0]
    R = gamma ** 2 * np.eye(g.n_inputs) - D.T @ D
    w = la.eigvalsh(R)
    if w.min() <= 1e-12 * max(1.0, w.max()):
        return True  # gamma at or below the largest singular value of D
    Rinv = la.solve(R, np.eye(g.n_inputs))
    Ah = A + B @ Rinv @ D.T @ C
    H = np.block([[Ah, B @ Rinv @ B.T],
                  [-C.T @ (np.eye(g.n_outputs) + D @ Rinv @ D.T) @ C, -Ah.T]])
    ev = la.eigvals(H)
    scale = max(1.0, float(np.abs(ev).max()))
    return bool(np.any(np.abs(ev.real) <= 1e-8 * scale))


def hinf_norm(g: StateSpaceModel, rel_tol: float = 1e-6) -> float:
    """H-infinity norm by bisection on a Hamiltonian imaginary-eigenvalue test.

    Falls back to a dense frequency grid if the Hamiltonian solve misbehaves.
    Raises :class:`NumericError` for non-Hurwitz systems.
    """
    if not is_hurwitz(g):
        raise NumericError("H-infinity norm undefined: system is not Hurwitz")
    if min(g.n_inputs, g.n_outputs) == 0:
        return 0.0
    if g.n_states == 0 or not (np.any(g.B) and np.any(g.C)):
        return float(la.svdvals(g.D).max()) if g.D.size else 0.0
    # lower bound from candidate frequencies: DC, pole frequencies, feed-through
    cand = [0.0] + list(np.abs(g.poles().imag) / (2 * np.pi)) \
        + list(np.abs(g.poles()) / (2 * np.pi))
    lo = max(_sigma_max(g, f) for f in cand)
    lo = max(lo, float(la.svdvals(g.D).max()))
    if lo == 0.0:
        lo = 1e-14
    try:
        hi = lo * (1 + 1e-3)
        for _ in range(80):
            if not _hamiltonian_has_imag_eig(g, hi):
                break
            lo = hi
            hi *= 2.0
        else:
            raise NumericError("H-infinity bisection failed to bracket the norm")
        while hi - lo > rel_tol * lo:
            mid = 0.5 * (lo + hi)
            if _hamiltonian_has_imag_eig(g, mid):
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)
    except la.LinAlgError:
        # ill-conditioned Hamiltonian solve: certified less tightly by dense grid
        return hinf_norm_grid(g, 100_000)


# ---------------------------------------------------------------------------
# Riccati-based observer gain
# ---------------------------------------------------------------------------

def _is_detectable(A, C, tol=1e-8):
    ev = la.eigvals(A)
    n = A.shape[0]
    for lam in ev:
        if lam.real >= -tol:
            M = np.vstack([A - lam * np.eye(n), C])
            if np.linalg.matrix_rank(M, tol=1e-10 * max(1.0, np.abs(lam))) < n:
                return False, lam
    return True, None


def care_solve(A, C, Q_weight, V_weight, residual_tol: float = 1e-6):
    """Filter algebraic Riccati equation A P + P A' - P C' V^-1 C P + Q = 0.

    Returns (P, L) with L = P C' V^-1 such that A - L C is Hurwitz.

    Parameters follow the observer-design convention: Q_weight is the
    process-noise weight (PSD), V_weight the measurement weight (PD).
    """
    A = _as_matrix(A)
    C = _as_matrix(C)
    Q = _as_matrix(Q_weight)
    V = _as_matrix(V_weight)
    n = A.shape[0]
    if C.shape[1] != n or Q.shape != (n, n) or V.shape != (C.shape[0], C.shape[0]):
        raise ModelError("care_solve: inconsistent dimensions")
    ok, lam = _is_detectable(A, C)
    if not ok:
        raise NumericError(f"(A, C) not detectable: unobservable unstable mode at {lam}")
    try:
        P = la.solve_continuous_are(A.T, C.T, Q, V)
    except (la.LinAlgError, ValueError) as exc:
        raise NumericError(f"Riccati solver failed: {exc}") from exc
    P = 0.5 * (P + P.T)
    L = P @ C.T @ la.solve(V, np.eye(V.shape[0]))
    res = A @ P + P @ A.T - P @ C.T @ la.solve(V, C @ P) + Q
    scale = max(1.0, np.linalg.norm(P) * max(1.0, np.linalg.norm(A)))
    if np.linalg.norm(res) > residual_tol * scale:
        raise NumericError(f"Riccati residual {np.linalg.norm(res):.3e} above tolerance")
    if n and not is_hurwitz(StateSpaceModel(A - L @ C, np.zeros((n, 0)),
                                            np.zeros((0, n)), np.zeros((0, 0)))):
        raise NumericError("Riccati gain does not stabilize A - L C")
    return P, L


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def discretize_zoh(g: StateSpaceModel, dt: float):
    """Exact zero-order-hold discretization of (A, B)."""
    if dt <= 0:
        raise ModelError("dt must be positive")
    n, m = g.n_states, g.n_inputs
    if n == 0:
        return np.zeros((0, 0)), np.zeros((0, m))
    M = np.zeros((n + m, n + m))
    M[:n, :n] = g.A
    M[:n, n:] = g.B
    E = la.expm(M * dt)
    return E[:n, :n], E[:n, n:]


def simulate(g: StateSpaceModel, inputs, dt: float, x0=None):
    """Fixed-step ZOH simulation; returns (t, states, outputs).

    ``inputs`` has shape (n_samples, n_inputs); the input is held constant
    over each step.  Outputs are y[k] = C x[k] + D u[k].
    """
    u = np.atleast_2d(np.asarray(inputs, dtype=float))
    if u.shape[1] != g.n_inputs and u.shape[0] == g.n_inputs:
        u = u.T
    if u.shape[1] != g.n_inputs:
        raise ModelError(f"inputs must have {g.n_inputs} columns")
    if u.shape[0] < 2:
        raise ModelError("need at least 2 input samples")
    if not np.all(np.isfinite(u)):
        raise ModelError("non-finite input samples")
    Ad, Bd = discretize_zoh(g, dt)
    n = g.n_states
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel()
    if x.size != n:
        raise ModelError("x0 has wrong dimension")
    n_s = u.shape[0]
    X = np.empty((n_s, n))
    Y = np.empty((n_s, g.n_outputs))
    for k in range(n_s):
        X[k] = x
        Y[k] = g.C @ x + g.D @ u[k]
        x = Ad @ x + Bd @ u[k]
    t = np.arange(n_s) * dt
    return t, X, Y
