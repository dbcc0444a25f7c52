"""Limit-object verification: interfaces, Stefan oracle, weak residuals.

The moving-interface regime is checked against an independent enthalpy
solver for w_t = Laplace(w_+) on its own fine grid (the bounded weak
solutions of that degenerate diffusion are exactly the weak solutions of
the one-phase Stefan problem with latent heat v0^m/m).  Residual
functionals evaluate the weak forms of the moving and immovable regimes
against analytic test functions by trapezoidal-in-time, midpoint-in-
space quadrature over stored checkpoints.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf

from .lattice import TorusGeometry, as_values, discrete_gradient

__all__ = [
    "InterfaceEntry",
    "InterfaceTrack",
    "extract_interface",
    "track_trajectory",
    "interface_velocity",
    "EnthalpyState",
    "EnthalpyTrajectory",
    "stefan_enthalpy_oracle",
    "stefan_similarity_lambda",
    "similarity_front_position",
    "TestFunction",
    "default_test_functions_case2",
    "default_test_functions_case3",
    "weak_residual_case2",
    "weak_residual_case3",
    "case_theorem_report",
    "trend_verdict",
]


# ---------------------------------------------------------------------------
# interface extraction


@dataclass
class InterfaceEntry:
    t: float
    omega_u: np.ndarray
    omega_v: np.ndarray
    gamma: np.ndarray
    crossings: list
    mixing: bool


@dataclass
class InterfaceTrack:
    geom: TorusGeometry
    entries: list = dc_field(default_factory=list)

    @property
    def times(self):
        return [e.t for e in self.entries]


def extract_interface(
    u,
    v,
    eps_int: float = 1e-2,
    m: int = 1,
    t: float = 0.0,
    geom: TorusGeometry | None = None,
    strict: bool = True,
) -> InterfaceEntry:
    """Threshold masks and (d=1) front positions from one checkpoint.

    Omega_u / Omega_v are the cells where only the respective density
    exceeds eps_int; Gamma is the complement, so the three masks
    partition the torus by construction.  Front positions interpolate the
    sign change of w = u - v^m / m between cell centres.  Cells where
    both densities exceed eps_int flag mixing; under `strict` the
    sitewise product is checked against 10*eps^2 and overlap is an error
    (at small K a mixing layer of width ~ (K v)^{-1/2} is expected, so
    trackers pass strict=False and keep the flag).
    """
    u = as_values(u)
    v = as_values(v)
    if geom is None:
        geom = TorusGeometry(u.shape[0], u.ndim)
    pos_u = u > eps_int
    pos_v = v > eps_int
    mixing = bool((pos_u & pos_v).any())
    if strict and (u * v > 10.0 * eps_int**2).any():
        raise ValueError(
            f"u*v exceeds 10*eps^2 at t={t}: regions overlap beyond the mixing tolerance"
        )
    omega_u = pos_u & ~pos_v
    omega_v = pos_v & ~pos_u
    gamma = ~(omega_u | omega_v)
    crossings = []
    if geom.d == 1:
        w = u - v**m / m
        N = geom.N
        for i in range(N):
            a, b = w[i], w[(i + 1) % N]
            if a == 0.0 and b != 0.0:
                crossings.append(i / N)
            elif a * b < 0.0:
                frac = a / (a - b)
                crossings.append(((i + frac) % N) / N)
        crossings.sort()
    return InterfaceEntry(t, omega_u, omega_v, gamma, crossings, mixing)


def track_trajectory(traj, eps_int: float = 1e-2, m: int = 1, strict: bool = False) -> InterfaceTrack:
    """Interface entries at every stored checkpoint of an rd trajectory."""
    track = InterfaceTrack(traj.geom)
    for t, u, v in zip(traj.times, traj.u, traj.v):
        track.entries.append(extract_interface(u, v, eps_int, m, t, traj.geom, strict=strict))
    return track


def _match_crossing(prev: float, candidates: list) -> float:
    return min(candidates, key=lambda c: min(abs(c - prev), 1 - abs(c - prev)))


def interface_velocity(track: InterfaceTrack):
    """Central-difference front velocities of each tracked crossing (d=1).

    The crossing count must be constant across the track; a change means
    a topology change where the velocity is undefined.
    """
    if track.geom.d != 1:
        raise ValueError("front velocities are defined in d=1 only")
    if len(track.entries) < 3:
        raise ValueError("need at least 3 checkpoints")
    counts = {len(e.crossings) for e in track.entries}
    if len(counts) != 1:
        raise ValueError(f"crossing count changed along the track: {sorted(counts)}")
    n_fronts = counts.pop()
    times = np.asarray(track.times)
    pos = np.empty((len(times), n_fronts))
    pos[0] = np.sort(track.entries[0].crossings)
    for k in range(1, len(times)):
        cands = list(track.entries[k].crossings)
        row = []
        for p in pos[k - 1]:
            c = _match_crossing(p, cands)
            cands.remove(c)
            # unwrap across the periodic boundary
            if c - p > 0.5:
                c -= 1.0
            elif p - c > 0.5:
                c += 1.0
            row.append(c)
        pos[k] = row
    vel = np.gradient(pos, times, axis=0)
    return times, pos, vel


# ---------------------------------------------------------------------------
# enthalpy oracle


@dataclass
class EnthalpyState:
    M: int
    w: np.ndarray
    t: float


@dataclass
class EnthalpyTrajectory:
    M: int
    h: float
    times: list
    w: list
    bc: str

    def u(self, k):
        return np.maximum(self.w[k], 0.0)

    def v_pow_m(self, k, m):
        return m * np.maximum(-self.w[k], 0.0)

    def front_position(self, k) -> float:
        """Rightmost zero crossing of w from positive to negative."""
        w = self.w[k]
        M = self.M
        best = None
        for i in range(M - 1):
            a, b = w[i], w[i + 1]
            if a > 0.0 >= b:
                frac = a / (a - b) if a != b else 0.0
                best = (i + 0.5 + frac) / M
        return best


def stefan_enthalpy_oracle(
    u0,
    v0,
    m: int,
    M: int,
    T: float,
    store_times,
    bc: str = "periodic",
    u_left: float | None = None,
) -> EnthalpyTrajectory:
    """Explicit conservative scheme for w_t = Laplace(w_+), w0 = u0 - v0^m/m.

    Cell centres sit at (i+1/2)/M; fluxes difference w_+ across faces, so
    the total mass of w is conserved exactly on the periodic torus and
    the scheme is monotone under the step cap dt <= h^2/4.  `bc` may be
    "periodic" (production) or "dirichlet_left" (line segment with the
    leftmost cell clamped, no-flux right end) for the similarity-solution
    benchmark.
    """
    if bc not in ("periodic", "dirichlet_left"):
        raise ValueError("bc must be 'periodic' or 'dirichlet_left'")
    xs = (np.arange(M) + 0.5) / M
    if callable(u0):
        w = np.array([float(u0(x)) for x in xs]) - np.array([float(v0(x)) for x in xs]) ** m / m
    else:
        u0 = np.asarray(u0, dtype=float)
        v0 = np.asarray(v0, dtype=float)
        w = u0 - v0**m / m
    h = 1.0 / M
    dt = h * h / 4.0
    store_times = sorted(set(float(t) for t in store_times))
    if store_times and (store_times[0] < 0 or store_times[-1] > T + 1e-12):
        raise ValueError("store times must lie in [0, T]")
    if T not in store_times:
        store_times.append(T)
    out_t, out_w = [], []
    t = 0.0
    if store_times and store_times[0] == 0.0:
        out_t.append(0.0)
        out_w.append(w.copy())
        store_times = store_times[1:]
    inv_h2 = 1.0 / (h * h)
    for t_next in store_times:
        n_steps = max(1, int(np.ceil((t_next - t) / dt - 1e-12)))
        step = (t_next - t) / n_steps
        if step > h * h / 4.0 + 1e-15:
            raise ValueError("CFL violation: dt exceeds h^2/4")
        for _ in range(n_steps):
            wp = np.maximum(w, 0.0)
            if bc == "periodic":
                lap = np.roll(wp, -1) + np.roll(wp, 1) - 2.0 * wp
            else:
                lap = np.empty_like(wp)
                lap[1:-1] = wp[2:] + wp[:-2] - 2.0 * wp[1:-1]
                lap[0] = 0.0  # clamped cell
                lap[-1] = wp[-2] - wp[-1]  # no-flux right end
            w = w + step * inv_h2 * lap
            if u_left is not None and bc == "dirichlet_left":
                w[0] = u_left
        t = t_next
        out_t.append(t)
        out_w.append(w.copy())
    return EnthalpyTrajectory(M, h, out_t, out_w, bc)


def stefan_similarity_lambda(u_L: float, latent: float) -> float:
    """Root of lambda e^{lambda^2} erf(lambda) = u_L / (latent sqrt(pi)).

    Transcendental equation of the classical one-phase Stefan similarity
    solution on a half line with boundary value u_L and latent heat
    `latent`; the front sits at 2 lambda sqrt(t).
    """
    target = u_L / (latent * np.sqrt(np.pi))
    f = lambda lam: lam * np.exp(lam**2) * erf(lam) - target
    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return float(brentq(f, 1e-12, hi, xtol=1e-12))


def similarity_front_position(t: float, u_L: float, latent: float) -> float:
    return 2.0 * stefan_similarity_lambda(u_L, latent) * np.sqrt(t)


# ---------------------------------------------------------------------------
# weak-form residuals


@dataclass
class TestFunction:
    """Analytic phi(t, theta) with the derivatives the residuals need."""

    phi: callable
    phi_t: callable
    phi_x: callable
    label: str = ""


def _time_cutoff_case2(T):
    # smooth, phi(T) = 0, phi(0) = 1
    return (
        lambda t: np.cos(np.pi * t / (2 * T)),
        lambda t: -np.pi / (2 * T) * np.sin(np.pi * t / (2 * T)),
    )


def _time_bump_case3(T):
    # vanishes at both ends (H^1_0 in time)
    return (
        lambda t: np.sin(np.pi * t / T),
        lambda t: np.pi / T * np.cos(np.pi * t / T),
    )


def _space_modes(n_modes):
    modes = [(lambda th: np.ones_like(th), lambda th: np.zeros_like(th), "1")]
    for k in range(1, n_modes + 1):
        w = 2 * np.pi * k
        modes.append(
            (
                lambda th, w=w: np.cos(w * th),
                lambda th, w=w: -w * np.sin(w * th),
                f"cos{k}",
            )
        )
        modes.append(
            (
                lambda th, w=w: np.sin(w * th),
                lambda th, w=w: w * np.cos(w * th),
                f"sin{k}",
            )
        )
    return modes


def default_test_functions_case2(T: float, n_modes: int = 2) -> list:
    ct, ct_t = _time_cutoff_case2(T)
    out = []
    for s, sx, lab in _space_modes(n_modes):
        out.append(
            TestFunction(
                phi=lambda t, th, s=s, ct=ct: ct(t) * s(th),
                phi_t=lambda t, th, s=s, ct_t=ct_t: ct_t(t) * s(th),
                phi_x=lambda t, th, sx=sx, ct=ct: ct(t) * sx(th),
                label=f"cut*{lab}",
            )
        )
    return out


def default_test_functions_case3(T: float, n_modes: int = 2) -> list:
    ct, ct_t = _time_bump_case3(T)
    out = []
    for s, sx, lab in _space_modes(n_modes):
        out.append(
            TestFunction(
                phi=lambda t, th, s=s, ct=ct: ct(t) * s(th),
                phi_t=lambda t, th, s=s, ct_t=ct_t: ct_t(t) * s(th),
                phi_x=lambda t, th, sx=sx, ct=ct: ct(t) * sx(th),
                label=f"bump*{lab}",
            )
        )
    return out


def _checkpoint_arrays(times, fields):
    t = np.asarray(times, dtype=float)
    F = np.stack([as_values(f).ravel() for f in fields])
    return t, F


def weak_residual_case2(times, u_fields, v_fields, m: int, tests, w0=None):
    """Residuals of the one-phase Stefan weak form for w = u - v^m/m.

    R(phi) = -int w0 phi(0) + int int (-w phi_t + grad w_+ . grad phi);
    space integrals use the step-function embedding (site averages),
    spatial gradients the forward lattice difference evaluated against
    phi_x at the cell edge, time integrals the checkpoint trapezoid.
    """
    t, U = _checkpoint_arrays(times, u_fields)
    _, V = _checkpoint_arrays(times, v_fields)
    N = U.shape[1]
    geom = TorusGeometry(N, 1)
    th = np.arange(N) / N
    th_edge = (np.arange(N) + 0.5) / N
    W = U - V**m / m
    if w0 is None:
        w0 = W[0]
    else:
        w0 = as_values(w0).ravel()
    out = []
    for tf in tests:
        integrand = np.empty(t.size)
        for k in range(t.size):
            w = W[k]
            wp = np.maximum(w, 0.0)
            gw = discrete_gradient(geom, wp)[0]
            integrand[k] = float(
                np.mean(-w * tf.phi_t(t[k], th) + gw * tf.phi_x(t[k], th_edge))
            )
        res = -float(np.mean(w0 * tf.phi(0.0, th))) + float(np.trapezoid(integrand, t))
        out.append(res)
    return np.asarray(out)


def weak_residual_case3(times, u_fields, v_fields, m: int, tests, zeta=None):
    """Residuals of the immovable-regime weak form carrying the defect term.

    R(phi) = int int { -(u^m/m - v) phi_t + (2/m) u^{m/2} grad u^{m/2} . grad phi }
             + 4(m-1)/m^2 <zeta, phi>, with zeta estimated by the squared
    lattice gradient of u^{m/2} unless supplied.
    """
    t, U = _checkpoint_arrays(times, u_fields)
    _, V = _checkpoint_arrays(times, v_fields)
    N = U.shape[1]
    geom = TorusGeometry(N, 1)
    th = np.arange(N) / N
    th_edge = (np.arange(N) + 0.5) / N
    out = []
    for tf in tests:
        integrand = np.empty(t.size)
        for k in range(t.size):
            u = U[k]
            v = V[k]
            um2 = u ** (m / 2.0)
            g = discrete_gradient(geom, um2)[0]
            z = zeta[k] if zeta is not None else g**2
            val = np.mean(-(u**m / m - v) * tf.phi_t(t[k], th))
            val += np.mean((2.0 / m) * um2 * g * tf.phi_x(t[k], th_edge))
            val += (4.0 * (m - 1) / m**2) * np.mean(z * tf.phi(t[k], th_edge))
            integrand[k] = float(val)
        out.append(float(np.trapezoid(integrand, t)))
    return np.asarray(out)


# ---------------------------------------------------------------------------
# trend reports


def trend_verdict(values, decreasing=True) -> str:
    """PASS for a monotone trend, else NON_MONOTONE or DIVERGING.

    A subsequence-only theorem legitimately yields non-monotone sweeps;
    DIVERGING (last value worse than the first) is the failure that
    matters.
    """
    v = list(values)
    if len(v) < 2:
        return "PASS"
    pairs = zip(v, v[1:])
    mono = all(b < a for a, b in pairs) if decreasing else all(b > a for a, b in pairs)
    if mono:
        return "PASS"
    if decreasing and v[-1] >= v[0]:
        return "DIVERGING"
    if not decreasing and v[-1] <= v[0]:
        return "DIVERGING"
    return "NON_MONOTONE"


def case_theorem_report(case: int, sweep: dict) -> dict:
    """Convergence verdicts for one regime's N-sweep.

    `sweep` carries per-N metrics; which trends are asserted depends on
    the regime: vanishing needs sup v and the heat distance to shrink,
    moving needs the oracle distance to shrink, immovable needs the
    residuals to shrink and the front to stay put at the largest N.
    """
    report = {"case": case, "N": list(sweep["N"])}
    verdicts = {}
    if case == 1:
        report["sup_v"] = list(sweep["sup_v"])
        report["heat_distance"] = list(sweep["heat_distance"])
        verdicts["sup_v"] = trend_verdict(sweep["sup_v"])
        verdicts["heat_distance"] = trend_verdict(sweep["heat_distance"])
    elif case == 2:
        report["oracle_distance"] = list(sweep["oracle_distance"])
        verdicts["oracle_distance"] = trend_verdict(sweep["oracle_distance"])
    elif case == 3:
        report["front_displacement"] = list(sweep["front_displacement"])
        report["max_residual"] = list(sweep["max_residual"])
        verdicts["max_residual"] = trend_verdict(sweep["max_residual"])
        band = sweep.get("displacement_band")
        if band is not None:
            report["displacement_band"] = band
            verdicts["front_displacement"] = (
                "PASS" if sweep["front_displacement"][-1] <= band else "FAIL"
            )
    else:
        raise ValueError("case must be 1, 2 or 3")
    report["verdicts"] = verdicts
    report["pass"] = all(v == "PASS" for v in verdicts.values())
    return report
