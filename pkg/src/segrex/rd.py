"""Positivity-preserving solver for the lattice reaction-diffusion system.

The system couples a diffusing density u (discrete Laplacian) to a
static density v through annihilation terms -K c_i u v.  Stepping is
Strang: exact exponential reaction half-steps (coefficients frozen at
the substep start) around one explicit Euler diffusion step on u, which
keeps both densities inside [0,1] unconditionally in the reaction part
and confines the CFL constraint to diffusion.  Every run carries
monitors for the box bounds, the exponential lower bounds, the Dirichlet
energy budget (<= 1/2), the reaction budget (<= 1) and the gradient
envelope K(C0 + C sqrt(t)).
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import rates as rates_mod
from .lattice import TorusGeometry, as_values, discrete_gradient, discrete_laplacian, heat_semigroup

__all__ = [
    "InitialData",
    "SemiDiscreteState",
    "Trajectory",
    "RdMonitorError",
    "EnvelopeError",
    "build_initial",
    "rd_step",
    "solve",
    "energy_functional",
    "reaction_integral",
    "gradient_monitor",
    "GradientFit",
    "comparison_check",
    "chain_rule_defect",
    "case1_subsolution",
    "case1_envelope",
    "EnvelopeResult",
    "default_dt",
]


class RdMonitorError(RuntimeError):
    pass


class EnvelopeError(RuntimeError):
    pass


@dataclass
class InitialData:
    """Sampled, floored and mollified initial densities with (A1)-style constants."""

    geom: TorusGeometry
    u0: np.ndarray
    v0: np.ndarray
    C0: float
    C1: float
    C2: float
    K: float
    supp_v0: np.ndarray  # sites where the raw v profile is positive
    delta1: float = 0.0
    delta2: float = 0.0

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float).reshape(self.geom.shape)
        self.v0 = np.asarray(self.v0, dtype=float).reshape(self.geom.shape)
        self.delta1 = float(min(self.u0.min(), 1.0 - self.u0.max()))
        self.delta2 = float(min(self.v0.min(), 1.0 - self.v0.max()))


@dataclass
class SemiDiscreteState:
    geom: TorusGeometry
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).reshape(self.geom.shape)
        self.v = np.asarray(self.v, dtype=float).reshape(self.geom.shape)
        for name, w in (("u", self.u), ("v", self.v)):
            if (w < 0).any() or (w > 1).any():
                raise ValueError(f"{name} must lie in [0, 1]")


def _interface_positions_1d(mask: np.ndarray) -> list:
    """Midpoints (in theta units) of sign changes of a support mask."""
    N = mask.size
    out = []
    for i in range(N):
        if mask[i] != mask[(i + 1) % N]:
            out.append((i + 0.5) / N)
    return out


def _band_linearize_1d(
    values: np.ndarray, mask_pos: np.ndarray, K: float, grad_cap: float
) -> np.ndarray:
    """Linear interpolation over a chord of total width 1/(2K) per support edge.

    Applied only across edges where the sampled values actually jump
    (lattice gradient above `grad_cap`); smooth profiles pass through
    untouched.  Anchor sites at distance >= 1/(4K) from every treated
    edge keep their sampled values, so the chord spans at least 1/(2K)
    and its gradient stays below (jump height) * 2K regardless of N.
    """
    N = values.size
    if K <= 0 or mask_pos.all() or not mask_pos.any():
        return values
    positions = []
    for p in _interface_positions_1d(mask_pos):
        i = int(p * N - 0.5) % N
        if abs(values[(i + 1) % N] - values[i]) * N > grad_cap:
            positions.append(p)
    if not positions:
        return values
    th = np.arange(N) / N
    width = 1.0 / (4.0 * K)
    dist = np.full(N, np.inf)
    for p in positions:
        d = np.abs(th - p)
        dist = np.minimum(dist, np.minimum(d, 1.0 - d))
    banded = dist < width
    if not banded.any() or banded.all():
        return values
    out = values.copy()
    anchors = np.nonzero(~banded)[0]
    for i in np.nonzero(banded)[0]:
        right = anchors[np.searchsorted(anchors, i) % anchors.size]
        left = anchors[np.searchsorted(anchors, i) - 1]
        span = (right - left) % N
        frac = ((i - left) % N) / span
        out[i] = (1 - frac) * values[left] + frac * values[right]
    return out


def build_initial(
    u0_profile,
    v0_profile,
    geom: TorusGeometry,
    K: float,
    C1: float = 1.0,
    C2: float | None = None,
    product_tol: float = 1e-12,
) -> InitialData:
    """Sample continuum profiles onto the lattice the way the theory wants.

    Profiles are callables on the unit torus with disjoint supports
    (pointwise product below `product_tol`).  Values are clamped into
    [exp(-C1 K), C2]; in d=1 the v profile is re-linearized over a band
    of half-width 1/(2K) around each support edge so its lattice
    gradient stays below 2 C2 K.
    """
    theta = geom.theta()
    u_raw = np.array([float(u0_profile(th if geom.d > 1 else th[0])) for th in theta])
    v_raw = np.array([float(v0_profile(th if geom.d > 1 else th[0])) for th in theta])
    if (u_raw < 0).any() or (v_raw < 0).any():
        raise ValueError("profiles must be nonnegative")
    if (np.abs(u_raw * v_raw) > product_tol).any():
        raise ValueError("profiles must have disjoint supports (u0*v0 = 0)")
    if C2 is None:
        C2 = max(u_raw.max(), v_raw.max(), 0.5)
    if not 0 < C2 < 1:
        raise ValueError("C2 must lie in (0, 1)")
    if C1 <= 0 or K < 0:
        raise ValueError("need C1 > 0 and K >= 0")
    floor = np.exp(-C1 * max(K, 0.0))
    supp_v0 = (v_raw > 0).reshape(geom.shape)

    u_moll, v_moll = u_raw.copy(), v_raw.copy()
    if geom.d == 1:
        # a jump at a support edge of either field would give the lattice
        # gradient order N; the band chord caps it at 2 C2 K
        grad_cap = 2.0 * C2 * max(K, 1.0)
        v_moll = _band_linearize_1d(v_raw, v_raw > 0, K, grad_cap)
        u_moll = _band_linearize_1d(u_raw, u_raw > 0, K, grad_cap)

    u0 = np.clip(u_moll, floor, C2).reshape(geom.shape)
    v0 = np.clip(v_moll, floor, C2).reshape(geom.shape)

    sup_grad = 0.0
    for w in (u0, v0):
        g = discrete_gradient(geom, w)
        sup_grad = max(sup_grad, float(np.sqrt((g**2).sum(axis=0)).max()))
    C0 = max(2.0 * C2, sup_grad / max(K, 1.0))
    return InitialData(geom, u0, v0, C0=C0, C1=C1, C2=C2, K=K, supp_v0=supp_v0)


def default_dt(geom: TorusGeometry, K: float) -> float:
    """Stability contract: an eighth of both the CFL and reaction scales."""
    dt = 1.0 / (8.0 * geom.d * geom.N**2)
    if K > 0:
        dt = min(dt, 1.0 / (8.0 * K))
    return dt


def _reaction_half(geom, u, v, K, c1, c2, half_dt):
    """Exact exponential decay with coefficients frozen at the substep start."""
    if K == 0.0:
        return u, v
    c1x = rates_mod.eval_field_all(c1, u, v)
    c2x = rates_mod.eval_field_all(c2, u, v)
    u_new = u * np.exp(-K * c1x * v * half_dt)
    v_new = v * np.exp(-K * c2x * u * half_dt)
    return u_new, v_new


def rd_step(state: SemiDiscreteState, dt: float, params) -> SemiDiscreteState:
    """One Strang step: half reaction, explicit diffusion on u, half reaction."""
    geom = state.geom
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > 1.0 / (4.0 * geom.d * geom.N**2) + 1e-15:
        raise ValueError(f"dt={dt} violates the diffusion stability contract")
    u, v = _reaction_half(geom, state.u, state.v, params.K, params.c1, params.c2, dt / 2)
    u = u + dt * discrete_laplacian(geom, u)
    u, v = _reaction_half(geom, u, v, params.K, params.c1, params.c2, dt / 2)
    if (u < -1e-12).any() or (u > 1 + 1e-12).any():
        raise RdMonitorError(f"stability violation: u left [0,1] at t={state.t + dt}")
    return SemiDiscreteState(geom, np.clip(u, 0.0, 1.0), v, state.t + dt)


@dataclass
class Trajectory:
    """Checkpoint fields plus dense monitor series of one solve."""

    geom: TorusGeometry
    K: float
    times: list
    u: list
    v: list
    monitor_t: np.ndarray
    dirichlet: np.ndarray
    reaction: np.ndarray
    sup_grad_u: np.ndarray
    init: InitialData | None = None
    dt: float = 0.0
    monitor_report: dict = dc_field(default_factory=dict)


def _dirichlet_sum(geom, u):
    g = discrete_gradient(geom, u)
    return float((g**2).sum()) / geom.n_sites


def _sup_grad(geom, u):
    g = discrete_gradient(geom, u)
    return float(np.sqrt((g**2).sum(axis=0)).max())


def solve(
    init: InitialData,
    params,
    T: float,
    checkpoints,
    dt: float | None = None,
    monitors: bool = True,
    lower_bound_tol: float = 1e-9,
    box_tol: float = 1e-12,
    diffusion: str = "euler",
) -> Trajectory:
    """Advance to T, storing fields at the checkpoints and monitors densely.

    Monitors abort the run with a diagnostic on breach: the [0,1] box is
    enforced at `box_tol`, the exponential lower bounds
    delta_i exp(-K M_i t) at `lower_bound_tol`.

    diffusion="euler" is the stepping contract (explicit step under the
    CFL cap).  diffusion="spectral" replaces the Euler substep by the
    exact lattice heat semigroup, removing diffusion time-integration
    error; the splitting then keeps the solution below the plain heat
    evolution to machine precision, which the sub/super-solution checks
    of the vanishing regime need at their 1e-6 tolerance.
    """
    geom = init.geom
    if diffusion not in ("euler", "spectral"):
        raise ValueError("diffusion must be 'euler' or 'spectral'")
    if dt is None:
        dt = default_dt(geom, params.K)
        if diffusion == "spectral":
            # no CFL constraint; splitting error alone sets the step
            dt = min(1.0 / (8.0 * max(params.K, 1.0)), T / 2000 if T > 0 else dt)
    checkpoints = sorted(set(float(t) for t in checkpoints))
    if checkpoints and (checkpoints[0] < 0 or checkpoints[-1] > T + 1e-12):
        raise ValueError("checkpoints must lie in [0, T]")
    if T not in checkpoints:
        checkpoints.append(T)
    M1 = rates_mod.sup_rate(params.c1)
    M2 = rates_mod.sup_rate(params.c2)
    u = init.u0.copy()
    v = init.v0.copy()
    t = 0.0
    times, us, vs = [], [], []
    mon_t = [0.0]
    mon_dir = [_dirichlet_sum(geom, u)]
    mon_rea = [
        params.K * float((rates_mod.eval_field_all(params.c1, u, v) * u * v).sum()) / geom.n_sites
    ]
    mon_grad = [_sup_grad(geom, u)]
    report = {"breach": None, "u_min": float(u.min()), "u_max": float(u.max()),
              "v_min": float(v.min()), "v_max": float(v.max())}

    def check(u, v, t):
        report["u_min"] = min(report["u_min"], float(u.min()))
        report["u_max"] = max(report["u_max"], float(u.max()))
        report["v_min"] = min(report["v_min"], float(v.min()))
        report["v_max"] = max(report["v_max"], float(v.max()))
        if not monitors:
            return
        if (u < -box_tol).any() or (u > 1 + box_tol).any() or (v < -box_tol).any() or (
            v > 1 + box_tol
        ).any():
            raise RdMonitorError(f"box monitor breach at t={t}")
        lb1 = init.delta1 * np.exp(-params.K * M1 * t)
        lb2 = init.delta2 * np.exp(-params.K * M2 * t)
        if (u < lb1 - lower_bound_tol).any():
            raise RdMonitorError(f"u lower-bound monitor breach at t={t}")
        if (v < lb2 - lower_bound_tol).any():
            raise RdMonitorError(f"v lower-bound monitor breach at t={t}")
        if (u > 1 - init.delta1 + lower_bound_tol).any():
            raise RdMonitorError(f"u upper-bound monitor breach at t={t}")

    check(u, v, 0.0)
    if checkpoints and checkpoints[0] == 0.0:
        times.append(0.0)
        us.append(u.copy())
        vs.append(v.copy())
        checkpoints = checkpoints[1:]

    for t_next in checkpoints:
        seg = t_next - t
        n_steps = max(1, int(np.ceil(seg / dt - 1e-12)))
        h = seg / n_steps
        for _ in range(n_steps):
            u, v = _reaction_half(geom, u, v, params.K, params.c1, params.c2, h / 2)
            if diffusion == "euler":
                u = u + h * discrete_laplacian(geom, u)
            else:
                u = heat_semigroup(geom, h, u)
            u, v = _reaction_half(geom, u, v, params.K, params.c1, params.c2, h / 2)
            u = np.clip(u, 0.0, 1.0)
            t += h
            check(u, v, t)
            mon_t.append(t)
            mon_dir.append(_dirichlet_sum(geom, u))
            mon_rea.append(
                params.K
                * float((rates_mod.eval_field_all(params.c1, u, v) * u * v).sum())
                / geom.n_sites
            )
            mon_grad.append(_sup_grad(geom, u))
        t = t_next
        times.append(t)
        us.append(u.copy())
        vs.append(v.copy())

    return Trajectory(
        geom=geom,
        K=params.K,
        times=times,
        u=us,
        v=vs,
        monitor_t=np.asarray(mon_t),
        dirichlet=np.asarray(mon_dir),
        reaction=np.asarray(mon_rea),
        sup_grad_u=np.asarray(mon_grad),
        init=init,
        dt=dt,
        monitor_report=report,
    )


def energy_functional(traj: Trajectory) -> float:
    """Time integral of the mean squared lattice gradient (trapezoidal)."""
    return float(np.trapezoid(traj.dirichlet, traj.monitor_t))


def reaction_integral(traj: Trajectory) -> float:
    """Time integral of the mean annihilation term (trapezoidal)."""
    return float(np.trapezoid(traj.reaction, traj.monitor_t))


@dataclass
class GradientFit:
    C0: float
    fitted_C: float
    ok: bool
    sup_over_t: np.ndarray


def gradient_monitor(traj: Trajectory, C0: float | None = None, cap: float = 100.0) -> GradientFit:
    """Smallest C with sup|grad u(t)| <= K (C0 + C sqrt(t)) over the run."""
    if C0 is None:
        C0 = traj.init.C0
    K = max(traj.K, 1.0)
    t = traj.monitor_t
    excess = traj.sup_grad_u / K - C0
    with np.errstate(divide="ignore", invalid="ignore"):
        cs = np.where(t > 0, excess / np.sqrt(np.where(t > 0, t, 1.0)), 0.0)
    fitted = max(0.0, float(cs.max()))
    return GradientFit(C0=C0, fitted_C=fitted, ok=fitted <= cap, sup_over_t=traj.sup_grad_u)


def comparison_check(sub, traj: Trajectory, sup, tol: float = 1e-9):
    """Assert ordering sub <= u <= sup at every checkpoint.

    `sub`/`sup` are lists of fields aligned with traj.times (or a single
    field applied at all times).  Returns (ok, first_violation).
    """
    n = len(traj.times)

    def at(seq, k):
        if isinstance(seq, (list, tuple)):
            return as_values(seq[k])
        return as_values(seq)

    for k, t in enumerate(traj.times):
        u = traj.u[k]
        lo = at(sub, k)
        hi = at(sup, k)
        if (u - lo < -tol).any():
            x = int(np.argmin(u - lo))
            return False, ("sub", t, x, float((u - lo).min()))
        if (hi - u < -tol).any():
            x = int(np.argmin(hi - u))
            return False, ("super", t, x, float((hi - u).min()))
    return True, None


def chain_rule_defect(geom: TorusGeometry, u, alpha: float) -> float:
    """sup_x |grad(u^alpha) - alpha u^(alpha-1) grad u| (lattice gradients)."""
    u = as_values(u)
    g_pow = discrete_gradient(geom, u**alpha)
    g_lin = alpha * u ** (alpha - 1) * discrete_gradient(geom, u)
    diff = g_pow - g_lin
    return float(np.sqrt((diff**2).sum(axis=0)).max())


def case1_subsolution(geom: TorusGeometry, delta: float, u0, t: float) -> np.ndarray:
    """exp(-delta t) times the lattice heat semigroup applied to u0 (exact)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return np.exp(-delta * t) * heat_semigroup(geom, t, u0)


@dataclass
class EnvelopeResult:
    t_star: float
    t_K: float
    delta1: float
    delta2: float
    threshold_reached: bool
    width_bound: float
    eval_times: list
    rho_minus: list
    rho_plus: list
    gamma_at_tK: float


def case1_envelope(
    init: InitialData,
    params,
    m: int,
    T: float,
    delta1: float,
    eval_times,
    scan_points: int = 1000,
) -> EnvelopeResult:
    """Sub/super-solution sandwich for the vanishing-interface regime.

    The super-solution is the plain lattice heat evolution of u0.  The
    sub-solution damps it by delta1 up to t_K and by delta2 afterwards,
    where t_K is the first time the running integral of the spatial
    minimum of the damped heat solution reaches K^(-1/4) (capped at the
    small-time horizon t* of the sign condition) and
    delta2 = 4 e^{-2} sup(v0) / (K gamma(t_K)^2).
    """
    if delta1 <= np.exp(-1.0):
        raise ValueError("delta1 must exceed 1/e")
    geom = init.geom
    K = params.K
    if K <= 0:
        raise ValueError("the envelope construction needs K > 0")
    ts = np.linspace(0.0, T, scan_points + 1)
    supp = init.supp_v0.ravel()
    mins = np.empty(ts.size)
    cond_ok = np.ones(ts.size, dtype=bool)
    for k, tau in enumerate(ts):
        heat = heat_semigroup(geom, tau, init.u0)
        u_del = np.exp(-delta1 * tau) * heat
        mins[k] = float(u_del.min())
        if supp.any():
            du = discrete_laplacian(geom, u_del) - delta1 * u_del
            cond = (m - 1) * u_del ** (m - 3) * du - 1.0
            cond_ok[k] = bool((cond.ravel()[supp] <= 0).all())
    if not cond_ok[0] or (ts.size > 1 and not cond_ok[1]):
        raise EnvelopeError("small-time sign condition fails immediately; t* not found")
    bad = np.nonzero(~cond_ok)[0]
    idx_star = int(bad[0] - 1) if bad.size else ts.size - 1
    t_star = float(ts[idx_star])

    gamma = np.concatenate([[0.0], np.cumsum((mins[1:] + mins[:-1]) / 2 * np.diff(ts))])
    target = K ** (-0.25)
    reached = np.nonzero(gamma[: idx_star + 1] >= target)[0]
    if reached.size:
        k = int(reached[0])
        if k == 0 or gamma[k] == target:
            t_K = float(ts[k])
            gamma_tK = float(gamma[k])
        else:
            frac = (target - gamma[k - 1]) / (gamma[k] - gamma[k - 1])
            t_K = float(ts[k - 1] + frac * (ts[k] - ts[k - 1]))
            gamma_tK = target
        threshold_reached = True
    else:
        t_K = t_star
        gamma_tK = float(gamma[idx_star])
        threshold_reached = False
    if gamma_tK <= 0:
        raise EnvelopeError("gamma(t_K) vanished; sub-solution restart undefined")
    delta2 = 4.0 * np.exp(-2.0) * float(init.v0.max()) / (K * gamma_tK**2)

    eval_times = sorted(float(t) for t in eval_times)
    rho_minus, rho_plus = [], []
    for t in eval_times:
        heat = heat_semigroup(geom, t, init.u0)
        rho_plus.append(heat)
        damp = delta1 * min(t, t_K) + delta2 * max(t - t_K, 0.0)
        rho_minus.append(np.exp(-damp) * heat)
    width_bound = 2.0 * delta1 * t_K + T * delta2
    return EnvelopeResult(
        t_star=t_star,
        t_K=t_K,
        delta1=delta1,
        delta2=delta2,
        threshold_reached=threshold_reached,
        width_bound=width_bound,
        eval_times=eval_times,
        rho_minus=rho_minus,
        rho_plus=rho_plus,
        gamma_at_tK=gamma_tK,
    )
