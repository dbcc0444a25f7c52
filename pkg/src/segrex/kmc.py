"""Exact-event stochastic simulation of the two-species process.

Events are scheduled rejection-free from three aggregated classes:
exchanges of species 1 across discordant forward bonds (rate N^2 per
bond), kills of species 1 and kills of species 2 at doubly occupied
sites (rates K*c_1, K*c_2).  The bond set and the per-site kill rates
are updated incrementally after each event, touching only the sites a
rate polynomial can see.  Species 2 never moves and is never created,
so its occupancies are non-increasing along every trajectory.

Time is macroscopic throughout: the N^2 and K factors sit inside the
event rates, so a horizon T means T units of hydrodynamic time.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import rates as rates_mod
from .lattice import Configuration, TorusGeometry, as_values

__all__ = [
    "SimParams",
    "EmpiricalProfile",
    "StepResult",
    "SimulationResult",
    "SimulationCapError",
    "EngineTemplate",
    "make_template",
    "Simulation",
    "sample_initial",
    "step",
    "simulate",
    "smooth_profile",
    "k_rule",
]

_RECOMPUTE_EVERY = 4096


def k_rule(N: int, delta: float, expression: str = "delta*sqrt(log(N))") -> float:
    """Reaction strength for the N-sweep: delta*sqrt(log N), clamped at 1."""
    import math

    names = {
        "N": N,
        "delta": delta,
        "log": math.log,
        "log2": math.log2,
        "log10": math.log10,
        "sqrt": math.sqrt,
        "exp": math.exp,
        "pow": pow,
        "min": min,
        "max": max,
        "pi": math.pi,
    }
    value = float(eval(expression, {"__builtins__": {}}, names))
    return max(1.0, value)


@dataclass
class SimParams:
    """Geometry, reaction strength, rate pair, horizon and seed."""

    geom: TorusGeometry
    K: float
    c1: rates_mod.RatePolynomial
    c2: rates_mod.RatePolynomial
    T: float
    seed: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be nonnegative")
        if self.T < 0:
            raise ValueError("horizon must be nonnegative")
        if self.c2.species != 2 or self.c1.species != 1:
            raise ValueError("pass (c1, c2) with matching species flags")
        # offsets must not wrap onto the origin at this lattice size:
        # rates may not read the occupancy at the evaluation site
        N = self.geom.N
        for poly in (self.c1, self.c2):
            for t in poly.terms:
                for o in t.offsets1 + t.offsets2:
                    if all(c % N == 0 for c in o):
                        raise ValueError(
                            f"offset {o} wraps to the origin on the N={N} torus"
                        )


@dataclass
class EmpiricalProfile:
    """Per-site averages of the two occupancies, optionally block-smoothed."""

    geom: TorusGeometry
    eta1_mean: np.ndarray
    eta2_mean: np.ndarray
    t: float
    window: int = 1

    def __post_init__(self):
        self.eta1_mean = np.asarray(self.eta1_mean, dtype=float).reshape(self.geom.shape)
        self.eta2_mean = np.asarray(self.eta2_mean, dtype=float).reshape(self.geom.shape)
        for w in (self.eta1_mean, self.eta2_mean):
            if (w < -1e-12).any() or (w > 1 + 1e-12).any():
                raise ValueError("profile values must lie in [0, 1]")


class StepResult(NamedTuple):
    config: Configuration
    dt: float
    absorbed: bool


class SimulationCapError(RuntimeError):
    def __init__(self, n_events, t_reached):
        super().__init__(
            f"event cap exceeded after {n_events} events at simulation time {t_reached}"
        )
        self.n_events = n_events
        self.t_reached = t_reached


@dataclass
class SimulationResult:
    times: list
    configs: list
    n_events: int
    absorbed: bool


@dataclass
class EngineTemplate:
    """Immutable per-(geometry, rates) index tables shared across replicas."""

    geom: TorusGeometry
    c1: rates_mod.RatePolynomial
    c2: rates_mod.RatePolynomial
    fwd: list = field(default_factory=list)  # fwd[j][s] = s + e_j
    bwd: list = field(default_factory=list)
    c1_maps: list = field(default_factory=list)  # per term: (coeff, [maps eta1], [maps eta2])
    c2_maps: list = field(default_factory=list)
    infl_eta1: np.ndarray | None = None  # sites whose kill rates see eta1(y)
    infl_eta2: np.ndarray | None = None


def make_template(geom: TorusGeometry, c1, c2) -> EngineTemplate:
    tpl = EngineTemplate(geom, c1, c2)
    tpl.fwd = [geom.shift_index(j, +1) for j in range(geom.d)]
    tpl.bwd = [geom.shift_index(j, -1) for j in range(geom.d)]

    def term_maps(poly):
        out = []
        for t in poly.terms:
            m1 = [geom.offset_index(o) for o in t.offsets1]
            m2 = [geom.offset_index(o) for o in t.offsets2]
            out.append((t.coeff, m1, m2))
        return out

    tpl.c1_maps = term_maps(c1)
    tpl.c2_maps = term_maps(c2)

    def influence(offset_sets):
        # x is affected by a change at y when y = x + o, i.e. x = y - o
        maps = [np.arange(geom.n_sites)]
        for o in offset_sets:
            maps.append(geom.offset_index(tuple(-c for c in o)))
        return np.unique(np.stack(maps), axis=0)

    offs1 = {o for t in c1.terms for o in t.offsets1} | {
        o for t in c2.terms for o in t.offsets1
    }
    offs2 = {o for t in c1.terms for o in t.offsets2}
    tpl.infl_eta1 = influence(sorted(offs1))
    tpl.infl_eta2 = influence(sorted(offs2))
    return tpl


class Simulation:
    """Owns one trajectory; replicas use independent instances and seeds."""

    def __init__(self, params: SimParams, init: Configuration, rng, template=None):
        if init.geom != params.geom:
            raise ValueError("configuration geometry does not match parameters")
        self.params = params
        self.tpl = template or make_template(params.geom, params.c1, params.c2)
        self.rng = rng
        geom = params.geom
        self.n = geom.n_sites
        self.N2 = float(geom.N**2)
        self.eta1 = init.eta1.ravel().copy()
        self.eta2 = init.eta2.ravel().copy()
        self.t = 0.0
        self.n_events = 0
        self._init_bonds()
        self._init_kill_rates()

    # ---- bond bookkeeping -------------------------------------------------
    def _init_bonds(self):
        n, d = self.n, self.params.geom.d
        self.n_bonds = d * n
        self.active_pos = np.full(self.n_bonds, -1, dtype=np.int64)
        self.active_list = np.empty(self.n_bonds, dtype=np.int64)
        self.n_active = 0
        for j in range(d):
            fwd = self.tpl.fwd[j]
            differ = self.eta1 != self.eta1[fwd]
            for s in np.nonzero(differ)[0]:
                self._bond_add(j * n + int(s))

    def _bond_add(self, b):
        if self.active_pos[b] < 0:
            self.active_list[self.n_active] = b
            self.active_pos[b] = self.n_active
            self.n_active += 1

    def _bond_remove(self, b):
        p = self.active_pos[b]
        if p >= 0:
            last = self.active_list[self.n_active - 1]
            self.active_list[p] = last
            self.active_pos[last] = p
            self.active_pos[b] = -1
            self.n_active -= 1

    def _refresh_bonds_at(self, s):
        n = self.n
        for j in range(self.params.geom.d):
            for b, x, y in (
                (j * n + s, s, int(self.tpl.fwd[j][s])),
                (j * n + int(self.tpl.bwd[j][s]), int(self.tpl.bwd[j][s]), s),
            ):
                if self.eta1[x] != self.eta1[y]:
                    self._bond_add(b)
                else:
                    self._bond_remove(b)

    # ---- kill-rate bookkeeping --------------------------------------------
    def _site_rates(self, x) -> tuple:
        if not (self.eta1[x] and self.eta2[x]):
            return 0.0, 0.0
        K = self.params.K
        c1 = 0.0
        for coeff, m1, m2 in self.tpl.c1_maps:
            prod = coeff
            for m in m1:
                if not self.eta1[m[x]]:
                    prod = 0.0
                    break
            if prod:
                for m in m2:
                    if not self.eta2[m[x]]:
                        prod = 0.0
                        break
            c1 += prod
        c2 = 0.0
        for coeff, m1, _ in self.tpl.c2_maps:
            prod = coeff
            for m in m1:
                if not self.eta1[m[x]]:
                    prod = 0.0
                    break
            c2 += prod
        return K * c1, K * c2

    def _init_kill_rates(self):
        K = self.params.K
        geom = self.params.geom
        cfg = Configuration(geom, self.eta1.reshape(geom.shape), self.eta2.reshape(geom.shape))
        occ = (self.eta1 * self.eta2).astype(float)
        self.r1 = K * rates_mod.eval_config_all(self.params.c1, cfg).ravel() * occ
        self.r2 = K * rates_mod.eval_config_all(self.params.c2, cfg).ravel() * occ
        self.R1 = float(self.r1.sum())
        self.R2 = float(self.r2.sum())
        self._since_recompute = 0

    def _update_kills_after(self, y, species):
        sites = self.tpl.infl_eta1[:, y] if species == 1 else self.tpl.infl_eta2[:, y]
        for x in sites:
            x = int(x)
            new1, new2 = self._site_rates(x)
            self.R1 += new1 - self.r1[x]
            self.R2 += new2 - self.r2[x]
            self.r1[x] = new1
            self.r2[x] = new2

    def _maybe_recompute_totals(self):
        self._since_recompute += 1
        if self._since_recompute >= _RECOMPUTE_EVERY:
            self.R1 = float(self.r1.sum())
            self.R2 = float(self.r2.sum())
            self._since_recompute = 0

    # ---- event machinery ----------------------------------------------------
    def total_rate(self) -> float:
        return self.N2 * self.n_active + self.R1 + self.R2

    def draw_event(self):
        """Sample (kind, site(s)) of the next event without applying it."""
        R_ex = self.N2 * self.n_active
        z = self.rng.random() * (R_ex + self.R1 + self.R2)
        if z < R_ex and self.n_active > 0:
            k = min(int(z / self.N2), self.n_active - 1)
            b = int(self.active_list[k])
            j, s = divmod(b, self.n)
            return ("exchange", s, int(self.tpl.fwd[j][s]))
        # kills are rare; use exact cumulative sums (drift-free selection)
        z = max(z - R_ex, 0.0)
        cum1 = np.cumsum(self.r1)
        tot1 = float(cum1[-1])
        if z < tot1:
            x = int(np.searchsorted(cum1, z, side="right"))
            return ("kill1", min(x, self.n - 1), 0)
        cum2 = np.cumsum(self.r2)
        tot2 = float(cum2[-1])
        z = min(z - tot1, tot2 * (1.0 - 1e-16))
        x = int(np.searchsorted(cum2, z, side="right"))
        return ("kill2", min(x, self.n - 1), 0)

    def apply_event(self, event):
        kind, a, b = event
        if kind == "exchange":
            self.eta1[a], self.eta1[b] = self.eta1[b], self.eta1[a]
            self._refresh_bonds_at(a)
            self._refresh_bonds_at(b)
            self._update_kills_after(a, 1)
            self._update_kills_after(b, 1)
        elif kind == "kill1":
            self.eta1[a] = 0
            self._refresh_bonds_at(a)
            self._update_kills_after(a, 1)
        else:
            self.eta2[a] = 0
            self._update_kills_after(a, 2)
        self.n_events += 1
        self._maybe_recompute_totals()

    def advance_to(self, t_target, max_events=None) -> bool:
        """Run the jump chain to t_target; returns True if absorbed."""
        while True:
            R = self.total_rate()
            if R <= 0.0:
                self.t = t_target
                return True
            dt = self.rng.exponential() / R
            if self.t + dt > t_target:
                self.t = t_target
                return False
            self.t += dt
            self.apply_event(self.draw_event())
            if max_events is not None and self.n_events > max_events:
                raise SimulationCapError(self.n_events, self.t)

    def config(self) -> Configuration:
        geom = self.params.geom
        return Configuration(
            geom, self.eta1.reshape(geom.shape).copy(), self.eta2.reshape(geom.shape).copy()
        )


def sample_initial(u0, v0, seed) -> Configuration:
    """Independent Bernoulli occupancies with the given per-site means."""
    u0 = np.asarray(as_values(u0), dtype=float)
    v0 = np.asarray(as_values(v0), dtype=float)
    if (u0 < 0).any() or (u0 > 1).any() or (v0 < 0).any() or (v0 > 1).any():
        raise ValueError("initial means must lie in [0, 1]")
    if u0.shape != v0.shape:
        raise ValueError("mean fields must share a shape")
    d = u0.ndim
    geom = TorusGeometry(u0.shape[0], d)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(
        np.random.Philox(seed)
    )
    e1 = (rng.random(u0.shape) < u0).astype(np.uint8)
    e2 = (rng.random(v0.shape) < v0).astype(np.uint8)
    return Configuration(geom, e1, e2)


def step(cfg: Configuration, params: SimParams, rng, template=None) -> StepResult:
    """One event of the continuous-time jump chain."""
    sim = Simulation(params, cfg, rng, template=template)
    R = sim.total_rate()
    if R <= 0.0:
        return StepResult(cfg.copy(), np.inf, True)
    dt = rng.exponential() / R
    sim.apply_event(sim.draw_event())
    return StepResult(sim.config(), dt, False)


def simulate(
    params: SimParams,
    init: Configuration,
    observer_times,
    template=None,
    max_events: int = 200_000_000,
) -> SimulationResult:
    """Run to each observer time and snapshot the configuration there.

    Bit-reproducible for a fixed seed: all randomness flows from one
    counter-based Philox stream seeded by params.seed.
    """
    observer_times = sorted(float(t) for t in observer_times)
    if observer_times and (observer_times[0] < 0 or observer_times[-1] > params.T + 1e-12):
        raise ValueError("observer times must lie in [0, T]")
    rng = np.random.Generator(np.random.Philox(params.seed))
    sim = Simulation(params, init, rng, template=template)
    times, configs = [], []
    absorbed = False
    for t_obs in observer_times:
        if t_obs > sim.t:
            absorbed = sim.advance_to(t_obs, max_events=max_events) or absorbed
        times.append(t_obs)
        configs.append(sim.config())
    return SimulationResult(times, configs, sim.n_events, absorbed)


def smooth_profile(cfg: Configuration, l: int, t: float = 0.0) -> EmpiricalProfile:
    """Block average of both occupancies over windows x + [0, l-1]^d."""
    geom = cfg.geom
    if not 1 <= l <= geom.N:
        raise ValueError(f"window must satisfy 1 <= l <= {geom.N}")
    from .flows import local_averages

    _, m1 = local_averages(cfg.eta1.astype(float), l)
    _, m2 = local_averages(cfg.eta2.astype(float), l)
    return EmpiricalProfile(geom, m1, m2, t, window=l)
