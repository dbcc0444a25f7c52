"""Exact distribution evolution on tiny lattices and entropy functionals.

States of the two-species configuration space are enumerated as
(eta1 bits, eta2 bits): site s (row-major flat index) is bit s, and the
state index is i1 * 2^n + i2 for n sites.  The generator combines
exchange moves of species 1 along forward bonds at rate N^2 with
single-site kills at doubly occupied sites at rate K * c_i.  Everything
here is exact linear algebra, capped at n <= 8 sites (65536 states).
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import rates as rates_mod
from .lattice import Configuration, TorusGeometry, as_values

__all__ = [
    "MAX_SITES",
    "state_index",
    "config_to_index",
    "index_to_config",
    "generator_matrix",
    "evolve_distribution",
    "ProductBernoulli",
    "relative_entropy",
    "dirichlet_energy",
    "adjoint_unit",
    "yau_integrand",
    "EntropySeries",
    "entropy_trajectory",
]

MAX_SITES = 8


def _check_size(geom: TorusGeometry) -> int:
    n = geom.n_sites
    if n > MAX_SITES:
        raise ValueError(f"state space 4^{n} exceeds the exact-solve cap (n <= {MAX_SITES})")
    return n


def state_index(bits1: int, bits2: int, n: int) -> int:
    return (bits1 << n) | bits2


def config_to_index(cfg: Configuration) -> int:
    n = cfg.geom.n_sites
    e1 = cfg.eta1.ravel()
    e2 = cfg.eta2.ravel()
    i1 = int(sum(int(b) << s for s, b in enumerate(e1)))
    i2 = int(sum(int(b) << s for s, b in enumerate(e2)))
    return state_index(i1, i2, n)


def index_to_config(geom: TorusGeometry, idx: int) -> Configuration:
    n = geom.n_sites
    i1, i2 = idx >> n, idx & ((1 << n) - 1)
    e1 = np.array([(i1 >> s) & 1 for s in range(n)], dtype=np.uint8)
    e2 = np.array([(i2 >> s) & 1 for s in range(n)], dtype=np.uint8)
    return Configuration(geom, e1, e2)


def _term_indicator(i_bits: np.ndarray, mask: int) -> np.ndarray:
    return (i_bits & mask) == mask


def _rate_masks(geom: TorusGeometry, poly) -> list:
    """Per-site bit masks for each monomial: (coeff, mask1, mask2) at every x."""
    n = geom.n_sites
    out = []
    for x in range(n):
        per_term = []
        for t in poly.terms:
            m1 = 0
            for o in t.offsets1:
                m1 |= 1 << int(geom.offset_index(o)[x])
            m2 = 0
            for o in t.offsets2:
                m2 |= 1 << int(geom.offset_index(o)[x])
            per_term.append((t.coeff, m1, m2))
        out.append(per_term)
    return out


def generator_matrix(params) -> sp.csr_matrix:
    """Sparse rate matrix L with L[s, s'] the jump rate s -> s'.

    Off-diagonals are nonnegative and rows sum to zero.  Exchange entries
    carry rate N^2 per forward bond with differing eta1; kill entries
    carry K * c_i at doubly occupied sites.
    """
    geom = params.geom
    n = _check_size(geom)
    K = params.K
    n_states = 4**n
    s_all = np.arange(n_states, dtype=np.int64)
    i1 = s_all >> n
    i2 = s_all & ((1 << n) - 1)

    rows, cols, vals = [], [], []

    # exchanges of species 1 along forward bonds
    for j in range(geom.d):
        fwd = params.geom.shift_index(j)
        for x in range(n):
            y = int(fwd[x])
            bx = (i1 >> x) & 1
            by = (i1 >> y) & 1
            differ = bx != by
            if not differ.any():
                continue
            src = s_all[differ]
            flip = (1 << x) | (1 << y)
            dst = ((i1[differ] ^ flip) << n) | i2[differ]
            rows.append(src)
            cols.append(dst)
            vals.append(np.full(src.size, float(geom.N**2)))

    # kills at doubly occupied sites
    masks1 = _rate_masks(geom, params.c1)
    masks2 = _rate_masks(geom, params.c2)
    if K > 0:
        for x in range(n):
            occ = (((i1 >> x) & 1) & ((i2 >> x) & 1)).astype(bool)
            if not occ.any():
                continue
            src = s_all[occ]
            c1v = np.zeros(src.size)
            for coeff, m1, m2 in masks1[x]:
                c1v += coeff * (
                    _term_indicator(i1[occ], m1) & _term_indicator(i2[occ], m2)
                )
            c2v = np.zeros(src.size)
            for coeff, m1, m2 in masks2[x]:
                c2v += coeff * _term_indicator(i1[occ], m1)
            dst1 = ((i1[occ] ^ (1 << x)) << n) | i2[occ]
            dst2 = (i1[occ] << n) | (i2[occ] ^ (1 << x))
            keep1 = c1v > 0
            keep2 = c2v > 0
            rows.extend([src[keep1], src[keep2]])
            cols.extend([dst1[keep1], dst2[keep2]])
            vals.extend([K * c1v[keep1], K * c2v[keep2]])

    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0)
    L = sp.coo_matrix((vals, (rows, cols)), shape=(n_states, n_states)).tocsr()
    diag = -np.asarray(L.sum(axis=1)).ravel()
    return (L + sp.diags(diag)).tocsr()


def evolve_distribution(L: sp.csr_matrix, mu0, times, rtol=1e-10, atol=1e-14):
    """Solve the forward equation dmu/dt = L^T mu at the requested times.

    Stiff adaptive integration (BDF with the sparse transpose as the
    Jacobian); the output is sanity-checked for mass conservation and
    renormalized against roundoff drift.
    """
    mu0 = np.asarray(mu0, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if (times < 0).any():
        raise ValueError("times must be nonnegative")
    LT = L.T.tocsr()
    order = np.argsort(times)
    sorted_times = times[order]
    out = np.empty((times.size, mu0.size))
    if sorted_times[0] == 0.0:
        pass
    t_end = float(sorted_times[-1])
    if t_end == 0.0:
        return np.tile(mu0, (times.size, 1))
    eval_times = sorted_times[sorted_times > 0]
    sol = solve_ivp(
        lambda _t, y: LT @ y,
        (0.0, t_end),
        mu0,
        method="BDF",
        t_eval=eval_times,
        jac=LT,
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise RuntimeError(f"distribution evolution failed: {sol.message}")
    k = 0
    for pos, t in zip(order, sorted_times):
        if t == 0.0:
            out[pos] = mu0
        else:
            mu = sol.y[:, k]
            k += 1
            drift = abs(mu.sum() - 1.0)
            if drift > 1e-8:
                raise RuntimeError(f"mass conservation violated by {drift}")
            mu = np.clip(mu, 0.0, None)
            out[pos] = mu / mu.sum()
    return out


@dataclass
class ProductBernoulli:
    """Site-independent Bernoulli reference measure with means (u, v)."""

    geom: TorusGeometry
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = as_values(self.u).reshape(self.geom.shape)
        self.v = as_values(self.v).reshape(self.geom.shape)
        for name, w in (("u", self.u), ("v", self.v)):
            if (w <= 0).any() or (w >= 1).any():
                raise ValueError(f"{name} must lie strictly inside (0, 1) for full support")

    def log_state_probs(self) -> np.ndarray:
        n = _check_size(self.geom)
        s_all = np.arange(4**n, dtype=np.int64)
        i1 = s_all >> n
        i2 = s_all & ((1 << n) - 1)
        bits1 = ((i1[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        bits2 = ((i2[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        lu = np.log(self.u.ravel())
        l1u = np.log1p(-self.u.ravel())
        lv = np.log(self.v.ravel())
        l1v = np.log1p(-self.v.ravel())
        return bits1 @ lu + (1 - bits1) @ l1u + bits2 @ lv + (1 - bits2) @ l1v

    def state_probs(self) -> np.ndarray:
        return np.exp(self.log_state_probs())

    def sample_config(self, rng) -> Configuration:
        e1 = (rng.random(self.geom.shape) < self.u).astype(np.uint8)
        e2 = (rng.random(self.geom.shape) < self.v).astype(np.uint8)
        return Configuration(self.geom, e1, e2)


def relative_entropy(mu, nu) -> float:
    """H(mu | nu) = sum mu log(mu/nu) with 0 log 0 = 0."""
    mu = np.asarray(mu, dtype=float)
    if isinstance(nu, ProductBernoulli):
        log_nu = nu.log_state_probs()
    else:
        nu = np.asarray(nu, dtype=float)
        if ((nu <= 0) & (mu > 0)).any():
            return np.inf
        with np.errstate(divide="ignore"):
            log_nu = np.log(nu)
    pos = mu > 0
    h = float((mu[pos] * (np.log(mu[pos]) - log_nu[pos])).sum())
    return max(h, 0.0)


def _bond_permutations(geom: TorusGeometry):
    n = _check_size(geom)
    s_all = np.arange(4**n, dtype=np.int64)
    i1 = s_all >> n
    i2 = s_all & ((1 << n) - 1)
    perms = []
    for j in range(geom.d):
        fwd = geom.shift_index(j)
        for x in range(n):
            y = int(fwd[x])
            differ = (((i1 >> x) ^ (i1 >> y)) & 1).astype(np.int64)
            flip = (1 << x) | (1 << y)
            perms.append(((i1 ^ (differ * flip)) << n) | i2)
    return perms


def dirichlet_energy(f, nu, geom: TorusGeometry) -> float:
    """Exchange Dirichlet energy (1/4) sum_bonds E_nu[(f(eta^{x,y}) - f)^2].

    Zero exactly when f is invariant under every species-1 exchange on
    the support of nu; quadratic in perturbations around a constant.
    """
    f = np.asarray(f, dtype=float)
    nu_vec = nu.state_probs() if isinstance(nu, ProductBernoulli) else np.asarray(nu, dtype=float)
    total = 0.0
    for perm in _bond_permutations(geom):
        diff = f[perm] - f
        total += float((nu_vec * diff**2).sum())
    return 0.25 * total


def adjoint_unit(L: sp.csr_matrix, nu_vec) -> np.ndarray:
    """(L^{*,nu} 1)(s) = sum_{s'} [nu(s') L(s',s) / nu(s)] - sum_{s'} L(s,s').

    Finite-state adjoint of the generator in L^2(nu) applied to the
    constant function 1; used to cross-check the closed-form integrand.
    """
    nu_vec = np.asarray(nu_vec, dtype=float)
    diag = L.diagonal()
    off = L - sp.diags(diag)
    inflow = off.T @ nu_vec
    return inflow / nu_vec + diag


def yau_integrand(cfg: Configuration, u, v, params, pairing: str = "consistent"):
    """Closed-form exchange and reaction remainders (V_K, V_G).

    The scaled fluctuation fields divide the centred occupancies by the
    incompressibility chi(rho) = rho(1-rho).  `pairing="consistent"`
    couples species-i fluctuations to chi of the species-i density (the
    choice under which the linear terms cancel against the lattice ODE
    system); `pairing="printed"` swaps the numerators.
    """
    geom = params.geom
    u = as_values(u).reshape(geom.shape)
    v = as_values(v).reshape(geom.shape)
    if (u <= 0).any() or (u >= 1).any() or (v <= 0).any() or (v >= 1).any():
        raise ValueError("densities must lie strictly inside (0, 1)")
    ubar = cfg.eta1.astype(float) - u
    vbar = cfg.eta2.astype(float) - v
    chi_u = u * (1.0 - u)
    chi_v = v * (1.0 - v)
    if pairing == "consistent":
        w1 = ubar / chi_u
        w2 = vbar / chi_v
    elif pairing == "printed":
        w1 = vbar / chi_u
        w2 = ubar / chi_v
    else:
        raise ValueError("pairing must be 'consistent' or 'printed'")

    vk = 0.0
    for j in range(geom.d):
        du = np.roll(u, -1, axis=j) - u
        vk += float((du**2 * w1 * np.roll(w1, -1, axis=j)).sum())
    V_K = -(geom.N**2) * vk

    c1_eta = rates_mod.eval_config_all(params.c1, cfg)
    c1_uv = rates_mod.eval_field_all(params.c1, u, v)
    c2_eta = rates_mod.eval_config_all(params.c2, cfg)
    c2_uv = rates_mod.eval_field_all(params.c2, u, v)
    eta1 = cfg.eta1.astype(float)
    eta2 = cfg.eta2.astype(float)
    V_G = -params.K * float(((c1_eta * eta2 - c1_uv * v) * u * w1).sum())
    V_G += -params.K * float(((c2_eta * eta1 - c2_uv * u) * v * w2).sum())
    return V_K, V_G


@dataclass
class EntropySeries:
    times: np.ndarray
    H: np.ndarray
    H_per_site: np.ndarray
    dirichlet_sqrt_density: np.ndarray


def entropy_trajectory(params, rd_traj, times, mu0=None) -> EntropySeries:
    """H(mu_t | nu_t) with nu_t parametrized by the lattice ODE solution.

    The reference means are cubic-in-time interpolants of the stored
    (u, v) checkpoints; mu evolves under the exact generator from mu0
    (default: the t=0 reference measure itself).
    """
    geom = params.geom
    n = _check_size(geom)
    if getattr(rd_traj, "geom", geom) != geom:
        raise ValueError("trajectory grid does not match the parameter set")
    times = np.asarray(times, dtype=float)
    ck_t = np.asarray(rd_traj.times, dtype=float)
    if times.max() > ck_t.max() + 1e-12:
        raise ValueError("requested times exceed the stored trajectory")
    u_stack = np.stack([np.asarray(a, dtype=float).ravel() for a in rd_traj.u])
    v_stack = np.stack([np.asarray(a, dtype=float).ravel() for a in rd_traj.v])
    u_spl = CubicSpline(ck_t, u_stack, axis=0)
    v_spl = CubicSpline(ck_t, v_stack, axis=0)

    def reference(t):
        uu = np.clip(u_spl(t), 1e-12, 1 - 1e-12)
        vv = np.clip(v_spl(t), 1e-12, 1 - 1e-12)
        return ProductBernoulli(geom, uu.reshape(geom.shape), vv.reshape(geom.shape))

    if mu0 is None:
        mu0 = reference(0.0).state_probs()
    L = generator_matrix(params)
    mus = evolve_distribution(L, mu0, times)
    H = np.empty(times.size)
    dir_sqrt = np.empty(times.size)
    for k, t in enumerate(times):
        nu = reference(float(t))
        nu_vec = nu.state_probs()
        H[k] = relative_entropy(mus[k], nu_vec)
        dens = np.sqrt(mus[k] / nu_vec)
        dir_sqrt[k] = dirichlet_energy(dens, nu_vec, geom)
    return EntropySeries(times, H, H / geom.n_sites, dir_sqrt)
