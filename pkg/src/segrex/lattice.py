"""Discrete torus geometry, occupancy configurations and lattice calculus.

Sites of the d-dimensional torus with N sites per axis are indexed
row-major, so a field is an ndarray of shape (N,)*d and flattening with
C order gives the site index used in CSV dumps.  The forward difference
in direction j is N*(f(x+e_j)-f(x)); the Laplacian is the N^2-scaled sum
of differences toward the distinct nearest neighbours (at N=2 the two
lattice directions reach the same site, which is counted once — this is
what makes the 2-site relaxation rate 2*N^2).
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

__all__ = [
    "TorusGeometry",
    "Configuration",
    "Field",
    "discrete_gradient",
    "discrete_laplacian",
    "heat_kernel",
    "heat_semigroup",
    "heat_kernel_gradient_check",
    "GradientBoundReport",
    "dump_field_csv",
    "dump_kernel_csv",
]


@dataclass(frozen=True)
class TorusGeometry:
    """Discrete torus with N sites per axis in d dimensions."""

    N: int
    d: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"side length must be >= 2, got {self.N}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    def site_index(self, coords) -> int:
        """Row-major flat index of a (possibly unwrapped) coordinate tuple."""
        coords = np.mod(np.atleast_1d(coords), self.N)
        return int(np.ravel_multi_index(tuple(coords), self.shape))

    def site_coords(self, index: int) -> tuple:
        return tuple(int(c) for c in np.unravel_index(index, self.shape))

    def neighbors(self, x) -> list:
        """The 2d neighbours x +/- e_j (repeats at N=2)."""
        x = np.atleast_1d(x)
        out = []
        for j in range(self.d):
            for s in (+1, -1):
                y = x.copy()
                y[j] = (y[j] + s) % self.N
                out.append(tuple(int(c) for c in y))
        return out

    def shift_index(self, j: int, steps: int = 1) -> np.ndarray:
        """Flat index array mapping x -> x + steps*e_j."""
        idx = np.arange(self.n_sites).reshape(self.shape)
        return np.roll(idx, -steps, axis=j).ravel()

    def offset_index(self, offset) -> np.ndarray:
        """Flat index array mapping x -> x + offset for a lattice vector."""
        offset = np.atleast_1d(offset)
        if offset.shape != (self.d,):
            raise ValueError(f"offset must have {self.d} components, got {offset}")
        idx = np.arange(self.n_sites).reshape(self.shape)
        for j, o in enumerate(offset):
            idx = np.roll(idx, -int(o), axis=j)
        return idx.ravel()

    def theta(self) -> np.ndarray:
        """Macroscopic site centres x/N, shape (n_sites, d)."""
        grids = np.meshgrid(*[np.arange(self.N) / self.N] * self.d, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass
class Configuration:
    """Occupancies of both species; the two bit-fields are independent."""

    geom: TorusGeometry
    eta1: np.ndarray
    eta2: np.ndarray

    def __post_init__(self):
        self.eta1 = np.ascontiguousarray(self.eta1, dtype=np.uint8).reshape(self.geom.shape)
        self.eta2 = np.ascontiguousarray(self.eta2, dtype=np.uint8).reshape(self.geom.shape)
        for name, eta in (("eta1", self.eta1), ("eta2", self.eta2)):
            if not np.isin(eta, (0, 1)).all():
                raise ValueError(f"{name} entries must be 0 or 1")

    def copy(self) -> "Configuration":
        return Configuration(self.geom, self.eta1.copy(), self.eta2.copy())

    def shifted(self, y) -> "Configuration":
        """The shifted configuration (tau_y eta)(x) = eta(x+y)."""
        y = np.atleast_1d(y)
        e1, e2 = self.eta1, self.eta2
        for j, o in enumerate(y):
            e1 = np.roll(e1, -int(o), axis=j)
            e2 = np.roll(e2, -int(o), axis=j)
        return Configuration(self.geom, e1, e2)


@dataclass
class Field:
    """Real-valued lattice function, optionally time-stamped."""

    geom: TorusGeometry
    values: np.ndarray
    time: float | None = None
    density: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.geom.shape)
        if not np.isfinite(self.values).all():
            raise ValueError("field values must be finite")
        if self.density and ((self.values < 0).any() or (self.values > 1).any()):
            raise ValueError("density field values must lie in [0, 1]")


def as_values(f) -> np.ndarray:
    """Accept a Field or a bare ndarray."""
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def _axis_rolls(geom: TorusGeometry, f: np.ndarray, j: int):
    up = np.roll(f, -1, axis=j)  # f(x + e_j)
    down = np.roll(f, +1, axis=j)  # f(x - e_j)
    return up, down


def discrete_gradient(geom: TorusGeometry, f, x=None):
    """N-scaled forward differences; full (d, N, ..., N) array or d-vector at x."""
    f = as_values(f).reshape(geom.shape)
    grad = np.stack(
        [geom.N * (np.roll(f, -1, axis=j) - f) for j in range(geom.d)], axis=0
    )
    if x is None:
        return grad
    return grad[(slice(None),) + tuple(np.atleast_1d(x) % geom.N)]


def discrete_laplacian(geom: TorusGeometry, f, x=None):
    """N^2-scaled sum of differences toward distinct nearest neighbours."""
    f = as_values(f).reshape(geom.shape)
    out = np.zeros_like(f)
    for j in range(geom.d):
        up, down = _axis_rolls(geom, f, j)
        if geom.N == 2:
            out += up - f  # up and down coincide; count the site once
        else:
            out += up + down - 2.0 * f
    out *= geom.N**2
    if x is None:
        return out
    return out[tuple(np.atleast_1d(x) % geom.N)]


def laplacian_eigenvalues_1d(N: int) -> np.ndarray:
    """Eigenvalues of the one-axis Laplacian on Fourier mode k."""
    k = np.arange(N)
    if N == 2:
        return N**2 * (np.cos(np.pi * k) - 1.0)
    return -2.0 * N**2 * (1.0 - np.cos(2.0 * np.pi * k / N))


def _kernel_row_1d(N: int, t: float) -> np.ndarray:
    """Kernel as a function of displacement r: p(t, x, x+r)."""
    lam = laplacian_eigenvalues_1d(N)
    row = np.fft.ifft(np.exp(lam * t)).real
    return row


def heat_kernel(geom: TorusGeometry, t: float) -> np.ndarray:
    """Full (n_sites, n_sites) heat-kernel table p(t, x, y).

    Rows are probability vectors; the table is symmetric and translation
    invariant.  Computed from the exact Fourier eigenvalues of the
    discrete Laplacian, so there is no time-integration error.
    """
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    rows = [_kernel_row_1d(geom.N, t) for _ in range(geom.d)]
    disp = rows[0]
    for r in rows[1:]:
        disp = np.multiply.outer(disp, r)
    # table[x, y] = disp[(y - x) mod N] per axis
    idx = np.arange(geom.N)
    diff = (idx[None, :] - idx[:, None]) % geom.N
    if geom.d == 1:
        return disp[diff]
    coords = np.meshgrid(*[idx] * geom.d, indexing="ij")
    flat_coords = [c.ravel() for c in coords]
    out = np.empty((geom.n_sites, geom.n_sites))
    for a in range(geom.n_sites):
        xa = np.unravel_index(a, geom.shape)
        sel = tuple((flat_coords[j] - xa[j]) % geom.N for j in range(geom.d))
        out[a] = disp[sel]
    return out


def _eigenvalue_grid(geom: TorusGeometry) -> np.ndarray:
    lams = [laplacian_eigenvalues_1d(geom.N) for _ in range(geom.d)]
    total = lams[0]
    for lam in lams[1:]:
        total = np.add.outer(total, lam)
    return total.reshape(geom.shape)


def heat_semigroup(geom: TorusGeometry, t: float, f) -> np.ndarray:
    """Apply the heat semigroup e^{t*Laplacian} to a field (spectral, exact)."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    f = as_values(f).reshape(geom.shape)
    fhat = np.fft.fftn(f)
    fhat *= np.exp(_eigenvalue_grid(geom) * t)
    return np.fft.ifftn(fhat).real


@dataclass
class GradientBoundReport:
    """Outcome of the kernel-gradient envelope scan."""

    t_grid: np.ndarray
    candidates: tuple
    fitted_C: dict
    best_c: float
    best_C: float
    failed: bool
    notes: list = dc_field(default_factory=list)


def heat_kernel_gradient_check(
    geom: TorusGeometry, t_grid, candidates=(1.0, 2.0, 4.0)
) -> GradientBoundReport:
    """Empirical envelope for |grad_x p(t,x,y)| <= C p(ct,x,y)/sqrt(t).

    For each candidate c the smallest admissible C over the whole grid is
    the max over (t, displacement) of |grad p| * sqrt(t) / p(ct, .).  By
    translation invariance the scan runs over displacements, not pairs.
    Kernel entries below the double-precision noise floor are treated as
    numerically zero on both sides of the inequality.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 0:
        raise ValueError("t grid must be nonempty")
    if (t_grid <= 0).any():
        raise ValueError("t grid must be strictly positive")
    floor = 1e-13

    def displacement_kernel(t):
        row = _kernel_row_1d(geom.N, t)
        disp = row
        for _ in range(geom.d - 1):
            disp = np.multiply.outer(disp, row)
        return disp.reshape(geom.shape)

    fitted = {}
    notes = []
    for c in candidates:
        worst = 0.0
        certified = True
        for t in t_grid:
            disp = displacement_kernel(t)
            grad = np.stack(
                [geom.N * (np.roll(disp, -1, axis=j) - disp) for j in range(geom.d)]
            )
            gnorm = np.sqrt((grad**2).sum(axis=0))
            disp_c = displacement_kernel(c * t)
            mask = disp_c > floor
            if not mask.all():
                stray = gnorm[~mask] * np.sqrt(t)
                if (stray > 10 * floor).any():
                    certified = False
                    notes.append(
                        f"c={c}: gradient above noise floor where p(ct,.) vanishes at t={t}"
                    )
            if mask.any():
                ratio = gnorm[mask] * np.sqrt(t) / disp_c[mask]
                worst = max(worst, float(ratio.max()))
        fitted[c] = worst if certified else np.inf
    certified_cs = [c for c in candidates if np.isfinite(fitted[c])]
    failed = not certified_cs
    best_c = min(certified_cs, key=lambda c: fitted[c]) if certified_cs else None
    return GradientBoundReport(
        t_grid=t_grid,
        candidates=tuple(candidates),
        fitted_C=fitted,
        best_c=best_c,
        best_C=fitted[best_c] if best_c is not None else np.inf,
        failed=failed,
        notes=notes,
    )


def dump_field_csv(f: Field, path) -> None:
    """Write a field as `site_index,value` rows."""
    values = f.values.ravel()
    with open(path, "w", newline="") as fh:
        fh.write("site_index,value\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{float(v)!r}\n")


def dump_kernel_csv(geom: TorusGeometry, t: float, path, debug: bool = False) -> None:
    """Kernel table dump; size N^{2d}, so gated behind an explicit flag."""
    if not debug:
        raise ValueError("kernel dumps are debug-only; pass debug=True")
    table = heat_kernel(geom, t)
    with open(path, "w", newline="") as fh:
        fh.write("x,y,value\n")
        for x in range(geom.n_sites):
            for y in range(geom.n_sites):
                fh.write(f"{x},{y},{float(table[x, y])!r}\n")
