"""Annihilation-rate polynomials and the three case presets.

A rate is a finite sum of monomials in the occupancies at fixed nonzero
offsets from the evaluation site.  The same terms evaluate on binary
configurations and on [0,1]-valued density fields (substitute u, v for
eta1, eta2).  The type-2 rate may only read type-1 occupancies.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .lattice import Configuration, TorusGeometry, as_values

__all__ = [
    "RateTerm",
    "RatePolynomial",
    "CasePreset",
    "make_preset",
    "eval_on_config",
    "eval_on_field",
    "eval_config_all",
    "eval_field_all",
    "sup_rate",
    "load_polynomial_json",
    "parse_offsets",
]


@dataclass(frozen=True)
class RateTerm:
    """coeff * prod eta1(x+o), o in offsets1 * prod eta2(x+o), o in offsets2."""

    offsets1: tuple
    offsets2: tuple
    coeff: float


@dataclass
class RatePolynomial:
    """Finite monomial sum over site offsets; species says which rate it is."""

    terms: list
    species: int = 1
    label: str = ""

    def __post_init__(self):
        if self.species not in (1, 2):
            raise ValueError("species must be 1 or 2")
        norm = []
        for t in self.terms:
            o1 = tuple(tuple(int(c) for c in np.atleast_1d(o)) for o in t.offsets1)
            o2 = tuple(tuple(int(c) for c in np.atleast_1d(o)) for o in t.offsets2)
            for o in o1 + o2:
                if all(c == 0 for c in o):
                    raise ValueError("rates may not depend on the occupancy at the origin")
            if self.species == 2 and o2:
                raise ValueError("the type-2 rate may not depend on type-2 occupancies")
            norm.append(RateTerm(o1, o2, float(t.coeff)))
        self.terms = norm
        self._check_nonnegative()

    def _involved_offsets(self):
        o1, o2 = set(), set()
        for t in self.terms:
            o1.update(t.offsets1)
            o2.update(t.offsets2)
        return sorted(o1), sorted(o2)

    def _check_nonnegative(self, max_exhaustive_bits: int = 16, audit: int = 2000):
        """Reject polynomials that go negative on some binary assignment."""
        o1, o2 = self._involved_offsets()
        sites = [(1, o) for o in o1] + [(2, o) for o in o2]
        nbits = len(sites)
        if nbits == 0:
            if self.terms and sum(t.coeff for t in self.terms) < 0:
                raise ValueError("constant rate is negative")
            return
        rng = np.random.default_rng(0)
        n_checks = 2**nbits if nbits <= max_exhaustive_bits else audit
        for i in range(n_checks):
            if nbits <= max_exhaustive_bits:
                bits = [(i >> b) & 1 for b in range(nbits)]
            else:
                bits = rng.integers(0, 2, size=nbits)
            assign = {key: int(b) for key, b in zip(sites, bits)}
            val = 0.0
            for t in self.terms:
                prod = t.coeff
                for o in t.offsets1:
                    prod *= assign[(1, o)]
                for o in t.offsets2:
                    prod *= assign[(2, o)]
                val += prod
            if val < 0:
                raise ValueError(f"rate polynomial is negative ({val}) on a binary assignment")


def sup_rate(p: RatePolynomial) -> float:
    """Upper bound for the rate over all [0,1]-valued fields.

    Sum of positive-part coefficients, i.e. each monomial at its {0,1}
    maximizer.  Exact for nonnegative coefficients, an upper bound in
    general; the case presets give 1.
    """
    return float(sum(max(t.coeff, 0.0) for t in p.terms))


def _term_value_config(term, cfg: Configuration, x) -> float:
    x = np.atleast_1d(x)
    N = cfg.geom.N
    prod = term.coeff
    for o in term.offsets1:
        prod *= cfg.eta1[tuple((x + np.asarray(o)) % N)]
        if prod == 0.0:
            return 0.0
    for o in term.offsets2:
        prod *= cfg.eta2[tuple((x + np.asarray(o)) % N)]
        if prod == 0.0:
            return 0.0
    return float(prod)


def eval_on_config(p: RatePolynomial, cfg: Configuration, x) -> float:
    """Rate at site x on a binary configuration (shifted monomial sum)."""
    return sum(_term_value_config(t, cfg, x) for t in p.terms)


def eval_on_field(p: RatePolynomial, u, v, x) -> float:
    """Rate at site x with densities substituted for occupancies."""
    u = as_values(u)
    v = as_values(v)
    if (u < 0).any() or (u > 1).any() or (v < 0).any() or (v > 1).any():
        raise ValueError("field values must lie in [0, 1]")
    x = np.atleast_1d(x)
    N = u.shape[0]
    total = 0.0
    for t in p.terms:
        prod = t.coeff
        for o in t.offsets1:
            prod *= u[tuple((x + np.asarray(o)) % N)]
        for o in t.offsets2:
            prod *= v[tuple((x + np.asarray(o)) % N)]
        total += prod
    return float(total)


def _rolled(arr: np.ndarray, offset) -> np.ndarray:
    out = arr
    for j, o in enumerate(offset):
        out = np.roll(out, -int(o), axis=j)
    return out


def eval_config_all(p: RatePolynomial, cfg: Configuration) -> np.ndarray:
    """Vector of rates at every site (float array of the torus shape)."""
    out = np.zeros(cfg.geom.shape)
    e1 = cfg.eta1.astype(float)
    e2 = cfg.eta2.astype(float)
    for t in p.terms:
        prod = np.full(cfg.geom.shape, t.coeff)
        for o in t.offsets1:
            prod = prod * _rolled(e1, o)
        for o in t.offsets2:
            prod = prod * _rolled(e2, o)
        out += prod
    return out


def eval_field_all(p: RatePolynomial, u, v) -> np.ndarray:
    """Density-substituted rates at every site; inputs already validated upstream."""
    u = as_values(u)
    v = as_values(v)
    out = np.zeros_like(u)
    for t in p.terms:
        prod = np.full_like(u, t.coeff)
        for o in t.offsets1:
            prod = prod * _rolled(u, o)
        for o in t.offsets2:
            prod = prod * _rolled(v, o)
        out += prod
    return out


@dataclass(frozen=True)
class CasePreset:
    """One of the three monomial regimes with exponent m and offsets z_i."""

    case: int
    m: int
    offsets: tuple

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError("case must be 1, 2 or 3")
        if self.case == 1 and self.m <= 3:
            raise ValueError("case 1 needs m > 3")
        if self.m < 1:
            raise ValueError("m must be a positive integer")
        if len(self.offsets) != self.m - 1:
            raise ValueError(f"need {self.m - 1} offsets for m={self.m}")
        seen = set()
        for o in self.offsets:
            if all(c == 0 for c in o):
                raise ValueError("offsets must be nonzero")
            if o in seen:
                raise ValueError("offsets must be distinct")
            seen.add(o)


def make_preset(case: int, m: int, offsets=None, d: int = 1):
    """Build (c1, c2) for one of the three regimes.

    Default offsets are z_i = i*e_1.  m = 1 collapses the monomial to the
    constant rate 1 (empty product); case 3 with m = 1 is the degenerate
    preset used only for the m = 1 cross-check against case 2.
    """
    if offsets is None:
        offsets = tuple(tuple(i if j == 0 else 0 for j in range(d)) for i in range(1, m))
    else:
        offsets = tuple(tuple(int(c) for c in np.atleast_1d(o)) for o in offsets)
    preset = CasePreset(case, m, offsets)
    one = [RateTerm((), (), 1.0)]
    if case == 1:
        c1 = RatePolynomial([RateTerm(offsets, (), 1.0)], species=1, label=f"case1:m={m}")
        c2 = RatePolynomial(list(one), species=2, label="case1:const")
    elif case == 2:
        c1 = RatePolynomial([RateTerm((), offsets, 1.0)], species=1, label=f"case2:m={m}")
        c2 = RatePolynomial(list(one), species=2, label="case2:const")
    else:
        c1 = RatePolynomial(list(one), species=1, label="case3:const")
        c2 = RatePolynomial([RateTerm(offsets, (), 1.0)], species=2, label=f"case3:m={m}")
    return preset, c1, c2


def parse_offsets(text: str, d: int = 1) -> tuple:
    """Parse CLI offsets like "e1,2e1,-1e2" into lattice vectors."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if "e" not in tok:
            raise ValueError(f"bad offset token {tok!r}")
        mult, axis = tok.split("e")
        mult = int(mult) if mult not in ("", "+", "-") else int(mult + "1")
        axis = int(axis)
        if not 1 <= axis <= d:
            raise ValueError(f"axis e{axis} out of range for d={d}")
        vec = tuple(mult if j == axis - 1 else 0 for j in range(d))
        out.append(vec)
    return tuple(out)


def load_polynomial_json(source, species: int = 1) -> RatePolynomial:
    """Load a general polynomial from {"terms":[{"offsets1":..,"offsets2":..,"coeff":..}]}."""
    if isinstance(source, (str, bytes)):
        doc = json.loads(source)
    else:
        doc = source
    terms = [
        RateTerm(
            tuple(tuple(o) for o in t.get("offsets1", [])),
            tuple(tuple(o) for o in t.get("offsets2", [])),
            t["coeff"],
        )
        for t in doc["terms"]
    ]
    return RatePolynomial(terms, species=species)
