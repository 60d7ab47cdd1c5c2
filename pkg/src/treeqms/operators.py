"""Sparse Pauli-string operators on tree regions.

A :class:`RegionOperator` is a finite linear combination of Pauli strings
over a region (canonically ordered tuple of vertices). Internally each
string is a pair of bit masks ``(x, z)`` indexed by region position, with
the phase convention ``P(x, z) = i^{|x & z|} X^x Z^z`` so that a site with
both bits set carries ``Y``. Single-site letters are coded ``x | z << 1``:
``I=0, X=1, Z=2, Y=3``.

All traces are normalized: the identity has trace one and every other
Pauli string is traceless.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import dense
from .errors import RegionError, SiteDimensionError
from .tree import Region, Vertex, canonical, format_vertex, parse_vertex, region_union

CODE_TO_LETTER = ("I", "X", "Z", "Y")
LETTER_TO_CODE = {"I": 0, "X": 1, "Z": 2, "Y": 3}
_PHASES = (1, 1j, -1, -1j)


def _popcount(m: int) -> int:
    return m.bit_count()


def _product_phase(x1: int, z1: int, x2: int, z2: int) -> tuple[int, int, int]:
    """Return ``(x, z, e)`` with ``P1 P2 = i^e P(x, z)``."""
    x, z = x1 ^ x2, z1 ^ z2
    e = _popcount(x1 & z1) + _popcount(x2 & z2) + 2 * _popcount(z1 & x2) - _popcount(x & z)
    return x, z, e % 4


@dataclass(frozen=True)
class PauliString:
    """Letters on the non-identity sites, in canonical vertex order."""

    letters: tuple[tuple[Vertex, str], ...] = ()

    @classmethod
    def of(cls, letters: Mapping[Vertex, str] | Iterable[tuple[Vertex, str]]) -> PauliString:
        items = letters.items() if isinstance(letters, Mapping) else letters
        clean = {}
        for v, s in items:
            s = s.upper()
            if s not in LETTER_TO_CODE:
                raise ValueError(f"unknown Pauli letter {s!r}")
            if s != "I":
                clean[tuple(v)] = s
        return cls(tuple((v, clean[v]) for v in canonical(clean)))

    @property
    def support(self) -> Region:
        return tuple(v for v, _ in self.letters)

    def as_dict(self) -> dict[Vertex, str]:
        return dict(self.letters)

    def __str__(self) -> str:
        if not self.letters:
            return "I"
        return " ".join(f"{s}[{format_vertex(v)}]" for v, s in self.letters)


@lru_cache(maxsize=4096)
def _position_map(src: Region, dst: Region) -> tuple[int, ...]:
    index = {v: i for i, v in enumerate(dst)}
    return tuple(index[v] for v in src)


def _remap(mask: int, positions: tuple[int, ...]) -> int:
    out = 0
    i = 0
    while mask:
        if mask & 1:
            out |= 1 << positions[i]
        mask >>= 1
        i += 1
    return out


class RegionOperator:
    """Operator on a region, stored as ``{(x_mask, z_mask): coefficient}``.

    Instances are treated as immutable; every operation returns a new one.
    """

    __slots__ = ("region", "_terms", "site_dim")

    def __init__(self, region: Iterable[Vertex], terms: Mapping[tuple[int, int], complex] | None = None,
                 site_dim: int = 2):
        if site_dim != 2:
            raise SiteDimensionError("the Pauli-string path supports qubit sites only")
        self.region: Region = canonical(region)
        self.site_dim = site_dim
        self._terms: dict[tuple[int, int], complex] = {
            k: complex(c) for k, c in (terms or {}).items() if c != 0
        }

    # construction

    @classmethod
    def identity(cls, region: Iterable[Vertex] = ()) -> RegionOperator:
        return cls(region, {(0, 0): 1.0})

    @classmethod
    def zero(cls, region: Iterable[Vertex] = ()) -> RegionOperator:
        return cls(region, {})

    @classmethod
    def pauli(cls, letters: Mapping[Vertex, str] | PauliString, coeff: complex = 1.0,
              region: Iterable[Vertex] | None = None) -> RegionOperator:
        """A single scaled Pauli string, e.g. ``pauli({(): "Z", (1,): "Z"})``."""
        ps = letters if isinstance(letters, PauliString) else PauliString.of(letters)
        reg = canonical(ps.support) if region is None else canonical(region)
        return cls.from_strings(reg, {ps: coeff})

    @classmethod
    def from_strings(cls, region: Iterable[Vertex],
                     terms: Mapping[PauliString, complex]) -> RegionOperator:
        reg = canonical(region)
        index = {v: i for i, v in enumerate(reg)}
        out: dict[tuple[int, int], complex] = {}
        for ps, c in terms.items():
            x = z = 0
            for v, s in ps.letters:
                if v not in index:
                    raise RegionError(f"string {ps} has support outside the region")
                code = LETTER_TO_CODE[s]
                x |= (code & 1) << index[v]
                z |= (code >> 1) << index[v]
            out[(x, z)] = out.get((x, z), 0) + c
        return cls(reg, out)

    @classmethod
    def from_codes(cls, region: Region, codes: Iterable[int], coeff: complex = 1.0) -> RegionOperator:
        """Single string given one letter code per region site."""
        x = z = 0
        for i, c in enumerate(codes):
            x |= (c & 1) << i
            z |= (c >> 1) << i
        return cls(region, {(x, z): coeff})

    @classmethod
    def from_site_vector(cls, vertex: Vertex, vec: np.ndarray) -> RegionOperator:
        """Single-site operator from its coefficients on ``(I, X, Z, Y)``."""
        return cls((vertex,), {(c & 1, c >> 1): vec[c] for c in range(4)})

    @classmethod
    def from_dense(cls, mat: np.ndarray, region: Iterable[Vertex], max_sites: int | None = None,
                   tol: float = 0.0) -> RegionOperator:
        """Pauli decomposition of a dense matrix (Walsh-Hadamard per X pattern)."""
        reg = canonical(region)
        n = len(reg)
        dense.check_budget(n, max_sites)
        dim = 2**n
        if mat.shape != (dim, dim):
            raise SiteDimensionError(f"expected {dim}x{dim} matrix for {n} sites, got {mat.shape}")
        cols = np.arange(dim)
        had = np.where(np.bitwise_count(np.bitwise_and.outer(cols, cols)) % 2, -1.0, 1.0)
        out: dict[tuple[int, int], complex] = {}
        for dx in range(dim):
            coeffs = had @ mat[cols ^ dx, cols] / dim
            x = _reverse(dx, n)
            for dz in np.flatnonzero(np.abs(coeffs) > tol):
                z = _reverse(int(dz), n)
                out[(x, z)] = coeffs[dz] * _PHASES[(-_popcount(x & z)) % 4]
        return cls(reg, out)

    # inspection

    def terms(self) -> Iterator[tuple[PauliString, complex]]:
        for (x, z), c in self._terms.items():
            yield self._string(x, z), c

    def raw_terms(self) -> dict[tuple[int, int], complex]:
        return dict(self._terms)

    def _string(self, x: int, z: int) -> PauliString:
        letters = []
        for i, v in enumerate(self.region):
            code = ((x >> i) & 1) | (((z >> i) & 1) << 1)
            if code:
                letters.append((v, CODE_TO_LETTER[code]))
        return PauliString(tuple(letters))

    def codes(self, x: int, z: int) -> tuple[int, ...]:
        return tuple(((x >> i) & 1) | (((z >> i) & 1) << 1) for i in range(len(self.region)))

    def coefficient(self, letters: Mapping[Vertex, str] | PauliString) -> complex:
        ps = letters if isinstance(letters, PauliString) else PauliString.of(letters)
        if any(v not in self.region for v in ps.support):
            return 0j
        key = next(iter(RegionOperator.from_strings(self.region, {ps: 1})._terms))
        return self._terms.get(key, 0j)

    @property
    def n_terms(self) -> int:
        return len(self._terms)

    @property
    def support(self) -> Region:
        used = 0
        for x, z in self._terms:
            used |= x | z
        return tuple(v for i, v in enumerate(self.region) if (used >> i) & 1)

    def is_diagonal(self) -> bool:
        return all(x == 0 for x, _ in self._terms)

    def __repr__(self) -> str:
        body = " + ".join(f"({c:.6g})*{ps}" for ps, c in self.terms()) or "0"
        return f"RegionOperator[{', '.join(format_vertex(v) for v in self.region)}]({body})"

    # region changes

    def embed(self, into: Iterable[Vertex]) -> RegionOperator:
        """Widen the region; new sites carry the identity."""
        target = canonical(into)
        if target == self.region:
            return self
        missing = set(self.region) - set(target)
        if missing:
            shown = ", ".join(format_vertex(v) for v in canonical(missing))
            raise RegionError(f"cannot embed: target region lacks {shown}")
        pos = _position_map(self.region, target)
        return RegionOperator(target, {(_remap(x, pos), _remap(z, pos)): c for (x, z), c in self._terms.items()})

    def partial_trace(self, keep: Iterable[Vertex]) -> RegionOperator:
        """Normalized partial trace onto ``keep``."""
        kept = canonical(keep)
        extra = set(kept) - set(self.region)
        if extra:
            shown = ", ".join(format_vertex(v) for v in canonical(extra))
            raise RegionError(f"cannot keep sites outside the region: {shown}")
        keep_mask = 0
        for i, v in enumerate(self.region):
            if v in kept:
                keep_mask |= 1 << i
        kept_positions = [i for i in range(len(self.region)) if (keep_mask >> i) & 1]
        compress = {p: j for j, p in enumerate(kept_positions)}
        out: dict[tuple[int, int], complex] = {}
        for (x, z), c in self._terms.items():
            if (x | z) & ~keep_mask:
                continue
            nx = nz = 0
            for p, j in compress.items():
                nx |= ((x >> p) & 1) << j
                nz |= ((z >> p) & 1) << j
            out[(nx, nz)] = out.get((nx, nz), 0) + c
        return RegionOperator(kept, out)

    def restrict_region(self) -> RegionOperator:
        """Drop sites on which every term acts as the identity."""
        return self.partial_trace(self.support)

    # algebra

    def normalized_trace(self) -> complex:
        return self._terms.get((0, 0), 0j)

    def adjoint(self) -> RegionOperator:
        return RegionOperator(self.region, {k: c.conjugate() for k, c in self._terms.items()})

    def _aligned(self, other: RegionOperator) -> tuple[RegionOperator, RegionOperator]:
        if self.site_dim != other.site_dim:
            raise SiteDimensionError("site dimensions differ")
        if self.region == other.region:
            return self, other
        reg = region_union(self.region, other.region)
        return self.embed(reg), other.embed(reg)

    def __matmul__(self, other: RegionOperator) -> RegionOperator:
        a, b = self._aligned(other)
        out: dict[tuple[int, int], complex] = {}
        for (x1, z1), c1 in a._terms.items():
            for (x2, z2), c2 in b._terms.items():
                x, z, e = _product_phase(x1, z1, x2, z2)
                out[(x, z)] = out.get((x, z), 0) + c1 * c2 * _PHASES[e]
        return RegionOperator(a.region, out)

    def __add__(self, other: RegionOperator) -> RegionOperator:
        a, b = self._aligned(other)
        out = dict(a._terms)
        for k, c in b._terms.items():
            out[k] = out.get(k, 0) + c
        return RegionOperator(a.region, out)

    def __neg__(self) -> RegionOperator:
        return RegionOperator(self.region, {k: -c for k, c in self._terms.items()})

    def __sub__(self, other: RegionOperator) -> RegionOperator:
        return self + (-other)

    def __mul__(self, scalar: complex) -> RegionOperator:
        return RegionOperator(self.region, {k: c * scalar for k, c in self._terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> RegionOperator:
        return self * (1.0 / scalar)

    def commutator(self, other: RegionOperator) -> RegionOperator:
        return self @ other - other @ self

    def chop(self, tol: float = 1e-14) -> RegionOperator:
        return RegionOperator(self.region, {k: c for k, c in self._terms.items() if abs(c) > tol})

    # norms and comparison

    def norm_l1(self) -> float:
        return float(sum(abs(c) for c in self._terms.values()))

    def norm_op(self, max_sites: int | None = None) -> float:
        if not self._terms:
            return 0.0
        return float(np.linalg.norm(self.restrict_region().to_dense(max_sites), 2))

    def max_abs_diff(self, other: RegionOperator) -> float:
        diff = self - other
        return max((abs(c) for c in diff._terms.values()), default=0.0)

    def allclose(self, other: RegionOperator, atol: float = 1e-12) -> bool:
        return self.max_abs_diff(other) <= atol

    # dense path

    def to_dense(self, max_sites: int | None = None) -> np.ndarray:
        """Dense matrix in canonical factor order (first vertex most significant)."""
        n = len(self.region)
        dense.check_budget(n, max_sites)
        dim = 2**n
        cols = np.arange(dim)
        out = np.zeros((dim, dim), dtype=complex)
        for (x, z), c in self._terms.items():
            dx, dz = _reverse(x, n), _reverse(z, n)
            signs = np.where(np.bitwise_count(cols & dz) % 2, -1.0, 1.0)
            out[cols ^ dx, cols] += c * _PHASES[_popcount(x & z) % 4] * signs
        return out


def _reverse(mask: int, n: int) -> int:
    out = 0
    for i in range(n):
        if (mask >> i) & 1:
            out |= 1 << (n - 1 - i)
    return out


def multiply(a: RegionOperator, b: RegionOperator) -> RegionOperator:
    return a @ b


def pauli_basis(region: Iterable[Vertex], letters: str = "IXZY") -> Iterator[RegionOperator]:
    """Every Pauli string on ``region`` over the given alphabet, unit coefficient."""
    reg = canonical(region)
    codes = [LETTER_TO_CODE[s] for s in letters]
    n = len(reg)
    total = len(codes) ** n
    for idx in range(total):
        digits = []
        for _ in range(n):
            idx, r = divmod(idx, len(codes))
            digits.append(codes[r])
        yield RegionOperator.from_codes(reg, digits)


def site_vector(op: RegionOperator) -> np.ndarray:
    """Coefficients of a single-site operator on ``(I, X, Z, Y)``."""
    if len(op.region) > 1:
        raise RegionError("site_vector needs a single-site operator")
    vec = np.zeros(4, dtype=complex)
    for (x, z), c in op._terms.items():
        vec[x | (z << 1)] += c
    return vec


def site_matrix_to_vector(mat: np.ndarray) -> np.ndarray:
    """Pauli coefficients ``(I, X, Z, Y)`` of a 2x2 matrix."""
    return np.array([np.trace(dense.PAULI_MATRICES[s].conj().T @ mat) / 2 for s in CODE_TO_LETTER])


def site_vector_to_matrix(vec: np.ndarray) -> np.ndarray:
    return sum(vec[c] * dense.PAULI_MATRICES[CODE_TO_LETTER[c]] for c in range(4))


# text form


def to_records(op: RegionOperator) -> list[dict]:
    """``[{coefficient: [re, im], letters: {vertex: letter}}]``; identity sites omitted."""
    recs = []
    for ps, c in sorted(op.terms(), key=lambda t: [(len(v), v, s) for v, s in t[0].letters]):
        recs.append({
            "coefficient": [float(c.real), float(c.imag)],
            "letters": {format_vertex(v): s for v, s in ps.letters},
        })
    return recs


def from_records(records: Iterable[Mapping], region: Iterable[Vertex] | None = None) -> RegionOperator:
    terms: dict[PauliString, complex] = {}
    support: set[Vertex] = set()
    for rec in records:
        unknown = set(rec) - {"coefficient", "letters"}
        if unknown:
            raise ValueError(f"unknown field(s) in operator record: {sorted(unknown)}")
        coeff = rec.get("coefficient", [1.0, 0.0])
        if isinstance(coeff, (int, float)):
            c = complex(coeff)
        else:
            re, im = coeff
            c = complex(re, im)
        ps = PauliString.of({parse_vertex(k): v for k, v in rec.get("letters", {}).items()})
        support.update(ps.support)
        terms[ps] = terms.get(ps, 0) + c
    reg = canonical(support) if region is None else canonical(region)
    return RegionOperator.from_strings(reg, terms)
