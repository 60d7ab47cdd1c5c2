"""Transition expectations in amplitude-sandwich form and their lifts.

A transition expectation maps the fork algebra of ``{x} ∪ S(x)`` into the
site algebra of ``x``::

    E(a) = Tr_{x]}( w^{1/2} K* a K w^{1/2} )

with ``K`` the amplitude on the fork and ``w`` a weight on ``x``. The map
is tabulated once as a Pauli transfer tensor ``ptm[out, in_x, in_1, ...,
in_k]`` (letter codes, see :mod:`treeqms.operators`), which is what the
evaluation engine contracts. :meth:`TransitionExpectation.apply_dense` is an
independent dense route kept for cross-checks.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
import scipy.linalg

from . import dense
from .errors import IdentityPreservationError, NotPositiveError, RegionError
from .operators import RegionOperator, pauli_basis, site_vector
from .tree import Region, Vertex, canonical, format_vertex, level_set, shift_by

IDENTITY_TOL = 1e-9
CP_TOL = 1e-9

E_I = np.array([1, 0, 0, 0], dtype=complex)


def _as_weight(w) -> np.ndarray:
    if isinstance(w, RegionOperator):
        if len(w.region) > 1:
            raise RegionError("weight must live on a single site")
        return w.to_dense() if w.region else np.eye(2, dtype=complex) * w.normalized_trace()
    arr = np.asarray(w, dtype=complex)
    if arr.ndim == 0:
        return arr * np.eye(2, dtype=complex)
    if arr.shape != (2, 2):
        raise ValueError(f"weight must be a scalar or a 2x2 matrix, got shape {arr.shape}")
    return arr


def _matrix_sqrt(w: np.ndarray) -> np.ndarray:
    if np.allclose(w, w.conj().T) and np.linalg.eigvalsh(w).min() >= 0:
        return dense.psd_sqrt(w)
    return scipy.linalg.sqrtm(w).astype(complex)


def _transfer_tensor(amplitude: RegionOperator, root_w: np.ndarray, fork: Region) -> np.ndarray:
    x = fork[0]
    r = RegionOperator.from_dense(root_w, (x,)).embed(fork)
    left = r @ amplitude.adjoint().embed(fork)
    right = amplitude.embed(fork) @ r
    m = len(fork)
    ptm = np.zeros((4,) + (4,) * m, dtype=complex)
    for codes in product(range(4), repeat=m):
        p = RegionOperator.from_codes(fork, codes)
        ptm[(slice(None),) + codes] = site_vector((left @ p @ right).partial_trace((x,)))
    return ptm


@dataclass(frozen=True, eq=False)
class TransitionExpectation:
    """Completely positive map from the fork algebra at ``target`` into ``target``.

    Use :meth:`from_amplitude` for the checked constructor. Building the
    dataclass directly skips the identity-preservation check and leaves
    ``certified`` false.
    """

    target: Vertex
    successors: Region
    amplitude: RegionOperator
    weight: np.ndarray
    certified: bool = False
    identity_residual: float = float("nan")
    ptm: np.ndarray = field(default=None, repr=False)
    root_weight: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        fork = self.fork
        if set(self.amplitude.region) - set(fork):
            raise RegionError(f"amplitude is not supported on the fork at {format_vertex(self.target)}")
        w = _as_weight(self.weight)
        object.__setattr__(self, "weight", w)
        if self.root_weight is None:
            object.__setattr__(self, "root_weight", _matrix_sqrt(w))
        if self.ptm is None:
            object.__setattr__(self, "ptm", _transfer_tensor(self.amplitude, self.root_weight, fork))

    @classmethod
    def from_amplitude(cls, amplitude: RegionOperator, weight, target: Vertex | None = None,
                       successors: Iterable[Vertex] | None = None,
                       tol: float = IDENTITY_TOL) -> TransitionExpectation:
        """Build the sandwich map and verify ``E(1) = 1``.

        Raises:
            NotPositiveError: if the weight is not positive semidefinite.
            IdentityPreservationError: if ``E(1)`` differs from the identity by
                more than ``tol`` (the residual is attached, nothing is rescaled).
        """
        if target is None:
            target = amplitude.region[0] if amplitude.region else ()
        if successors is None:
            successors = tuple(v for v in amplitude.region if v != target)
        w = _as_weight(weight)
        if not np.allclose(w, w.conj().T, atol=1e-12) or np.linalg.eigvalsh(dense.hermitian_part(w)).min() < -tol:
            raise NotPositiveError("weight must be positive semidefinite")
        kernel = cls(tuple(target), canonical(successors), amplitude, w)
        residual = kernel.identity_defect()
        if residual > tol:
            raise IdentityPreservationError(
                f"transition expectation at {format_vertex(kernel.target)} is not identity preserving "
                f"(residual {residual:.3e})", residual)
        return replace(kernel, certified=True, identity_residual=residual)

    @property
    def fork(self) -> Region:
        return (self.target,) + tuple(self.successors)

    @property
    def order(self) -> int:
        return len(self.successors)

    def identity_defect(self) -> float:
        out = self.ptm[(slice(None),) + (0,) * len(self.fork)]
        return float(np.abs(out - E_I).max())

    def contract(self, vectors: Sequence[np.ndarray]) -> np.ndarray:
        """Image of a product ``v_x ⊗ v_1 ⊗ ... ⊗ v_k`` given as Pauli-coefficient vectors."""
        t = self.ptm
        for v in reversed(vectors):
            t = t @ v
        return t

    def apply(self, op: RegionOperator) -> RegionOperator:
        """Apply to an operator on (a subset of) the fork; result lives on ``{target}``."""
        if set(op.region) - set(self.fork):
            raise RegionError("operator is not supported on the fork; use lift() for wider regions")
        full = op.embed(self.fork)
        out = np.zeros(4, dtype=complex)
        for (x, z), c in full.raw_terms().items():
            out += c * self.ptm[(slice(None),) + full.codes(x, z)]
        return RegionOperator.from_site_vector(self.target, out)

    def apply_dense(self, mat: np.ndarray) -> np.ndarray:
        """Dense route: sandwich on the fork, then normalized partial trace."""
        fork = self.fork
        s = dense.embed(self.root_weight, (self.target,), fork)
        k = self.amplitude.embed(fork).to_dense()
        return dense.partial_trace(s @ k.conj().T @ mat @ k @ s, fork, (self.target,))

    def relocate(self, target: Vertex) -> TransitionExpectation:
        """The same map transported to the fork at ``target`` (a copy under a shift)."""
        target = tuple(target)
        if target == self.target:
            return self
        succ = tuple(target + (i,) for i in range(1, self.order + 1))
        mapping = dict(zip(self.fork, (target,) + succ))
        terms = {}
        for ps, c in self.amplitude.terms():
            terms[type(ps).of({mapping[v]: s for v, s in ps.letters})] = c
        amp = RegionOperator.from_strings(tuple(mapping[v] for v in self.amplitude.region), terms)
        return TransitionExpectation(target, succ, amp, self.weight, self.certified,
                                     self.identity_residual, self.ptm, self.root_weight)

    def shifted(self, x: Vertex) -> TransitionExpectation:
        return self.relocate(shift_by(x, self.target))

    def choi(self) -> np.ndarray:
        """Choi operator ``sum_ij E_ij ⊗ E(E_ij)`` in the fork's canonical order."""
        dense.check_budget(len(self.fork) + 1)
        dim = 2 ** len(self.fork)
        out = np.zeros((dim * 2, dim * 2), dtype=complex)
        for i in range(dim):
            for j in range(dim):
                unit = np.zeros((dim, dim), dtype=complex)
                unit[i, j] = 1.0
                out += np.kron(unit, self.apply_dense(unit))
        return out


@dataclass(frozen=True)
class CPReport:
    is_cp: bool
    min_eigenvalue: float


def check_cp(kernel: TransitionExpectation, tol: float = CP_TOL) -> CPReport:
    """Positivity of the Choi operator (dense path only)."""
    choi = kernel.choi()
    lam = float(np.linalg.eigvalsh(dense.hermitian_part(choi)).min())
    return CPReport(lam >= -tol, lam)


def from_amplitude(amplitude: RegionOperator, weight, **kwargs) -> TransitionExpectation:
    return TransitionExpectation.from_amplitude(amplitude, weight, **kwargs)


def conditional_trace(target: Vertex = (), k: int = 2) -> TransitionExpectation:
    """The kernel ``a -> Tr_{x]}(a)``."""
    succ = tuple(tuple(target) + (i,) for i in range(1, k + 1))
    return TransitionExpectation.from_amplitude(RegionOperator.identity((tuple(target),) + succ), 1.0,
                                                target=tuple(target), successors=succ)


# lifted maps


def apply_lifted(kernel: TransitionExpectation, op: RegionOperator) -> RegionOperator:
    """``id ⊗ E`` applied to ``op``: sites outside the fork pass through untouched."""
    region = canonical(set(op.region) | set(kernel.fork))
    full = op.embed(region)
    out_region = tuple(v for v in region if v not in set(kernel.successors))
    fork_pos = [region.index(v) for v in kernel.fork]
    rest_pos = [i for i, v in enumerate(region) if v in set(out_region)]
    x_out = out_region.index(kernel.target)
    acc: dict[tuple[int, int], complex] = {}
    for (x, z), c in full.raw_terms().items():
        codes = full.codes(x, z)
        vec = kernel.ptm[(slice(None),) + tuple(codes[p] for p in fork_pos)]
        rx = rz = 0
        for j, p in enumerate(rest_pos):
            if j == x_out:
                continue
            rx |= (codes[p] & 1) << j
            rz |= (codes[p] >> 1) << j
        for code in range(4):
            if vec[code] == 0:
                continue
            key = (rx | ((code & 1) << x_out), rz | ((code >> 1) << x_out))
            acc[key] = acc.get(key, 0) + c * vec[code]
    return RegionOperator(out_region, acc)


def apply_lifted_dense(kernel: TransitionExpectation, mat: np.ndarray, region: Region,
                       max_sites: int | None = None) -> tuple[np.ndarray, Region]:
    """Dense counterpart of :func:`apply_lifted`; returns the matrix and its region."""
    region = canonical(region)
    if set(kernel.fork) - set(region):
        raise RegionError("region must contain the whole fork")
    dense.check_budget(len(region), max_sites)
    s = dense.embed(kernel.root_weight, (kernel.target,), region, max_sites)
    k = dense.embed(kernel.amplitude.embed(kernel.fork).to_dense(), kernel.fork, region, max_sites)
    keep = tuple(v for v in region if v not in set(kernel.successors))
    return dense.partial_trace(s @ k.conj().T @ mat @ k @ s, region, keep), keep


@dataclass(frozen=True)
class QuasiConditionalExpectation:
    """``id_P ⊗ E`` for the triplet ``A_P ⊂ A_{P ∪ {x}} ⊂ A_{P ∪ {x} ∪ S(x)}``."""

    kernel: TransitionExpectation
    outer: Region = ()

    def __post_init__(self):
        outer = canonical(self.outer)
        if set(outer) & set(self.kernel.fork):
            raise RegionError("outer region overlaps the fork")
        object.__setattr__(self, "outer", outer)

    @property
    def domain(self) -> Region:
        return canonical(self.outer + self.kernel.fork)

    @property
    def codomain(self) -> Region:
        return canonical(self.outer + (self.kernel.target,))

    def apply(self, op: RegionOperator) -> RegionOperator:
        if set(op.region) - set(self.domain):
            raise RegionError("operator lies outside the triplet's largest algebra")
        return apply_lifted(self.kernel, op.embed(self.domain))

    def apply_dense(self, mat: np.ndarray) -> np.ndarray:
        return apply_lifted_dense(self.kernel, mat, self.domain)[0]

    def module_residual(self) -> float:
        """``max ||E(c a) - c E(a)||`` over Pauli bases of the outer region and the fork."""
        worst = 0.0
        fork_basis = list(pauli_basis(self.kernel.fork))
        for c in pauli_basis(self.outer):
            for a in fork_basis:
                lhs = self.apply(c @ a.embed(self.domain))
                rhs = c @ self.apply(a)
                worst = max(worst, lhs.max_abs_diff(rhs))
        return worst


def lift(kernel: TransitionExpectation, outer: Iterable[Vertex] = ()) -> QuasiConditionalExpectation:
    return QuasiConditionalExpectation(kernel, canonical(outer))


@dataclass(frozen=True)
class LevelMap:
    """Tensor product of the fork kernels of one level."""

    kernels: Mapping[Vertex, TransitionExpectation]

    def __post_init__(self):
        seen: set[Vertex] = set()
        for k in self.kernels.values():
            if seen & set(k.fork):
                raise RegionError("fork supports of a level must be disjoint")
            seen |= set(k.fork)

    @property
    def domain(self) -> Region:
        return canonical(v for k in self.kernels.values() for v in k.fork)

    @property
    def codomain(self) -> Region:
        return canonical(self.kernels)

    def apply(self, op: RegionOperator, order: Sequence[Vertex] | None = None) -> RegionOperator:
        """Compose the lifted per-vertex maps (they commute; ``order`` is for testing that)."""
        out = op
        for x in (order if order is not None else canonical(self.kernels)):
            out = apply_lifted(self.kernels[x], out)
        return out

    def apply_product(self, factors: Mapping[Vertex, np.ndarray]) -> dict[Vertex, np.ndarray]:
        """Factorwise action on a product operator given by per-site coefficient vectors."""
        return {x: k.contract([factors.get(v, E_I) for v in k.fork]) for x, k in self.kernels.items()}


def level_map(kernels: Mapping[Vertex, TransitionExpectation], n: int | None = None, k: int | None = None) -> LevelMap:
    """Assemble the level map, checking that every vertex of level ``n`` has a kernel."""
    if n is not None and k is not None:
        missing = [v for v in level_set(n, k) if v not in kernels]
        if missing:
            raise KeyError(f"missing kernel for vertex {format_vertex(missing[0])}")
    return LevelMap(dict(kernels))
