"""Finite-volume evaluation of quantum Markov states on trees.

A state is given by a :class:`QmsHandle`: an initial density on the root
site and one transition expectation per vertex. Its value on an observable
``a`` supported in ``Lambda_[0,n]`` at volume ``m >= n`` is the nested
contraction::

    phi0( E_[0,1]( a_0 ⊗ E_[1,2]( a_1 ⊗ ... E_[m-1,m]( a_{m-1} ⊗ a_m ) ) ) )

with the level-``m`` factor placed directly (no kernel below it). The
default volume is ``n + 1``, which for identity-preserving kernels is the
infinite-volume value. Observables are handled by linearity over their
Pauli strings; each string is a product over sites, so the contraction
only ever moves single-site coefficient vectors around.
"""

from __future__ import annotations

import warnings
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from . import dense
from .errors import BudgetExceededError, NotPositiveError, RegionError
from .kernels import E_I, TransitionExpectation, apply_lifted_dense
from .operators import CODE_TO_LETTER, RegionOperator, site_matrix_to_vector
from .tree import (ROOT, Region, Vertex, canonical, direct_successors, format_vertex, level_set,
                   predecessors, subtree_root)

ONE_HOT = tuple(np.eye(4, dtype=complex)[c] for c in range(4))
PAULI_N_MAX = 6
EXPLICIT_PAULI_MAX_VOLUME = 3
TENSOR_MAX_SITES = 10
TENSOR_MIN_TERMS = 64


class FallbackWarning(UserWarning):
    """The localized fast path was refused and the nested path used instead."""


@dataclass(frozen=True, eq=False)
class QmsHandle:
    """Initial state plus transition expectations.

    ``default`` (stored on the root fork) is transported to any vertex that
    has no entry in ``kernels``. ``root`` and ``vertices`` describe the
    subtree a restricted handle lives on; ``vertices=None`` means every
    descendant of ``root``.
    """

    k: int
    phi0: np.ndarray
    default: TransitionExpectation | None = None
    kernels: Mapping[Vertex, TransitionExpectation] = field(default_factory=dict)
    n_max: int = PAULI_N_MAX
    root: Vertex = ROOT
    vertices: frozenset[Vertex] | None = None
    check_state: bool = True
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        rho = np.asarray(self.phi0, dtype=complex)
        if rho.shape != (2, 2):
            raise ValueError("phi0 must be a 2x2 density matrix")
        object.__setattr__(self, "phi0", rho)
        if self.check_state:
            if not np.allclose(rho, rho.conj().T, atol=1e-10):
                raise NotPositiveError("phi0 is not self-adjoint")
            if np.linalg.eigvalsh(dense.hermitian_part(rho)).min() < -1e-10:
                raise NotPositiveError("phi0 is not positive semidefinite")
            if abs(dense.normalized_trace(rho) - 1) > 1e-10:
                raise NotPositiveError("phi0 must have unit normalized trace")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        for v, ker in self.kernels.items():
            if ker.target != tuple(v):
                raise RegionError(f"kernel registered at {format_vertex(v)} targets {format_vertex(ker.target)}")
        if self.default is None:
            for lvl in range(self.root_level, self.n_max + 1):
                for v in self.level_vertices(lvl):
                    if v not in self.kernels:
                        raise KeyError(f"no kernel for vertex {format_vertex(v)}")
        self._cache["phi0"] = site_matrix_to_vector(rho)

    @property
    def root_level(self) -> int:
        return len(self.root)

    @property
    def certified(self) -> bool:
        kers = list(self.kernels.values()) + ([self.default] if self.default is not None else [])
        return all(k.certified for k in kers)

    @property
    def homogeneous(self) -> bool:
        return self.default is not None and not self.kernels

    def contains(self, v: Vertex) -> bool:
        if v[: len(self.root)] != self.root or not all(1 <= i <= self.k for i in v):
            return False
        return self.vertices is None or v in self.vertices

    def successors(self, v: Vertex) -> Region:
        return direct_successors(v, self.k)

    def level_vertices(self, lvl: int) -> Region:
        if lvl < self.root_level:
            return ()
        out = tuple(self.root + w for w in level_set(lvl - self.root_level, self.k))
        return tuple(v for v in out if self.contains(v))

    def kernel(self, x: Vertex) -> TransitionExpectation:
        x = tuple(x)
        if x in self.kernels:
            return self.kernels[x]
        cache = self._cache.setdefault("kernels", {})
        if x not in cache:
            if self.default is None:
                raise KeyError(f"no kernel for vertex {format_vertex(x)}")
            cache[x] = self.default.relocate(x)
        return cache[x]

    def phi0_value(self, vec: np.ndarray) -> complex:
        """``phi0`` applied to a root operator given by Pauli coefficients."""
        return complex(self._cache["phi0"] @ vec)

    def root_marginal(self) -> np.ndarray:
        """Density of the state restricted to the root site (volume 1)."""
        vals = [evaluate_product(self, {self.root: ONE_HOT[c]}, self.root_level + 1) for c in range(4)]
        return sum(vals[c] * dense.PAULI_MATRICES[CODE_TO_LETTER[c]] for c in range(4))


@dataclass(frozen=True)
class FiniteVolumeValue:
    observable: RegionOperator
    value: complex
    volume: int
    path: str
    fallback: bool = False
    residuals: dict = field(default_factory=dict)


def observable_depth(a: RegionOperator) -> int:
    sup = a.support
    return max((len(v) for v in sup), default=0)


def _check_observable(h: QmsHandle, a: RegionOperator, volume: int | None) -> int:
    depth = max(observable_depth(a), h.root_level)
    if depth > h.n_max:
        raise RegionError(f"observable reaches level {depth}, beyond n_max={h.n_max}")
    for v in a.support:
        if not h.contains(v):
            raise RegionError(f"observable acts on {format_vertex(v)}, outside the handle's tree")
    if volume is None:
        return depth + 1
    if volume < depth:
        raise RegionError(f"volume {volume} is shallower than the observable (level {depth})")
    return volume


def _string_factors(a: RegionOperator) -> Iterable[tuple[complex, dict[Vertex, np.ndarray]]]:
    for (x, z), c in a.raw_terms().items():
        codes = a.codes(x, z)
        yield c, {v: ONE_HOT[code] for v, code in zip(a.region, codes) if code}


def identity_subtree(h: QmsHandle, v: Vertex, volume: int) -> np.ndarray:
    """Image of the identity on the subtree below ``v`` down to ``volume`` (cached per handle)."""
    cache = h._cache.setdefault("identity_subtrees", {})
    key = (v, volume)
    if key not in cache:
        if len(v) >= volume:
            cache[key] = E_I
        else:
            kids = [identity_subtree(h, c, volume) if h.contains(c) else E_I for c in h.successors(v)]
            cache[key] = h.kernel(v).contract([E_I] + kids)
    return cache[key]


def evaluate_product(h: QmsHandle, factors: Mapping[Vertex, np.ndarray], volume: int,
                     collapse: bool = False) -> complex:
    """Value on a product operator given by per-site Pauli coefficient vectors.

    With ``collapse`` every subtree carrying only identities is replaced by
    the identity without contracting it, which is exact when the kernels
    are identity preserving.
    """
    closure: set[Vertex] = set()
    for v in factors:
        closure.update(predecessors(v))
        closure.add(v)

    def rec(v: Vertex) -> np.ndarray:
        if v not in closure:
            return E_I if collapse else identity_subtree(h, v, volume)
        own = factors.get(v, E_I)
        if len(v) == volume:
            return own
        kids = [rec(c) if h.contains(c) else E_I for c in h.successors(v)]
        return h.kernel(v).contract([own] + kids)

    return h.phi0_value(rec(h.root))


def moment_tensor(h: QmsHandle, region: Iterable[Vertex], volume: int) -> np.ndarray:
    """``M[c_1, ..., c_r] = phi(P_c)`` for every Pauli string on ``region`` at once.

    Axes follow canonical region order, letter codes ``(I, X, Z, Y)``. The
    tree below the region is contracted once with the region's axes left
    open, so the cost is one pass instead of ``4^r`` separate evaluations.
    """
    region = canonical(region)
    if len(region) > TENSOR_MAX_SITES:
        raise BudgetExceededError(f"moment tensor on {len(region)} sites exceeds {TENSOR_MAX_SITES}")
    for v in region:
        if not h.contains(v):
            raise RegionError(f"{format_vertex(v)} is outside the handle's tree")
        if len(v) > volume:
            raise RegionError(f"{format_vertex(v)} lies below volume {volume}")
    closure = set(region)
    for v in region:
        closure.update(predecessors(v))
    closure = {v for v in closure if len(v) >= h.root_level} | {h.root}
    free = list(range(52))
    open_label = {v: free.pop() for v in region}
    result: dict[Vertex, int] = {}
    t, t_labels = np.ones((), dtype=complex), []
    for v in sorted(closure, key=lambda u: (-len(u), u)):
        if len(v) == volume:
            result[v] = open_label.get(v)
            continue
        operands, consumed = [], []
        own = open_label.get(v)
        if own is None:
            own = free.pop()
            operands += [E_I, [own]]
            consumed.append(own)
        ins = [own]
        for c in h.successors(v):
            if c in closure:
                lab = result[c]
                if lab not in open_label.values():
                    consumed.append(lab)
            else:
                lab = free.pop()
                operands += [identity_subtree(h, c, volume) if h.contains(c) else E_I, [lab]]
                consumed.append(lab)
            ins.append(lab)
        out = free.pop()
        ptm = h.kernel(v).ptm
        keep = [lab for lab in t_labels if lab not in consumed]
        new_open = [lab for lab in ins if lab in open_label.values() and lab not in keep]
        out_labels = keep + new_open + [out]
        t = np.einsum(ptm, [out] + ins, t, t_labels, *operands, out_labels, optimize=True)
        t_labels = out_labels
        free.extend(lab for lab in consumed)
        result[v] = out
    root = result[h.root]
    final = [open_label[v] for v in region]
    if root is None:
        # volume at the root level and nothing observed: phi0 of the identity
        return np.full((4,) * len(region), h.phi0_value(E_I))
    return np.einsum(t, t_labels, h._cache["phi0"], [root], final, optimize=True)


def evaluate_nested(h: QmsHandle, a: RegionOperator, volume: int | None = None,
                    method: str = "pauli", max_sites: int | None = None) -> complex:
    """Contract every fork level by level, innermost first."""
    m = _check_observable(h, a, volume)
    if method == "dense":
        return _evaluate_dense(h, a, m, max_sites)
    if method != "pauli":
        raise ValueError(f"unknown method {method!r}")
    if a.n_terms > TENSOR_MIN_TERMS and len(a.region) <= TENSOR_MAX_SITES:
        coeffs = np.zeros((4,) * len(a.region), dtype=complex)
        for (x, z), c in a.raw_terms().items():
            coeffs[a.codes(x, z)] += c
        return complex(np.sum(coeffs * moment_tensor(h, a.region, m)))
    return sum((c * evaluate_product(h, f, m) for c, f in _string_factors(a)), 0j)


def evaluate(h: QmsHandle, a: RegionOperator, volume: int | None = None) -> FiniteVolumeValue:
    m = _check_observable(h, a, volume)
    return FiniteVolumeValue(a, evaluate_nested(h, a, m), m, "nested")


def evaluate_localized(h: QmsHandle, a: RegionOperator, x: Vertex | None = None,
                       volume: int | None = None) -> FiniteVolumeValue:
    """Path-plus-fork evaluation with every off-path fork collapsed to the identity.

    Needs identity-preserving (certified) kernels; otherwise falls back to
    :func:`evaluate_nested` and flags the result.
    """
    sup = a.support
    if x is None:
        deepest = max(sup, key=lambda v: (len(v), v), default=h.root)
        x = deepest if set(sup) <= set(predecessors(deepest)) | {deepest} else deepest[:-1]
    x = tuple(x)
    allowed = set(predecessors(x)) | {x} | set(h.successors(x))
    if not set(sup) <= allowed:
        raise RegionError(f"observable is not supported on the path and fork of {format_vertex(x)}")
    m = _check_observable(h, a, volume)
    if not h.certified:
        warnings.warn("kernels carry no identity-preservation certificate; using nested evaluation",
                      FallbackWarning, stacklevel=2)
        return FiniteVolumeValue(a, evaluate_nested(h, a, m), m, "nested", fallback=True)
    value = sum((c * evaluate_product(h, f, m, collapse=True) for c, f in _string_factors(a)), 0j)
    return FiniteVolumeValue(a, value, m, "localized")


# dense oracle path


def dense_region(h: QmsHandle, volume: int) -> Region:
    """Sites touched by a dense contraction down to ``volume``."""
    out: set[Vertex] = set()
    for lvl in range(h.root_level, volume + 1):
        for v in h.level_vertices(lvl):
            out.add(v)
            if lvl < volume:
                out.update(h.successors(v))
    return canonical(out)


def _evaluate_dense(h: QmsHandle, a: RegionOperator, volume: int, max_sites: int | None) -> complex:
    region = dense_region(h, volume)
    dense.check_budget(len(region), max_sites)
    mat = a.embed(region).to_dense(max_sites)
    for lvl in range(volume - 1, h.root_level - 1, -1):
        for v in h.level_vertices(lvl):
            mat, region = apply_lifted_dense(h.kernel(v), mat, region, max_sites)
    assert region == (h.root,)
    return complex(dense.normalized_trace(h.phi0 @ mat))


def marginal_density(h: QmsHandle, volume: int, max_sites: int | None = None) -> tuple[np.ndarray, Region]:
    """Density ``rho`` with ``phi(a) = tr(rho a)`` at the given volume (dense).

    Built by pushing ``phi0`` through the Hilbert-Schmidt adjoints of the
    kernels, ``sigma -> K w^{1/2} (sigma ⊗ 1) w^{1/2} K*``, level by level.
    """
    region = dense_region(h, volume)
    dense.check_budget(len(region), max_sites)
    rho, cur = h.phi0, (h.root,)
    for lvl in range(h.root_level, volume):
        for v in h.level_vertices(lvl):
            ker = h.kernel(v)
            new = canonical(cur + ker.successors)
            s = dense.embed(ker.root_weight, (v,), new, max_sites)
            kmat = dense.embed(ker.amplitude.embed(ker.fork).to_dense(), ker.fork, new, max_sites)
            rho = kmat @ s @ dense.embed(rho, cur, new, max_sites) @ s.conj().T @ kmat.conj().T
            cur = new
    return rho, cur


# explicit product formula


def explicit_density(amplitude_at: Callable[[Vertex], RegionOperator], k: int, volume: int) -> RegionOperator:
    """``M M*`` with ``M = K_[n-1,n] ... K_[0,1]`` and ``K_[i,i+1] = prod_{u in Lambda_i} A_u``."""
    x = RegionOperator.identity(())
    for lvl in range(volume):
        for u in level_set(lvl, k):
            amp = amplitude_at(u)
            x = amp @ x @ amp.adjoint()
    return x


def evaluate_explicit(amplitude_at: Callable[[Vertex], RegionOperator], alpha: float, k: int,
                      a: RegionOperator, volume: int, method: str = "pauli",
                      density: RegionOperator | None = None) -> complex:
    """``alpha^{|Lambda_[0,n-1]|} tr(M* a M)`` for a homogeneous weight ``alpha``."""
    n_interior = sum(k**j for j in range(volume))
    scale = alpha**n_interior
    if method == "dense":
        region = tuple(v for j in range(volume + 1) for v in level_set(j, k))
        dense.check_budget(len(region))
        mmat = np.eye(2 ** len(region), dtype=complex)
        for lvl in range(volume):
            for u in level_set(lvl, k):
                amp = amplitude_at(u)
                fork = (u,) + direct_successors(u, k)
                mmat = dense.embed(amp.embed(fork).to_dense(), fork, region) @ mmat
        return complex(scale * dense.normalized_trace(mmat.conj().T @ a.embed(region).to_dense() @ mmat))
    if volume > EXPLICIT_PAULI_MAX_VOLUME:
        raise BudgetExceededError(f"explicit Pauli path limited to volume {EXPLICIT_PAULI_MAX_VOLUME}")
    if density is None:
        density = explicit_density(amplitude_at, k, volume)
    total = 0j
    big = a.embed(canonical(set(a.region) | set(density.region)))
    dens = density.embed(big.region).raw_terms()
    for key, c in big.raw_terms().items():
        total += c * dens.get(key, 0)
    return complex(scale * total)


# subtrees


def restrict_to_subtree(h: QmsHandle, vertices: Iterable[Vertex] | None = None,
                        root: Vertex | None = None) -> QmsHandle:
    """Sub-QMS on a connected subtree.

    Pass a finite vertex set, or only ``root`` for the whole future of that
    vertex. The new initial state is the full state's functional at the new
    root taken at volume ``level(root)``, so restricted evaluations agree
    with the full ones exactly.
    """
    if vertices is not None:
        vs = frozenset(map(tuple, vertices))
        new_root = subtree_root(vs)
    elif root is not None:
        vs, new_root = None, tuple(root)
    else:
        return h
    for v in (vs or {new_root}):
        if not h.contains(v):
            raise RegionError(f"{format_vertex(v)} is not in the handle's tree")
    if vs is None and new_root == h.root:
        return h
    lvl = len(new_root)
    vals = [evaluate_product(h, {new_root: ONE_HOT[c]}, lvl) for c in range(4)]
    rho = sum(vals[c] * dense.PAULI_MATRICES[CODE_TO_LETTER[c]] for c in range(4))
    if h.vertices is not None:
        vs = frozenset(vs & h.vertices) if vs is not None else frozenset(v for v in h.vertices if v[:lvl] == new_root)
    return QmsHandle(h.k, rho, h.default, dict(h.kernels), h.n_max, new_root, vs,
                     check_state=h.certified and h.check_state)
