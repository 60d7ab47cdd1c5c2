"""Ising model with competing interactions on the binary Cayley tree.

Per fork ``(x, (x,1), (x,2))`` the nearest-neighbour couplings are
``K = exp(beta * (II + ZZ)/2)`` on the two edges and the competing coupling
between the successors is ``L = exp(J * beta * (II + ZZ)/2)``. The fork
amplitude ``A = K K L`` expands to::

    A = gamma III + delta ZZI + delta ZIZ + eta IZZ

and the boundary equation ``Tr_{x]}(A* (1 ⊗ h ⊗ h) A) = h`` is solved by
``h = alpha * 1`` with ``alpha = 4 / (e^{2 J beta}(e^{4 beta} + 1) + 2 e^{2 beta})``.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import dense
from .engine import EXPLICIT_PAULI_MAX_VOLUME, PAULI_N_MAX, QmsHandle, evaluate_explicit, explicit_density
from .errors import BudgetExceededError, ConfigError, NotPositiveError, SolverError, UnsupportedModelError
from .kernels import TransitionExpectation
from .operators import RegionOperator
from .tree import ROOT, Vertex, direct_successors, format_vertex

FIXED_POINT_TOL = 1e-10
MAX_ITERATIONS = 500


@dataclass(frozen=True)
class ModelSpec:
    """Inverse temperature, competing coupling and tree order.

    ``beta`` and ``J`` may be zero (trivial anchors); negative values are
    rejected. Only ``k = 2`` and qubit sites admit the Ising fork amplitude.
    """

    beta: float
    J: float = 0.0
    k: int = 2
    site_dim: int = 2
    depth: int = 3

    def __post_init__(self):
        errors = []
        if not math.isfinite(self.beta) or self.beta < 0:
            errors.append(f"beta must be a finite number >= 0, got {self.beta}")
        if not math.isfinite(self.J) or self.J < 0:
            errors.append(f"J must be a finite number >= 0, got {self.J}")
        if self.k < 1:
            errors.append(f"k must be >= 1, got {self.k}")
        if self.site_dim != 2:
            errors.append(f"site_dim must be 2, got {self.site_dim}")
        if self.depth < 1:
            errors.append(f"depth must be >= 1, got {self.depth}")
        if errors:
            raise ConfigError("; ".join(errors))


@dataclass(frozen=True)
class Couplings:
    K: RegionOperator
    L: RegionOperator
    K0: float
    K3: float
    R0: float
    R3: float


@dataclass(frozen=True)
class ForkAmplitude:
    operator: RegionOperator
    gamma: float
    delta: float
    eta: float
    parts: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class FixedPoint:
    h: np.ndarray
    residual: float
    iterations: int

    @property
    def alpha(self) -> float:
        """The scalar when ``h`` is a multiple of the identity."""
        return float(np.real(self.h[0, 0]))

    @property
    def is_scalar(self) -> bool:
        return bool(np.allclose(self.h, self.h[0, 0] * np.eye(2), atol=1e-12))


def _pair_operator(u: Vertex, v: Vertex, c0: float, c3: float) -> RegionOperator:
    return (RegionOperator.identity((u, v)) * c0
            + RegionOperator.pauli({u: "Z", v: "Z"}, region=(u, v)) * c3)


def build_couplings(m: ModelSpec, x: Vertex = ROOT) -> Couplings:
    """``K`` on the edge ``<x,(x,1)>`` and ``L`` between ``(x,1)`` and ``(x,2)``."""
    eb, ejb = math.exp(m.beta), math.exp(m.J * m.beta)
    k0, k3 = (eb + 1) / 2, (eb - 1) / 2
    r0, r3 = (ejb + 1) / 2, (ejb - 1) / 2
    s1, s2 = x + (1,), x + (2,)
    return Couplings(_pair_operator(x, s1, k0, k3), _pair_operator(s1, s2, r0, r3), k0, k3, r0, r3)


def coupling_generator(u: Vertex, v: Vertex) -> RegionOperator:
    """``(II + ZZ) / 2`` on the pair."""
    return _pair_operator(u, v, 0.5, 0.5)


def amplitude_coefficients(m: ModelSpec) -> tuple[float, float, float]:
    """Closed forms of ``(gamma, delta, eta)``."""
    b, j = m.beta, m.J
    gamma = 0.25 * (math.exp((j + 2) * b) + math.exp(j * b) + 2 * math.exp(b))
    delta = 0.25 * math.exp(j * b) * (math.exp(2 * b) - 1)
    eta = 0.25 * (math.exp((j + 2) * b) + math.exp(j * b) - 2 * math.exp(b))
    return gamma, delta, eta


def _require_binary(m: ModelSpec) -> None:
    if m.k != 2:
        raise UnsupportedModelError(f"the competing-interaction amplitude needs k = 2, got k = {m.k}")


def build_amplitude(m: ModelSpec, x: Vertex = ROOT) -> ForkAmplitude:
    """``A = K_<x,(x,1)> K_<x,(x,2)> L_>(x,1),(x,2)<`` and its coefficients."""
    _require_binary(m)
    c = build_couplings(m, x)
    s1, s2 = direct_successors(x, 2)
    k2 = _pair_operator(x, s2, c.K0, c.K3)
    op = (c.K @ k2 @ c.L).chop(0.0)
    gamma = c.K0**2 * c.R0 + c.K3**2 * c.R3
    delta = c.K0 * c.K3 * (c.R0 + c.R3)
    eta = c.K0**2 * c.R3 + c.K3**2 * c.R0
    return ForkAmplitude(op, gamma, delta, eta, {"K1": c.K, "K2": k2, "L": c.L})


def closed_form_alpha(m: ModelSpec) -> float:
    _require_binary(m)
    b, j = m.beta, m.J
    return 4.0 / (math.exp(2 * j * b) * (math.exp(4 * b) + 1) + 2 * math.exp(2 * b))


def _fork_of(amplitude: RegionOperator, x: Vertex, k: int | None) -> tuple[Vertex, ...]:
    if k is None:
        k = max((v[len(x)] for v in amplitude.region if len(v) == len(x) + 1), default=2)
    return (x,) + direct_successors(x, k)


def boundary_map(amplitude: RegionOperator, h: np.ndarray, x: Vertex = ROOT, k: int | None = None) -> np.ndarray:
    """``F(h) = Tr_{x]}(A* (1 ⊗ h ⊗ ... ⊗ h) A)`` for an amplitude on the fork at ``x``."""
    fork = _fork_of(amplitude, x, k)
    amp = amplitude.embed(fork)
    middle = RegionOperator.identity(fork)
    for s in fork[1:]:
        middle = middle @ RegionOperator.from_dense(h, (s,))
    return (amp.adjoint() @ middle @ amp).partial_trace((x,)).to_dense()


def solve_fixed_point(amplitude: RegionOperator | ForkAmplitude, x: Vertex = ROOT, k: int | None = None,
                      tol: float = FIXED_POINT_TOL, max_iter: int = MAX_ITERATIONS) -> FixedPoint:
    """Solve ``F(h) = h`` by iterating on the normalized direction.

    ``F`` is homogeneous of degree ``k`` (the number of successors), so once
    the direction ``g`` with ``F(g) = lam g`` is found the solution is
    ``h = g * lam^{-1/(k-1)}``.

    Raises:
        SolverError: on non-convergence or when an iterate stops being positive.
    """
    amp = amplitude.operator if isinstance(amplitude, ForkAmplitude) else amplitude
    fork = _fork_of(amp, x, k)
    k = len(fork) - 1
    if k < 2:
        raise UnsupportedModelError("the boundary equation needs at least two successors")
    g = np.eye(2, dtype=complex)
    residual = float("inf")
    for it in range(1, max_iter + 1):
        f = boundary_map(amp, g, x, k)
        lam = dense.normalized_trace(f).real
        if lam <= 0 or np.linalg.eigvalsh(dense.hermitian_part(f)).min() < -1e-12 * abs(lam):
            raise SolverError(f"iterate {it} is not positive; the amplitude is not admissible", residual, it)
        scale = lam ** (-1.0 / (k - 1))
        h = g * scale
        # F(h) = scale^k F(g)
        residual = float(np.linalg.norm(f * scale**k - h, 2))
        if residual < tol:
            return FixedPoint(dense.hermitian_part(h), residual, it)
        g = f / lam
    raise SolverError(f"no convergence after {max_iter} iterations (residual {residual:.3e})", residual, max_iter)


def fixed_point_residual(amplitude: RegionOperator, h: np.ndarray, x: Vertex = ROOT, k: int | None = None) -> float:
    return float(np.linalg.norm(boundary_map(amplitude, h, x, k) - h, 2))


def ising_kernel(m: ModelSpec, x: Vertex = ROOT) -> TransitionExpectation:
    amp = build_amplitude(m, x)
    fp = solve_fixed_point(amp, x)
    if not fp.is_scalar:
        raise NotPositiveError("Ising boundary solution is expected to be scalar")
    return TransitionExpectation.from_amplitude(amp.operator, fp.alpha, target=x)


def build_qms(m: ModelSpec, n_max: int = PAULI_N_MAX,
              overrides: Mapping[Vertex, ModelSpec] | None = None) -> QmsHandle:
    """Homogeneous handle with kernel ``a -> alpha Tr_{x]}(A* a A)`` at every vertex.

    ``overrides`` swaps in a different model at selected vertices (used to
    build deliberately non-translation-invariant states). The initial state
    is the normalized trace.
    """
    kernels = {}
    for v, spec in (overrides or {}).items():
        try:
            kernels[tuple(v)] = ising_kernel(spec, tuple(v))
        except ConfigError as err:
            raise ConfigError(f"override at {format_vertex(tuple(v))}: {err}") from None
    return QmsHandle(m.k, np.eye(2, dtype=complex), ising_kernel(m), kernels, n_max)


@lru_cache(maxsize=64)
def _explicit_density(m: ModelSpec, volume: int) -> RegionOperator:
    return explicit_density(lambda u: build_amplitude(m, u).operator, m.k, volume)


def evaluate_explicit_ising(m: ModelSpec, a: RegionOperator, volume: int | None = None,
                            method: str = "pauli") -> complex:
    """``alpha^{2^n - 1} tr(M* a M)`` with ``M`` the ordered product of fork amplitudes."""
    _require_binary(m)
    depth = max((len(v) for v in a.support), default=0)
    n = max(depth, 1) if volume is None else volume
    if n < depth:
        raise ValueError(f"volume {n} is shallower than the observable (level {depth})")
    if method == "pauli" and n > EXPLICIT_PAULI_MAX_VOLUME:
        raise BudgetExceededError(f"explicit Pauli path limited to volume {EXPLICIT_PAULI_MAX_VOLUME}")
    alpha = closed_form_alpha(m)
    density = _explicit_density(m, n) if method == "pauli" else None
    return evaluate_explicit(lambda u: build_amplitude(m, u).operator, alpha, m.k, a, n, method, density)
