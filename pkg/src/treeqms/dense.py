"""Dense matrix helpers used as the oracle path.

Everything here works on plain ``numpy`` arrays over qubit sites and is
deliberately independent of the Pauli-string arithmetic in
:mod:`treeqms.operators`. Kronecker factors follow canonical region order,
first vertex most significant. Traces are normalized (``tr(1) == 1``).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from functools import reduce

import numpy as np

from .errors import BudgetExceededError, RegionError
from .tree import Region, Vertex, format_vertex

DENSE_MAX_SITES = 7

I2 = np.eye(2, dtype=complex)
X2 = np.array([[0, 1], [1, 0]], dtype=complex)
Y2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z2 = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_MATRICES = {"I": I2, "X": X2, "Y": Y2, "Z": Z2}


def check_budget(n_sites: int, max_sites: int | None = None) -> None:
    limit = DENSE_MAX_SITES if max_sites is None else max_sites
    if n_sites > limit:
        raise BudgetExceededError(
            f"dense path needs {n_sites} qubit sites (2^{2 * n_sites} matrix entries); budget is {limit}"
        )


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    if not mats:
        return np.ones((1, 1), dtype=complex)
    return reduce(np.kron, mats)


def string_matrix(letters: Mapping[Vertex, str], region: Region, max_sites: int | None = None) -> np.ndarray:
    """Kronecker product of single-site Pauli matrices over ``region``."""
    check_budget(len(region), max_sites)
    return kron_all([PAULI_MATRICES[letters.get(v, "I")] for v in region])


def normalized_trace(mat: np.ndarray) -> complex:
    return complex(np.trace(mat) / mat.shape[0])


def _positions(sub: Sequence[Vertex], region: Sequence[Vertex]) -> list[int]:
    index = {v: i for i, v in enumerate(region)}
    try:
        return [index[v] for v in sub]
    except KeyError as err:
        raise RegionError(f"vertex {format_vertex(err.args[0])} not in region") from None


def embed(mat: np.ndarray, sub: Region, region: Region, max_sites: int | None = None) -> np.ndarray:
    """Tensor ``mat`` (on ``sub``) with identities on the rest of ``region``."""
    check_budget(len(region), max_sites)
    n = len(region)
    _positions(sub, region)
    rest = [v for v in region if v not in set(sub)]
    full = np.kron(mat, np.eye(2 ** len(rest), dtype=complex))
    order = list(sub) + rest
    perm = [order.index(v) for v in region]
    t = full.reshape([2] * (2 * n))
    t = t.transpose(perm + [p + n for p in perm])
    return t.reshape(2**n, 2**n)


def partial_trace(mat: np.ndarray, region: Region, keep: Region) -> np.ndarray:
    """Normalized partial trace keeping the sites in ``keep`` (canonical order)."""
    n = len(region)
    _positions(keep, region)
    kept = set(keep)
    t = mat.reshape([2] * (2 * n))
    current = list(region)
    for v in reversed(region):
        if v in kept:
            continue
        i = current.index(v)
        m = len(current)
        t = np.trace(t, axis1=i, axis2=i + m) / 2
        current.pop(i)
    order = [current.index(v) for v in keep]
    m = len(current)
    t = t.transpose(order + [o + m for o in order])
    return t.reshape(2**m, 2**m)


def hermitian_part(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().T)


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitian_part(mat))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def hermitian_log(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitian_part(mat))
    return (v * np.log(w)) @ v.conj().T


def hermitian_exp(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitian_part(mat))
    return (v * np.exp(w)) @ v.conj().T
