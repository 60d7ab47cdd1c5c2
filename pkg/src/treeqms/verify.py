"""Numerical certificates for Markov, potential, translation and subtree properties.

Every check returns a :class:`VerificationReport`. A report passes exactly
when its worst residual is below the tolerance. Scalar residuals are
absolute differences of state values; operator residuals name the norm they
use (``operator`` on the dense path, ``l1`` on Pauli coefficients otherwise).
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import dense
from .engine import ONE_HOT, QmsHandle, evaluate_product, marginal_density, moment_tensor, restrict_to_subtree
from .errors import BudgetExceededError, NotPositiveError, RegionError, TreeError
from .kernels import E_I
from .operators import CODE_TO_LETTER, PauliString, RegionOperator
from .tree import (Region, Vertex, canonical, format_vertex, level_set, levels_between, predecessors,
                   shift_by)

DEFAULT_TOL = 1e-9
BASIS_MAX_SITES = 7
W_CONVENTION = "W_j is the j-th level of the tree"
TRACE_CONVENTION = "normalized trace, tr(1) = 1"


@dataclass
class VerificationReport:
    property: str
    passed: bool
    residual: float
    witness: str
    tolerance: float
    volumes: tuple[int, ...] = ()
    norm: str = "abs"
    notes: dict = field(default_factory=dict)
    criteria: dict[str, VerificationReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "property": self.property,
            "pass": bool(self.passed),
            "residual": float(self.residual),
            "witness": self.witness,
            "tolerance": float(self.tolerance),
            "volumes": list(self.volumes),
            "norm": self.norm,
            "notes": dict(self.notes),
        }
        if self.criteria:
            out["criteria"] = {name: r.to_dict() for name, r in self.criteria.items()}
        return out


def _report(prop: str, residual: float, witness: str, tol: float, volumes: Iterable[int],
            norm: str = "abs", **notes) -> VerificationReport:
    residual = float(residual)
    return VerificationReport(prop, residual < tol, residual, witness, tol, tuple(sorted(set(volumes))),
                              norm, notes)


def _witness(region: Region, codes: Iterable[int]) -> str:
    letters = {v: CODE_TO_LETTER[c] for v, c in zip(region, codes) if c}
    return str(PauliString.of(letters)) if letters else "I"


def _check_basis_size(region: Region) -> None:
    if len(region) > BASIS_MAX_SITES:
        raise BudgetExceededError(
            f"Pauli basis on {len(region)} sites has 4^{len(region)} elements; limit is {BASIS_MAX_SITES} sites")


# Markov conditions


def _kernel_successors(h: QmsHandle, x: Vertex) -> Region:
    return tuple(s for s in h.successors(x) if h.contains(s))


def _defect_tensor(h: QmsHandle, region: Region, xs: Iterable[Vertex], volume: int) -> np.ndarray:
    """``D[c] = phi(E(P_c)) - phi(P_c)`` over every Pauli string on ``region``.

    ``E`` is the product of the kernels at ``xs`` (each ``x`` must lie in
    ``region``). ``phi(E(P))`` is read off the moment tensor of the region
    with the successors removed, pushed through each kernel's transfer tensor.
    """
    _check_basis_size(region)
    xs = list(xs)
    succ = {s for x in xs for s in h.successors(x)}
    reduced = tuple(v for v in region if v not in succ)
    t = moment_tensor(h, reduced, volume)
    labels = {v: i for i, v in enumerate(region)}
    t_labels = [labels[v] for v in reduced]
    nxt = len(region)
    for x in xs:
        ins, operands = [labels[x]], []
        for c in h.successors(x):
            if c in labels:
                ins.append(labels[c])
            else:
                operands += [E_I, [nxt]]
                ins.append(nxt)
                nxt += 1
        inner = nxt
        nxt += 1
        t_labels_in = [inner if lab == labels[x] else lab for lab in t_labels]
        out = [lab for lab in t_labels if lab != labels[x]] + [lab for lab in ins if lab < len(region)]
        t = np.einsum(t, t_labels_in, h.kernel(x).ptm, [inner] + ins, *operands, out, optimize=True)
        t_labels = out
    order = [t_labels.index(labels[v]) for v in region]
    return np.transpose(t, order) - moment_tensor(h, region, volume)


def _worst(defect: np.ndarray, region: Region) -> tuple[float, str]:
    if defect.size == 0:
        return 0.0, "I"
    idx = np.unravel_index(int(np.argmax(np.abs(defect))), defect.shape)
    worst = float(np.abs(defect[idx]))
    return worst, (_witness(region, idx) if worst > 0 else "I")


def _dense_defect(h: QmsHandle, xs: Iterable[Vertex], volume: int, max_sites: int | None) -> tuple[np.ndarray, Region]:
    """Density of ``a -> phi(E(a)) - phi(a)`` at ``volume`` with ``E`` the product of kernels at ``xs``.

    ``phi(E(a)) = tr(rho_red E(a)) = tr(K s (rho_red ⊗ 1) s K* a)``, so the
    Pauli coefficients of the returned matrix are exactly the basis residuals.
    """
    rho, region = marginal_density(h, volume, max_sites)
    xs = list(xs)
    succ = {s for x in xs for s in h.kernel(x).successors}
    keep = tuple(v for v in region if v not in succ)
    sigma, cur = dense.partial_trace(rho, region, keep), keep
    for x in xs:
        ker = h.kernel(x)
        new = canonical(cur + ker.successors)
        s = dense.embed(ker.root_weight, (x,), new, max_sites)
        kmat = dense.embed(ker.amplitude.embed(ker.fork).to_dense(), ker.fork, new, max_sites)
        sigma = kmat @ s @ dense.embed(sigma, cur, new, max_sites) @ s.conj().T @ kmat.conj().T
        cur = new
    sigma = dense.embed(sigma, cur, region, max_sites)
    return sigma - rho, region


def _max_coefficient(defect: np.ndarray, region: Region, within: Region) -> tuple[float, str]:
    op = RegionOperator.from_dense(defect, region)
    allowed = set(within)
    worst, witness = 0.0, "I"
    for ps, c in op.terms():
        if set(ps.support) <= allowed and abs(c) > worst:
            worst, witness = abs(c), str(ps) if ps.letters else "I"
    return worst, witness


def markov_region(h: QmsHandle, x: Vertex) -> Region:
    """``P(x) ∪ {x} ∪ S(x)`` inside the handle's tree."""
    past = tuple(v for v in predecessors(x) if h.contains(v))
    return canonical(past + (x,) + _kernel_successors(h, x))


def check_localized_markov(h: QmsHandle, x: Vertex, n: int | None = None, tol: float = DEFAULT_TOL,
                           method: str = "pauli", max_sites: int | None = None) -> VerificationReport:
    """``max |phi(E_x(a)) - phi(a)|`` over the Pauli basis of the path and fork of ``x``.

    ``n`` is the evaluation volume (default ``level(x) + 1``).
    """
    x = tuple(x)
    if not h.contains(x):
        raise RegionError(f"{format_vertex(x)} is not in the handle's tree")
    n = len(x) + 1 if n is None else n
    if not len(x) < n <= h.n_max:
        raise RegionError(f"volume {n} must satisfy level(x)={len(x)} < n <= n_max={h.n_max}")
    region = markov_region(h, x)
    if method == "pauli":
        worst, witness = _worst(_defect_tensor(h, region, [x], n), region)
        norm = "abs"
    elif method == "dense":
        defect, full = _dense_defect(h, [x], n, max_sites)
        worst, witness = _max_coefficient(defect, full, region)
        norm = "abs (dense)"
    else:
        raise ValueError(f"unknown method {method!r}")
    return _report("localized_markov", worst, f"{format_vertex(x)}: {witness}", tol, [n], norm,
                   vertex=format_vertex(x), basis_sites=len(region))


def check_level_markov(h: QmsHandle, n: int, tol: float = DEFAULT_TOL, method: str = "pauli",
                       max_sites: int | None = None, compare_vertices: bool = True) -> VerificationReport:
    """``max |phi(E_n(a)) - phi(a)|`` over the Pauli basis of ``Lambda_[0,n+1]`` at volume ``n + 1``.

    With ``compare_vertices`` the per-vertex checks at every vertex of level
    ``n`` are run too; ``notes['equivalent']`` records whether both routes
    reach the same verdict.
    """
    volume = n + 1
    if volume > h.n_max:
        raise RegionError(f"level check at n={n} needs n_max >= {volume}")
    xs = h.level_vertices(n)
    region = canonical(v for j in range(h.root_level, volume + 1) for v in h.level_vertices(j))
    if method == "pauli":
        worst, witness = _worst(_defect_tensor(h, region, xs, volume), region)
        norm = "abs"
    elif method == "dense":
        defect, full = _dense_defect(h, xs, volume, max_sites)
        worst, witness = _max_coefficient(defect, full, region)
        norm = "abs (dense)"
    else:
        raise ValueError(f"unknown method {method!r}")
    rep = _report("level_markov", worst, witness, tol, [volume], norm, level=n)
    if compare_vertices:
        per = [check_localized_markov(h, x, volume, tol, method, max_sites) for x in xs]
        vertex_worst = max(r.residual for r in per)
        rep.notes["vertex_residual"] = vertex_worst
        rep.notes["vertex_passed"] = all(r.passed for r in per)
        rep.notes["equivalent"] = rep.notes["vertex_passed"] == rep.passed
        rep.criteria = {r.notes["vertex"]: r for r in per}
    return rep


# potentials


@dataclass
class PotentialDecomposition:
    """``h_Lambda = H_W0 + sum_j H_{W_j,W_j+1} + Hhat_{W_n}`` with ``W_j`` the j-th level."""

    volume: int
    region: Region
    hamiltonian: RegionOperator
    site_block: RegionOperator
    pair_blocks: dict[int, RegionOperator]
    fork_blocks: dict[Vertex, RegionOperator]
    boundary_blocks: dict[int, RegionOperator]
    decomposition_residual: float
    notes: dict = field(default_factory=dict)

    def total(self) -> RegionOperator:
        out = self.site_block.embed(self.region)
        for op in list(self.pair_blocks.values()) + list(self.boundary_blocks.values()):
            out = out + op.embed(self.region)
        return out

    def with_pair_block(self, j: int, op: RegionOperator) -> PotentialDecomposition:
        """Copy with ``H_{W_j,W_j+1}`` replaced (used to inject faults)."""
        blocks = dict(self.pair_blocks)
        blocks[j] = op
        return replace(self, pair_blocks=blocks)


def _operator_norm(op: RegionOperator, max_sites: int | None = None) -> tuple[float, str]:
    limit = dense.DENSE_MAX_SITES if max_sites is None else max_sites
    if len(op.region) <= limit:
        return op.norm_op(limit), "operator"
    return op.norm_l1(), "l1"


def extract_potential(h: QmsHandle, n: int, max_sites: int | None = None,
                      faithful_tol: float = 1e-13) -> PotentialDecomposition:
    """Potential ``-log rho`` of the volume-``n`` density and its level-by-level blocks.

    Fork blocks are ``H_{x,S(x)} = -log(K_x w_x K_x*)``, the site block is
    ``-log phi0`` and the boundary terms vanish. The blocks sum to the
    potential exactly when the fork factors commute; otherwise the mismatch is
    reported as ``decomposition_residual``.

    Raises:
        NotPositiveError: if the density has a (numerically) zero eigenvalue.
    """
    rho, region = marginal_density(h, n, max_sites)
    evals = np.linalg.eigvalsh(dense.hermitian_part(rho))
    if evals.min() <= faithful_tol * max(evals.max(), 1.0):
        raise NotPositiveError(f"state is not faithful at volume {n}: eigenvalue {evals.min():.3e}")
    ham = RegionOperator.from_dense(-dense.hermitian_log(rho), region).chop(1e-14)

    w0 = np.linalg.eigvalsh(dense.hermitian_part(h.phi0))
    if w0.min() <= faithful_tol:
        raise NotPositiveError(f"initial state is not faithful: eigenvalue {w0.min():.3e}")
    site = RegionOperator.from_dense(-dense.hermitian_log(h.phi0), (h.root,)).chop(1e-14)
    forks: dict[Vertex, RegionOperator] = {}
    pairs: dict[int, RegionOperator] = {}
    for j in range(h.root_level, n):
        acc = RegionOperator.zero()
        for x in h.level_vertices(j):
            ker = h.kernel(x)
            kmat = ker.amplitude.embed(ker.fork).to_dense()
            wmat = dense.embed(ker.weight, (x,), ker.fork)
            block = RegionOperator.from_dense(-dense.hermitian_log(kmat @ wmat @ kmat.conj().T), ker.fork).chop(1e-14)
            forks[x] = block
            acc = acc + block
        pairs[j] = acc
    boundary = {n: RegionOperator.zero()}
    dec = PotentialDecomposition(n, region, ham, site, pairs, forks, boundary, 0.0,
                                 {"W": W_CONVENTION, "trace": TRACE_CONVENTION})
    diff = ham - dec.total()
    dec.decomposition_residual, dec.notes["decomposition_norm"] = _operator_norm(diff, max_sites)
    return dec


def check_commutation(d: PotentialDecomposition, tol: float = 1e-12,
                      max_sites: int | None = None) -> VerificationReport:
    """Largest commutator among neighbouring blocks of the decomposition.

    Pairs checked: ``[H_Wn, H_Wn,Wn+1]``, ``[H_Wn,Wn+1, Hhat_Wn+1]``,
    ``[H_Wn, Hhat_Wn]`` and ``[H_Wn,Wn+1, H_Wn+1,Wn+2]``, wherever the blocks exist.
    """
    site = {min(d.pair_blocks, default=0): d.site_block}
    checks: list[tuple[str, RegionOperator, RegionOperator]] = []
    for j, pb in sorted(d.pair_blocks.items()):
        if j in site:
            checks.append((f"[H_W{j}, H_W{j},W{j + 1}]", site[j], pb))
        if j + 1 in d.boundary_blocks:
            checks.append((f"[H_W{j},W{j + 1}, Hhat_W{j + 1}]", pb, d.boundary_blocks[j + 1]))
        if j + 1 in d.pair_blocks:
            checks.append((f"[H_W{j},W{j + 1}, H_W{j + 1},W{j + 2}]", pb, d.pair_blocks[j + 1]))
    for j, hb in sorted(d.boundary_blocks.items()):
        if j in site:
            checks.append((f"[H_W{j}, Hhat_W{j}]", site[j], hb))
    worst, witness, norm = 0.0, "none", "operator"
    for name, a, b in checks:
        r, norm_used = _operator_norm(a.commutator(b), max_sites)
        if norm_used == "l1":
            norm = "l1"
        if r > worst or witness == "none":
            worst, witness = max(worst, r), name if r >= worst else witness
    return _report("commutation", worst, witness, tol, [d.volume], norm, pairs_checked=len(checks),
                   W=W_CONVENTION, trace=TRACE_CONVENTION)


# translation invariance


def _shift_factors(x: Vertex, factors: Mapping[Vertex, np.ndarray]) -> dict[Vertex, np.ndarray]:
    return {shift_by(x, v): f for v, f in factors.items()}


def _require_full_tree(h: QmsHandle) -> None:
    if h.root != () or h.vertices is not None:
        raise TreeError("translation invariance needs the full tree rooted at the origin")


def check_translation_invariance(h: QmsHandle, tol: float = DEFAULT_TOL, depth: int = 2) -> VerificationReport:
    """Run the three equivalent criteria and report each.

    * ``shift``: ``phi(alpha_j(b)) = phi(b)`` for every single shift ``j`` and
      every ``b`` in the Pauli basis of ``Lambda_[0,1]`` or one of its single
      shifts (so kernels one level deeper are probed too).
    * ``subtree``: ``phi_{T_x}(alpha_x(b)) = phi(b)`` for every ``x`` with
      ``level(x) <= depth`` and ``b`` in the basis of ``Lambda_[0,1]``.
    * ``kernel_copy``: the kernel at each ``x`` in ``Lambda_[1,depth]`` acts as
      the root kernel transported by ``alpha_x`` (transfer tensors compared).

    ``notes['disagree']`` is set when the verdicts differ.
    """
    _require_full_tree(h)
    if h.n_max < depth + 2:
        raise RegionError(f"translation check needs n_max >= {depth + 2}")
    k = h.k
    base = levels_between(0, 1, k)
    base_codes = list(product(range(4), repeat=len(base)))
    probes: list[dict[Vertex, np.ndarray]] = []
    for prefix in [()] + [(j,) for j in range(1, k + 1)]:
        for codes in base_codes:
            probes.append({shift_by(prefix, v): ONE_HOT[c] for v, c in zip(base, codes) if c})

    def value(handle, factors):
        vol = max((len(v) for v in factors), default=handle.root_level) + 1
        return evaluate_product(handle, factors, max(vol, handle.root_level + 1))

    worst, wit = 0.0, "none"
    for f in probes:
        ref = value(h, f)
        for j in range(1, k + 1):
            r = abs(value(h, _shift_factors((j,), f)) - ref)
            if r > worst:
                worst, wit = r, f"alpha_{j} on {_factor_label(f)}"
    shift_rep = _report("translation.shift", worst, wit, tol, [2, 3, 4])

    worst, wit = 0.0, "none"
    for lvl in range(1, depth + 1):
        for x in level_set(lvl, k):
            sub = restrict_to_subtree(h, root=x)
            for codes in base_codes:
                f = {v: ONE_HOT[c] for v, c in zip(base, codes) if c}
                r = abs(value(sub, _shift_factors(x, f)) - value(h, f))
                if r > worst:
                    worst, wit = r, f"T_{format_vertex(x)} on {_factor_label(f)}"
    subtree_rep = _report("translation.subtree", worst, wit, tol, range(2, depth + 3))

    root_ptm = h.kernel(()).ptm
    worst, wit = 0.0, "none"
    for lvl in range(1, depth + 1):
        for x in level_set(lvl, k):
            ker = h.kernel(x)
            r = float(np.abs(ker.ptm - root_ptm).max()) if ker.ptm.shape == root_ptm.shape else float("inf")
            if r > worst:
                worst, wit = r, format_vertex(x)
    copy_rep = _report("translation.kernel_copy", worst, wit, tol, [], "max-abs transfer tensor")

    parts = {"shift": shift_rep, "subtree": subtree_rep, "kernel_copy": copy_rep}
    verdicts = {r.passed for r in parts.values()}
    top = max(parts.values(), key=lambda r: r.residual)
    rep = VerificationReport("translation_invariance", all(verdicts), top.residual,
                             f"{top.property}: {top.witness}", tol, (2, 3, 4), "abs",
                             {"disagree": len(verdicts) > 1}, parts)
    return rep


def _factor_label(factors: Mapping[Vertex, np.ndarray]) -> str:
    letters = {v: CODE_TO_LETTER[int(np.argmax(np.abs(f)))] for v, f in factors.items()}
    return str(PauliString.of(letters)) if letters else "I"


# subtrees


def check_sub_qms(h: QmsHandle, vertices: Iterable[Vertex] | None = None, root: Vertex | None = None,
                  tol: float = DEFAULT_TOL, depth: int = 2) -> VerificationReport:
    """Markov condition of the restricted state for every ``x`` in the subtree down to ``depth`` levels.

    Pass a finite connected vertex set or only ``root`` (the whole future of
    that vertex). Vertices without a successor in the subtree have nothing to
    check and are skipped.
    """
    sub = restrict_to_subtree(h, vertices, root)
    top = sub.root_level
    worst, wit, vols = 0.0, "none", set()
    per: dict[str, VerificationReport] = {}
    for lvl in range(top, top + depth + 1):
        for x in sub.level_vertices(lvl):
            if not _kernel_successors(sub, x):
                continue
            r = check_localized_markov(sub, x, lvl + 1, tol)
            per[format_vertex(x)] = r
            vols.add(lvl + 1)
            if r.residual > worst or wit == "none":
                worst, wit = max(worst, r.residual), r.witness if r.residual >= worst else wit
    if not per:
        raise RegionError("subtree has no fork to check")
    rep = _report("sub_qms", worst, wit, tol, vols, root=format_vertex(sub.root),
                  vertices="all" if sub.vertices is None else len(sub.vertices))
    rep.criteria = per
    return rep
