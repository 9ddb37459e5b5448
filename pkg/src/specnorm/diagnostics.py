"""Numerical checks of the separation theory along ``W(t) = W0 + t E``.

All routines take the t=0 spectrum from a block-diagonal graph. Use
``spectral.component_spectrum`` for it so that every initial eigenvector is
supported on a single block even when eigenvalues repeat.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import sparse

from .errors import GapTooSmall, NotBlockDiagonal, OutOfRange, SizeMismatch, ValidationError
from .graph import (
    AffinityGraph,
    DeformationPair,
    Partition,
    connection_strength,
    degree_bounds,
    deform,
    split_blocks,
)
from .norm import CONSTANT, WeightSpec, embedding_norm
from .spectral import EigenSystem, component_spectrum, full_spectrum, i_eigen_gap, markov_spectrum

log = logging.getLogger(__name__)

BLOCK_TOL = 1e-12
BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class AssumptionEstimate:
    eps1: float
    eps2: float
    k_in_i: int
    # True where eigenvector k (k < i_size) is C-supported
    classification: np.ndarray
    # cluster label 1..K per C-eigenvector in I, 0 for B-eigenvectors
    assignment: np.ndarray
    ambiguous: bool = False


def _check(es: EigenSystem, part: Partition, i_size: int):
    if es.n != part.n:
        raise SizeMismatch(f"spectrum has {es.n} nodes, partition has {part.n}")
    if not 1 <= i_size <= es.m:
        raise OutOfRange(f"i_size must lie in [1, {es.m}], got {i_size}")


def cluster_mass(es0: EigenSystem, part: Partition, i_size: int) -> np.ndarray:
    """D-weighted mass ``sum_{x in C} psi_k(x)^2 d(x)`` of each eigenvector in I."""
    psi = es0.eigenvectors[:, :i_size]
    w = es0.degrees * part.cluster_mask
    return w @ (psi * psi)


def classify_initial_eigenvectors(
    es0: EigenSystem,
    part: Partition,
    i_size: int,
    mass_threshold: float = 0.5,
    graph: AffinityGraph | None = None,
) -> np.ndarray:
    """Tag each of the top ``i_size`` eigenvectors as C-supported (True) or B-supported."""
    _check(es0, part, i_size)
    if graph is not None:
        cross = connection_strength(graph, part)
        if cross > BLOCK_TOL:
            raise NotBlockDiagonal(f"cross-block weight {cross:.3g} exceeds {BLOCK_TOL}")
    mass = cluster_mass(es0, part, i_size)
    mixed = np.minimum(mass, 1.0 - mass) > 1e-6
    if np.any(mixed):
        log.warning("%d eigenvectors straddle both blocks; was es0 computed per component?", mixed.sum())
    return mass > mass_threshold


def estimate_eps(es0: EigenSystem, part: Partition, i_size: int, mass_threshold: float = 0.5) -> AssumptionEstimate:
    """Smallest eps1, eps2 for which the delocalization bounds hold on the top ``i_size`` eigenvectors.

    Each C-eigenvector is attached to the cluster holding most of its mass; no
    rotation among C-eigenvectors is searched, so eps1 is an upper estimate
    when clusters touch.
    """
    is_c = classify_initial_eigenvectors(es0, part, i_size, mass_threshold)
    psi2 = es0.eigenvectors[:, :i_size] ** 2
    d = es0.degrees
    labels = part.labels
    k = part.k
    vol_j = np.bincount(labels, weights=d, minlength=k + 1)[1:]
    vol_c = vol_j.sum()
    vol_b = d[labels == 0].sum()
    cmask = part.cluster_mask

    assignment = np.zeros(i_size, dtype=np.int64)
    eps1 = 0.0
    for idx in np.flatnonzero(is_c):
        mass_j = np.bincount(labels, weights=psi2[:, idx] * d, minlength=k + 1)[1:]
        j = int(np.argmax(mass_j)) + 1
        assignment[idx] = j
        inside = labels == j
        eps1 = max(eps1, float(np.abs(psi2[inside, idx] * vol_j[j - 1] - 1.0).max()))
        others = cmask & ~inside
        if others.any():
            eps1 = max(eps1, float(psi2[others, idx].max() * vol_c))
    used = assignment[is_c]
    ambiguous = len(np.unique(used)) < len(used)
    if ambiguous:
        log.warning("two C-eigenvectors attach to the same cluster; eps1 may be overstated")

    eps2 = 0.0
    bmask = part.background_mask
    if (~is_c).any():
        eps2 = max(0.0, float(psi2[np.ix_(bmask, ~is_c)].max() * vol_b - 1.0))
    return AssumptionEstimate(eps1, eps2, int(is_c.sum()), is_c, assignment, bool(ambiguous))


@dataclass(frozen=True)
class TheoryReport:
    n: int
    k: int
    delta: float
    i_size: int
    eps1: float
    eps2: float
    k_in_i: int
    d_under: float
    d_over: float
    c_strength: float
    delta0_gap: float
    delta_cap: float
    g0: float
    pound: float
    s_upper0: float
    a2_ok: bool
    fraction_ok: bool
    cond_i_ok: bool
    cond_ii_ok: bool
    cond_ii_rhs: float
    c_tilde: float
    per_cluster_g: list
    g_min0: float
    s_upper0_unequal: float
    eq20_ok: bool

    def to_dict(self) -> dict:
        """Flat dict; non-finite reals become None so the JSON stays standard."""
        clean = lambda v: v if not isinstance(v, float) or math.isfinite(v) else None  # noqa: E731
        out = {}
        for key, value in asdict(self).items():
            out[key] = [clean(v) for v in value] if isinstance(value, list) else clean(value)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def theory_report(
    g: AffinityGraph,
    part: Partition,
    es0: EigenSystem,
    i_size: int,
    delta_cap: float | None = None,
    est: AssumptionEstimate | None = None,
) -> TheoryReport:
    """Evaluate the separation constants for graph ``g`` split by ``part``.

    ``es0`` is the t=0 spectrum (needs more than ``i_size`` pairs).
    ``delta_cap`` is the gap constant used in the separation conditions; it
    defaults to half the initial I-gap, the largest value condition (i) allows.
    """
    _check(es0, part, i_size)
    if est is None:
        est = estimate_eps(es0, part, i_size)
    e1, e2 = est.eps1, est.eps2
    pair = split_blocks(g, part)
    d_under, d_over = degree_bounds(pair.w0)
    c = connection_strength(g, part)
    gap0 = i_eigen_gap(es0, i_size)
    if delta_cap is None:
        delta_cap = gap0 / 2.0
    if not delta_cap > 0:
        raise ValidationError(f"delta_cap must be positive, got {delta_cap}")

    n, k, delta = part.n, part.k, part.delta
    ratio = delta / (1.0 - delta) * (i_size - k) / k
    scale = 1.0 / (n * d_under)
    pound = d_under * (1.0 - e1) / d_over - ratio * (1.0 + e2)
    g0 = scale * (k / delta) * pound
    s_upper0 = scale * (k / delta) * (1.0 + 2.0 * e1)
    fraction_ok = ratio < d_under * (1.0 - e2) / (d_over * (1.0 + e1))

    arg = 1.0 + 0.5 * pound / (1.0 + 2.0 * e1)
    rhs = delta_cap / 8.0 / (1.0 + delta_cap / 4.0) * math.log(arg) if arg > 0 else -math.inf
    cond_ii_ok = pound > 0 and c / d_under <= rhs
    c_tilde = (1.0 + 4.0 / delta_cap) * 2.0 * c / d_under

    delta_j = part.cluster_sizes() / n
    per_cluster_g = scale * (d_under * (1.0 - e1) / (d_over * delta_j) - (1.0 + e2) * (i_size - k) / (1.0 - delta))
    s_upper_uneq = scale * (e1 / (delta / k) + (1.0 + e1) / delta_j.min())
    g_min0 = float(per_cluster_g.min())
    with np.errstate(over="ignore"):
        growth = float(np.expm1(c_tilde))
    eq20_ok = g_min0 >= 2.0 * growth * s_upper_uneq

    return TheoryReport(
        n=n, k=k, delta=delta, i_size=i_size, eps1=e1, eps2=e2, k_in_i=est.k_in_i,
        d_under=d_under, d_over=d_over, c_strength=c, delta0_gap=gap0, delta_cap=delta_cap,
        g0=g0, pound=pound, s_upper0=s_upper0, a2_ok=bool(pound > 0), fraction_ok=bool(fraction_ok),
        cond_i_ok=bool(gap0 >= 2.0 * delta_cap), cond_ii_ok=bool(cond_ii_ok), cond_ii_rhs=rhs,
        c_tilde=c_tilde, per_cluster_g=per_cluster_g.tolist(), g_min0=g_min0,
        s_upper0_unequal=s_upper_uneq, eq20_ok=bool(eq20_ok),
    )


def verify_prop31(
    es0: EigenSystem,
    part: Partition,
    report: TheoryReport,
    i_size: int,
    violations: list | None = None,
) -> bool:
    """Check the measured S(x, 0) against the initial-separation bounds.

    Returns True when the lower and upper bounds on C and the upper bound on
    B hold (and the sup bound, when the separation assumption holds). Failures
    are logged and, when ``violations`` is given, appended to it. A
    non-positive g0 is appended as a note without failing the check: the
    bounds still hold, they just no longer separate C from B.
    """
    _check(es0, part, i_size)
    found = [] if violations is None else violations
    failed = False
    s = embedding_norm(es0, i_size).s
    c, b = part.cluster_mask, part.background_mask
    n, k, delta = part.n, part.k, part.delta
    e1, e2 = report.eps1, report.eps2
    lo_c = k * (1.0 - e1) / (n * report.d_over * delta)
    hi_c = k * (1.0 + 2.0 * e1) / (n * report.d_under * delta)
    hi_b = (1.0 + e2) * (i_size - k) / (n * report.d_under * (1.0 - delta))

    def below(value, bound, what):
        nonlocal failed
        if value > bound * (1.0 + BOUND_RTOL):
            failed = True
            found.append(f"{what}: {value:.6g} > {bound:.6g}")
            log.info("initial bound violated: %s", found[-1])

    if report.k_in_i != k:
        failed = True
        found.append(f"I holds {report.k_in_i} C-eigenvectors, expected K={k}")
    below(lo_c, s[c].min(), "lower bound on C")
    below(s[c].max(), hi_c, "upper bound on C")
    below(s[b].max(), hi_b, "upper bound on B")
    if report.a2_ok:
        below(s.max(), report.s_upper0, "sup bound")
    else:
        found.append(f"note: g0 = {report.g0:.6g} <= 0, the bounds do not separate C from B")
    return not failed


@dataclass(frozen=True)
class DynamicsTrace:
    t_grid: np.ndarray
    # tracked eigenvalue branches, one row per branch (ordered as at t=0)
    eigenvalue_branches: np.ndarray
    # sorted eigenvalues, m_solved x T
    sorted_eigenvalues: np.ndarray
    s_series: np.ndarray
    gap_series: np.ndarray
    # smallest matched overlap per step (1.0 at t=0)
    overlap_floor: np.ndarray
    c_strength: float
    d_under: float
    max_drift_ratio: float
    drift_ok: bool
    gap_premise: bool
    gap_preserved: bool

    def write_csvs(self, out_dir) -> None:
        """``eigenvalues.csv``, ``norm_series.csv`` and ``gaps.csv``."""
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        m = self.eigenvalue_branches.shape[0]
        header = "t," + ",".join(f"lambda_{k + 1}" for k in range(m))
        np.savetxt(out / "eigenvalues.csv", np.column_stack([self.t_grid, self.eigenvalue_branches.T]),
                   delimiter=",", header=header, comments="", fmt="%.17g")
        header = "node," + ",".join(f"t={t:.6g}" for t in self.t_grid)
        nodes = np.arange(self.s_series.shape[0])
        np.savetxt(out / "norm_series.csv", np.column_stack([nodes, self.s_series]),
                   delimiter=",", header=header, comments="", fmt="%.17g")
        np.savetxt(out / "gaps.csv", np.column_stack([self.t_grid, self.gap_series, self.overlap_floor]),
                   delimiter=",", header="t,gap,overlap_floor", comments="", fmt="%.17g")


def greedy_match(overlap: np.ndarray) -> tuple[np.ndarray, float]:
    """Match rows to columns by repeatedly taking the largest remaining overlap.

    Returns ``perm`` with ``perm[row] = col`` and the smallest matched value.
    """
    m = overlap.shape[0]
    perm = np.full(m, -1, dtype=np.int64)
    used = np.zeros(overlap.shape[1], dtype=bool)
    floor = np.inf
    for flat in np.argsort(-overlap, axis=None, kind="stable"):
        r, c = divmod(int(flat), overlap.shape[1])
        if perm[r] < 0 and not used[c]:
            perm[r] = c
            used[c] = True
            floor = min(floor, float(overlap[r, c]))
            if np.all(perm >= 0):
                break
    return perm, floor


def trace_dynamics(
    pair: DeformationPair,
    part: Partition,
    t_steps: int = 21,
    m: int = 8,
    i_size: int = 40,
    method: str = "auto",
    drift_tol: float = 1e-10,
) -> DynamicsTrace:
    """Follow the spectrum of ``W0 + t E`` on a uniform grid of ``t_steps`` points.

    ``max(m, i_size + 1)`` eigenpairs are solved per step; the first ``m``
    tracked branches are reported.
    """
    if t_steps < 2:
        raise ValidationError("t_steps must be >= 2")
    n = pair.w0.n
    m_solve = min(n, max(m, i_size + 1))
    if i_size >= m_solve:
        raise OutOfRange(f"i_size must be < n = {n}")
    d_under = degree_bounds(pair.w0)[0]
    c = connection_strength(deform(pair, 1.0), part)
    t_grid = np.linspace(0.0, 1.0, t_steps)

    systems = []
    for t in t_grid:
        g_t = deform(pair, float(t))
        systems.append(component_spectrum(g_t, m_solve) if t == 0.0 else markov_spectrum(g_t, m_solve, method))

    perm = np.arange(m_solve)
    branches = np.empty((m_solve, t_steps))
    floors = np.ones(t_steps)
    branches[:, 0] = systems[0].eigenvalues
    for step in range(1, t_steps):
        prev, cur = systems[step - 1], systems[step]
        overlap = np.abs(prev.eigenvectors.T @ (cur.degrees[:, None] * cur.eigenvectors))
        step_perm, floors[step] = greedy_match(overlap)
        perm = step_perm[perm]
        branches[:, step] = cur.eigenvalues[perm]

    lam = np.column_stack([es.eigenvalues for es in systems])
    s_series = np.column_stack([embedding_norm(es, i_size).s for es in systems])
    gaps = np.array([i_eigen_gap(es, i_size) for es in systems])
    bound = 4.0 * c * t_grid / d_under
    drift = np.abs(lam - lam[:, :1]).max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, drift / bound, np.where(drift > drift_tol, np.inf, 0.0))
    return DynamicsTrace(
        t_grid=t_grid,
        eigenvalue_branches=branches[: min(m, m_solve)],
        sorted_eigenvalues=lam,
        s_series=s_series,
        gap_series=gaps,
        overlap_floor=floors,
        c_strength=c,
        d_under=d_under,
        max_drift_ratio=float(ratio.max()),
        drift_ok=bool(np.all(drift <= bound + drift_tol)),
        gap_premise=bool(c / d_under <= gaps[0] / 16.0),
        gap_preserved=bool(gaps.min() >= gaps[0] / 2.0),
    )


def _divided(f_k, f_j, lam_k, lam_j, fprime_k, tol=1e-10):
    diff = lam_k - lam_j
    close = np.abs(diff) < tol
    safe = np.where(close, 1.0, diff)
    return np.where(close, fprime_k, (f_k - f_j) / safe)


def s_evolution_rhs(es: EigenSystem, e, i_size: int, weight: WeightSpec = CONSTANT) -> np.ndarray:
    """Right-hand side of the evolution equation of S under ``dW/dt = e``, from a full spectrum.

    With the constant weight this is the projection-derivative formula
    ``-sum_{k,j in I} (psi_j' D' psi_k) psi_k psi_j
    + 2 sum_{k in I, j not in I} psi_j'(W' - lam_k D')psi_k / (lam_k - lam_j) psi_k psi_j``.
    """
    if es.m != es.n:
        raise ValidationError("the evolution equation needs the full spectrum")
    lam = es.eigenvalues
    psi = es.eigenvectors
    d_dot = np.asarray(e.sum(axis=1)).ravel()
    mw = psi.T @ (e @ psi)
    md = psi.T @ (d_dot[:, None] * psi)
    inner, outer = slice(0, i_size), slice(i_size, es.n)
    li, lo = lam[inner], lam[outer]
    f = weight(li)
    fp = weight.derivative(li)

    # k, j both in I: divided differences of f and z f(z)
    lk, lj = li[:, None], li[None, :]
    dd1 = _divided(f[:, None], f[None, :], lk, lj, fp[:, None])
    zf = li * f
    dd2 = _divided(zf[:, None], zf[None, :], lk, lj, (f + li * fp)[:, None])
    m_in = dd1 * mw[inner, inner] - dd2 * md[inner, inner]
    p_in = psi[:, inner]
    rhs = np.einsum("xk,kj,xj->x", p_in, m_in, p_in)

    # k in I, j outside I
    cross = (mw[outer, inner] - md[outer, inner] * li[None, :]) * (f[None, :] / (li[None, :] - lo[:, None]))
    rhs += 2.0 * np.einsum("xj,jk,xk->x", psi[:, outer], cross, p_in)
    return rhs


def verify_s_evolution(
    pair: DeformationPair,
    t: float,
    i_size: int,
    fd_step: float = 1e-5,
    weight: WeightSpec = CONSTANT,
) -> float:
    """Compare the evolution equation of S with a centred finite difference at time ``t``.

    Returns ``max_x |rhs - fd| / max_x |fd|`` (0 when both vanish).
    """
    if not fd_step <= t <= 1.0 - fd_step:
        raise OutOfRange(f"need fd_step <= t <= 1 - fd_step, got t={t}, step={fd_step}")
    g_t = deform(pair, t)
    es = full_spectrum(g_t)
    if not 1 <= i_size < es.n:
        raise OutOfRange(f"i_size must lie in [1, {es.n - 1}]")
    gap = i_eigen_gap(es, i_size)
    d_under = degree_bounds(pair.w0)[0]
    motion = 4.0 * float(pair.e.sum()) / 2.0 / d_under * fd_step
    if not gap > 10.0 * motion:
        raise GapTooSmall(f"I-gap {gap:.3g} is not above 10x the eigenvalue motion {motion:.3g} over one step")

    rhs = s_evolution_rhs(es, pair.e, i_size, weight)
    s_plus = embedding_norm(full_spectrum(deform(pair, t + fd_step)), i_size, weight).s
    s_minus = embedding_norm(full_spectrum(deform(pair, t - fd_step)), i_size, weight).s
    fd = (s_plus - s_minus) / (2.0 * fd_step)
    scale = np.abs(fd).max()
    err = np.abs(rhs - fd).max()
    if scale == 0.0:
        return 0.0 if err == 0.0 else math.inf
    return float(err / scale)


def initial_spectrum(g: AffinityGraph, part: Partition, m: int) -> tuple[DeformationPair, EigenSystem]:
    """Split ``g`` and return the pair with the block-supported t=0 spectrum."""
    pair = split_blocks(g, part)
    return pair, component_spectrum(pair.w0, m)


def is_symmetric(e) -> bool:
    e = sparse.csr_matrix(e)
    return (abs(e - e.T) > 0).nnz == 0
