"""Eigenpairs of the random-walk matrix ``P = D^-1 W`` and their first-order
variation under a perturbation of ``W``."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, eigsh

from .errors import (
    ConvergenceFailure,
    NearCrossing,
    NonPositiveDegree,
    OutOfRange,
    TooLarge,
    ValidationError,
)
from .graph import AffinityGraph

FULL_SPECTRUM_CAP = 3000
# "auto" goes dense below this size, or when more than 1/8 of the spectrum is
# wanted and n is at most DENSE_AUTO_MAX_N (measured crossover on kNN graphs)
DENSE_AUTO_SMALL_N = 1000
DENSE_AUTO_MAX_N = 6000


@dataclass(frozen=True)
class EigenSystem:
    """Descending eigenvalues and D-orthonormal right eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    degrees: np.ndarray

    @property
    def m(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return self.eigenvectors.shape[0]

    def d_gram(self) -> np.ndarray:
        """``Psi^T D Psi``; the identity up to round-off."""
        psi = self.eigenvectors
        return psi.T @ (self.degrees[:, None] * psi)

    def orthonormality_residual(self) -> float:
        return float(np.abs(self.d_gram() - np.eye(self.m)).max())

    def truncate(self, m: int) -> "EigenSystem":
        return EigenSystem(self.eigenvalues[:m], self.eigenvectors[:, :m], self.degrees)


@dataclass(frozen=True)
class VariationRates:
    lambda_dot: np.ndarray
    psi_dot: np.ndarray | None = None
    skipped: list = field(default_factory=list)


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first entry of largest magnitude is positive."""
    pivot = np.abs(vectors).argmax(axis=0)
    signs = np.sign(vectors[pivot, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def _normalized(g: AffinityGraph):
    d = g.degrees
    if np.any(~(d > 0)):
        raise NonPositiveDegree(f"{int(np.sum(~(d > 0)))} nodes have non-positive degree")
    s = 1.0 / np.sqrt(d)
    a = sparse.diags(s) @ g.weights @ sparse.diags(s)
    return a, s


def _finish(vals, vecs, s, degrees) -> EigenSystem:
    order = np.argsort(-vals, kind="stable")
    psi = fix_signs(s[:, None] * vecs[:, order])
    return EigenSystem(vals[order], psi, degrees)


def _dense_top(a, m: int):
    dense = a.toarray() if sparse.issparse(a) else np.asarray(a)
    dense = 0.5 * (dense + dense.T)
    n = dense.shape[0]
    return scipy.linalg.eigh(dense, subset_by_index=[n - m, n - 1], driver="evr")


def markov_spectrum(g: AffinityGraph, m: int, method: str = "auto", tol: float = 0.0) -> EigenSystem:
    """Top ``m`` eigenpairs of ``D^-1 W``.

    Computed from ``D^-1/2 W D^-1/2`` and mapped back with ``psi = D^-1/2 u``,
    so the result is D-orthonormal. ``method`` is ``"lanczos"`` (ARPACK with a
    Rayleigh-Ritz clean-up), ``"dense"`` (LAPACK, top-m subset) or ``"auto"``.
    """
    n = g.n
    if not 1 <= m <= n:
        raise OutOfRange(f"m must lie in [1, {n}], got {m}")
    a, s = _normalized(g)
    if method == "auto":
        wide = 8 * m > n and n <= DENSE_AUTO_MAX_N
        method = "dense" if n <= DENSE_AUTO_SMALL_N or wide else "lanczos"
    if method == "lanczos" and m >= n - 1:
        method = "dense"
    if method == "dense":
        vals, vecs = _dense_top(a, m)
    elif method == "lanczos":
        ncv = min(n, max(2 * m + 1, m + 32))
        v0 = np.sqrt(g.degrees / g.degrees.sum())  # the top eigenvector; deterministic start
        try:
            vals, vecs = eigsh(a, k=m, which="LA", tol=tol, ncv=ncv, v0=v0, maxiter=max(1000, 50 * n))
        except (ArpackNoConvergence, ArpackError) as exc:
            raise ConvergenceFailure(str(exc)) from None
        q, _ = np.linalg.qr(vecs)
        h = q.T @ (a @ q)
        vals, rot = np.linalg.eigh(0.5 * (h + h.T))
        vecs = q @ rot
    else:
        raise ValidationError(f"unknown method {method!r}")
    return _finish(vals, vecs, s, g.degrees)


def full_spectrum(g: AffinityGraph, cap: int = FULL_SPECTRUM_CAP) -> EigenSystem:
    if g.n > cap:
        raise TooLarge(f"dense spectrum capped at n={cap}, graph has {g.n} nodes")
    a, s = _normalized(g)
    dense = a.toarray()
    vals, vecs = np.linalg.eigh(0.5 * (dense + dense.T))
    return _finish(vals, vecs, s, g.degrees)


def component_spectrum(g: AffinityGraph, m: int | None = None) -> EigenSystem:
    """Top ``m`` eigenpairs with every eigenvector supported on one connected component.

    Repeated eigenvalues across components (each component contributes an
    eigenvalue 1) make a global solver return arbitrary mixtures; solving per
    component keeps the supports exact.
    """
    n = g.n
    m = n if m is None else m
    if not 1 <= m <= n:
        raise OutOfRange(f"m must lie in [1, {n}], got {m}")
    ncomp, comp = connected_components(g.weights, directed=False)
    vals, cols = [], []
    for c in range(ncomp):
        nodes = np.flatnonzero(comp == c)
        sub = AffinityGraph.from_weights(g.weights[nodes][:, nodes])
        es = markov_spectrum(sub, min(m, len(nodes)))
        block = np.zeros((n, es.m))
        block[nodes] = es.eigenvectors
        vals.append(es.eigenvalues)
        cols.append(block)
    vals = np.concatenate(vals)
    vecs = np.hstack(cols)
    order = np.argsort(-vals, kind="stable")[:m]
    return EigenSystem(vals[order], fix_signs(vecs[:, order]), g.degrees)


def i_eigen_gap(es: EigenSystem, i_size: int) -> float:
    """Smallest distance between an eigenvalue inside the top ``i_size`` and one outside."""
    if not 1 <= i_size < es.m:
        raise OutOfRange(f"i_size must lie in [1, {es.m - 1}], got {i_size}")
    lam = es.eigenvalues
    return float(np.abs(lam[:i_size, None] - lam[None, i_size:]).min())


def hadamard_rates(
    es: EigenSystem,
    w_dot,
    d_dot,
    want_psi_dot: bool = False,
    gap_floor: float = 1e-8,
    strict: bool = True,
) -> VariationRates:
    """Eigenvalue (and optionally eigenvector) time derivatives for ``dW/dt = w_dot``.

    The eigenvector formula needs the full spectrum. Pairs with
    ``|lam_k - lam_j| < gap_floor`` are left out of it; with ``strict`` that
    raises ``NearCrossing``, otherwise the pairs are listed in ``skipped``.
    """
    psi = es.eigenvectors
    lam = es.eigenvalues
    d_dot = np.asarray(d_dot, dtype=float)
    if d_dot.shape != (es.n,):
        raise ValidationError(f"d_dot must have length {es.n}")
    mw = psi.T @ (w_dot @ psi)
    md = psi.T @ (d_dot[:, None] * psi)
    lambda_dot = np.diag(mw) - lam * np.diag(md)
    if not want_psi_dot:
        return VariationRates(lambda_dot)
    if es.m != es.n:
        raise ValidationError("eigenvector rates need the full spectrum (m == n)")

    # coef[j, k] is the coefficient of psi_j in d psi_k / dt
    gaps = lam[None, :] - lam[:, None]  # lam_k - lam_j
    close = np.abs(gaps) < gap_floor
    np.fill_diagonal(close, False)
    coef = np.zeros_like(gaps)
    ok = ~close
    np.fill_diagonal(ok, False)
    coef[ok] = (mw - md * lam[None, :])[ok] / gaps[ok]
    coef[np.diag_indices_from(coef)] = -0.5 * np.diag(md)
    skipped = [(int(k), int(j)) for j, k in zip(*np.nonzero(close)) if k < j]
    if skipped and strict:
        raise NearCrossing(skipped)
    return VariationRates(lambda_dot, psi @ coef, skipped)


def write_eigensystem_csv(es: EigenSystem, path) -> None:
    """``n m`` header, one line of eigenvalues, then ``n`` rows of eigenvector entries."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{es.n} {es.m}\n")
        fh.write(",".join(repr(float(v)) for v in es.eigenvalues) + "\n")
        for row in es.eigenvectors:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_eigensystem_csv(path, degrees=None) -> EigenSystem:
    """Inverse of ``write_eigensystem_csv``.

    The file does not carry degrees; pass them, or read a full spectrum and
    they are recovered from ``sum_k psi_k(x)^2 = 1 / d(x)``.
    """
    with open(path, encoding="utf-8") as fh:
        n, m = (int(v) for v in fh.readline().split())
        vals = np.array(fh.readline().strip().split(","), dtype=float)
        vecs = np.loadtxt(fh, delimiter=",", ndmin=2)
    if vals.shape != (m,) or vecs.shape != (n, m):
        raise ValidationError(f"{path}: inconsistent shapes for n={n}, m={m}")
    if degrees is None:
        if m != n:
            raise ValidationError("degrees are required to load a partial spectrum")
        degrees = 1.0 / np.sum(vecs**2, axis=1)
    return EigenSystem(vals, vecs, np.asarray(degrees, dtype=float))
