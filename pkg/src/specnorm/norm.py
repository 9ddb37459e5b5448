"""The spectral embedding norm ``S(x) = sum_k f(lam_k) psi_k(x)^2`` over the
top eigenvectors, thresholding, |I| sweeps and eigenvector selection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import OutOfRange, SizeMismatch, ValidationError
from .metrics import empirical_quantile, f1_score
from .spectral import EigenSystem


@dataclass(frozen=True)
class WeightSpec:
    """Spectral weight ``f``: ``constant`` (1), ``power`` (lam^p) or ``heat`` (exp(-(1-lam) s))."""

    kind: str = "constant"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "power", "heat"):
            raise ValidationError(f"unknown weight kind {self.kind!r}")
        if self.kind != "constant" and not self.param > 0:
            raise ValidationError(f"{self.kind} weight needs a positive parameter")

    @classmethod
    def parse(cls, text: str) -> "WeightSpec":
        """``constant``, ``power:2`` or ``heat:0.5``."""
        kind, _, arg = text.strip().lower().partition(":")
        if kind == "constant":
            return cls(kind)
        if kind not in ("power", "heat"):
            raise ValidationError(f"unknown weight kind {kind!r}")
        try:
            return cls(kind, float(arg))
        except ValueError:
            raise ValidationError(f"{kind} weight needs a number, as in '{kind}:2'") from None

    def __str__(self) -> str:
        return self.kind if self.kind == "constant" else f"{self.kind}:{self.param:g}"

    def _integer_power(self) -> bool:
        return float(self.param).is_integer()

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "constant":
            return np.ones_like(lam)
        if self.kind == "power":
            if self._integer_power():
                return lam ** int(self.param)
            # non-integer powers are only defined for lam >= 0
            return np.where(lam > 0, np.abs(lam) ** self.param, 0.0)
        return np.exp(-(1.0 - lam) * self.param)

    def derivative(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(lam)
        if self.kind == "power":
            p = self.param
            if self._integer_power():
                return p * lam ** (int(p) - 1)
            return np.where(lam > 0, p * np.abs(lam) ** (p - 1), 0.0)
        return self.param * self(lam)


CONSTANT = WeightSpec()


@dataclass(frozen=True)
class NormResult:
    s: np.ndarray
    i_size: int
    weight: WeightSpec = CONSTANT
    threshold: float | None = None
    predicted: np.ndarray | None = None


@dataclass(frozen=True)
class SweepRow:
    i_size: int
    f1: float
    precision: float
    recall: float
    degenerate: bool


def embedding_norm(es: EigenSystem, i_size: int, weight: WeightSpec = CONSTANT) -> NormResult:
    if not 1 <= i_size <= es.m:
        raise OutOfRange(f"i_size must lie in [1, {es.m}], got {i_size}")
    psi = es.eigenvectors[:, :i_size]
    s = (psi * psi) @ weight(es.eigenvalues[:i_size])
    return NormResult(s, i_size, weight)


def detect(nr: NormResult, quantile_q: float) -> NormResult:
    """Threshold at the empirical ``quantile_q`` of S; nodes strictly above are flagged.

    Pass ``1 - delta`` to flag roughly a fraction ``delta`` of the nodes.
    """
    if not 0.0 < quantile_q < 1.0:
        raise OutOfRange(f"quantile must lie in (0, 1), got {quantile_q}")
    tau = empirical_quantile(nr.s, quantile_q)
    return replace(nr, threshold=tau, predicted=nr.s > tau)


def sweep_i(
    es: EigenSystem,
    i_min: int,
    i_max: int,
    weight: WeightSpec = CONSTANT,
    quantile_q: float = 0.99,
    truth=None,
) -> list[SweepRow]:
    """Detection quality for every ``i_size`` in ``[i_min, i_max]``."""
    if not 1 <= i_min <= i_max <= es.m:
        raise OutOfRange(f"need 1 <= i_min <= i_max <= {es.m}, got {i_min}..{i_max}")
    truth = np.asarray(truth, dtype=bool)
    if truth.shape != (es.n,):
        raise SizeMismatch(f"truth must have length {es.n}")
    rows = []
    for i in range(i_min, i_max + 1):
        met = f1_score(detect(embedding_norm(es, i, weight), quantile_q).predicted, truth)
        rows.append(SweepRow(i, met.f1, met.precision, met.recall, met.degenerate))
    return rows


def select_eigvecs(es: EigenSystem, nr: NormResult, count: int) -> list[int]:
    """Indices (0-based) of the ``count`` eigenvectors largest in magnitude at the node maximizing S."""
    if not 1 <= count <= es.m:
        raise OutOfRange(f"count must lie in [1, {es.m}], got {count}")
    x_max = int(np.argmax(nr.s))
    order = np.argsort(-np.abs(es.eigenvectors[x_max]), kind="stable")
    return [int(k) for k in order[:count]]


def write_norm_csv(nr: NormResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["node", "s", "predicted"])
        pred = nr.predicted if nr.predicted is not None else [None] * len(nr.s)
        for x, (v, p) in enumerate(zip(nr.s.tolist(), pred)):
            out.writerow([x, repr(v), "" if p is None else int(p)])


def render_on_centers(values, centers) -> np.ndarray:
    """Place per-patch values on the grid of distinct patch centres; missing cells are 0."""
    centers = np.asarray(centers, dtype=np.int64)
    rows, r_idx = np.unique(centers[:, 0], return_inverse=True)
    cols, c_idx = np.unique(centers[:, 1], return_inverse=True)
    grid = np.zeros((len(rows), len(cols)))
    grid[r_idx, c_idx] = values
    return grid
