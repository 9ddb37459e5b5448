"""Synthetic datasets: noisy circle plus Gaussian clusters, and a striped image
with a Gaussian bump cut into patches."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadFraction, PatchTooLarge, ValidationError
from .metrics import empirical_quantile


def make_rng(seed: int) -> np.random.Generator:
    """Philox, a counter-based 64-bit generator, seeded deterministically."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class PointCloud:
    points: np.ndarray
    truth: np.ndarray | None = None
    cluster_id: np.ndarray | None = None
    # (row, col) pixel centres when the points are image patches
    centers: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def take(self, index) -> "PointCloud":
        index = np.asarray(index)
        pick = lambda a: None if a is None else a[index]  # noqa: E731
        return PointCloud(self.points[index], pick(self.truth), pick(self.cluster_id), pick(self.centers))


@dataclass
class SyntheticImage:
    pixels: np.ndarray
    bump: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


def gen_circle_clusters(
    n: int,
    k_clusters: int,
    delta: float,
    eps_b: float = 0.01,
    eps_c: float = 0.02,
    seed: int = 0,
    center_radius: float = 1.1,
) -> PointCloud:
    """Background near the unit circle plus ``k_clusters`` Gaussian blobs.

    ``round(delta * n)`` cluster points are split as evenly as possible, the
    remainder going to the first clusters. Blob centres sit at radius
    ``center_radius`` and angles ``2 pi j / k_clusters``. Background rows come
    first.
    """
    if not 0.0 < delta < 1.0:
        raise BadFraction(f"delta must lie in (0, 1), got {delta}")
    if k_clusters < 1:
        raise ValidationError("k_clusters must be >= 1")
    n_c = int(np.floor(delta * n + 0.5))
    if n_c < k_clusters or n_c >= n:
        raise BadFraction(f"round(delta*n) = {n_c} cannot hold {k_clusters} clusters plus background")
    n_b = n - n_c
    rng = make_rng(seed)

    theta = rng.uniform(0.0, 2.0 * np.pi, n_b)
    background = np.column_stack([np.cos(theta), np.sin(theta)])
    background += eps_b * rng.standard_normal((n_b, 2))

    sizes = np.full(k_clusters, n_c // k_clusters)
    sizes[: n_c % k_clusters] += 1
    angles = 2.0 * np.pi * np.arange(k_clusters) / k_clusters
    centers = center_radius * np.column_stack([np.cos(angles), np.sin(angles)])
    blobs = [c + eps_c * rng.standard_normal((s, 2)) for c, s in zip(centers, sizes)]

    points = np.vstack([background, *blobs])
    cluster_id = np.concatenate([np.zeros(n_b, dtype=np.int64), np.repeat(np.arange(1, k_clusters + 1), sizes)])
    return PointCloud(points, cluster_id > 0, cluster_id)


def stripe_value(x, y):
    """Background stripes of the synthetic image."""
    return 1.0 + 0.5 * np.cos((0.05 * np.asarray(x) + np.asarray(y) + 1.5) ** 2 * 2.0 * np.pi)


def bump_value(x, y, height: float = 0.6, width: float = 0.05):
    x, y = np.asarray(x), np.asarray(y)
    return height * np.exp(-(x**2 + y**2) / (2.0 * width**2))


def gen_stripe_image(resolution: int = 200) -> SyntheticImage:
    """Sample the image on ``[-1, 1]^2``; x runs along columns, y along rows."""
    if resolution < 32:
        raise ValidationError(f"resolution must be >= 32, got {resolution}")
    grid = np.linspace(-1.0, 1.0, resolution)
    x, y = np.meshgrid(grid, grid)
    bump = bump_value(x, y)
    return SyntheticImage(stripe_value(x, y) + bump, bump, {"resolution": resolution})


def extract_patches(img, patch: int = 9, stride: int = 3) -> tuple[PointCloud, np.ndarray]:
    """All ``patch x patch`` windows at multiples of ``stride``, flattened row-major."""
    pixels = getattr(img, "pixels", img)
    pixels = np.asarray(pixels, dtype=float)
    h, w = pixels.shape
    if patch < 1 or stride < 1:
        raise ValidationError("patch and stride must be positive")
    if patch > h or patch > w:
        raise PatchTooLarge(f"patch {patch} does not fit in a {h}x{w} image")
    rows = np.arange(0, h - patch + 1, stride)
    cols = np.arange(0, w - patch + 1, stride)
    windows = np.lib.stride_tricks.sliding_window_view(pixels, (patch, patch))[rows][:, cols]
    points = windows.reshape(len(rows) * len(cols), patch * patch).copy()
    rr, cc = np.meshgrid(rows + patch // 2, cols + patch // 2, indexing="ij")
    centers = np.column_stack([rr.ravel(), cc.ravel()])
    return PointCloud(points, centers=centers), centers


def label_patches(img: SyntheticImage, centers, delta_target: float) -> np.ndarray:
    """True where the bump at the patch centre exceeds its ``1 - delta_target`` quantile."""
    centers = np.asarray(centers, dtype=np.int64)
    values = img.bump[centers[:, 0], centers[:, 1]]
    tau = empirical_quantile(values, 1.0 - delta_target)
    return values > tau


def patch_dataset(resolution: int = 200, patch: int = 9, stride: int = 3, delta_target: float = 0.01):
    """Stripe image, its patches and their anomaly labels in one call."""
    img = gen_stripe_image(resolution)
    cloud, centers = extract_patches(img, patch, stride)
    cloud.truth = label_patches(img, centers, delta_target)
    cloud.cluster_id = cloud.truth.astype(np.int64)
    return img, cloud


def subsample(cloud: PointCloud, size: int, rng: np.random.Generator) -> PointCloud:
    """Uniform subsample without replacement, kept in original order."""
    if not 1 <= size <= cloud.n:
        raise ValidationError(f"subsample size must lie in [1, {cloud.n}], got {size}")
    return cloud.take(np.sort(rng.choice(cloud.n, size=size, replace=False)))


# ---------------------------------------------------------------- file formats


def write_points_csv(cloud: PointCloud, path) -> None:
    header = [f"x{i}" for i in range(cloud.dim)]
    cols = [cloud.points]
    if cloud.truth is not None:
        header.append("truth")
        cols.append(cloud.truth.astype(np.int64)[:, None])
        header.append("cluster_id")
        cid = cloud.cluster_id if cloud.cluster_id is not None else cloud.truth.astype(np.int64)
        cols.append(np.asarray(cid)[:, None])
    if cloud.centers is not None:
        header += ["center_row", "center_col"]
        cols.append(cloud.centers)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in zip(*(c.tolist() for c in cols)):
            out.writerow([repr(v) if isinstance(v, float) else v for part in row for v in part])


def read_points_csv(path, labeled: bool = False) -> PointCloud:
    """Read a point cloud.

    Files with a header use the column names written by ``write_points_csv``.
    Headerless files are all features, unless ``labeled``: then the last
    column is an integer label, 0 for background and ``j > 0`` for cluster j.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    try:
        [float(v) for v in rows[0]]
        header = None
    except ValueError:
        header, rows = rows[0], rows[1:]
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValidationError(f"{path}: ragged rows with widths {sorted(widths)}")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if header is None:
        if not labeled:
            return PointCloud(data)
        label = data[:, -1].astype(np.int64)
        return PointCloud(data[:, :-1], label > 0, label)
    names = [h.strip() for h in header]
    feat = [i for i, h in enumerate(names) if h not in ("truth", "cluster_id", "center_row", "center_col")]
    cloud = PointCloud(data[:, feat])
    if "truth" in names:
        cloud.truth = data[:, names.index("truth")] > 0
        cloud.cluster_id = (
            data[:, names.index("cluster_id")].astype(np.int64)
            if "cluster_id" in names
            else cloud.truth.astype(np.int64)
        )
    if "center_row" in names and "center_col" in names:
        cloud.centers = data[:, [names.index("center_row"), names.index("center_col")]].astype(np.int64)
    return cloud


def write_pgm(values: np.ndarray, path, bits: int = 8) -> None:
    """Binary PGM of a 2-d array, min-max scaled to the full intensity range."""
    values = np.asarray(values, dtype=float)
    top = 255 if bits == 8 else 65535
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi == lo else (values - lo) / (hi - lo)
    ints = np.rint(scaled * top)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{top}\n".encode("ascii"))
        fh.write(ints.astype(">u2" if bits == 16 else np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM")
    w, h, top = (int(t) for t in tokens[1:])
    dtype = ">u2" if top > 255 else np.uint8
    return np.frombuffer(raw[pos + 1 :], dtype=dtype, count=w * h).reshape(h, w).astype(np.int64)


def write_image_csv(pixels: np.ndarray, path) -> None:
    np.savetxt(path, pixels, delimiter=",", fmt="%.17g")


def read_image_csv(path) -> np.ndarray:
    pixels = np.loadtxt(path, delimiter=",", ndmin=2)
    return pixels
