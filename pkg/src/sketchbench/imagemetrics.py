"""Image-fidelity metrics: SSIM natively; FID/KID/CLIP-FID/IS over feature
vectors and logits supplied by the feature sidecar; LPIPS delegated to it.

Conventions that change small-sample values, fixed here and echoed in
report headers: covariances use the n-1 denominator; the KID estimator
excludes the diagonal from all three kernel sums (exactly zero for
identical, identically ordered sets); KID defaults to 10 subsets of size
min(n, 100); feature sets smaller than the feature dimension give a
singular covariance, handled by clamping negative eigenvalues at zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.signal import convolve2d


class ImageMetricError(ValueError):
    pass


class DimensionMismatch(ImageMetricError):
    pass


class ModelMismatch(ImageMetricError):
    pass


class DegenerateInput(ImageMetricError):
    pass


class NumericalFailure(ImageMetricError):
    pass


class NotSymmetric(ImageMetricError):
    pass


class NotPSD(ImageMetricError):
    pass


class FeatureModel(enum.Enum):
    INCEPTION_POOL3 = "inception_pool3"
    CLIP_IMAGE = "clip_image"


_MODEL_DIMS = {FeatureModel.INCEPTION_POOL3: 2048}


@dataclass(frozen=True)
class FeatureSet:
    model: FeatureModel
    vectors: np.ndarray  # n x dim, float64
    source_ids: tuple[str, ...] = ()

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vectors)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise DegenerateInput("feature set needs an n x dim matrix with n >= 1")
        if not np.all(np.isfinite(vectors)):
            raise NumericalFailure("feature vectors must be finite")
        expected = _MODEL_DIMS.get(self.model)
        if expected is not None and vectors.shape[1] != expected:
            raise ModelMismatch(
                f"{self.model.value} features must have dim {expected}, got {vectors.shape[1]}"
            )
        if self.source_ids and len(self.source_ids) != vectors.shape[0]:
            raise DegenerateInput("source_ids length must match vector count")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


class ImageMetric(enum.Enum):
    FID = "FID"
    KID = "KID"
    CFID = "CFID"
    IS = "IS"
    LPIPS = "LPIPS"
    SSIM = "SSIM"


@dataclass(frozen=True)
class ImageScore:
    metric: ImageMetric
    value: float
    detail: dict = field(default_factory=dict)


# --- SSIM -------------------------------------------------------------------


def _to_gray(img) -> np.ndarray:
    if isinstance(img, Image.Image):
        return np.asarray(img.convert("L"), dtype=np.float64)
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    return arr


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5, data_range: float = 255.0) -> ImageScore:
    """Windowed SSIM with an 11x11 Gaussian (sigma 1.5), L = 255."""
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise DimensionMismatch(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < window_size:
        raise DimensionMismatch(
            f"images must be at least {window_size}x{window_size} for the SSIM window"
        )
    window = _gaussian_window(window_size, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    xx = convolve2d(x * x, window, mode="valid")
    yy = convolve2d(y * y, window, mode="valid")
    xy = convolve2d(x * y, window, mode="valid")

    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    )
    return ImageScore(ImageMetric.SSIM, float(ssim_map.mean()))


# --- FID --------------------------------------------------------------------


def matrix_sqrt_psd(matrix: np.ndarray, sym_tol: float = 1e-8, eig_tol: float = 1e-8) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues in [-eig_tol*scale, 0) are clamped to zero (sample
    covariances of small sets are singular by construction).
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric("input must be a square matrix")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > sym_tol * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance")
    eigvals, eigvecs = np.linalg.eigh((m + m.T) / 2.0)
    if eigvals.min() < -eig_tol * scale:
        raise NotPSD(f"negative eigenvalue beyond clamp tolerance: {eigvals.min():g}")
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return (root + root.T) / 2.0


def _mean_cov(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = vectors.mean(axis=0)
    cov = np.cov(vectors, rowvar=False, ddof=1)
    return mu, np.atleast_2d(cov)


def fid(real: FeatureSet, gen: FeatureSet) -> ImageScore:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)); the cross term is
    computed as Tr((S2^(1/2) S1 S2^(1/2))^(1/2)) so only symmetric PSD
    square roots are ever taken.
    """
    if real.model is not gen.model or real.dim != gen.dim:
        raise ModelMismatch(
            f"feature sets disagree: {real.model.value}/{real.dim} vs {gen.model.value}/{gen.dim}"
        )
    if real.n < 2 or gen.n < 2:
        raise DegenerateInput("fid needs at least 2 vectors per set")
    mu1, cov1 = _mean_cov(real.vectors)
    mu2, cov2 = _mean_cov(gen.vectors)
    delta = mu1 - mu2

    root2 = matrix_sqrt_psd(cov2)
    inner = matrix_sqrt_psd(root2 @ cov1 @ root2)
    value = float(delta @ delta + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(inner))
    if not np.isfinite(value):
        raise NumericalFailure("fid evaluated to a non-finite value")
    value = max(value, 0.0)
    metric = ImageMetric.CFID if real.model is FeatureModel.CLIP_IMAGE else ImageMetric.FID
    return ImageScore(metric, value)


# --- KID --------------------------------------------------------------------


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = x.shape[1]
    return (x @ y.T / d + 1.0) ** 3


def _mmd2_paired(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased MMD^2, diagonal excluded from all three sums (needs |x| == |y|)."""
    m = x.shape[0]
    kxx = _poly_kernel(x, x)
    kyy = _poly_kernel(y, y)
    kxy = _poly_kernel(x, y)
    off = ~np.eye(m, dtype=bool)
    denom = m * (m - 1)
    return float((kxx[off].sum() + kyy[off].sum() - 2.0 * kxy[off].sum()) / denom)


def kid(
    real: FeatureSet,
    gen: FeatureSet,
    subsets: int = 10,
    max_subset_size: int = 100,
    seed: int = 0,
) -> ImageScore:
    """Kernel distance with k(x,y) = (x.y/d + 1)^3, averaged over subsets."""
    if real.model is not gen.model or real.dim != gen.dim:
        raise ModelMismatch("kid needs feature sets from the same model")
    if real.n < 2 or gen.n < 2:
        raise DegenerateInput("kid needs at least 2 vectors per set")
    m = min(real.n, gen.n, max_subset_size)
    if m == real.n and m == gen.n:
        estimates = [_mmd2_paired(real.vectors, gen.vectors)]
    else:
        rng = np.random.default_rng(seed)
        estimates = []
        for _ in range(subsets):
            ri = rng.choice(real.n, size=m, replace=False)
            gi = rng.choice(gen.n, size=m, replace=False)
            estimates.append(_mmd2_paired(real.vectors[ri], gen.vectors[gi]))
    arr = np.asarray(estimates)
    return ImageScore(
        ImageMetric.KID,
        float(arr.mean()),
        {"std": float(arr.std(ddof=0)), "subsets": len(estimates), "subset_size": m},
    )


# --- Inception Score ----------------------------------------------------------


def inception_score(logits: np.ndarray, splits: int = 1) -> ImageScore:
    """exp(mean KL(p(y|x) || p(y))) from raw classifier logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 2 or logits.shape[1] < 2:
        raise DegenerateInput("inception score needs an n x k matrix with n, k >= 2")
    if not np.all(np.isfinite(logits)):
        raise NumericalFailure("logits must be finite")

    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)

    values = []
    for chunk in np.array_split(probs, splits):
        marginal = chunk.mean(axis=0, keepdims=True)
        kl = (chunk * (np.log(chunk + 1e-300) - np.log(marginal + 1e-300))).sum(axis=1)
        kl = np.maximum(kl, 0.0)  # KL >= 0; rounding can dip a few ulps below
        values.append(float(np.exp(kl.mean())))
    arr = np.asarray(values)
    detail = {"splits": splits}
    if splits > 1:
        detail["std"] = float(arr.std(ddof=0))
    return ImageScore(ImageMetric.IS, float(arr.mean()), detail)


# --- LPIPS (delegated) ---------------------------------------------------------


def lpips_pair(a, b, sidecar_client) -> ImageScore:
    """Perceptual distance for one image pair, computed by the sidecar."""
    ax = _to_gray(a)
    bx = _to_gray(b)
    if ax.shape != bx.shape:
        raise DimensionMismatch(f"image shapes differ: {ax.shape} vs {bx.shape}")
    value = sidecar_client.lpips(a, b)
    return ImageScore(ImageMetric.LPIPS, float(value), {"net": "alex"})
