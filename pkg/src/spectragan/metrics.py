"""Frechet-distance and Inception-Score evaluation over a handcrafted
feature backend, plus spectral-filling measurements.

The feature backend replaces pretrained embeddings, so absolute FID/IS
values are only comparable between runs of this tool; every report is
labeled with the backend name to prevent misreading.
"""

from dataclasses import dataclass

import numpy as np

from .rng import SplitMix64
from .spectral import spectral_profile
from .tensor import Tensor

BACKEND_NAME = "handcrafted-v1"
FEATURE_DIM = 48
SPECTRAL_BANDS = 24
NUM_CLASSES = 8

# luminance weights (ITU-R 601)
_LUMA = np.array([0.299, 0.587, 0.114])


def feature_extract(img):
    """48-dim descriptor of a 3 x H x W image in [-1, 1].

    Layout, in order:
      [0:24]  3 x 4 x 4 per-channel mean-pooled intensities, flattened
              channel-major, with adjacent pairs (2k, 2k+1) averaged;
      [24:48] 24 radial spectral-band energies of the luminance channel
              (the radial power histogram rebinned into equal-width
              bands, divided by (H*W)^2; band 0 holds DC).
    """
    arr = img.data if isinstance(img, Tensor) else np.asarray(img)
    arr = arr.astype(np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W image, got {arr.shape}")
    _, h, w = arr.shape
    pooled = arr.reshape(3, 4, h // 4, 4, w // 4).mean(axis=(2, 4)).ravel()
    spatial = 0.5 * (pooled[0::2] + pooled[1::2])

    luma = np.tensordot(_LUMA, arr, axes=([0], [0]))
    hist, _ = spectral_profile(luma)
    hist = hist / float(h * w) ** 2
    bands = np.zeros(SPECTRAL_BANDS)
    edges = np.floor(np.arange(len(hist)) * SPECTRAL_BANDS / len(hist)).astype(int)
    np.add.at(bands, edges, hist)
    return np.concatenate([spatial, bands])


def classify_probs(img, num_classes=NUM_CLASSES):
    """Pseudo class probabilities: fixed seeded projection of the features.

    Stands in for a pretrained classifier so the Inception Score has
    deterministic, documented inputs.
    """
    f = feature_extract(img)
    proj = SplitMix64(0x5DA6).normal((num_classes, FEATURE_DIM))
    z = proj @ f
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int


def compute_stats(features):
    """Sample mean and unbiased covariance of a batch of d-vectors."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need at least 2 feature vectors, got array of shape {x.shape}")
    mu = x.mean(axis=0)
    xc = x - mu
    sigma = xc.T @ xc / (x.shape[0] - 1)
    sigma = 0.5 * (sigma + sigma.T)  # exact symmetry despite rounding
    return FeatureStats(mu, sigma, x.shape[0])


def matrix_sqrt_psd(a, sym_tol=1e-6, neg_tol=1e-8, clamp_all=False, max_sweeps=64):
    """Principal square root of a symmetric PSD matrix via cyclic Jacobi.

    Eigenvalues in [-neg_tol, 0) are clamped to zero and anything more
    negative is an error, unless ``clamp_all`` floors every negative
    eigenvalue (used by the Frechet distance, whose symmetrized product
    matrix may be indefinite). Asymmetry beyond ``sym_tol`` is an error.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got {a.shape}")
    if np.abs(a - a.T).max() > sym_tol:
        raise ValueError(f"matrix is not symmetric within {sym_tol}")
    d = a.shape[0]
    m = 0.5 * (a + a.T)
    vecs = np.eye(d)
    scale = max(np.abs(m).max(), 1.0)
    for _ in range(max_sweeps):
        off = np.abs(m - np.diag(np.diag(m))).max() if d > 1 else 0.0
        if off <= 1e-14 * scale:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = m[p, q]
                if abs(apq) <= 1e-16 * scale:
                    continue
                theta = 0.5 * (m[q, q] - m[p, p]) / apq
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rp, rq = m[p, :].copy(), m[q, :].copy()
                m[p, :] = c * rp - s * rq
                m[q, :] = s * rp + c * rq
                cp, cq = m[:, p].copy(), m[:, q].copy()
                m[:, p] = c * cp - s * cq
                m[:, q] = s * cp + c * cq
                vp, vq = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = c * vp - s * vq
                vecs[:, q] = s * vp + c * vq
    eig = np.diag(m)
    if not clamp_all and eig.min() < -neg_tol * scale:
        raise ValueError(f"matrix has negative eigenvalue {eig.min()}, not PSD")
    root = np.sqrt(np.clip(eig, 0.0, None))
    out = (vecs * root) @ vecs.T
    return 0.5 * (out + out.T)


def fid(a, b):
    """||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The product square root uses the symmetrized product with
    eigenvalue clamping, which makes the distance exactly symmetric.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError(f"feature dimensions differ: {a.mu.shape} vs {b.mu.shape}")
    diff = a.mu - b.mu
    prod = a.sigma @ b.sigma
    prod = 0.5 * (prod + prod.T)
    covmean = matrix_sqrt_psd(prod, clamp_all=True)
    value = float(diff @ diff + np.trace(a.sigma + b.sigma - 2.0 * covmean))
    return max(value, 0.0)


def inception_score(probs):
    """exp(mean_n KL(p(y|x_n) || mean_m p(y|x_m))), with 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"need an N x K probability matrix, got {p.shape}")
    if p.min() < 0:
        raise ValueError("probabilities must be nonnegative")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("probability rows must sum to 1")
    marginal = p.mean(axis=0)
    mask = p > 0
    kl = np.where(mask, p * (np.log(np.where(mask, p, 1.0)) - np.log(marginal)), 0.0)
    return float(np.exp(kl.sum(axis=1).mean()))


@dataclass
class SpectraFillReport:
    ratios_before: np.ndarray
    ratios_after: np.ndarray
    ratios_target: np.ndarray
    mean_before: float
    mean_after: float
    mean_target: float
    gap_before: float
    gap_after: float
    gap_reduction: float  # positive means the translation moved toward the target


def _luma_ratios(images):
    out = []
    for img in images:
        arr = img.data if isinstance(img, Tensor) else np.asarray(img)
        luma = np.tensordot(_LUMA, arr.astype(np.float64), axes=([0], [0]))
        out.append(spectral_profile(luma)[1])
    return np.array(out)


def spectra_fill_report(images_before, images_after, images_target):
    """High-frequency energy movement of translated images vs. target."""
    for name, group in (("before", images_before), ("after", images_after),
                        ("target", images_target)):
        if len(group) == 0:
            raise ValueError(f"image set '{name}' is empty")
    rb = _luma_ratios(images_before)
    ra = _luma_ratios(images_after)
    rt = _luma_ratios(images_target)
    gap_before = abs(rb.mean() - rt.mean())
    gap_after = abs(ra.mean() - rt.mean())
    return SpectraFillReport(rb, ra, rt, float(rb.mean()), float(ra.mean()),
                             float(rt.mean()), float(gap_before), float(gap_after),
                             float(gap_before - gap_after))


def write_fill_csv(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("set,index,high_freq_ratio\n")
        for name, ratios in (("before", report.ratios_before),
                             ("after", report.ratios_after),
                             ("target", report.ratios_target)):
            for i, r in enumerate(ratios):
                fh.write(f"{name},{i},{r!r}\n")
        fh.write(f"summary,mean_before,{report.mean_before!r}\n")
        fh.write(f"summary,mean_after,{report.mean_after!r}\n")
        fh.write(f"summary,mean_target,{report.mean_target!r}\n")
        fh.write(f"summary,gap_reduction,{report.gap_reduction!r}\n")
