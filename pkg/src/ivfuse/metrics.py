"""The nine fusion-quality metrics (evaluation only, pure numpy).

All metrics take grayscale images in [0, 1] and are deterministic pure
functions. Conventions fixed here so numbers are reproducible within this
artifact:

  * histograms (EN, MI) use 256 bins after rounding to 8-bit levels;
  * SF and SD are computed on the [0, 255] scale;
  * MI is the two-source sum MI(F,A) + MI(F,B) in bits;
  * Qabf is the Xydeas-Petrovic edge-preservation measure with the
    published sigmoid constants, each factor normalized to 1 at perfect
    preservation;
  * MS-SSIM uses uniform 11x11 windows (so a single scale equals the mean
    of the training SSIM over windows) and the published 5-scale weights,
    averaged over the two sources;
  * FMI is regional normalized mutual information over 8x8 tiles of the
    feature maps (raw pixels, or single-level Haar detail subbands);
  * VIF is the pixel-domain multi-scale variant with sigma_n^2 = 2 on the
    [0, 255] scale, averaged over the two sources.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

from .errors import InputError

# Table column order used by every CSV report.
CSV_COLUMNS = ("SF", "EN", "Qabf", "FMIw", "MS-SSIM", "FMIpixel", "MI", "SD", "VIF")


@dataclass
class MetricReport:
    sf: float
    en: float
    q_abf: float
    fmi_w: float
    ms_ssim: float
    fmi_pixel: float
    mi: float
    sd: float
    vif: float
    name: str = ""

    def row(self):
        return [self.sf, self.en, self.q_abf, self.fmi_w, self.ms_ssim,
                self.fmi_pixel, self.mi, self.sd, self.vif]


def _check_image(img, min_side=1, what="image"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InputError(f"{what} must be 2-D grayscale, got shape {img.shape}")
    if min(img.shape) < min_side:
        raise InputError(f"{what} must be at least {min_side} px on the short side, got {img.shape}")
    return img


def _quantize(img):
    """Round [0,1] values to 8-bit levels 0..255."""
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.int64)


# ---------------------------------------------------------------------------
# SF / EN / SD / MI
# ---------------------------------------------------------------------------

def spatial_frequency(img) -> float:
    """sqrt(RF^2 + CF^2): RMS of horizontal/vertical first differences."""
    img = _check_image(img, what="fused image")
    if img.shape[0] < 2 and img.shape[1] < 2:
        raise InputError("spatial_frequency: degenerate 1x1 image")
    x = img * 255.0
    dh = np.diff(x, axis=1)
    dv = np.diff(x, axis=0)
    rf = np.sqrt(np.mean(dh ** 2)) if dh.size else 0.0
    cf = np.sqrt(np.mean(dv ** 2)) if dv.size else 0.0
    return float(np.hypot(rf, cf))


def entropy(img) -> float:
    """Shannon entropy in bits of the 256-level histogram."""
    img = _check_image(img)
    counts = np.bincount(_quantize(img).ravel(), minlength=256)
    p = counts / counts.sum()
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def standard_deviation(img) -> float:
    """Population standard deviation on the [0, 255] scale."""
    img = _check_image(img)
    return float(np.std(img * 255.0))


def _mi_pair(a, b) -> float:
    """Shannon mutual information (bits) of the 256x256 joint histogram."""
    joint = np.zeros((256, 256), dtype=np.float64)
    np.add.at(joint, (a.ravel(), b.ravel()), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    return float((joint[nz] * np.log2(joint[nz] / (np.outer(pa, pb)[nz]))).sum())


def mutual_information(a, b, f) -> float:
    """Two-source sum convention: MI(F, A) + MI(F, B)."""
    a, b, f = _check_image(a), _check_image(b), _check_image(f)
    qa, qb, qf = _quantize(a), _quantize(b), _quantize(f)
    return _mi_pair(qf, qa) + _mi_pair(qf, qb)


# ---------------------------------------------------------------------------
# Qabf
# ---------------------------------------------------------------------------

# Xydeas-Petrovic sigmoid constants (strength, then orientation)
_QABF_GG, _QABF_KG, _QABF_SG = 0.9994, -15.0, 0.5
_QABF_GA, _QABF_KA, _QABF_SA = 0.9879, -22.0, 0.8


def _edge_fields(img):
    gx = ndimage.sobel(img, axis=1, mode="reflect")
    gy = ndimage.sobel(img, axis=0, mode="reflect")
    g = np.hypot(gx, gy)
    alpha = np.arctan2(gy, gx)
    alpha = np.where(alpha > np.pi / 2, alpha - np.pi, alpha)
    alpha = np.where(alpha <= -np.pi / 2, alpha + np.pi, alpha)
    return g, alpha


def _preservation(g_src, a_src, g_f, a_f):
    lo = np.minimum(g_src, g_f)
    hi = np.maximum(g_src, g_f)
    ratio = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
    angle = 1.0 - np.abs(a_src - a_f) / (np.pi / 2)

    def sig(x, gamma, kappa, sigma):
        return gamma / (1.0 + np.exp(kappa * (x - sigma)))

    # normalize so perfect preservation (ratio 1, matching angles) scores 1
    qg = sig(ratio, _QABF_GG, _QABF_KG, _QABF_SG) / sig(1.0, _QABF_GG, _QABF_KG, _QABF_SG)
    qa = sig(angle, _QABF_GA, _QABF_KA, _QABF_SA) / sig(1.0, _QABF_GA, _QABF_KA, _QABF_SA)
    return qg * qa


def q_abf(a, b, f) -> float:
    """Gradient-based edge-preservation quality, weighted by source edges."""
    a, b, f = _check_image(a), _check_image(b), _check_image(f)
    ga, aa = _edge_fields(a * 255.0)
    gb, ab = _edge_fields(b * 255.0)
    gf, af = _edge_fields(f * 255.0)
    qa = _preservation(ga, aa, gf, af)
    qb = _preservation(gb, ab, gf, af)
    weight = ga + gb
    total = weight.sum()
    if total == 0:
        return 0.0
    return float((qa * ga + qb * gb).sum() / total)


# ---------------------------------------------------------------------------
# MS-SSIM
# ---------------------------------------------------------------------------

_MSSSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


def _window_stats(x, y, size=11):
    k = np.ones((size, size)) / (size * size)

    def box(img):
        return ndimage.convolve(img, k, mode="constant")[size // 2:-(size // 2) or None,
                                                         size // 2:-(size // 2) or None]

    mx, my = box(x), box(y)
    vx = box(x * x) - mx * mx
    vy = box(y * y) - my * my
    cov = box(x * y) - mx * my
    return mx, my, vx, vy, cov


def _cs_and_ssim(x, y):
    mx, my, vx, vy, cov = _window_stats(x, y)
    cs = (2 * cov + _SSIM_C2) / (vx + vy + _SSIM_C2)
    lum = (2 * mx * my + _SSIM_C1) / (mx * mx + my * my + _SSIM_C1)
    return float(np.mean(cs)), float(np.mean(lum * cs))


def _downsample2(x):
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2])


def _ms_ssim_pair(ref, dist) -> float:
    side = min(ref.shape)
    levels = 1
    while levels < 5 and side // (2 ** levels) >= 11:
        levels += 1
    weights = _MSSSIM_WEIGHTS[:levels] / _MSSSIM_WEIGHTS[:levels].sum()
    value = 1.0
    for lvl in range(levels):
        cs, full = _cs_and_ssim(ref, dist)
        term = full if lvl == levels - 1 else cs
        value *= max(term, 0.0) ** weights[lvl]
        if lvl != levels - 1:
            ref, dist = _downsample2(ref), _downsample2(dist)
    return value


def ms_ssim(a, b, f) -> float:
    """Mean over the two sources of multi-scale SSIM against the fused image."""
    a = _check_image(a, min_side=16, what="source A")
    b = _check_image(b, min_side=16, what="source B")
    f = _check_image(f, min_side=16, what="fused image")
    return 0.5 * (_ms_ssim_pair(a, f) + _ms_ssim_pair(b, f))


# ---------------------------------------------------------------------------
# FMI
# ---------------------------------------------------------------------------

_FMI_WINDOW = 8
_FMI_BINS = 8


def _haar_details(img):
    """Magnitudes of the single-level Haar detail subbands.

    Magnitudes (not signed coefficients) keep the metric exactly invariant
    to image flips: flipping negates LH/HH, and min-max binning is not
    symmetric under negation at bin boundaries.
    """
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    x = img[:h, :w]
    a = x[0::2, 0::2]
    b = x[0::2, 1::2]
    c = x[1::2, 0::2]
    d = x[1::2, 1::2]
    lh = (a - b + c - d) / 2.0
    hl = (a + b - c - d) / 2.0
    hh = (a - b - c + d) / 2.0
    return [np.abs(lh), np.abs(hl), np.abs(hh)]


def _region_bins(tile):
    lo, hi = tile.min(), tile.max()
    if hi <= lo:
        return np.zeros(tile.shape, dtype=np.int64)
    q = np.floor((tile - lo) / (hi - lo) * _FMI_BINS).astype(np.int64)
    return np.clip(q, 0, _FMI_BINS - 1)


def _regional_nmi(x_tile, y_tile) -> float:
    """Symmetric-uncertainty normalized MI of one region, in [0, 1]."""
    qx, qy = _region_bins(x_tile), _region_bins(y_tile)
    joint = np.zeros((_FMI_BINS, _FMI_BINS))
    np.add.at(joint, (qx.ravel(), qy.ravel()), 1.0)
    joint /= joint.sum()
    px, py = joint.sum(axis=1), joint.sum(axis=0)

    def ent(p):
        nz = p[p > 0]
        return float(-(nz * np.log2(nz)).sum())

    hx, hy = ent(px), ent(py)
    if hx + hy == 0.0:
        return 1.0  # two constant regions carry identical (no) information
    nz = joint > 0
    mi = float((joint[nz] * np.log2(joint[nz] / np.outer(px, py)[nz])).sum())
    return 2.0 * mi / (hx + hy)


def _feature_fmi(src_map, fused_map) -> float:
    h, w = src_map.shape
    th, tw = h // _FMI_WINDOW, w // _FMI_WINDOW
    vals = []
    for i in range(th):
        for j in range(tw):
            sl = (slice(i * _FMI_WINDOW, (i + 1) * _FMI_WINDOW),
                  slice(j * _FMI_WINDOW, (j + 1) * _FMI_WINDOW))
            vals.append(_regional_nmi(src_map[sl], fused_map[sl]))
    return float(np.mean(vals))


def fmi(a, b, f, feature: str = "pixel") -> float:
    """Feature mutual information, averaged over the two sources."""
    a, b, f = _check_image(a), _check_image(b), _check_image(f)
    if feature == "pixel":
        maps = [( [a], [f] ), ( [b], [f] )]
        min_side = _FMI_WINDOW
    elif feature == "wavelet":
        maps = [(_haar_details(a), _haar_details(f)), (_haar_details(b), _haar_details(f))]
        min_side = 2 * _FMI_WINDOW
    else:
        raise InputError(f"fmi: feature must be 'pixel' or 'wavelet', got {feature!r}")
    if min(a.shape + b.shape + f.shape) < min_side:
        raise InputError(f"fmi[{feature}]: images smaller than the {_FMI_WINDOW}x{_FMI_WINDOW} "
                         f"analysis window in the feature domain")
    per_source = []
    for src_maps, fused_maps in maps:
        per_source.append(np.mean([_feature_fmi(s, fd) for s, fd in zip(src_maps, fused_maps)]))
    return float(np.mean(per_source))


# ---------------------------------------------------------------------------
# VIF (pixel domain)
# ---------------------------------------------------------------------------

_VIF_SIGMA_NSQ = 2.0


def _gaussian_kernel(n, sd):
    ax = np.arange(n) - (n - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sd * sd))
    k = np.outer(g, g)
    return k / k.sum()


def _valid_convolve(img, kernel):
    half = kernel.shape[0] // 2
    out = ndimage.convolve(img, kernel, mode="constant")
    return out[half:-half or None, half:-half or None]


def _vifp(ref, dist) -> float:
    num = den = 0.0
    for scale in range(1, 5):
        n = 2 ** (4 - scale + 1) + 1
        kernel = _gaussian_kernel(n, n / 5.0)
        if scale > 1:
            # blur, then 2x2 block-average: unlike stride-2 decimation this
            # keeps the pyramid exactly flip-equivariant on even grids
            ref = _downsample2(_valid_convolve(ref, kernel))
            dist = _downsample2(_valid_convolve(dist, kernel))
        mu1 = _valid_convolve(ref, kernel)
        mu2 = _valid_convolve(dist, kernel)
        s1 = np.maximum(_valid_convolve(ref * ref, kernel) - mu1 * mu1, 0.0)
        s2 = np.maximum(_valid_convolve(dist * dist, kernel) - mu2 * mu2, 0.0)
        s12 = _valid_convolve(ref * dist, kernel) - mu1 * mu2

        g = s12 / (s1 + 1e-10)
        sv = s2 - g * s12
        g = np.where(s1 < 1e-10, 0.0, g)
        sv = np.where(s1 < 1e-10, s2, sv)
        s1c = np.where(s1 < 1e-10, 0.0, s1)
        g = np.where(s2 < 1e-10, 0.0, g)
        sv = np.where(s2 < 1e-10, 0.0, sv)
        sv = np.where(g < 0.0, s2, sv)
        g = np.maximum(g, 0.0)
        sv = np.maximum(sv, 1e-10)

        num += float(np.log10(1.0 + g * g * s1c / (sv + _VIF_SIGMA_NSQ)).sum())
        den += float(np.log10(1.0 + s1c / _VIF_SIGMA_NSQ).sum())
    if den == 0.0:
        return 1.0
    return num / den


def vif_fusion(a, b, f) -> float:
    """Mean of VIF(A -> F) and VIF(B -> F), pixel-domain variant."""
    a = _check_image(a, min_side=32, what="source A")
    b = _check_image(b, min_side=32, what="source B")
    f = _check_image(f, min_side=32, what="fused image")
    return 0.5 * (_vifp(a * 255.0, f * 255.0) + _vifp(b * 255.0, f * 255.0))


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def evaluate_all(a, b, f, name: str = "") -> MetricReport:
    """All nine metrics for one (ir, vis, fused) triple."""
    a, b, f = _check_image(a), _check_image(b), _check_image(f)
    if not (a.shape == b.shape == f.shape):
        raise InputError(f"evaluate_all: shapes {a.shape}/{b.shape}/{f.shape} differ")
    return MetricReport(
        sf=spatial_frequency(f),
        en=entropy(f),
        q_abf=q_abf(a, b, f),
        fmi_w=fmi(a, b, f, "wavelet"),
        ms_ssim=ms_ssim(a, b, f),
        fmi_pixel=fmi(a, b, f, "pixel"),
        mi=mutual_information(a, b, f),
        sd=standard_deviation(f),
        vif=vif_fusion(a, b, f),
        name=name,
    )


def reports_to_csv(reports) -> str:
    """CSV text with the Table-1 column order, locale-independent."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("name",) + CSV_COLUMNS)
    for r in reports:
        writer.writerow([r.name] + [f"{v:.6f}" for v in r.row()])
    return buf.getvalue()
