"""Image-quality metrics (PSNR, SSIM) and luminance-analysis tools:
per-pair luminance-gap statistics, 1-D profile ratios, and joint
normalization of channel-mean feature maps."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import DatasetManifest, load_image_pair
from .errors import ShapeError

# luma coefficients by colour standard
LUMA_COEFFS = {
    "rec709": (0.2126, 0.7152, 0.0722),
    "rec2020": (0.2627, 0.6780, 0.0593),
}

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(pred, gt) -> float:
    """10*log10(1/MSE) with peak 1.0; returns math.inf when MSE is 0."""
    if pred.shape != gt.shape:
        raise ShapeError(f"psnr: shapes differ {pred.shape} vs {gt.shape}")
    mse = float(np.mean(np.square(pred.astype(np.float64) - gt.astype(np.float64))))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable valid-mode correlation of a 2-D array with a 1-D window."""
    tmp = sliding_window_view(img, len(g), axis=1) @ g
    return np.einsum("hwk,k->hw", sliding_window_view(tmp, len(g), axis=0), g)


def ssim(pred, gt) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, per channel, averaged."""
    if pred.shape != gt.shape:
        raise ShapeError(f"ssim: shapes differ {pred.shape} vs {gt.shape}")
    n, c, h, w = pred.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    channel_means = []
    for i in range(n):
        for j in range(c):
            x = pred[i, j].astype(np.float64)
            y = gt[i, j].astype(np.float64)
            mu_x = _filter_valid(x, g)
            mu_y = _filter_valid(y, g)
            var_x = _filter_valid(x * x, g) - mu_x * mu_x
            var_y = _filter_valid(y * y, g) - mu_y * mu_y
            cov = _filter_valid(x * y, g) - mu_x * mu_y
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            channel_means.append(float(np.mean(num / den)))
    return float(np.mean(channel_means))


def luma(x, standard="rec709"):
    """Scalar luminance plane (N,1,H,W) from an RGB tensor."""
    if standard not in LUMA_COEFFS:
        raise ShapeError(f"unknown luma standard {standard!r}")
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"luma expects (N,3,H,W), got {x.shape}")
    r, g, b = LUMA_COEFFS[standard]
    y = r * x[:, 0] + g * x[:, 1] + b * x[:, 2]
    return y[:, None].astype(np.float32)


@dataclass
class LuminanceRecord:
    name: str
    hdr_max_luma: float
    sdr_luma_at_hdr_argmax: float
    hdr_min_luma: float
    sdr_luma_at_hdr_argmin: float


def analyze_luminance(manifest: DatasetManifest, sdr_standard="rec709",
                      hdr_standard="rec2020") -> list[LuminanceRecord]:
    """Locate each HDR image's luma extrema and record the SDR luma at the
    same positions (ties resolved to the first site in row-major order)."""
    out = []
    for entry in manifest.entries:
        sdr, hdr = load_image_pair(entry)
        hy = luma(hdr, hdr_standard)[0, 0]
        sy = luma(sdr, sdr_standard)[0, 0]
        imax = np.unravel_index(int(np.argmax(hy)), hy.shape)
        imin = np.unravel_index(int(np.argmin(hy)), hy.shape)
        out.append(LuminanceRecord(
            name=Path(entry.sdr_path).stem,
            hdr_max_luma=float(hy[imax]),
            sdr_luma_at_hdr_argmax=float(sy[imax]),
            hdr_min_luma=float(hy[imin]),
            sdr_luma_at_hdr_argmin=float(sy[imin]),
        ))
    return out


def write_luminance_csv(recs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "hdr_max_luma", "sdr_luma_at_hdr_argmax",
                         "hdr_min_luma", "sdr_luma_at_hdr_argmin"])
        for r in recs:
            writer.writerow([r.name, f"{r.hdr_max_luma:.6g}",
                             f"{r.sdr_luma_at_hdr_argmax:.6g}",
                             f"{r.hdr_min_luma:.6g}",
                             f"{r.sdr_luma_at_hdr_argmin:.6g}"])


def profile_ratio(img_a, img_b, row: int, x0: int, x1: int,
                  standard="rec709"):
    """Luma of both images along one horizontal segment, plus the elementwise
    ratio a/b with the denominator floored at 1e-6."""
    for name, img in (("img_a", img_a), ("img_b", img_b)):
        if row < 0 or row >= img.shape[2] or x0 < 0 or x1 > img.shape[3] or x0 >= x1:
            raise ShapeError(f"profile segment row={row} x=[{x0},{x1}) out of "
                             f"bounds for {name} {img.shape}")
    a = luma(img_a, standard)[0, 0, row, x0:x1].astype(np.float64)
    b = luma(img_b, standard)[0, 0, row, x0:x1].astype(np.float64)
    ratio = a / np.maximum(b, 1e-6)
    return a, b, ratio


def write_profile_csv(a, b, ratio, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "luma_a", "luma_b", "ratio"])
        for i, (va, vb, vr) in enumerate(zip(a, b, ratio)):
            writer.writerow([i, f"{va:.6g}", f"{vb:.6g}", f"{vr:.6g}"])


def normalize_mean_maps(a, b):
    """Jointly normalize two maps: shift both by the joint minimum, divide by
    the larger of the two ranges; a zero joint range yields zero maps.

    Inputs may be (H,W) maps or (1,C,H,W) tensors (channel-averaged here).
    """
    def to_map(x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 4:
            x = x[0].mean(axis=0)
        if x.ndim != 2:
            raise ShapeError(f"mean map must be 2-D or (1,C,H,W), got {x.shape}")
        return x

    ma, mb = to_map(a), to_map(b)
    if ma.shape != mb.shape:
        raise ShapeError(f"mean maps differ in shape: {ma.shape} vs {mb.shape}")
    joint_min = min(ma.min(), mb.min())
    scale = max(ma.max() - ma.min(), mb.max() - mb.min())
    if scale <= 0.0:
        return np.zeros_like(ma), np.zeros_like(mb)
    return (ma - joint_min) / scale, (mb - joint_min) / scale


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float


@dataclass
class EvalReport:
    rows: list[EvalRow]
    mean_psnr: float
    mean_ssim: float
    sentinel_rows: int  # rows with infinite PSNR, excluded from the PSNR mean


def evaluate_pairs(predict, manifest: DatasetManifest, threads: int = 1):
    """Run ``predict(sdr) -> hdr_estimate`` over every manifest pair and score
    it. Returns (EvalReport, failures); failures are (name, message) tuples
    for pairs that failed to decode. Row order follows the manifest
    regardless of scheduling.
    """
    def one(entry):
        sdr, hdr = load_image_pair(entry)
        pred = np.clip(predict(sdr), 0.0, 1.0).astype(np.float32)
        return EvalRow(name=Path(entry.sdr_path).stem,
                       psnr=psnr(pred, hdr), ssim=ssim(pred, hdr))

    results: list = [None] * len(manifest.entries)
    failures = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, e) for e in manifest.entries]
            for i, (entry, fut) in enumerate(zip(manifest.entries, futures)):
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - reported per pair
                    failures.append((entry.sdr_path, str(exc)))
    else:
        for i, entry in enumerate(manifest.entries):
            try:
                results[i] = one(entry)
            except Exception as exc:  # noqa: BLE001 - reported per pair
                failures.append((entry.sdr_path, str(exc)))
    rows = [r for r in results if r is not None]
    finite = [r.psnr for r in rows if math.isfinite(r.psnr)]
    report = EvalReport(
        rows=rows,
        mean_psnr=float(np.mean(finite)) if finite else math.inf,
        mean_ssim=float(np.mean([r.ssim for r in rows])) if rows else math.nan,
        sentinel_rows=len(rows) - len(finite),
    )
    return report, failures


def write_eval_csv(report: EvalReport, path) -> None:
    """Per-image rows then a final mean row; infinite PSNR prints as 'inf'."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "psnr_db", "ssim"])
        for r in report.rows:
            p = "inf" if math.isinf(r.psnr) else f"{r.psnr:.6g}"
            writer.writerow([r.name, p, f"{r.ssim:.6g}"])
        mp = "inf" if math.isinf(report.mean_psnr) else f"{report.mean_psnr:.6g}"
        writer.writerow(["mean", mp, f"{report.mean_ssim:.6g}"])
