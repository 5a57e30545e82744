"""Evaluation suite: image quality, geometric quality, and per-view contribution."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .errors import ZeroFinalQuality

PSNR_CAP_DB = 99.0


def psnr(rendered: np.ndarray, reference: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at 99 dB."""
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ValueError("image shapes must match")
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


_LUMA = np.array([0.299, 0.587, 0.114])


def ssim(rendered: np.ndarray, reference: np.ndarray,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM over luma with an 11x11 Gaussian window (sigma 1.5)."""
    a = np.asarray(rendered, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise ValueError("image shapes must match")
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError("images must be at least 11x11")
    if a.ndim == 3:
        a = a @ _LUMA
        b = b @ _LUMA
    c1 = k1**2
    c2 = k2**2
    truncate = 5.0 / sigma  # 11-tap window
    blur = lambda x: gaussian_filter(x, sigma=sigma, truncate=truncate, mode="reflect")
    mu_a = blur(a)
    mu_b = blur(b)
    var_a = blur(a * a) - mu_a**2
    var_b = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def chamfer_suite(recon_points: np.ndarray, truth_points: np.ndarray, tau_f: float,
                  truth_labels=None):
    """Accuracy, completeness, chamfer, f-score, per-region completeness.

    Accuracy is the mean recon-to-truth nearest distance, completeness the mean
    truth-to-recon nearest distance, chamfer their mean, f-score the harmonic
    mean of precision and recall at distance tau_f. The fast path uses a KD
    tree; the test suite checks it against an O(n^2) scan.
    """
    recon = np.atleast_2d(np.asarray(recon_points, dtype=float))
    truth = np.atleast_2d(np.asarray(truth_points, dtype=float))
    if recon.shape[0] == 0 or truth.shape[0] == 0:
        raise ValueError("point clouds must be non-empty")
    d_rt, _ = cKDTree(truth).query(recon)
    d_tr, _ = cKDTree(recon).query(truth)
    accuracy = float(d_rt.mean())
    completeness = float(d_tr.mean())
    chamfer = (accuracy + completeness) / 2.0
    precision = float((d_rt <= tau_f).mean())
    recall = float((d_tr <= tau_f).mean())
    fscore = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    per_region = {}
    if truth_labels is not None:
        labels = np.asarray(truth_labels)
        for lab in sorted(set(truth_labels)):
            per_region[lab] = float(d_tr[labels == lab].mean())
    return accuracy, completeness, chamfer, fscore, per_region


def acr(quality_series) -> float:
    """Average contribution rate (%): mean normalized per-view quality increment.

    The first entry is the quality after the initialization views; negative
    increments clamp to zero before averaging.
    """
    q = np.asarray(list(quality_series), dtype=float)
    if q.size < 2:
        raise ValueError("need at least two quality entries")
    final = q[-1]
    if final <= 0.0:
        raise ZeroFinalQuality("final quality is zero")
    inc = np.maximum(np.diff(q), 0.0)
    return float(inc.mean() / final * 100.0)


@dataclass
class MetricsRecord:
    psnr: float
    ssim: float
    accuracy: float
    completeness: float
    chamfer: float
    fscore: float
    fscore_threshold: float
    per_region_completeness: dict = field(default_factory=dict)
    acr: float | None = None

    def as_row(self) -> dict:
        row = {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "accuracy": self.accuracy,
            "completeness": self.completeness,
            "chamfer": self.chamfer,
            "fscore": self.fscore,
            "fscore_threshold": self.fscore_threshold,
        }
        for lab in sorted(self.per_region_completeness):
            row[f"comp[{lab}]"] = self.per_region_completeness[lab]
        return row


def episode_cost(view_count: int, trajectory_lengths, final_chamfer: float,
                 lam: float = 0.0, view_unit_cost: float = 1.0, traj_cost_per_meter: float = 1.0):
    """Cost accounting: (view cost total, manipulation cost total, error, combined).

    combined = error + lam * (view costs + manipulation costs).
    """
    zeta_nu = float(view_count) * view_unit_cost
    zeta_tau = float(np.sum(np.asarray(list(trajectory_lengths), dtype=float))) * traj_cost_per_meter
    combined = final_chamfer + lam * (zeta_nu + zeta_tau)
    return zeta_nu, zeta_tau, final_chamfer, combined
