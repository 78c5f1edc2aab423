"""Registration quality metrics and batch summary statistics.

Final quality is always judged on clean images: the recovered field warps
the clean template, and the result is compared against the clean reference,
so noise realizations never inflate or mask registration error.  A run
counts as successful when that final RMSE drops below 0.1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .image import Image, warp
from .mesh import DisplacementField, rasterize

SUCCESS_RMSE = 0.1
MASK_THRESHOLD = 0.01


def rmse(a: Image | np.ndarray, b: Image | np.ndarray) -> float:
    """Root mean square intensity difference over all pixels."""
    pa = a.pixels if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    pb = b.pixels if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch {pa.shape} vs {pb.shape}")
    d = pa - pb
    return float(np.sqrt(np.mean(d * d)))


def object_mask(reference: Image, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Pixels belonging to the imaged object: intensity above threshold."""
    return reference.pixels > threshold


def field_diff_norm(field_a: np.ndarray, field_b: np.ndarray,
                    mask: np.ndarray) -> float:
    """sqrt(||F1-G1||^2 + ||F2-G2||^2), Frobenius norms over masked pixels.

    Unnormalized, matching the published definition; fields are (n, n, 2)
    rasters and the mask selects which pixels enter the sums.
    """
    fa = np.asarray(field_a, dtype=np.float64)
    fb = np.asarray(field_b, dtype=np.float64)
    if fa.shape != fb.shape or fa.shape[:-1] != mask.shape:
        raise ValueError("field rasters and mask must agree in shape")
    if not mask.any():
        warnings.warn("field_diff_norm: mask selects no pixels", RuntimeWarning)
        return 0.0
    d = (fa - fb)[mask]
    return float(np.sqrt(np.sum(d * d)))


@dataclass
class RunMetrics:
    rmse_initial: float
    rmse_final: float
    field_norm: float
    iterations: int
    success: bool
    seconds: float


def evaluate_run(case, run, seconds: float = 0.0) -> RunMetrics:
    """Score a registration run against its synthetic case.

    The recovered field is rasterized, applied to the clean template, and
    compared to the clean reference; the field error is measured against
    the case's analytic truth raster over the object mask.
    """
    clean_r = case.reference
    clean_t = case.template
    recovered = rasterize(run.field, clean_r.n)
    warped = warp(clean_t, recovered)
    r0 = rmse(clean_r, clean_t)
    r1 = rmse(clean_r, warped)
    fnorm = field_diff_norm(recovered, case.truth_field, object_mask(clean_r))
    return RunMetrics(rmse_initial=r0, rmse_final=r1, field_norm=fnorm,
                      iterations=run.result.iterations,
                      success=bool(r1 < SUCCESS_RMSE), seconds=seconds)


def batch_stats(values, success_threshold: float = SUCCESS_RMSE) -> dict:
    """Median, quartiles (linear interpolation), IQR, min, max, successes."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to summarize")
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3),
            "iqr": float(q3 - q1), "min": float(arr.min()), "max": float(arr.max()),
            "n": int(arr.size), "successes": int((arr < success_threshold).sum())}
