"""Quality metrics (PSNR, SSIM), run-trace CSV persistence, comparison
plots and image/kernel I/O."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .maid import RunTrace
from .operators import Kernel

PSNR_CAP_DB = 99.0
TRACE_HEADER = ["k", "loss", "grad_norm", "eps", "delta", "alpha",
                "lower_iters_cum", "cg_iters_cum", "wall_s"]


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    rel_l2_error: float


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """10 log10(peak^2 / MSE) over all channels, capped for identical inputs."""
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if peak <= 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(peak * peak / mse), cap)


def _ssim_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = size // 2
    g = np.arange(-half, half + 1, dtype=float)
    w = np.exp(-(g[:, None] ** 2 + g[None, :] ** 2) / (2.0 * sigma**2))
    return w / w.sum()


def ssim(x: np.ndarray, ref: np.ndarray) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
    C2 = 0.03^2, averaged over channels; windows fully inside the image."""
    x = np.asarray(x, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        ref = ref[:, :, None]
    win = _ssim_window()
    half = win.shape[0] // 2
    c1, c2 = 0.01**2, 0.03**2

    def filt(img):
        out = ndimage.correlate(img, win, mode="constant")
        return out[half:-half, half:-half]

    vals = []
    for c in range(x.shape[2]):
        xa, ya = x[:, :, c], ref[:, :, c]
        mx = filt(xa)
        my = filt(ya)
        sxx = filt(xa * xa) - mx * mx
        syy = filt(ya * ya) - my * my
        sxy = filt(xa * ya) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def rel_l2_error(x: np.ndarray, ref: np.ndarray) -> float:
    return float(np.linalg.norm(x - ref) / np.linalg.norm(ref))


def metric_report(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> MetricReport:
    s = ssim(x, ref) if np.asarray(x).ndim >= 2 else float("nan")
    return MetricReport(psnr(x, ref, peak), s, rel_l2_error(x, ref))


def write_trace_csv(trace: RunTrace, path) -> None:
    rows = zip(trace.k, trace.loss, trace.grad_norm, trace.eps, trace.delta,
               trace.alpha, trace.lower_iters_cum, trace.cg_iters_cum, trace.wall_s)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_HEADER)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc}") from exc


def read_trace_csv(path) -> RunTrace:
    trace = RunTrace()
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != TRACE_HEADER:
                raise ValueError(f"unexpected trace header {header} in {path}")
            for row in reader:
                trace.append(int(row[0]), *map(float, row[1:]))
    except OSError as exc:
        raise OSError(f"cannot read trace from {path}: {exc}") from exc
    return trace


def loss_axis_scale(losses) -> str:
    """Log scale when the (positive) losses span more than three decades."""
    arr = np.asarray([v for trace_losses in losses for v in trace_losses], dtype=float)
    arr = arr[arr > 0]
    if arr.size >= 2 and arr.max() / arr.min() > 1e3:
        return "log"
    return "linear"


def render_plots(traces, out_dir) -> list:
    """Emit loss-vs-lower-iterations and loss-vs-wall-time line plots.

    ``traces`` is a list of RunTrace (curve labels come from trace.method).
    Returns the paths written.
    """
    import os

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not traces:
        raise ValueError("need at least one trace to plot")
    os.makedirs(out_dir, exist_ok=True)
    scale = loss_axis_scale([t.loss for t in traces])
    paths = []
    for fname, xattr, xlabel in [
        ("loss_vs_lower_iters.png", "lower_iters_cum", "cumulative lower-level iterations"),
        ("loss_vs_wall_time.png", "wall_s", "wall-clock time [s]"),
    ]:
        fig, ax = plt.subplots(figsize=(6, 4))
        for trace in traces:
            ax.plot(getattr(trace, xattr), trace.loss, label=trace.method or "run")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("upper-level loss")
        ax.set_yscale(scale)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths


def save_png(img: np.ndarray, path) -> None:
    """8-bit PNG with values clamped to [0, 1]; grayscale for 2D arrays."""
    from PIL import Image

    img = np.asarray(img, dtype=float)
    data = np.clip(img, 0.0, 1.0)
    quant = np.round(data * 255.0).astype(np.uint8)
    try:
        Image.fromarray(quant).save(path)
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc


def load_png(path) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            arr = np.asarray(im, dtype=float) / 255.0
    except OSError as exc:
        raise OSError(f"cannot read image from {path}: {exc}") from exc
    return arr


def save_kernel_image(kernel, path) -> None:
    """Render a kernel (first channel of a stencil, or the dense matrix)
    min-max normalized to grayscale."""
    data = kernel.data if isinstance(kernel, Kernel) else np.asarray(kernel)
    if data.ndim == 3:
        data = data[:, :, 0]
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        norm = (data - lo) / (hi - lo)
    else:
        norm = np.full_like(data, 0.5)
    save_png(norm, path)
