"""PSNR, SSIM and edge precision/recall, plus the per-image report container.

All metrics work on float images in [0, 1] (peak value 1). Color images are
scored on RGB directly: PSNR pools every channel, SSIM averages per-channel
scores. No border pixels are shaved.
"""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

COLUMNS = ("image_id", "psnr_db", "ssim", "precision", "recall")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """PSNR in dB for peak 1.0; ``math.inf`` when the images are identical."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_window():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(x, win):
    # weighted mean over every fully contained window position
    return np.einsum("ijkl,kl->ij", sliding_window_view(x, win.shape), win)


def _ssim_plane(x, y, win):
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    var_x = _filter_valid(x * x, win) - mu_x ** 2
    var_y = _filter_valid(y * y, win) - mu_y ** 2
    cov = _filter_valid(x * y, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def ssim(a, b):
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over channels."""
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) images, got {a.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    win = ssim_window()
    return float(np.mean([_ssim_plane(a[..., c], b[..., c], win) for c in range(a.shape[2])]))


def edge_precision_recall(pred, gt):
    """Exact per-pixel precision and recall of a binary edge map.

    Empty prediction: precision is 1 if gt is also empty, else 0.
    Empty gt: recall is 1.
    """
    pred, gt = _pair(pred, gt)
    for name, m in (("pred", pred), ("gt", gt)):
        if not np.all((m == 0) | (m == 1)):
            raise ValueError(f"{name} edge map is not binary")
    p = pred.astype(bool)
    g = gt.astype(bool)
    hits = np.count_nonzero(p & g)
    n_pred = np.count_nonzero(p)
    n_gt = np.count_nonzero(g)
    precision = hits / n_pred if n_pred else (1.0 if n_gt == 0 else 0.0)
    recall = hits / n_gt if n_gt else 1.0
    return precision, recall


@dataclass
class ImageScore:
    image_id: str
    psnr_db: float
    ssim: float
    precision: float = None
    recall: float = None


@dataclass
class MetricsReport:
    dataset_name: str
    scale_factor: int
    method_name: str
    per_image: list = field(default_factory=list)

    def add(self, image_id, psnr_db, ssim_value, precision=None, recall=None):
        self.per_image.append(ImageScore(image_id, psnr_db, ssim_value, precision, recall))

    @property
    def has_edges(self):
        return any(s.precision is not None for s in self.per_image)

    def aggregates(self):
        """Arithmetic mean of each column (inf if any PSNR is inf)."""
        if not self.per_image:
            raise ValueError("empty report")
        out = {
            "psnr_db": float(np.mean([s.psnr_db for s in self.per_image])),
            "ssim": float(np.mean([s.ssim for s in self.per_image])),
        }
        if self.has_edges:
            out["precision"] = float(np.mean([s.precision for s in self.per_image]))
            out["recall"] = float(np.mean([s.recall for s in self.per_image]))
        return out

    def _columns(self):
        return COLUMNS if self.has_edges else COLUMNS[:3]

    def rows(self):
        cols = self._columns()
        for s in self.per_image:
            yield [getattr(s, c) for c in cols]
        agg = self.aggregates()
        yield ["mean"] + [agg[c] for c in cols[1:]]

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self._columns())
        for row in self.rows():
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_text(self, references=()):
        cols = self._columns()
        lines = [
            f"dataset: {self.dataset_name}",
            f"scale: x{self.scale_factor}",
            f"method: {self.method_name}",
            f"images: {len(self.per_image)}",
            "",
            "  ".join(f"{c:>12}" for c in cols),
        ]
        for row in self.rows():
            lines.append("  ".join(f"{_fmt(v):>12}" for v in row))
        if references:
            lines += ["", "reference values (published table):"]
            for ref in references:
                lines.append(f"  {ref.method:<10} {ref.dataset:<10} x{ref.scale}  "
                             f"PSNR {ref.psnr:>6.2f}  SSIM {ref.ssim:.3f}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, str):
        return v
    if v is None:
        return ""
    if math.isinf(v):
        return "inf"
    return f"{v:.6f}"
