"""Published PSNR/SSIM numbers for manual comparison with local runs.

Values are transcribed as printed; "-" cells are omitted. These are not
targets for the desk-scale toy runs.
"""
from dataclasses import dataclass

PROVENANCE = "published PSNR/SSIM comparison of bicubic, ENet, EDSR, no-edge baseline and the two-stage model"


@dataclass(frozen=True)
class ReferenceRow:
    method: str
    dataset: str
    scale: int
    psnr: float
    ssim: float


_METHODS = ("bicubic", "enet", "edsr", "baseline", "ours")

# dataset -> scale -> per-method (psnr, ssim); None where not reported
_TABLE = {
    "Set5": {
        2: ((33.66, 0.930), (33.89, 0.928), (38.20, 0.961), (27.32, 0.974), (33.60, 0.985)),
        4: ((28.42, 0.810), (28.56, 0.809), (32.62, 0.898), (24.22, 0.929), (28.59, 0.965)),
        8: ((23.80, 0.646), None, None, (19.32, 0.801), (23.73, 0.904)),
    },
    "Set14": {
        2: ((30.24, 0.869), (30.45, 0.862), (34.02, 0.920), (24.86, 0.930), (29.24, 0.954)),
        4: ((25.99, 0.703), (25.77, 0.678), (28.94, 0.790), (21.56, 0.832), (25.19, 0.894)),
        8: ((22.37, 0.552), None, None, (18.47, 0.708), (21.44, 0.793)),
    },
    "BSD100": {
        2: ((29.56, 0.843), (28.30, 0.873), (32.37, 0.902), (23.97, 0.909), (28.12, 0.932)),
        4: ((25.96, 0.668), (24.93, 0.627), (27.79, 0.744), (20.78, 0.773), (24.25, 0.851)),
        # printed as "0752" for ours
        8: ((22.11, 0.532), None, None, (18.65, 0.663), (21.63, 0.752)),
    },
    "Celeb-HQ": {
        2: ((33.25, 0.967), None, None, (31.33, 0.957), (32.12, 0.968)),
        4: ((29.59, 0.834), None, None, (27.94, 0.910), (28.23, 0.912)),
        8: ((26.66, 0.782), None, None, (25.46, 0.841), (25.56, 0.857)),
    },
}

REFERENCE_TABLE = tuple(
    ReferenceRow(method, dataset, scale, cell[0], cell[1])
    for dataset, by_scale in _TABLE.items()
    for scale, cells in by_scale.items()
    for method, cell in zip(_METHODS, cells)
    if cell is not None
)

# edge-enhancer precision / recall (percent) for Canny sigma=2 on 512x512 crops
EDGE_REFERENCE = {
    ("Celeb-HQ", 2): (74.27, 73.21),
    ("Celeb-HQ", 4): (45.14, 43.04),
    ("Celeb-HQ", 8): (23.23, 19.09),
    ("Places2", 2): (79.18, 80.24),
    ("Places2", 4): (60.80, 58.19),
    ("Places2", 8): (31.06, 23.93),
}


def lookup(dataset=None, scale=None, method=None):
    """Rows matching every given filter (dataset match is case-insensitive)."""
    return [
        r for r in REFERENCE_TABLE
        if (dataset is None or r.dataset.lower() == dataset.lower())
        and (scale is None or r.scale == scale)
        and (method is None or r.method == method.lower())
    ]
