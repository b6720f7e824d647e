"""ECG delineation toolkit.

Pseudo-synthetic ECG generation from segment pools, a 1-D U-Net/W-Net wave
segmenter trained with boundary- and count-aware losses on a small built-in
autodiff engine, and the matching delineation evaluation stack.
"""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    CYCLE_ORDER,
    DelineationMask,
    EcgRecord,
    FiducialSet,
    SegmentKind,
    WaveKind,
    fiducials_from_mask,
    mask_from_fiducials,
)
