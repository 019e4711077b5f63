"""Tissue-class alphabet and the two-class fusion rule.

Class ids are single bytes so label rasters are portable:

    0 = unlabeled, 1 = healthy, 2 = fluid, 3 = edema, 4 = active, 5 = necrosis

Two-class fusion merges {healthy, fluid} -> healthy and
{edema, active, necrosis} -> tumorous. The fused ``TUMOROUS`` code reuses 3 so
that fusion is idempotent (fused rasters stay inside the byte alphabet and
re-fusing them is a no-op).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError

UNLABELED = 0
HEALTHY = 1
FLUID = 2
EDEMA = 3
ACTIVE = 4
NECROSIS = 5

#: Fused positive class; fixed point of the two-class fusion map.
TUMOROUS = 3

CLASS_NAMES = {
    UNLABELED: "unlabeled",
    HEALTHY: "healthy",
    FLUID: "fluid",
    EDEMA: "edema",
    ACTIVE: "active",
    NECROSIS: "necrosis",
}

ALL_CLASS_IDS = (UNLABELED, HEALTHY, FLUID, EDEMA, ACTIVE, NECROSIS)

# fuse map: unlabeled stays unlabeled, healthy/fluid -> healthy,
# edema/active/necrosis -> tumorous
_TWO_CLASS_MAP = np.array(
    [UNLABELED, HEALTHY, HEALTHY, TUMOROUS, TUMOROUS, TUMOROUS], dtype=np.uint8
)

LABEL_MODES = ("two_class", "five_class")
FUSION_STAGES = ("before_training", "after_prediction")


@dataclass(frozen=True)
class LabelScheme:
    """How many classes to train on and when to fuse them.

    ``before_training`` fuses annotation labels prior to classifier training;
    ``after_prediction`` trains on the full five-class alphabet and fuses the
    predicted labels instead.
    """

    mode: str = "two_class"
    fusion_stage: str = "before_training"

    def __post_init__(self):
        if self.mode not in LABEL_MODES:
            raise DataError(f"unknown label mode: {self.mode!r}")
        if self.fusion_stage not in FUSION_STAGES:
            raise DataError(f"unknown fusion stage: {self.fusion_stage!r}")


def fuse_labels(labels, scheme):
    """Apply the scheme's class fusion to an array of class ids.

    ``five_class`` is the identity; ``two_class`` maps onto the alphabet
    {UNLABELED, HEALTHY, TUMOROUS}. Raises :class:`DataError` on ids outside
    0..5.
    """
    arr = np.asarray(labels)
    if arr.size and (arr.min() < 0 or arr.max() > NECROSIS):
        bad = arr[(arr < 0) | (arr > NECROSIS)][0]
        raise DataError(f"unknown class id: {int(bad)}")
    if isinstance(scheme, LabelScheme):
        mode = scheme.mode
    else:
        mode = scheme
        if mode not in LABEL_MODES:
            raise DataError(f"unknown label mode: {mode!r}")
    if mode == "five_class":
        return arr.copy()
    return _TWO_CLASS_MAP[arr.astype(np.int64)].astype(arr.dtype)
