"""Per-instance inference: initialization followed by refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .errors import EmptyMask
from .initialization import InitConfig, initialize
from .metrics import InstancePrediction
from .refine import Energy, RefineConfig, refine
from .targets import RasterStack


@dataclass
class InstanceResult:
    prediction: InstancePrediction
    initial: object
    trace: List[Energy] = field(default_factory=list)
    valid: bool = True

    @property
    def monotone(self) -> bool:
        totals = [e.total for e in self.trace]
        return all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))


def infer_instance(rasters: RasterStack, index: int = 0, init_cfg: Optional[InitConfig] = None,
                   refine_cfg: Optional[RefineConfig] = None) -> Optional[InstanceResult]:
    """Polygon for one instance, or None when its mask is empty."""
    try:
        init = initialize(rasters, init_cfg)
    except EmptyMask:
        return None
    cfg = refine_cfg or RefineConfig()
    if cfg.iterations > 0:
        result = refine(init.polygon, rasters, cfg)
        polygon, trace, valid = result.polygon, result.trace, result.valid
    else:
        polygon, trace, valid = init.polygon, [], True
    pred = InstancePrediction(id=index, polygon=polygon, score=init.score, fallback=init.fallback)
    return InstanceResult(pred, init, trace, valid)


def infer_scene(rasters: Sequence[RasterStack], init_cfg: Optional[InitConfig] = None,
                refine_cfg: Optional[RefineConfig] = None) -> List[InstanceResult]:
    out = []
    for i, r in enumerate(rasters):
        res = infer_instance(r, i, init_cfg, refine_cfg)
        if res is not None:
            out.append(res)
    return out
