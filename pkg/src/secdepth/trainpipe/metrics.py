"""Standard depth-benchmark error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

METRIC_KEYS = ("AbsRel", "SqRel", "RMSE", "RMSElog", "a1", "a2", "a3")


@dataclass
class MetricsRecord:
    AbsRel: float
    SqRel: float
    RMSE: float
    RMSElog: float
    a1: float
    a2: float
    a3: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, records: list["MetricsRecord"], weights=None) -> "MetricsRecord":
        if not records:
            raise ValueError("no records to average")
        w = np.ones(len(records)) if weights is None else np.asarray(weights, dtype=np.float64)
        w = w / w.sum()
        return cls(**{k: float(sum(wi * getattr(r, k) for wi, r in zip(w, records))) for k in METRIC_KEYS})


def compute_errors(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None) -> MetricsRecord:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is not None:
        pred, gt = pred[mask], gt[mask]
    pred, gt = pred.reshape(-1), gt.reshape(-1)
    if gt.size == 0:
        raise ValueError("no evaluation pixels")
    thresh = np.maximum(gt / pred, pred / gt)
    return MetricsRecord(
        AbsRel=float(np.mean(np.abs(pred - gt) / gt)),
        SqRel=float(np.mean((pred - gt) ** 2 / gt)),
        RMSE=float(np.sqrt(np.mean((pred - gt) ** 2))),
        RMSElog=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
        a1=float(np.mean(thresh < 1.25)),
        a2=float(np.mean(thresh < 1.25**2)),
        a3=float(np.mean(thresh < 1.25**3)),
    )
