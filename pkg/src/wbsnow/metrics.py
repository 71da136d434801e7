"""Validation scores: R^2, relative bias and occurrence contingency scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class UndefinedMetricError(ZeroDivisionError):
    pass


@dataclass
class ContingencyCounts:
    hits: int
    misses: int
    false_alarms: int
    correct_negatives: int = 0

    def __post_init__(self):
        if min(self.hits, self.misses, self.false_alarms, self.correct_negatives) < 0:
            raise ValueError("contingency counts must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _pair(estimates, observations):
    est = np.asarray(estimates, dtype=float)
    obs = np.asarray(observations, dtype=float)
    if est.shape != obs.shape:
        raise ValueError("estimates and observations differ in shape")
    ok = ~(np.isnan(est) | np.isnan(obs))
    return est[ok], obs[ok]


def r2(estimates, observations) -> float:
    """Squared Pearson correlation from standardised products (n-1 denominator)."""
    est, obs = _pair(estimates, observations)
    n = est.size
    if n < 2:
        raise UndefinedMetricError("R^2 needs at least two pairs")
    se, so = est.std(ddof=1), obs.std(ddof=1)
    if se == 0 or so == 0:
        raise UndefinedMetricError("R^2 undefined for a constant sample")
    r = np.sum((est - est.mean()) / se * (obs - obs.mean()) / so) / (n - 1)
    return float(r * r)


def rbias(estimates, observations) -> float:
    """Relative bias in percent."""
    est, obs = _pair(estimates, observations)
    total = obs.sum()
    if total == 0:
        raise UndefinedMetricError("RBIAS undefined: observations sum to zero")
    return float((est - obs).sum() / total * 100.0)


def contingency(est_occurrence, obs_occurrence) -> ContingencyCounts:
    est = np.asarray(est_occurrence, dtype=bool)
    obs = np.asarray(obs_occurrence, dtype=bool)
    if est.shape != obs.shape:
        raise ValueError("occurrence arrays differ in shape")
    return ContingencyCounts(
        hits=int(np.sum(est & obs)),
        misses=int(np.sum(~est & obs)),
        false_alarms=int(np.sum(est & ~obs)),
        correct_negatives=int(np.sum(~est & ~obs)),
    )


def pod(c: ContingencyCounts) -> float:
    if c.hits + c.misses == 0:
        raise UndefinedMetricError("POD undefined: no observed events")
    return c.hits / (c.hits + c.misses)


def far(c: ContingencyCounts) -> float:
    if c.hits + c.false_alarms == 0:
        raise UndefinedMetricError("FAR undefined: no forecast events")
    return c.false_alarms / (c.hits + c.false_alarms)


def csi(c: ContingencyCounts) -> float:
    if c.hits + c.misses + c.false_alarms == 0:
        raise UndefinedMetricError("CSI undefined: no observed or forecast events")
    return c.hits / (c.hits + c.misses + c.false_alarms)


def _safe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetricError:
        return None


def validation_report(estimates=None, observations=None, counts: ContingencyCounts | None = None) -> dict:
    """All five scores with sample counts; undefined scores are null."""
    report: dict = {}
    if estimates is not None:
        est, obs = _pair(estimates, observations)
        report.update(n_pairs=int(est.size), r2=_safe(r2, est, obs), rbias=_safe(rbias, est, obs))
    if counts is not None:
        report.update(counts=counts.to_dict(), pod=_safe(pod, counts), far=_safe(far, counts),
                      csi=_safe(csi, counts))
    return report
