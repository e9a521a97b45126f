import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

# Recovery window definition
RECOVERY_WINDOW = 0.5
PRE_DISTURBANCE_WINDOW = 1.0
RECOVERY_FACTOR = 2.0
TIME_EPS = 1e-9


@dataclass
class RecoveryRecord:
    t_start: float
    t_end: float
    pre_rms: float
    recovery_time: Optional[float]

    @property
    def recovered(self):
        return self.recovery_time is not None


@dataclass
class MpcSummary:
    mean_running_cost: float
    rms_ee_error: float
    max_solve_time: float
    divergence_count: int
    recovery: List[RecoveryRecord] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class MpcMetrics:
    """Whole-run aggregates and disturbance recovery times for a closed-loop log"""

    @staticmethod
    def rms(values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(values * values)))

    @staticmethod
    def recovery_time(t, ee_error, event, control_dt, window=RECOVERY_WINDOW,
                      pre_window=PRE_DISTURBANCE_WINDOW, factor=RECOVERY_FACTOR):
        """Time after t_end until the trailing-window RMS error drops to factor × the pre-disturbance RMS.

        Returns (pre_rms, recovery_time); recovery_time is None when no
        complete window inside the log qualifies.
        """
        t = np.asarray(t, dtype=float)
        err2 = np.asarray(ee_error, dtype=float) ** 2
        pre_mask = (t >= event.t_start - pre_window - TIME_EPS) & (t < event.t_start - TIME_EPS)
        pre_rms = MpcMetrics.rms(np.sqrt(err2[pre_mask]))
        threshold = factor * pre_rms

        width = max(1, int(round(window / control_dt)))
        if len(t) < width:
            return pre_rms, None
        cumulative = np.concatenate([[0.0], np.cumsum(err2)])
        # window ending at sample i covers samples i-width+1 .. i
        ends = np.arange(width - 1, len(t))
        window_rms = np.sqrt((cumulative[ends + 1] - cumulative[ends + 1 - width]) / width)
        ok = (t[ends] >= event.t_end - TIME_EPS) & (window_rms <= threshold * (1.0 + 1e-12))
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            return pre_rms, None
        return pre_rms, max(0.0, float(t[ends[hits[0]]] - event.t_end))

    @staticmethod
    def metrics(log, events=()):
        """Summary of an MpcLog with one recovery record per disturbance event"""
        if len(log) == 0:
            raise InvalidArgumentError("Cannot summarise an empty log")
        recovery = []
        for event in events:
            pre_rms, recovery_time = MpcMetrics.recovery_time(log.t, log.ee_error, event, log.control_dt)
            recovery.append(RecoveryRecord(t_start=event.t_start, t_end=event.t_end,
                                           pre_rms=pre_rms, recovery_time=recovery_time))
            if recovery_time is None:
                logger.warning(f"⚠️ No recovery after the disturbance ending at t={event.t_end:g}s")

        running = np.asarray(log.running_cost, dtype=float)
        summary = MpcSummary(
            mean_running_cost=float(np.mean(running)),
            rms_ee_error=MpcMetrics.rms(log.ee_error),
            max_solve_time=float(np.max(log.solve_time)),
            divergence_count=int(log.divergence_count),
            recovery=recovery,
        )
        if not math.isfinite(summary.mean_running_cost):
            logger.warning("⚠️ Running cost contains non-finite values")
        return summary
