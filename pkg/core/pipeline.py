import logging
import threading
from typing import Optional

from core.catenoid import SolverParams, ThresholdEstimates, compute_thresholds
from core.config import settings

logger = logging.getLogger(__name__)

_thresholds: Optional[ThresholdEstimates] = None
_thresholds_tol: Optional[float] = None
_init_lock = threading.Lock()


def load_thresholds(tol: Optional[float] = None) -> ThresholdEstimates:
    """Process-wide d0/d1 estimates, computed once per tolerance."""
    global _thresholds, _thresholds_tol

    tol = tol or settings.THRESHOLD_TOL
    if _thresholds is not None and _thresholds_tol <= tol:
        return _thresholds

    with _init_lock:
        if _thresholds is not None and _thresholds_tol <= tol:
            return _thresholds

        logger.info(f"Computing catenoid thresholds (tol={tol})")
        _thresholds = compute_thresholds(tol, SolverParams.from_settings())
        _thresholds_tol = tol
        logger.info(f"Thresholds ready: d0={_thresholds.d0.value:.8f}, d1={_thresholds.d1.value:.8f}")
        return _thresholds


def set_thresholds(estimates: ThresholdEstimates, tol: float) -> None:
    """Install precomputed estimates, e.g. ones read back from a certificate."""
    global _thresholds, _thresholds_tol

    with _init_lock:
        _thresholds = estimates
        _thresholds_tol = tol


def reset_thresholds() -> None:
    global _thresholds, _thresholds_tol

    with _init_lock:
        _thresholds = None
        _thresholds_tol = None
