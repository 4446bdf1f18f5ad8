"""Log-log slope fits with bootstrap confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FLOOR = 1e-12
FLOOR_MARGIN = 10.0


class FitError(ValueError):
    pass


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    ci: tuple[float, float]
    used: list[int]
    floor_limited: list[int] = field(default_factory=list)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci[1] - self.ci[0])

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "ci": list(self.ci),
                "used": self.used, "floor_limited": self.floor_limited}


def fit_slope(x, y, window: tuple[float, float] | None = None, *, floor: float = FLOOR,
              n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``.

    Points with ``y <= 10 * floor`` are floor-limited and excluded; at least
    three usable points are required.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be 1-d sequences of equal length")
    if len(x) < 3:
        raise FitError(f"need at least 3 points, got {len(x)}")
    if np.any(x <= 0) or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise FitError("log-log fits need positive finite values")
    idx = np.arange(len(x))
    if window is not None:
        idx = idx[(x >= window[0]) & (x <= window[1])]
    limited = [int(i) for i in idx if y[i] <= FLOOR_MARGIN * floor]
    used = [int(i) for i in idx if y[i] > FLOOR_MARGIN * floor]
    if len(used) < 3:
        raise FitError(f"only {len(used)} points above the numerical floor; need 3")
    lx, ly = np.log(x[used]), np.log(y[used])
    slope, icpt = np.polyfit(lx, ly, 1)
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(len(used), size=len(used))
        if np.ptp(lx[pick]) == 0:
            continue
        boots.append(np.polyfit(lx[pick], ly[pick], 1)[0])
    if boots:
        lo, hi = np.quantile(boots, [(1 - level) / 2, (1 + level) / 2])
    else:
        lo = hi = slope
    return SlopeFit(float(slope), float(icpt), (float(lo), float(hi)), used, limited)
