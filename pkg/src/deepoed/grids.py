"""Measurement time grids and quadrature weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ShapeError

__all__ = ["TimeGrid", "log_grid", "linear_grid"]


@dataclass(frozen=True)
class TimeGrid:
    """An ordered set of candidate measurement times.

    Parameters
    ----------
    points : ndarray of shape (N,)
        Strictly increasing times, first point >= 0.
    spacing_kind : {"logarithmic", "linear"}
        How the grid was constructed; informational only.
    """

    points: np.ndarray
    spacing_kind: str = "linear"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ShapeError("grid needs at least two points in a 1-D array")
        if pts[0] < 0:
            raise ValueError("first grid point must be >= 0")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.size

    @property
    def intervals(self) -> np.ndarray:
        return np.diff(self.points)

    def trapezoid_weights(self) -> np.ndarray:
        """Composite trapezoid weights c with sum(c * f) = trapz(f)."""
        dt = self.intervals
        c = np.zeros(len(self))
        c[:-1] += 0.5 * dt
        c[1:] += 0.5 * dt
        return c

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "t"])
            for i, t in enumerate(self.points):
                writer.writerow([i, repr(float(t))])


def log_grid(n: int, t_max: float, t_min_positive: float = 1e-2) -> TimeGrid:
    """Grid of ``n`` points: t=0 followed by ``n - 1`` log-spaced points.

    The positive points run from ``t_min_positive`` to ``t_max``.  A pure
    log spacing cannot include t=0, so the origin is prepended explicitly.
    """
    pts = np.concatenate(
        [[0.0], np.geomspace(t_min_positive, t_max, n - 1)]
    )
    return TimeGrid(pts, spacing_kind="logarithmic")


def linear_grid(n: int, t_max: float, t_min: float = 0.0) -> TimeGrid:
    return TimeGrid(np.linspace(t_min, t_max, n), spacing_kind="linear")
