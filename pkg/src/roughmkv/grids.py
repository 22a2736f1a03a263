"""Time grids for the whole package.

A grid is a strictly increasing array of times ``0 = t_0 < t_1 < ... < t_K``.
Every object in this package (driving signals, particle flows, backward
solutions) lives on such a grid; continuous-time statements are always
discretised on one.  Grid times are plain float64 and lookups are done with an
absolute tolerance, so callers can pass times that went through a round trip
without worrying about the last ulp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TimeGrid"]

# Absolute slack used when matching a float time to a grid node.  Generous
# enough to survive text round trips, far below any sane grid spacing.
_LOOKUP_ATOL = 1e-9


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing partition of ``[0, horizon]`` starting at zero."""

    points: np.ndarray
    _dt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("grid needs at least two time points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid times must be finite")
        if pts[0] != 0.0:
            raise ValueError(f"grid must start at 0, got {pts[0]!r}")
        dt = np.diff(pts)
        if np.any(dt <= 0):
            raise ValueError("grid times must be strictly increasing")
        pts = pts.copy()
        pts.setflags(write=False)
        dt.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "_dt", dt)

    # -- constructors ------------------------------------------------------

    @classmethod
    def uniform(cls, horizon: float, cells: int) -> "TimeGrid":
        if cells < 1:
            raise ValueError("need at least one cell")
        if not horizon > 0:
            raise ValueError("horizon must be positive")
        return cls(np.linspace(0.0, float(horizon), cells + 1))

    @classmethod
    def dyadic(cls, horizon: float, level: int) -> "TimeGrid":
        """Uniform grid with ``2**level`` cells."""
        if level < 0:
            raise ValueError("level must be >= 0")
        return cls.uniform(horizon, 2**level)

    # -- basic queries -----------------------------------------------------

    @property
    def horizon(self) -> float:
        return float(self.points[-1])

    @property
    def num_cells(self) -> int:
        return self.points.size - 1

    @property
    def dt(self) -> np.ndarray:
        """Cell widths, shape ``(num_cells,)``."""
        return self._dt

    def __len__(self) -> int:
        return self.points.size

    def index_of(self, t: float) -> int:
        """Index of the grid node equal to ``t`` (up to a tiny tolerance)."""
        pts = self.points
        k = int(np.searchsorted(pts, t))
        tol = _LOOKUP_ATOL * max(1.0, self.horizon)
        for cand in (k - 1, k, k + 1):
            if 0 <= cand < pts.size and abs(pts[cand] - t) <= tol:
                return cand
        raise ValueError(f"time {t!r} is not a grid point")

    def span_indices(self, s: float, t: float) -> tuple[int, int]:
        """Indices ``(i, j)`` for grid times ``s <= t``."""
        i, j = self.index_of(s), self.index_of(t)
        if i > j:
            raise ValueError(f"need s <= t, got s={s!r} > t={t!r}")
        return i, j

    # -- refinement --------------------------------------------------------

    def refine(self, factor: int) -> "TimeGrid":
        """Split every cell into ``factor`` equal sub-cells."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        if factor == 1:
            return self
        pts = self.points
        # per-cell linspace keeps the original nodes bit-exact
        frac = np.arange(factor, dtype=np.float64) / factor
        fine = pts[:-1, None] + self._dt[:, None] * frac[None, :]
        return TimeGrid(np.append(fine.ravel(), pts[-1]))

    def coarsen(self, factor: int) -> "TimeGrid":
        """Keep every ``factor``-th node; cell count must divide evenly."""
        if factor < 1:
            raise ValueError("factor must be >= 1")
        if self.num_cells % factor != 0:
            raise ValueError(
                f"cannot coarsen {self.num_cells} cells by factor {factor}"
            )
        return TimeGrid(self.points[::factor])

    def is_subgrid_of(self, fine: "TimeGrid") -> bool:
        try:
            for t in self.points:
                fine.index_of(float(t))
        except ValueError:
            return False
        return True
