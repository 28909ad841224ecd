"""Empirical measures: spatial binning, histogram mean fields and L1 distances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .errors import (
    EmptyPointSetError,
    LengthMismatchError,
    PointOutOfDomainError,
    SupportMismatchError,
)

# Points this far outside [lo, hi] are clamped instead of rejected.
CLAMP_SLACK = 1e-9


class BinGrid(BaseModel):
    """Axis-aligned partition of a box into ``prod(cells_per_dim)`` half-open cells."""

    model_config = ConfigDict(frozen=True)

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    cells_per_dim: tuple[int, ...]

    @field_validator("cells_per_dim")
    @classmethod
    def _positive_cells(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(c < 1 for c in value):
            raise ValueError(f"cells_per_dim must be positive integers, got {value}")
        return value

    @model_validator(mode="after")
    def _consistent_bounds(self) -> "BinGrid":
        if not (len(self.lo) == len(self.hi) == len(self.cells_per_dim)):
            raise ValueError("lo, hi and cells_per_dim must have the same length")
        for low, high in zip(self.lo, self.hi):
            if not low < high:
                raise ValueError(f"Grid bounds must satisfy lo < hi, got [{low}, {high}]")
        return self

    @property
    def dims(self) -> int:
        return len(self.cells_per_dim)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells_per_dim))

    def cell_index(self, points: np.ndarray) -> np.ndarray:
        """Return the flat (row-major) cell index of every point.

        The global upper bound of each dimension belongs to the last cell; points within
        ``CLAMP_SLACK`` outside the box are clamped onto it.
        """
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if self.dims == 1 else pts.reshape(1, -1)
        if pts.ndim != 2 or pts.shape[1] != self.dims:
            raise PointOutOfDomainError(
                f"Expected points of dimension {self.dims}, got array of shape {np.shape(points)}"
            )

        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        outside = (pts < lo - CLAMP_SLACK) | (pts > hi + CLAMP_SLACK) | ~np.isfinite(pts)
        if outside.any():
            bad = pts[outside.any(axis=1)][0]
            raise PointOutOfDomainError(f"Point {bad.tolist()} lies outside [{self.lo}, {self.hi}]")
        pts = np.clip(pts, lo, hi)

        cells = np.asarray(self.cells_per_dim)
        idx = np.floor((pts - lo) / (hi - lo) * cells).astype(np.int64)
        idx = np.minimum(idx, cells - 1)
        return np.ravel_multi_index(tuple(idx.T), self.cells_per_dim)

    def cell_centers(self) -> np.ndarray:
        """Centers of all cells in flat-index order, shape ``(n_cells, dims)``."""
        axes = [
            low + (np.arange(c) + 0.5) * (high - low) / c
            for low, high, c in zip(self.lo, self.hi, self.cells_per_dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass(frozen=True)
class MeanFieldHist:
    """Empirical minor-agent distribution binned on a grid."""

    grid: BinGrid
    weights: np.ndarray


@dataclass(frozen=True)
class FiniteMF:
    """Distribution over an explicit finite state set ``0..len(probs)-1``."""

    probs: np.ndarray

    @property
    def support_size(self) -> int:
        return int(self.probs.shape[0])

    @classmethod
    def from_states(cls, states: np.ndarray, support_size: int) -> "FiniteMF":
        """Empirical distribution of integer states."""
        states = np.asarray(states, dtype=np.int64)
        if states.size == 0:
            raise EmptyPointSetError("Cannot build an empirical distribution of zero states")
        counts = np.bincount(states, minlength=support_size)
        return cls(probs=counts / states.size)

    @classmethod
    def delta(cls, state: int, support_size: int) -> "FiniteMF":
        probs = np.zeros(support_size)
        probs[state] = 1.0
        return cls(probs=probs)


def histogram(points: np.ndarray, grid: BinGrid) -> MeanFieldHist:
    """Bin points and return the fraction of points per cell."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptyPointSetError("Cannot build a histogram of an empty point set")
    idx = grid.cell_index(pts)
    counts = np.bincount(idx, minlength=grid.n_cells)
    return MeanFieldHist(grid=grid, weights=counts / idx.size)


def l1_distance(a: FiniteMF, b: FiniteMF) -> float:
    """Sum of absolute probability differences, in ``[0, 2]``."""
    if a.support_size != b.support_size:
        raise SupportMismatchError(
            f"Supports differ: |X|={a.support_size} vs |X|={b.support_size}"
        )
    return float(np.abs(a.probs - b.probs).sum())


def mean_per_bin(points: np.ndarray, values: np.ndarray, grid: BinGrid) -> np.ndarray:
    """Per-cell arithmetic mean of ``values`` over member points; empty cells read 0."""
    vals = np.asarray(values, dtype=float).ravel()
    idx = grid.cell_index(points)
    if idx.size != vals.size:
        raise LengthMismatchError(f"{idx.size} points but {vals.size} values")
    sums = np.bincount(idx, weights=vals, minlength=grid.n_cells)
    counts = np.bincount(idx, minlength=grid.n_cells)
    return np.divide(sums, counts, out=np.zeros(grid.n_cells), where=counts > 0)
