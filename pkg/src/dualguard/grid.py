"""Rectangular state-space grids, node-sampled fields and their queries.

Nodes are stored row-major with the last dimension fastest.  A periodic
dimension with ``count`` nodes stores exactly one period: nodes sit at
``lower + i * period / count`` for ``i < count`` and ``upper`` is identified
with ``lower``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels


class OutOfDomainError(ValueError):
    """A query fell outside a non-periodic grid dimension."""


@dataclass(frozen=True)
class Grid:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    counts: tuple[int, ...]
    periodic: tuple[bool, ...] = ()

    def __post_init__(self):
        n = len(self.lower)
        periodic = tuple(self.periodic) if self.periodic else (False,) * n
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in periodic))
        if not (len(self.upper) == len(self.counts) == len(self.periodic) == n):
            raise ValueError("grid bounds, counts and periodic flags must have equal length")
        for lo, hi, c in zip(self.lower, self.upper, self.counts):
            if c < 3:
                raise ValueError(f"every node count must be >= 3, got {c}")
            if not lo < hi:
                raise ValueError(f"lower bound {lo} must be below upper bound {hi}")

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def spacing(self) -> np.ndarray:
        return np.array([
            (hi - lo) / (c if per else c - 1)
            for lo, hi, c, per in zip(self.lower, self.upper, self.counts, self.periodic)
        ])

    @property
    def strides(self) -> np.ndarray:
        strides = np.ones(self.ndim, dtype=np.int64)
        for k in range(self.ndim - 2, -1, -1):
            strides[k] = strides[k + 1] * self.counts[k + 1]
        return strides

    def axis(self, k: int) -> np.ndarray:
        return self.lower[k] + np.arange(self.counts[k]) * self.spacing[k]

    def axes(self) -> list[np.ndarray]:
        return [self.axis(k) for k in range(self.ndim)]

    def nodes(self) -> np.ndarray:
        """All node coordinates as an (N, n) array in storage order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def kernel_args(self):
        return (np.asarray(self.lower, dtype=float), self.spacing,
                np.asarray(self.counts, dtype=np.int64),
                np.asarray(self.periodic, dtype=np.bool_), self.strides)

    def wrap(self, x) -> np.ndarray:
        """Map periodic coordinates into [lower, upper)."""
        x = np.array(x, dtype=float)
        for k, per in enumerate(self.periodic):
            if per:
                period = self.upper[k] - self.lower[k]
                x[..., k] = self.lower[k] + np.mod(x[..., k] - self.lower[k], period)
        return x

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper),
                "counts": list(self.counts), "periodic": list(self.periodic)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["lower"]), tuple(d["upper"]), tuple(d["counts"]),
                   tuple(d.get("periodic", ())))


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise ValueError(
                f"field has {values.size} values but grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def sample(cls, grid: Grid, fn) -> "ScalarField":
        """Sample ``fn`` (taking an (N, n) array of nodes) on every node."""
        return cls(grid, np.asarray(fn(grid.nodes()), dtype=float))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


def state_to_cell(grid: Grid, x: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Cell index and fractional offset in [0, 1) of ``x`` per dimension.

    Periodic coordinates are wrapped first.  Raises OutOfDomainError outside
    a non-periodic dimension.  The upper boundary node of a non-periodic
    dimension belongs to the last cell with offset exactly 1.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != grid.ndim:
        raise ValueError(f"state has {x.size} components, grid has {grid.ndim}")
    h = grid.spacing
    cells = np.empty(grid.ndim, dtype=np.int64)
    offsets = np.empty(grid.ndim)
    for k in range(grid.ndim):
        t = (x[k] - grid.lower[k]) / h[k]
        cnt = grid.counts[k]
        if grid.periodic[k]:
            t = t - cnt * np.floor(t / cnt)
            i = min(int(np.floor(t)), cnt - 1)
        else:
            if t < 0.0 or t > cnt - 1:
                raise OutOfDomainError(
                    f"coordinate {x[k]} outside [{grid.lower[k]}, {grid.upper[k]}] "
                    f"in dimension {k}")
            i = min(int(np.floor(t)), cnt - 2)
        cells[k] = i
        offsets[k] = t - i
    return cells, offsets


def _interp_many(data: np.ndarray, grid: Grid, xs) -> tuple[np.ndarray, np.ndarray]:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != grid.ndim:
        raise ValueError(f"states have {xs.shape[1]} components, grid has {grid.ndim}")
    return _kernels.interp_batch(data, *grid.kernel_args(), np.ascontiguousarray(xs))


def interpolate(field: ScalarField, x, return_flag: bool = False):
    """Multilinear interpolation at one state or a batch of states.

    Non-periodic coordinates outside the grid are clamped to the boundary;
    with ``return_flag`` the clamping flag is returned as well.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    vals, flags = _interp_many(field.values[None, :], field.grid, x.reshape(-1, field.grid.ndim))
    vals = vals[:, 0]
    if single:
        out = (float(vals[0]), bool(flags[0]))
    else:
        out = (vals, flags)
    return out if return_flag else out[0]


def node_gradients(field: ScalarField) -> np.ndarray:
    """Central-difference gradient at every node, shape (n, N).

    One-sided differences at non-periodic boundaries, wrap-around differences
    across periodic ones.
    """
    grid = field.grid
    arr = field.as_array()
    h = grid.spacing
    out = np.empty((grid.ndim, grid.size))
    for k in range(grid.ndim):
        if grid.periodic[k]:
            g = (np.roll(arr, -1, axis=k) - np.roll(arr, 1, axis=k)) / (2.0 * h[k])
        else:
            g = np.empty_like(arr)
            lead = [slice(None)] * grid.ndim

            def sl(s):
                lead[k] = s
                return tuple(lead)

            g[sl(slice(1, -1))] = (arr[sl(slice(2, None))] - arr[sl(slice(None, -2))]) / (2.0 * h[k])
            g[sl(0)] = (arr[sl(1)] - arr[sl(0)]) / h[k]
            g[sl(-1)] = (arr[sl(-1)] - arr[sl(-2)]) / h[k]
        out[k] = g.ravel()
    return out


def stacked_channels(field: ScalarField) -> np.ndarray:
    """Values and node gradients stacked as (1 + n, N) for joint interpolation."""
    return np.ascontiguousarray(np.vstack([field.values[None, :], node_gradients(field)]))


def gradient(field: ScalarField, x, channels: np.ndarray | None = None):
    """Gradient at ``x``: node central differences, multilinearly interpolated."""
    if channels is None:
        channels = np.ascontiguousarray(node_gradients(field))
    elif channels.shape[0] == field.grid.ndim + 1:
        channels = channels[1:]
    x = np.asarray(x, dtype=float)
    vals, _ = _interp_many(np.ascontiguousarray(channels), field.grid,
                           x.reshape(-1, field.grid.ndim))
    return vals[0] if x.ndim <= 1 else vals
