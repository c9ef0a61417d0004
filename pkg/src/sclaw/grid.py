"""Periodic grids, cell-average fields, and saved trajectories.

Space is the unit torus [0, 1) split into M equal cells; a field is the
vector of its cell averages.  Trajectories collect snapshots on a
strictly increasing time grid and can round-trip through CSV.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _fmt(x: float) -> str:
    """Shortest round-trip decimal form (repr of a Python float)."""
    return repr(float(x))


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the unit torus: M cells of width dx = 1/M."""

    cells: int

    def __post_init__(self):
        if not (isinstance(self.cells, (int, np.integer)) and self.cells >= 2):
            raise ValueError(f"cells must be an integer >= 2, got {self.cells}")

    @property
    def dx(self) -> float:
        return 1.0 / self.cells

    @property
    def centers(self) -> np.ndarray:
        m = self.cells
        return (np.arange(m) + 0.5) / m

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.cells + 1) / self.cells

    def wrapped_offset(self, d: int) -> float:
        """Signed periodic displacement d*dx folded into [-1/2, 1/2)."""
        z = (d % self.cells) / self.cells
        return z - 1.0 if z >= 0.5 else z


@dataclass(frozen=True)
class ScalarField:
    """Cell-average values of a scalar field on a TorusGrid.

    Values are copied on construction, checked finite, and frozen
    (the backing array is marked read-only), so fields can be shared
    across worker threads without locks.
    """

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != (self.grid.cells,):
            raise ValueError(
                f"values shape {v.shape} does not match grid ({self.grid.cells},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def l1(self) -> float:
        """L1 norm, dx * sum |u_i|."""
        return float(self.grid.dx * np.sum(np.abs(self.values)))

    def lp_pow(self, p: float) -> float:
        """p-th power of the Lp norm, dx * sum |u_i|^p."""
        return float(self.grid.dx * np.sum(np.abs(self.values) ** p))

    def range_bounds(self) -> tuple[float, float]:
        return float(np.min(self.values)), float(np.max(self.values))


@dataclass(frozen=True)
class Trajectory:
    """Snapshots of a field on a strictly increasing time grid.

    ``values[j]`` is the cell-average vector at ``times[j]``; the first
    time is 0 and the last is the horizon of the run that produced it.
    """

    grid: TorusGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float, copy=True)
        v = np.array(self.values, dtype=float, copy=True)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError("need at least two snapshots")
        if v.shape != (len(t), self.grid.cells):
            raise ValueError(
                f"values shape {v.shape}, expected ({len(t)}, {self.grid.cells})")
        if not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        if t[0] != 0.0:
            raise ValueError("times must start at 0")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("trajectory data must be finite")
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def field(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[j])

    def final(self) -> ScalarField:
        return self.field(len(self.times) - 1)

    def to_csv(self, path) -> None:
        """Write ``t,cell_0,...,cell_{M-1}``, floats in round-trip form."""
        m = self.grid.cells
        header = "t," + ",".join(f"cell_{i}" for i in range(m))
        with open(path, "w", newline="") as fh:
            fh.write(header + "\n")
            for t, row in zip(self.times, self.values):
                fh.write(_fmt(t) + "," + ",".join(_fmt(x) for x in row) + "\n")


def trajectory_from_csv(path) -> Trajectory:
    """Inverse of Trajectory.to_csv (exact, thanks to repr round-trip)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "t" or not all(h == f"cell_{i}" for i, h in enumerate(header[1:])):
            raise ValueError(f"unrecognized trajectory header in {path}")
        rows = [[float(tok) for tok in line.strip().split(",")]
                for line in fh if line.strip()]
    data = np.array(rows)
    grid = TorusGrid(len(header) - 1)
    return Trajectory(grid, data[:, 0], data[:, 1:])


def make_initial(grid: TorusGrid, kind: str, **params) -> ScalarField:
    """Build a named initial profile as exact cell averages.

    Kinds:
      constant(value)          flat profile
      riemann(left,right,x0)   left state on [0,x0), right state on [x0,1)
      sine(mean,amp,mode)      mean + amp*sin(2*pi*mode*x)
    """
    m, dx = grid.cells, grid.dx
    if kind == "constant":
        value = _take(params, "value", kind)
        vals = np.full(m, float(value))
    elif kind == "riemann":
        left = _take(params, "left", kind)
        right = _take(params, "right", kind)
        x0 = _take(params, "x0", kind)
        if not 0.0 <= x0 <= 1.0:
            raise ValueError(f"riemann x0 must lie in [0, 1], got {x0}")
        lo, hi = grid.edges[:-1], grid.edges[1:]
        # fraction of each cell lying left of the jump
        frac = np.clip((x0 - lo) / dx, 0.0, 1.0)
        vals = left * frac + right * (1.0 - frac)
    elif kind == "sine":
        mean = _take(params, "mean", kind)
        amp = _take(params, "amp", kind)
        mode = int(_take(params, "mode", kind))
        if mode < 1:
            raise ValueError(f"sine mode must be >= 1, got {mode}")
        w = 2.0 * np.pi * mode
        lo = grid.edges[:-1]
        # exact average of sin over each cell; cos telescopes so the grid mean is 0
        vals = mean + amp * (np.cos(w * lo) - np.cos(w * (lo + dx))) / (w * dx)
    else:
        raise ValueError(f"unknown initial kind: {kind}")
    if params:
        raise ValueError(f"unexpected parameters for {kind}: {sorted(params)}")
    return ScalarField(grid, vals)


def _take(params: dict, key: str, kind: str):
    if key not in params:
        raise ValueError(f"initial kind {kind} requires parameter {key}")
    return params.pop(key)
