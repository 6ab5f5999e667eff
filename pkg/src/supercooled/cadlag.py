"""Monotone right-continuous step functions on a uniform time grid.

A :class:`StepFunction` takes the value ``values[j]`` on ``[t_j, t_{j+1})``
and is extended by ``values[0]`` to the left of 0 and by ``values[-1]``
beyond the horizon.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LEVY_TOL = 1e-9


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"step count must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n + 1)

    def refined(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(self.T, self.n * factor)

    def index_of(self, t: float) -> int:
        """Grid index of the largest grid time <= t (clamped to the grid)."""
        j = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(j, 0), self.n)


@dataclass(frozen=True, eq=False)
class StepFunction:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise ValueError(f"expected {self.grid.n + 1} values, got shape {v.shape}")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("values must lie in [0, 1]")
        if np.any(np.diff(v) < 0):
            raise ValueError("values must be nondecreasing")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> StepFunction:
        return cls(grid, np.zeros(grid.n + 1))

    @classmethod
    def constant(cls, grid: TimeGrid, c: float) -> StepFunction:
        return cls(grid, np.full(grid.n + 1, float(c)))

    @classmethod
    def heaviside(cls, grid: TimeGrid, a: float, height: float = 1.0) -> StepFunction:
        """``height * 1[t >= a]`` sampled on the grid."""
        return cls(grid, np.where(grid.times >= a - 1e-12 * grid.T, height, 0.0))

    @classmethod
    def from_callable(cls, grid: TimeGrid, f) -> StepFunction:
        return cls(grid, np.asarray([f(t) for t in grid.times], dtype=float))

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __call__(self, t):
        """Right-continuous evaluation at arbitrary real times."""
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(idx, 0, self.grid.n)]

    def left_limit(self, t):
        """``l(t-)``; equals ``values[0]`` for t <= 0."""
        idx = np.searchsorted(self.times, t, side="left") - 1
        return self.values[np.clip(idx, 0, self.grid.n)]

    def increments(self) -> np.ndarray:
        """One-step increments ``v_j - v_{j-1}`` for j = 1..n."""
        return np.diff(self.values)

    def __le__(self, other: StepFunction) -> bool:
        _check_grids(self, other)
        return bool(np.all(self.values <= other.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, StepFunction):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None

    def to_csv(self, path=None, header: str | None = None) -> str:
        text = write_columns({"t": self.times, "value": self.values}, header=header)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> StepFunction:
        cols = read_columns(source)
        t, v = cols["t"], cols["value"]
        if len(t) < 2:
            raise ValueError("need at least two grid points")
        grid = TimeGrid(float(t[-1]), len(t) - 1)
        if not np.allclose(t, grid.times, rtol=0, atol=1e-9 * grid.T):
            raise ValueError("time column is not a uniform grid starting at 0")
        return cls(grid, v)


def _check_grids(a: StepFunction, b: StepFunction):
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def sup_distance(l1: StepFunction, l2: StepFunction) -> float:
    _check_grids(l1, l2)
    return float(np.max(np.abs(l1.values - l2.values)))


def _sandwiched(l1: StepFunction, l2: StepFunction, eps: float) -> bool:
    """Check l1(t+eps) + eps >= l2(t) >= l1(t-eps) - eps for every real t >= 0.

    On [t_j, t_{j+1}) l2 is constant, so the upper bound binds at t_j and
    the lower bound at the left limit t_{j+1}-; the last piece extends to
    infinity where l1(t - eps) -> v_n.
    """
    t = l1.times
    v2 = l2.values
    upper = l1(t + eps) + eps
    lower = np.empty_like(v2)
    lower[:-1] = l1.left_limit(t[1:] - eps) - eps
    lower[-1] = l1.values[-1] - eps
    return bool(np.all(upper >= v2) and np.all(v2 >= lower))


def levy_distance(l1: StepFunction, l2: StepFunction, tol: float = LEVY_TOL) -> float:
    """Levy distance between two loss functions, by bisection on eps.

    Feasibility is monotone in eps and eps = 1 is always feasible, so the
    returned upper bracket is within ``tol`` of the infimum.
    """
    _check_grids(l1, l2)
    if np.array_equal(l1.values, l2.values):
        return 0.0

    def ok(eps):
        return _sandwiched(l1, l2, eps) and _sandwiched(l2, l1, eps)

    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def jumps(ell: StepFunction, delta: float) -> list[tuple[float, float]]:
    """Grid times whose one-step increment is at least ``delta``."""
    inc = ell.increments()
    idx = np.nonzero(inc >= delta)[0] + 1
    return [(float(ell.times[j]), float(inc[j - 1])) for j in idx]


def write_columns(columns: dict, header: str | None = None, fmt: str | None = None) -> str:
    """Comma-separated text with a header row; ``header`` lines become ``#`` comments.

    Floats are written in shortest round-trip form unless ``fmt`` is given.
    """
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    names = list(columns)
    buf.write(",".join(names) + "\n")
    cols = [np.asarray(columns[k]) for k in names]
    for row in zip(*cols):
        buf.write(",".join(_fmt(x, fmt) for x in row) + "\n")
    return buf.getvalue()


def _fmt(x, fmt):
    if isinstance(x, (str, np.str_)):
        return str(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x != x:  # nan encodes an empty field
        return ""
    return repr(float(x)) if fmt is None else fmt % x


def read_columns(source) -> dict[str, np.ndarray]:
    """Inverse of :func:`write_columns` for numeric columns; empty fields read as nan."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).exists()):
        text = Path(source).read_text()
    else:
        text = str(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    names = [s.strip() for s in lines[0].split(",")]
    rows = [[float(s) if s.strip() else np.nan for s in ln.split(",")] for ln in lines[1:]]
    data = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return {k: data[:, i] for i, k in enumerate(names)}


def csv_body(text: str) -> str:
    """Strip ``#`` provenance comments, leaving header row and data."""
    return "".join(ln + "\n" for ln in text.splitlines() if not ln.startswith("#"))
