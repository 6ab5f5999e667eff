"""Temperature field and freezing front of the supercooled Stefan problem.

A solved loss function and the survivor density give the Stefan solution
through ``u(t, x) = -alpha * p(t, x - alpha * Lambda_t)`` with the front at
``alpha * Lambda_t``. The field is laid out in the fixed lab frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cadlag import GridMismatchError, StepFunction, write_columns
from .mckean import FDHistory, SubDensity
from .particle import ParticleRun


@dataclass(eq=False)
class StefanField:
    """``u[k, i]`` is the temperature at ``times[k]``, lab position ``x[i]``."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    front_times: np.ndarray
    front: np.ndarray  # alpha * Lambda on the full time grid
    alpha: float

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def front_at(self, k: int) -> float:
        """Front position at snapshot k."""
        j = int(np.searchsorted(self.front_times, self.times[k] - 1e-12))
        return float(self.front[j])

    def heat_content(self) -> np.ndarray:
        """``int u(t, x) dx`` at each snapshot (rectangle rule on the nodes)."""
        return self.u.sum(axis=1) * self.dx

    def stefan_residual(self, k: int) -> float:
        """One-sided slope of u at the front, ``du/dx(f)``, for diagnostics.

        Between jumps the classical Stefan condition ties this slope to
        the front speed; it is only reported, never enforced.
        """
        f = self.front_at(k)
        i = int(np.searchsorted(self.x, f, side="right"))
        if i + 1 >= self.x.size:
            return float("nan")
        return float((self.u[k, i + 1] - self.u[k, i]) / self.dx)

    def field_csv(self, header: str | None = None) -> str:
        nt, nx = self.u.shape
        return write_columns({"t": np.repeat(self.times, nx), "x": np.tile(self.x, nt),
                              "u": self.u.ravel()}, header=header)

    def front_csv(self, header: str | None = None) -> str:
        return write_columns({"t": self.front_times, "front": self.front}, header=header)

    def write(self, outdir, header: str | None = None) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        fp, ff = outdir / "field.csv", outdir / "front.csv"
        fp.write_text(self.field_csv(header))
        ff.write_text(self.front_csv(header))
        return fp, ff


def build_field(loss: StepFunction, snapshots, alpha: float, x=None) -> StefanField:
    """Temperature field from a loss function and survivor densities.

    ``snapshots`` is an :class:`FDHistory` or a sequence of
    :class:`SubDensity` whose times lie on the loss grid. ``x`` are the lab
    positions of the field (default: the history's lab nodes, or a grid
    with the snapshot spacing covering every shifted density).
    """
    if isinstance(snapshots, FDHistory):
        lab = snapshots.x
        snapshots = snapshots.snapshots
    else:
        lab = None
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("need at least one density snapshot")
    grid = loss.grid
    times = np.array([s.t for s in snapshots])
    idx = np.searchsorted(grid.times, times - 1e-9 * grid.T)
    if np.any(idx > grid.n) or not np.allclose(grid.times[np.minimum(idx, grid.n)], times,
                                               rtol=0, atol=1e-9 * grid.T):
        raise GridMismatchError("snapshot times are not on the loss grid")
    front = alpha * loss.values
    if x is None:
        if lab is not None:
            x = lab
        else:
            dx = snapshots[0].dx
            hi = max(float(s.x[-1]) for s in snapshots) + float(front[-1])
            x = np.arange(int(np.ceil(hi / dx)) + 1) * dx
    x = np.asarray(x, dtype=float)
    u = np.zeros((len(snapshots), x.size))
    for k, (s, j) in enumerate(zip(snapshots, idx)):
        f = front[j]
        # adding 0.0 turns -0.0 into 0.0 so the CSV has no negative zeros
        u[k] = -alpha * np.interp(x - f, s.x, s.density, left=0.0, right=0.0) + 0.0
        u[k, x < f] = 0.0
    return StefanField(times, x, u, grid.times.copy(), front, float(alpha))


def particle_density(run: ParticleRun, j: int, dx: float) -> SubDensity:
    """Histogram of the survivors' positions at grid step j.

    Cells are ``[k dx, (k+1) dx)`` with ``x`` at their centres; each
    particle carries mass 1/N and the absorbed mass is ``L^N`` at step j.
    """
    if not dx > 0:
        raise ValueError("dx must be positive")
    pos = run.positions_at(j)
    top = float(pos.max()) if pos.size else 0.0
    ncell = max(int(np.floor(top / dx)) + 1, 1)
    cells = np.minimum(np.floor(np.maximum(pos, 0.0) / dx).astype(np.int64), ncell - 1)
    mass = np.bincount(cells, minlength=ncell) / run.N
    x = (np.arange(ncell) + 0.5) * dx
    return SubDensity(float(run.grid.times[j]), x, mass, float(run.loss.values[j]))
