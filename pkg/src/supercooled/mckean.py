"""First-passage operator and the minimal solution of the McKean-Vlasov problem.

``Gamma[l]_t`` is the probability that ``X_{0-} + s + B - alpha * l`` has
reached 0 by time t. Iterating from the zero barrier increases monotonically
to the minimal solution. Two back-ends evaluate Gamma: keyed Monte Carlo
with a Brownian-bridge correction, and a finite-difference solver for the
survivor sub-density.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .cadlag import GridMismatchError, StepFunction, TimeGrid, jumps, sup_distance, write_columns
from .particle import FirstPassageEngine
from .randomness import InitialLaw


# floating-point allowance when comparing sums of many cell masses
ROUNDING_SLACK = 1e-12


class ShiftResolutionWarning(UserWarning):
    """A kick moved the density by many cells in one step."""


@dataclass(frozen=True)
class MonteCarlo:
    paths: int = 100_000
    seed: int = 0
    bridge: bool = True
    workers: int = 1


@dataclass(frozen=True)
class FiniteDifference:
    dx: float = 5e-3
    x_max: float | None = None  # None: chosen from the law and horizon


@dataclass(frozen=True)
class SolverConfig:
    alpha: float
    law: InitialLaw
    grid: TimeGrid
    backend: MonteCarlo | FiniteDifference = field(default_factory=FiniteDifference)
    shift: float = 0.0
    k_max: int = 200
    tol: float = 1e-4

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be nonnegative")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        b = self.backend
        if isinstance(b, FiniteDifference):
            if not b.dx > 0:
                raise ValueError("dx must be positive")
            if b.x_max is not None and b.x_max < self.min_x_max():
                raise ValueError(
                    f"x_max={b.x_max} is below the 1-1e-6 quantile of the shifted law "
                    f"plus 4*sqrt(T) ({self.min_x_max():.4g})")
        elif isinstance(b, MonteCarlo):
            if b.paths < 1:
                raise ValueError("need at least one path")
        else:
            raise TypeError(f"unknown backend {b!r}")

    def min_x_max(self) -> float:
        return self.law.upper_quantile() + self.shift + 4 * math.sqrt(self.grid.T)

    @property
    def x_max(self) -> float:
        b = self.backend
        if b.x_max is not None:
            return float(b.x_max)
        # one extra unit of room keeps the far boundary invisible
        return math.ceil((self.min_x_max() + 1.0) / b.dx) * b.dx

    def lab_nodes(self) -> np.ndarray:
        """Lab-frame nodes; the grid extends by alpha so the front never leaves it."""
        dx = self.backend.dx
        m = int(math.ceil((self.x_max + self.alpha) / dx - 1e-9))
        return np.arange(m + 1) * dx

    def with_backend(self, **kw) -> SolverConfig:
        return replace(self, backend=replace(self.backend, **kw))


@dataclass(eq=False)
class SubDensity:
    """Survivor masses at a fixed time; ``mass[i]`` sits at ``x[i]``.

    ``boundary_mass`` is mass that reached 0 within the current step but
    has not been counted as absorbed; it sits at x = 0 in ``nu_{t-}``.
    """

    t: float
    x: np.ndarray
    mass: np.ndarray
    absorbed: float
    boundary_mass: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def density(self) -> np.ndarray:
        return self.mass / self.dx

    @property
    def surviving(self) -> float:
        return float(self.mass.sum())

    def mass_in(self, lo: float, hi: float) -> float:
        """Mass at locations in the closed interval [lo, hi]."""
        sel = (self.x >= lo - 1e-12) & (self.x <= hi + 1e-12)
        return float(self.mass[sel].sum())

    def rebin(self, edges: np.ndarray) -> np.ndarray:
        """Masses in left-closed bins ``[edges[i], edges[i+1])``."""
        idx = np.searchsorted(edges, self.x, side="right") - 1
        ok = (idx >= 0) & (idx < len(edges) - 1)
        return np.bincount(idx[ok], weights=self.mass[ok], minlength=len(edges) - 1)


@dataclass(eq=False)
class FDHistory:
    """Diagnostics of one finite-difference first-passage solve.

    Snapshot and pre-kick densities are in the frame of X, i.e. lab
    positions minus the front ``alpha * l``; ``x`` holds the lab nodes.
    """

    x: np.ndarray
    absorbed: np.ndarray
    residual: np.ndarray  # absorbed + surviving - 1 per grid time
    snapshots: list[SubDensity]
    pre_kick: dict[int, SubDensity]  # grid step -> density just before that step's kick
    front: np.ndarray | None = None  # alpha * barrier per grid time

    def csv(self, header: str | None = None) -> str:
        """Snapshots in long format ``t,x,p`` (p is a density)."""
        t = np.concatenate([np.full(s.x.size, s.t) for s in self.snapshots]) if self.snapshots else []
        x = np.concatenate([s.x for s in self.snapshots]) if self.snapshots else []
        p = np.concatenate([s.density for s in self.snapshots]) if self.snapshots else []
        return write_columns({"t": t, "x": x, "p": p}, header=header)


def initial_masses(law: InitialLaw, shift: float, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Hat-function masses of the shifted law on nodes ``x``, and the mass absorbed at once.

    Node i receives ``E[hat_i(X)]``, computed exactly from the integrated CDF.
    Only mass at or below 0 counts as absorbed: the share of node 0's hat
    coming from positive starting points is alive and moves to node 1.
    Mass beyond the last interior node is lumped onto it.
    """
    dx = x[1] - x[0]
    ext = np.concatenate([[x[0] - dx], x, [x[-1] + dx]])
    G = law.integrated_cdf(ext - shift)
    mass = (G[2:] - 2 * G[1:-1] + G[:-2]) / dx
    mass = np.maximum(mass, 0.0)
    absorbed = min(float(law.cdf(x[0] - shift)), 1.0)
    # cumulative hat mass through node 0 is P(X <= 0) plus node 0's positive share
    positive_share = max(float((G[2] - G[1]) / dx) - absorbed, 0.0)
    upper = 1.0 - float((G[-2] - G[-3]) / dx)  # mass beyond x_{m-1}
    out = np.zeros_like(x)
    out[1:-1] = mass[1:-1]
    out[1] += positive_share
    out[-2] += max(upper, 0.0)
    # renormalise rounding so absorbed + surviving == 1
    total = out.sum() + absorbed
    out *= (1.0 - absorbed) / (total - absorbed) if total > absorbed else 0.0
    return out, absorbed


def _check_grid(ell: StepFunction, cfg: SolverConfig):
    if ell.grid != cfg.grid:
        raise GridMismatchError("barrier grid differs from configured grid")


def boundary_nodes(ell: StepFunction, alpha: float, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Highest absorbing lab-frame node at each grid time, and the boundary's offset.

    The offset ``theta`` in (0, 1] is the distance from the boundary
    ``alpha * ell`` to the first live node, in units of dx.
    """
    d = alpha * ell.values / dx
    # the small relative slack keeps exact multiples of dx on the absorbing side
    idx = np.floor(d * (1 + 1e-12) + 1e-12).astype(np.int64)
    theta = np.clip(idx + 1 - d, 1e-12, 1.0)
    return idx, theta


def gamma_fd(ell: StepFunction, cfg: SolverConfig, snapshot_every: int | None = None,
             capture_steps=None, capture_jumps: float | None = None):
    """Finite-difference first-passage CDF against barrier ``ell``.

    Returns ``(Gamma[ell], FDHistory)``. ``capture_steps`` (grid indices) and
    ``capture_jumps`` (barrier increments at least this large) select steps
    whose pre-kick density is kept for jump audits.
    """
    if not isinstance(cfg.backend, FiniteDifference):
        raise TypeError("gamma_fd needs a FiniteDifference backend")
    _check_grid(ell, cfg)
    fd = cfg.backend
    grid = cfg.grid
    y = cfg.lab_nodes()
    p, a0 = initial_masses(cfg.law, cfg.shift, y)
    v = ell.values
    kicks = cfg.alpha * np.diff(np.concatenate([[0.0], v]))
    if np.any(kicks > 10 * fd.dx):
        warnings.warn(
            f"kick of {kicks.max():.3g} exceeds 10*dx={10 * fd.dx:.3g} in one step",
            ShiftResolutionWarning, stacklevel=2)
    bidx, theta = boundary_nodes(ell, cfg.alpha, fd.dx)
    if snapshot_every:
        snaps = np.arange(0, grid.n + 1, int(snapshot_every), dtype=np.int64)
    else:
        snaps = np.zeros(0, dtype=np.int64)
    caps = set() if capture_steps is None else {int(j) for j in capture_steps}
    if capture_jumps is not None:
        caps |= {int(j) for j in np.nonzero(np.diff(np.concatenate([[0.0], v])) >= capture_jumps)[0]}
    caps = np.array(sorted(caps), dtype=np.int64)
    r = grid.dt / (2.0 * fd.dx * fd.dx)
    absorbed, resid, snap_arr, cap_arr = _kernels.heat_moving_boundary(
        p, a0, bidx, theta, r, snaps, caps)
    # implicit Euler never creates mass; this only removes rounding below 1e-15
    loss = np.clip(np.maximum.accumulate(absorbed), 0.0, 1.0)
    t = grid.times
    front = cfg.alpha * v

    def frame(jb, masses, tj, settled):
        lo = int(bidx[jb])
        left = 1.0 - float(masses.sum())
        return SubDensity(float(tj), y[lo:] - front[jb], masses[lo:].copy(),
                          settled, max(left - settled, 0.0))

    def pre_kick(j, masses):
        # mass absorbed by diffusion during step j-1 -> j is this step's trigger
        settled = float(absorbed[j - 1]) if j > 0 else float(a0)
        return frame(max(j - 1, 0), masses, t[j], settled)

    hist = FDHistory(
        x=y, absorbed=absorbed, residual=resid,
        snapshots=[frame(j, snap_arr[i], t[j], float(absorbed[j])) for i, j in enumerate(snaps)],
        pre_kick={int(j): pre_kick(int(j), cap_arr[i]) for i, j in enumerate(caps)},
        front=front,
    )
    return StepFunction(grid, loss), hist


def gamma_mc(ell: StepFunction, cfg: SolverConfig, engine: FirstPassageEngine | None = None) -> StepFunction:
    """Monte Carlo first-passage CDF against barrier ``ell``."""
    if not isinstance(cfg.backend, MonteCarlo):
        raise TypeError("gamma_mc needs a MonteCarlo backend")
    _check_grid(ell, cfg)
    if engine is None:
        engine = mc_engine(cfg, checkpoints=False)
    return engine.loss(ell)


def mc_engine(cfg: SolverConfig, checkpoints: bool = True) -> FirstPassageEngine:
    b = cfg.backend
    return FirstPassageEngine(cfg.law, cfg.alpha, cfg.grid, b.seed, b.paths, cfg.shift,
                              b.bridge, workers=b.workers, checkpoints=checkpoints)


def gamma(ell: StepFunction, cfg: SolverConfig) -> StepFunction:
    if isinstance(cfg.backend, MonteCarlo):
        return gamma_mc(ell, cfg)
    return gamma_fd(ell, cfg)[0]


@dataclass(eq=False)
class Solution:
    loss: StepFunction
    iterations: int
    converged: bool
    residual: float  # sup distance between the last two iterates
    iterates: list[StepFunction] | None = None
    history: FDHistory | None = None
    residuals: list[float] = field(default_factory=list)
    # largest |absorbed + surviving - 1| over every FD application (0 for Monte Carlo)
    conservation: float = 0.0

    def iterates_csv(self, header: str | None = None) -> str:
        if not self.iterates:
            raise ValueError("iterates were not recorded")
        cols = {"t": self.loss.times}
        for k, it in enumerate(self.iterates, 1):
            cols[f"iter_{k}"] = it.values
        return write_columns(cols, header=header)


def solve_minimal(cfg: SolverConfig, record_iterates: bool = False,
                  snapshot_every: int | None = None, capture_jumps: float | None = None,
                  callback=None) -> Solution:
    """Fixed-point iteration ``l <- Gamma[l]`` from the zero barrier.

    Stops once successive iterates are within ``cfg.tol`` in sup distance
    or after ``cfg.k_max`` applications. For the FD back-end the history of
    the final application (snapshots, pre-kick densities) is attached.
    """
    ell = StepFunction.zeros(cfg.grid)
    iterates = [] if record_iterates else None
    residuals = []
    is_mc = isinstance(cfg.backend, MonteCarlo)
    engine = mc_engine(cfg) if is_mc else None
    hist = None
    worst = 0.0
    converged = False
    k = 0
    for k in range(1, cfg.k_max + 1):
        if is_mc:
            new = engine.loss(ell)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ShiftResolutionWarning)
                new, hist = gamma_fd(ell, cfg, snapshot_every, capture_jumps=capture_jumps)
            worst = max(worst, float(np.max(np.abs(hist.residual))))
        res = sup_distance(new, ell)
        residuals.append(res)
        ell = new
        if record_iterates:
            iterates.append(new)
        if callback is not None:
            callback(k, new, res)
        if cfg.alpha == 0:
            # without feedback Gamma ignores its argument: Gamma[0] is the fixed point
            residuals[-1] = res = 0.0
        if res < cfg.tol:
            converged = True
            break
    return Solution(ell, k, converged, residuals[-1], iterates, hist, residuals, worst)


@dataclass
class JumpAudit:
    t: float
    step: int
    jump: float  # realised one-step increment of the loss
    physical: float  # inf{x > 0 : nu_{t-}([0, alpha x]) < x}
    discrepancy: float
    lower_bound_ok: bool  # jump >= physical (up to grid smear)


def physical_jump_size(density: SubDensity, alpha: float) -> float:
    """``inf{x > 0 : nu([0, alpha x]) < x}`` for a discrete sub-density.

    ``nu`` is the survivor masses plus ``boundary_mass`` at 0. ``x ->
    nu([0, alpha x])`` is a right-continuous step function that jumps at
    ``x_i / alpha``; on each piece the set where it lies below the
    diagonal is an interval, so the first nonempty one gives the infimum.
    """
    if not alpha > 0:
        return 0.0
    keep = (density.x >= 0) & (density.mass > 0)
    xs = density.x[keep] / alpha
    order = np.argsort(xs, kind="stable")
    xs, w = xs[order], density.mass[keep][order]
    # collapse equal break points; the value on [s_i, s_{i+1}) is g_i
    s, first = np.unique(xs, return_index=True)
    g = density.boundary_mass + np.cumsum(w)[np.r_[first[1:] - 1, w.size - 1]] if w.size else np.zeros(0)
    g0 = density.boundary_mass + (float(w[xs <= 0].sum()) if w.size else 0.0)
    starts = np.concatenate([[0.0], s[s > 0]])
    vals = np.concatenate([[g0], g[s > 0]])
    ends = np.concatenate([starts[1:], [np.inf]])
    below = vals < ends
    i = int(np.argmax(below))
    return float(max(vals[i], starts[i]))


def check_physical_jump(loss: StepFunction, history: FDHistory | None, alpha: float,
                        delta: float = 0.05, smear: float = 0.0) -> list[JumpAudit]:
    """Compare each detected jump with the physical jump condition.

    ``history.pre_kick`` must hold the density just before every detected
    jump step (see ``capture_jumps``).
    """
    found = jumps(loss, delta)
    if not found:
        return []
    if history is None:
        raise ValueError("density history required to audit jumps")
    report = []
    for t, size in found:
        j = loss.grid.index_of(t)
        dens = history.pre_kick.get(j)
        if dens is None:
            raise ValueError(f"no pre-kick density recorded at step {j}")
        phys = physical_jump_size(dens, alpha)
        report.append(JumpAudit(t, j, size, phys, abs(size - phys),
                                size >= phys - smear - ROUNDING_SLACK))
    return report


def write_solution(sol: Solution, outdir, header: str | None = None) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = [outdir / "lambda.csv"]
    sol.loss.to_csv(paths[0], header=header)
    if sol.iterates:
        paths.append(outdir / "iterates.csv")
        paths[-1].write_text(sol.iterates_csv(header))
    return paths
