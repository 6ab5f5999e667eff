"""The N-particle system with common downward kicks.

Each particle follows ``X^i = X^i_{0-} + s + B^i - alpha * L^N`` and defaults
the first time it is at or below 0; ``L^N`` is the fraction defaulted. The
physical solution resolves simultaneous defaults by the smallest cascade
consistent with the kick; it coincides with ``Gamma_N^{(N)}[0]``, the N-th
iterate of the fixed-barrier operator from the zero barrier.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .cadlag import GridMismatchError, StepFunction, TimeGrid, write_columns
from .randomness import InitialLaw

# upper bound on checkpoint memory kept by FirstPassageEngine
CHECKPOINT_BYTES = 128 * 2**20


@dataclass(eq=False)
class ParticleRun:
    N: int
    alpha: float
    grid: TimeGrid
    loss: StepFunction
    default_step: np.ndarray  # -1 = survived
    final_x: np.ndarray
    shift: float = 0.0
    seed: int = 0
    audit_levels: np.ndarray | None = field(default=None, repr=False)
    law: InitialLaw | None = field(default=None, repr=False)

    @property
    def default_times(self) -> np.ndarray:
        """Default time per particle, nan for survivors."""
        t = np.full(self.N, np.nan)
        hit = self.default_step >= 0
        t[hit] = self.grid.times[self.default_step[hit]]
        return t

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.loss.values * self.N).astype(np.int64)

    def alive_at(self, j: int) -> np.ndarray:
        """Particles not defaulted by grid step j (inclusive)."""
        return (self.default_step < 0) | (self.default_step > j)

    def positions_at(self, j: int) -> np.ndarray:
        """Post-kick positions at grid step j of the particles still alive then."""
        if self.law is None:
            raise ValueError("run does not carry its initial law")
        if not 0 <= j <= self.grid.n:
            raise ValueError(f"step {j} outside the grid")
        alive = np.nonzero(self.alive_at(j))[0]
        streams = alive.astype(np.uint64)
        base = initial_bases(self.law, self.shift, self.seed, streams)
        base = _kernels.advance_bases(base, streams, np.uint64(self.seed),
                                      math.sqrt(self.grid.dt), int(j))
        return base - self.alpha * self.loss.values[j]

    def write(self, outdir, header: str | None = None, prefix: str = "") -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        loss_path = outdir / f"{prefix}loss.csv"
        def_path = outdir / f"{prefix}defaults.csv"
        self.loss.to_csv(loss_path, header=header)
        def_path.write_text(write_columns(
            {"particle_id": np.arange(self.N), "default_time": self.default_times}, header=header))
        return loss_path, def_path


def resolve_cascade(positions, N: int, alpha: float, k0: int) -> int:
    """Number of defaults at an instant where ``k0`` particles have hit 0.

    ``positions`` are the pre-kick values of the other surviving particles.
    Returns the least fixed point k >= k0 of
    ``m -> k0 + #{p : 0 < p <= alpha * m / N}``.
    """
    pos = np.asarray(positions, dtype=float)
    if not 0 <= k0 <= N:
        raise ValueError(f"k0 must lie in [0, N], got k0={k0}, N={N}")
    if k0 + pos.size > N:
        raise ValueError("more particles than N")
    if np.any(pos < 0):
        raise ValueError("survivor positions must be nonnegative")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    srt = np.sort(pos[pos > 0])
    k = k0
    while True:
        k_new = k0 + int(np.searchsorted(srt, alpha * k / N, side="right"))
        if k_new == k:
            return k
        k = k_new


def _validate(N, alpha, grid):
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    if not alpha >= 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if not isinstance(grid, TimeGrid):
        raise TypeError("grid must be a TimeGrid")


def initial_bases(law: InitialLaw, shift: float, seed: int, streams: np.ndarray) -> np.ndarray:
    return law.sample(seed, streams) + float(shift)


def simulate_minimal(N: int, alpha: float, law: InitialLaw, grid: TimeGrid, seed: int,
                     shift: float = 0.0, bridge: bool = True, audit: bool = False) -> ParticleRun:
    """Simulate the physical (= minimal) solution of the particle system."""
    _validate(N, alpha, grid)
    N = int(N)
    streams = np.arange(N, dtype=np.uint64)
    base0 = initial_bases(law, shift, seed, streams)
    levels = np.full((grid.n + 1, N) if audit else (1, 1), np.nan)
    counts, ds, fx = _kernels.interacting(
        base0, streams, N, float(alpha), grid.n, math.sqrt(grid.dt), grid.dt,
        np.uint64(seed), bool(bridge), bool(audit), levels)
    loss = StepFunction(grid, counts / N)
    return ParticleRun(N, float(alpha), grid, loss, ds, fx, float(shift), int(seed),
                       levels if audit else None, law)


def least_physical_increment(levels: np.ndarray, c: int, N: int, alpha: float) -> int:
    """Brute-force scan over all k = 0..N of the physical jump condition.

    ``levels`` are the values tested at one instant (``-inf`` = already at 0,
    ``nan`` = defaulted earlier); ``c`` is the default count before it.
    """
    lv = levels[~np.isnan(levels)]
    for k in range(N - c + 1):
        if np.count_nonzero(lv <= alpha * ((c + k) / N)) <= k:
            return k
    return N - c


def audit_physical_jumps(run: ParticleRun) -> list[tuple[int, int, int]]:
    """Steps where the realised increment is not the least admissible one.

    Returns (step, realised k, brute-force k) for every violation.
    """
    if run.audit_levels is None:
        raise ValueError("run was simulated without audit=True")
    counts = run.counts
    bad = []
    for j in range(run.grid.n + 1):
        c = int(counts[j - 1]) if j > 0 else 0
        k = int(counts[j]) - c
        k_bf = least_physical_increment(run.audit_levels[j], c, run.N, run.alpha)
        if k != k_bf:
            bad.append((j, k, k_bf))
    return bad


class FirstPassageEngine:
    """Fixed-barrier first passage for a fixed set of keyed paths.

    Paths are ``X^i_{0-} + s + B^i - alpha * barrier``. Repeated calls with
    barriers that share a prefix restart from checkpointed path values
    instead of step 0; since the Brownian part does not depend on the
    barrier, the result is bitwise the same as a fresh simulation.
    """

    def __init__(self, law: InitialLaw, alpha: float, grid: TimeGrid, seed: int, M: int,
                 shift: float = 0.0, bridge: bool = True, stream_offset: int = 0,
                 workers: int = 1, checkpoints: bool = True):
        _validate(M, alpha, grid)
        self.alpha = float(alpha)
        self.grid = grid
        self.seed = int(seed)
        self.M = int(M)
        self.bridge = bool(bridge)
        self.workers = max(1, int(workers))
        self.streams = np.arange(stream_offset, stream_offset + self.M, dtype=np.uint64)
        self.base0 = initial_bases(law, shift, self.seed, self.streams)
        self._sqrtdt = math.sqrt(grid.dt)
        if checkpoints:
            per_ckpt = 8 * self.M
            count = max(1, min(grid.n, CHECKPOINT_BYTES // per_ckpt))
            self.every = max(1, math.ceil(grid.n / count))
            self.ckpt = np.empty((grid.n // self.every + 1, self.M))
            self.ckpt[0] = self.base0
        else:
            self.every = grid.n + 1
            self.ckpt = np.empty((1, 1))
        self._checkpoints = checkpoints
        self._last_thr = None
        self.default_step = None
        self.final_x = None

    def _run(self, idx, start, base):
        ds = np.empty(idx.size, dtype=np.int64)
        fx = np.empty(idx.size)
        streams = self.streams[idx]

        def work(lo, hi):
            # chunks write disjoint checkpoint columns
            _kernels.first_passage(base[lo:hi], streams[lo:hi], self._thr, start, self._sqrtdt,
                                   self.grid.dt, np.uint64(self.seed), self.bridge,
                                   self.ckpt, idx[lo:hi], self.every, self._checkpoints,
                                   ds[lo:hi], fx[lo:hi])

        bounds = np.linspace(0, idx.size, min(self.workers, max(idx.size, 1)) + 1).astype(int)
        chunks = list(zip(bounds[:-1], bounds[1:]))
        if self.workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                list(ex.map(lambda c: work(*c), chunks))
        else:
            for lo, hi in chunks:
                work(lo, hi)
        return ds, fx

    def apply(self, barrier: StepFunction) -> tuple[np.ndarray, np.ndarray]:
        """Default steps (-1 = survived) and final positions under ``barrier``."""
        if barrier.grid != self.grid:
            raise GridMismatchError("barrier grid differs from engine grid")
        thr = self.alpha * barrier.values
        self._thr = thr
        if self._last_thr is None or not self._checkpoints:
            idx = np.arange(self.M)
            ds, fx = self._run(idx, 0, self.base0)
        else:
            diff = np.nonzero(thr != self._last_thr)[0]
            if diff.size == 0:
                self._last_thr = thr
                return self.default_step.copy(), self.final_x.copy()
            jstar = int(diff[0])
            q = (jstar - 1) // self.every if jstar > 0 else -1
            if q < 0:
                idx = np.arange(self.M)
                ds, fx = self._run(idx, 0, self.base0)
            else:
                start = q * self.every
                old = self.default_step
                idx = np.nonzero((old < 0) | (old > start))[0]
                ds_new, fx_new = self._run(idx, start, self.ckpt[q, idx].copy())
                ds = old.copy()
                fx = self.final_x.copy()
                ds[idx] = ds_new
                fx[idx] = fx_new
        self._last_thr = thr
        self.default_step = ds
        self.final_x = fx
        return ds.copy(), fx.copy()

    def loss(self, barrier: StepFunction) -> StepFunction:
        ds, _ = self.apply(barrier)
        return empirical_loss(ds, self.grid)


def empirical_loss(default_step: np.ndarray, grid: TimeGrid) -> StepFunction:
    """Fraction of paths defaulted by each grid time."""
    hits = default_step[default_step >= 0]
    counts = np.cumsum(np.bincount(hits, minlength=grid.n + 1))
    return StepFunction(grid, counts / default_step.size)


def gamma_N(barrier: StepFunction, N: int, alpha: float, law: InitialLaw, grid: TimeGrid,
            seed: int, shift: float = 0.0, bridge: bool = True, workers: int = 1) -> StepFunction:
    """Empirical first-passage CDF of N independent paths against a fixed barrier."""
    if barrier.grid != grid:
        raise GridMismatchError("barrier grid differs from simulation grid")
    eng = FirstPassageEngine(law, alpha, grid, seed, N, shift, bridge, workers=workers,
                             checkpoints=False)
    return eng.loss(barrier)


def iterate_gamma_N(k_max: int, N: int, alpha: float, law: InitialLaw, grid: TimeGrid,
                    seed: int, shift: float = 0.0, bridge: bool = True,
                    workers: int = 1, return_defaults: bool = False):
    """Iterates ``Gamma_N^{(1)}[0], ..., Gamma_N^{(k_max)}[0]`` on shared randomness."""
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    eng = FirstPassageEngine(law, alpha, grid, seed, N, shift, bridge, workers=workers)
    ell = StepFunction.zeros(grid)
    out = []
    for _ in range(k_max):
        ell = eng.loss(ell)
        out.append(ell)
    if return_defaults:
        return out, eng.default_step.copy(), eng.final_x.copy()
    return out
