"""Experiment battery: systemic events, convergence ladders, DKW bands, refinement."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cadlag import StepFunction, TimeGrid, jumps, levy_distance, write_columns
from .mckean import FiniteDifference, SolverConfig, Solution, solve_minimal
from .particle import FirstPassageEngine, empirical_loss, simulate_minimal
from .randomness import InitialLaw

DELTA_SYS = 0.05
# default cap on time steps x spatial nodes per solve in a refinement study
MAX_CELLS = 5 * 10**8


class ResourceGuardError(RuntimeError):
    """A requested discretisation exceeds the configured size limit."""


def systemic_event_time(loss: StepFunction, delta_sys: float = DELTA_SYS) -> float | None:
    """First grid time whose one-step increment is at least ``delta_sys``."""
    if not 0 < delta_sys <= 1:
        raise ValueError("delta_sys must lie in (0, 1]")
    found = jumps(loss, delta_sys)
    return found[0][0] if found else None


def dkw_band(M: int, delta_conf: float) -> float:
    """Half-width x with P(sup |F_M - F| > x) <= delta_conf for M samples."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if not 0 < delta_conf < 1:
        raise ValueError("delta_conf must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / delta_conf) / (2.0 * M))


@dataclass(eq=False)
class ConvergenceReport:
    """Levy distances of particle loss paths to a reference solution."""

    Ns: list[int]
    distances: list[np.ndarray]  # per N, one entry per repetition
    reference: str
    perturbation: str
    losses: list[list[StepFunction]] = field(default_factory=list, repr=False)
    seeds: list[list[int]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if len(self.Ns) != len(self.distances):
            raise ValueError("one distance vector per N required")
        if any(b <= a for a, b in zip(self.Ns, self.Ns[1:])):
            raise ValueError("N must be strictly increasing")
        if any(len(d) < 1 for d in self.distances):
            raise ValueError("need at least one repetition per N")
        self.distances = [np.asarray(d, dtype=float) for d in self.distances]

    @property
    def medians(self) -> np.ndarray:
        return np.array([np.median(d) for d in self.distances])

    @property
    def iqrs(self) -> np.ndarray:
        return np.array([np.subtract(*np.percentile(d, [75, 25])) for d in self.distances])

    def strictly_decreasing(self) -> bool:
        m = self.medians
        return bool(np.all(np.diff(m) < 0))

    def distances_csv(self, header: str | None = None) -> str:
        N = np.concatenate([np.full(d.size, n) for n, d in zip(self.Ns, self.distances)])
        rep = np.concatenate([np.arange(d.size) for d in self.distances])
        return write_columns({"N": N.astype(np.int64), "rep": rep,
                              "levy_distance": np.concatenate(self.distances)}, header=header)

    def summary_csv(self, header: str | None = None) -> str:
        return write_columns({"N": np.asarray(self.Ns, dtype=np.int64), "median": self.medians,
                              "iqr": self.iqrs}, header=header)

    def write(self, outdir, header: str | None = None, reference: StepFunction | None = None) -> list[Path]:
        """Write distances, summary and (if kept) the per-rep loss paths."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [outdir / "distances.csv", outdir / "summary.csv"]
        paths[0].write_text(self.distances_csv(header))
        paths[1].write_text(self.summary_csv(header))
        if reference is not None:
            paths.append(outdir / "reference.csv")
            reference.to_csv(paths[-1], header=header)
        for n, row in zip(self.Ns, self.losses):
            for r, ell in enumerate(row):
                p = outdir / "runs" / f"N{n}_rep{r}.csv"
                p.parent.mkdir(exist_ok=True)
                ell.to_csv(p, header=header)
                paths.append(p)
        return paths


def _reference_loss(reference) -> tuple[StepFunction, str]:
    if isinstance(reference, StepFunction):
        return reference, "given loss function"
    if isinstance(reference, Solution):
        return reference.loss, f"solution after {reference.iterations} iterations"
    if isinstance(reference, SolverConfig):
        sol = solve_minimal(reference)
        b = reference.backend
        kind = "fd" if isinstance(b, FiniteDifference) else "mc"
        return sol.loss, (f"minimal solution ({kind}, alpha={reference.alpha}, "
                          f"law={reference.law.spec()}, shift={reference.shift}, "
                          f"T={reference.grid.T}, n={reference.grid.n}, "
                          f"iterations={sol.iterations})")
    raise TypeError("reference must be a SolverConfig, Solution or StepFunction")


def ladder_study(Ns, shift_of, alpha: float, law: InitialLaw, grid: TimeGrid, reps: int,
                 seed: int, reference, perturbation: str, bridge: bool = True,
                 workers: int = 1, keep_losses: bool = True) -> ConvergenceReport:
    """Levy distances for ``simulate_minimal`` runs with shift ``shift_of(N)``.

    Repetition r of every N uses seed ``seed + r``, so runs at equal N and
    rep share their randomness across studies.
    """
    Ns = [int(n) for n in Ns]
    if reps < 1:
        raise ValueError("reps must be at least 1")
    ref, ref_desc = _reference_loss(reference)
    if ref.grid != grid:
        raise ValueError("reference grid differs from the particle grid")
    jobs = [(i, n, r) for i, n in enumerate(Ns) for r in range(reps)]

    def work(job):
        _, n, r = job
        run = simulate_minimal(n, alpha, law, grid, seed + r, shift=shift_of(n), bridge=bridge)
        return run.loss, levy_distance(run.loss, ref)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    dist = [np.empty(reps) for _ in Ns]
    losses = [[None] * reps for _ in Ns]
    for (i, _, r), (ell, d) in zip(jobs, results):
        dist[i][r] = d
        losses[i][r] = ell
    return ConvergenceReport(Ns, dist, ref_desc, perturbation,
                             losses if keep_losses else [],
                             [[seed + r for r in range(reps)] for _ in Ns])


def perturbed_study(Ns, gamma: float, alpha: float, law: InitialLaw, reps: int, seed: int,
                    reference, grid: TimeGrid | None = None, **kw) -> ConvergenceReport:
    """Particle systems started from ``X_{0-} + alpha N^{-gamma}`` against the minimal solution."""
    if not 0 < gamma < 0.5:
        raise ValueError("gamma must lie in (0, 1/2)")
    grid = grid if grid is not None else _grid_of(reference)
    return ladder_study(Ns, lambda n: alpha * n ** (-gamma), alpha, law, grid, reps, seed,
                        reference, f"shift alpha*N^-gamma, gamma={gamma}", **kw)


def shifted_study(Ns, x_shift: float, alpha: float, law: InitialLaw, reps: int, seed: int,
                  reference, grid: TimeGrid | None = None, **kw) -> ConvergenceReport:
    """Particle systems started from ``X_{0-} - x`` against the shifted minimal solution.

    A :class:`SolverConfig` reference is re-solved with shift ``-x``. The
    statement being probed holds for all but countably many x; a chosen x
    is treated as generic.
    """
    if isinstance(reference, SolverConfig):
        reference = replace(reference, shift=-float(x_shift))
    grid = grid if grid is not None else _grid_of(reference)
    return ladder_study(Ns, lambda n: -float(x_shift), alpha, law, grid, reps, seed,
                        reference, f"constant shift -x, x={x_shift}", **kw)


def _grid_of(reference) -> TimeGrid:
    if isinstance(reference, SolverConfig):
        return reference.grid
    if isinstance(reference, Solution):
        return reference.loss.grid
    return reference.grid


def coarse_difference(coarse: StepFunction, fine: StepFunction) -> float:
    """Sup distance at the coarse grid times; the fine grid must contain them."""
    if coarse.grid.T != fine.grid.T or fine.grid.n % coarse.grid.n:
        raise ValueError("fine grid must refine the coarse grid")
    step = fine.grid.n // coarse.grid.n
    return float(np.max(np.abs(fine.values[::step] - coarse.values)))


@dataclass
class RefinementRow:
    dt: float
    dx: float | None
    iterations: int
    converged: bool
    diff_to_finest: float
    diff_to_next: float
    t_sys: float | None


def refinement_study(cfg: SolverConfig, halvings: int, delta_sys: float = DELTA_SYS,
                     max_cells: int = MAX_CELLS) -> list[RefinementRow]:
    """Solve at ``halvings + 1`` resolutions, halving dt (and dx for FD) each time.

    Differences are sup distances sampled at the coarser grid's times.
    """
    if halvings < 1:
        raise ValueError("halvings must be at least 1")
    cfgs = [cfg]
    for _ in range(halvings):
        c = cfgs[-1]
        c = replace(c, grid=c.grid.refined(2))
        if isinstance(c.backend, FiniteDifference):
            c = c.with_backend(dx=c.backend.dx / 2)
        cfgs.append(c)
    for c in cfgs:
        cells = (c.grid.n + 1) * (c.lab_nodes().size if isinstance(c.backend, FiniteDifference)
                                  else c.backend.paths)
        if cells > max_cells:
            raise ResourceGuardError(
                f"n={c.grid.n} needs {cells:.3g} cells, above the limit {max_cells:.3g}")
    sols = [solve_minimal(c) for c in cfgs]
    rows = []
    for i, (c, s) in enumerate(zip(cfgs, sols)):
        dx = c.backend.dx if isinstance(c.backend, FiniteDifference) else None
        to_fin = coarse_difference(s.loss, sols[-1].loss)
        to_next = coarse_difference(s.loss, sols[i + 1].loss) if i + 1 < len(sols) else 0.0
        rows.append(RefinementRow(c.grid.dt, dx, s.iterations, s.converged, to_fin, to_next,
                                  systemic_event_time(s.loss, delta_sys)))
    return rows


def refinement_csv(rows: list[RefinementRow], header: str | None = None) -> str:
    nan = float("nan")
    return write_columns({
        "dt": [r.dt for r in rows],
        "dx": [nan if r.dx is None else r.dx for r in rows],
        "iterations": np.array([r.iterations for r in rows], dtype=np.int64),
        "converged": np.array([int(r.converged) for r in rows], dtype=np.int64),
        "sup_diff_to_finest": [r.diff_to_finest for r in rows],
        "sup_diff_to_next": [r.diff_to_next for r in rows],
        "t_sys": [nan if r.t_sys is None else r.t_sys for r in rows],
    }, header=header)


def dkw_validation(barrier: StepFunction, alpha: float, law: InitialLaw, batches: int, M: int,
                   seed: int, delta_conf: float = 0.01, shift: float = 0.0, bridge: bool = True,
                   workers: int = 1) -> tuple[np.ndarray, float]:
    """Sup distance of each batch's empirical first-passage CDF to ``barrier``.

    Each batch simulates M fresh paths against the frozen barrier; at a
    fixed point their CDF should stay within :func:`dkw_band` of it.
    """
    # one checkpoint-free pass over batches*M paths; batch b owns streams b*M..(b+1)*M-1
    eng = FirstPassageEngine(law, alpha, barrier.grid, seed, batches * M, shift, bridge,
                             workers=workers, checkpoints=False)
    ds, _ = eng.apply(barrier)
    dist = np.array([
        float(np.max(np.abs(empirical_loss(ds[b * M:(b + 1) * M], barrier.grid).values
                            - barrier.values)))
        for b in range(batches)])
    return dist, dkw_band(M, delta_conf)


__all__ = [
    "ConvergenceReport", "RefinementRow", "ResourceGuardError", "coarse_difference",
    "dkw_band", "dkw_validation", "ladder_study", "perturbed_study", "refinement_csv",
    "refinement_study", "shifted_study", "systemic_event_time",
]
