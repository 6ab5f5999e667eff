"""Keyed random draws and the initial law of X_{0-}.

Every draw is a pure function of ``(seed, stream, counter)`` computed with
the Philox4x32-10 counter-based generator, so simulations do not depend on
the order in which particles are visited or on how work is split between
threads. Each Philox block yields two uniforms: the first feeds the
Gaussian increment of a step, the second the Brownian-bridge test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import special

MASK32 = 0xFFFFFFFF
PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85

# counter reserved for the initial-condition draw of each stream
INIT_COUNTER = 2**64 - 1


@numba.njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    m = numba.uint64(MASK32)
    c0 = numba.uint64(c0)
    c1 = numba.uint64(c1)
    c2 = numba.uint64(c2)
    c3 = numba.uint64(c3)
    k0 = numba.uint64(k0)
    k1 = numba.uint64(k1)
    for _ in range(10):
        p0 = numba.uint64(PHILOX_M0) * c0
        p1 = numba.uint64(PHILOX_M1) * c2
        hi0 = p0 >> numba.uint64(32)
        lo0 = p0 & m
        hi1 = p1 >> numba.uint64(32)
        lo1 = p1 & m
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = (k0 + numba.uint64(PHILOX_W0)) & m
        k1 = (k1 + numba.uint64(PHILOX_W1)) & m
    return c0, c1, c2, c3


@numba.njit(cache=True, inline="always")
def _to_unit(a, b):
    # 53 random bits -> midpoint of a dyadic cell, strictly inside (0, 1)
    hi = a >> numba.uint64(5)
    lo = b >> numba.uint64(6)
    return (float(hi) * 67108864.0 + float(lo) + 0.5) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, inline="always")
def keyed_uniforms(seed, stream, counter):
    """Two uniforms on (0, 1) addressed by (seed, stream, counter)."""
    m = numba.uint64(MASK32)
    s = numba.uint64(seed)
    st = numba.uint64(stream)
    ct = numba.uint64(counter)
    r0, r1, r2, r3 = philox4x32(ct & m, ct >> numba.uint64(32), st & m,
                                st >> numba.uint64(32), s & m, s >> numba.uint64(32))
    return _to_unit(r0, r1), _to_unit(r2, r3)


@numba.njit(cache=True, nogil=True)
def _uniform_block(seed, streams, counter):
    n = streams.shape[0]
    u1 = np.empty(n)
    u2 = np.empty(n)
    for i in range(n):
        u1[i], u2[i] = keyed_uniforms(seed, streams[i], counter)
    return u1, u2


def _u64(x) -> np.uint64:
    x = int(x)
    if not 0 <= x < 2**64:
        raise ValueError(f"key component out of 64-bit range: {x}")
    return np.uint64(x)


def uniforms(seed: int, streams, counter: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`keyed_uniforms` over an array of stream ids."""
    streams = np.ascontiguousarray(streams, dtype=np.uint64)
    return _uniform_block(_u64(seed), streams, _u64(counter))


def philox_words(seed: int, stream: int, counter: int) -> tuple[int, int, int, int]:
    """Raw Philox4x32-10 output; words are (ctr_lo, ctr_hi, stream_lo, stream_hi) keyed by seed."""
    m = MASK32
    seed, stream, counter = int(_u64(seed)), int(_u64(stream)), int(_u64(counter))
    out = philox4x32(counter & m, counter >> 32, stream & m, stream >> 32, seed & m, seed >> 32)
    return tuple(int(w) for w in out)


@dataclass(frozen=True)
class StreamKey:
    seed: int
    stream: int
    counter: int

    def __post_init__(self):
        for v in (self.seed, self.stream, self.counter):
            _u64(v)


def gaussian_increment(key: StreamKey, dt: float) -> float:
    """A Normal(0, dt) draw, deterministic in ``key``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u, _ = keyed_uniforms(_u64(key.seed), _u64(key.stream), _u64(key.counter))
    return math.sqrt(dt) * float(special.ndtri(u))


def gaussian_block(seed: int, streams, counter: int, dt: float) -> np.ndarray:
    u, _ = uniforms(seed, streams, counter)
    return math.sqrt(dt) * special.ndtri(u)


# ---------------------------------------------------------------------------
# initial laws


class InitialLaw:
    """Distribution of X_{0-} on [0, inf).

    Subclasses provide the inverse CDF and the integrated CDF
    ``G(x) = int_{-inf}^x F(y) dy``; the latter gives exact masses for the
    piecewise-linear (hat) discretisation used by the finite-difference
    solver.
    """

    def mean(self) -> float:
        raise NotImplementedError

    def ppf(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def integrated_cdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def upper_quantile(self, q: float = 1 - 1e-6) -> float:
        return float(self.ppf(np.array([q]))[0])

    def sample(self, seed: int, streams) -> np.ndarray:
        u, _ = uniforms(seed, streams, INIT_COUNTER)
        return self.ppf(u)

    def spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class PointMass(InitialLaw):
    x0: float

    def __post_init__(self):
        if not self.x0 >= 0:
            raise ValueError("point mass must sit in [0, inf)")

    def mean(self):
        return float(self.x0)

    def ppf(self, u):
        return np.full(np.shape(u), float(self.x0))

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.x0, 1.0, 0.0)

    def integrated_cdf(self, x):
        return np.maximum(np.asarray(x, dtype=float) - self.x0, 0.0)

    def upper_quantile(self, q=1 - 1e-6):
        return float(self.x0)

    def spec(self):
        return f"point:{self.x0!r}"


@dataclass(frozen=True)
class Uniform(InitialLaw):
    a: float
    b: float

    def __post_init__(self):
        if not 0 <= self.a < self.b:
            raise ValueError("uniform law needs 0 <= a < b")

    def mean(self):
        return 0.5 * (self.a + self.b)

    def ppf(self, u):
        return self.a + (self.b - self.a) * np.asarray(u)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def integrated_cdf(self, x):
        x = np.asarray(x, dtype=float)
        w = self.b - self.a
        inside = (np.clip(x, self.a, self.b) - self.a) ** 2 / (2 * w)
        return inside + np.maximum(x - self.b, 0.0)

    def spec(self):
        return f"uniform:{self.a!r},{self.b!r}"


@dataclass(frozen=True)
class Exponential(InitialLaw):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("exponential rate must be positive")

    def mean(self):
        return 1.0 / self.rate

    def ppf(self, u):
        return -np.log1p(-np.asarray(u)) / self.rate

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.rate * x)

    def integrated_cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return x + np.expm1(-self.rate * x) / self.rate

    def spec(self):
        return f"exponential:{self.rate!r}"


@dataclass(frozen=True, eq=False)
class Empirical(InitialLaw):
    """Uniform law on a finite sample (bootstrap resampling)."""

    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        v = np.sort(np.asarray(self.values, dtype=float).ravel())
        if v.size == 0:
            raise ValueError("empirical law needs at least one value")
        if not np.all(np.isfinite(v)) or v[0] < 0:
            raise ValueError("empirical values must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_file(cls, path) -> Empirical:
        vals = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            s = line.strip()
            if not s:
                continue
            try:
                x = float(s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a decimal number: {s!r}") from None
            if not (math.isfinite(x) and x >= 0):
                raise ValueError(f"{path}:{lineno}: value must be finite and nonnegative")
            vals.append(x)
        if not vals:
            raise ValueError(f"{path}: no values")
        return cls(np.array(vals), source=str(path))

    def mean(self):
        return float(np.mean(self.values))

    def ppf(self, u):
        n = self.values.size
        idx = np.minimum((np.asarray(u) * n).astype(np.int64), n - 1)
        return self.values[idx]

    def cdf(self, x):
        return np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.values.size

    def integrated_cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.mean(np.maximum(x[..., None] - self.values, 0.0), axis=-1)

    def upper_quantile(self, q=1 - 1e-6):
        return float(self.values[-1])

    def spec(self):
        return f"empirical:{self.source}"


def parse_law(text: str) -> InitialLaw:
    """Parse ``point:x0``, ``uniform:a,b``, ``exponential:rate`` or ``empirical:path``."""
    kind, _, args = text.strip().partition(":")
    kind = kind.strip().lower()
    try:
        if kind in ("point", "pointmass"):
            return PointMass(float(args))
        if kind == "uniform":
            a, b = (float(s) for s in args.split(","))
            return Uniform(a, b)
        if kind in ("exponential", "exp"):
            return Exponential(float(args))
    except ValueError as exc:
        raise ValueError(f"bad law spec {text!r}: {exc}") from None
    if kind == "empirical":
        return Empirical.from_file(args.strip())
    raise ValueError(f"unknown law {text!r}")


def sample_initial(law: InitialLaw, key: StreamKey) -> float:
    u, _ = keyed_uniforms(_u64(key.seed), _u64(key.stream), _u64(key.counter))
    return float(law.ppf(np.array([u]))[0])


def law_mean(law: InitialLaw) -> float:
    return law.mean()
