"""Domain types shared by every module: rate parameters, site spaces,
lattice kernels, population states, moment series, and environment
descriptors, plus model validation and dict round-tripping.

All types are immutable after construction and safe to share across
concurrent workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

KERNEL_SUM_TOL = 1e-12


@dataclass(frozen=True)
class RateParams:
    """Scalar event rates: per-particle birth ``beta`` and death ``mu``,
    per-site immigration ``k``, per-particle migration ``kappa``."""

    beta: float
    mu: float
    k: float
    kappa: float = 1.0

    def problems(self) -> list[str]:
        out = []
        for name in ("beta", "mu", "k", "kappa"):
            v = getattr(self, name)
            if not math.isfinite(v):
                out.append(f"{name} not finite")
            elif v < 0:
                out.append(f"{name} negative")
        return out

    def to_dict(self) -> dict:
        return {"beta": self.beta, "mu": self.mu, "k": self.k, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, d: dict) -> "RateParams":
        return cls(
            beta=float(d["beta"]),
            mu=float(d["mu"]),
            k=float(d["k"]),
            kappa=float(d.get("kappa", 1.0)),
        )


@dataclass(frozen=True)
class LatticeKernel:
    """Symmetric probability kernel on Z^d with explicitly finite support.

    ``support`` maps nonzero offsets to positive weights; the zero offset is
    never stored.  Weights must sum to 1 and satisfy a(z) = a(-z).
    """

    dim: int
    support: tuple[tuple[tuple[int, ...], float], ...]

    @classmethod
    def from_dict_support(cls, dim: int, weights: dict) -> "LatticeKernel":
        items = []
        for off, w in weights.items():
            if isinstance(off, int):
                off = (off,)
            items.append((tuple(int(o) for o in off), float(w)))
        items.sort()
        return cls(dim=dim, support=tuple(items))

    @classmethod
    def nearest_neighbor(cls, dim: int = 1) -> "LatticeKernel":
        w = 1.0 / (2 * dim)
        items = []
        for axis in range(dim):
            for sign in (-1, 1):
                off = tuple(sign if a == axis else 0 for a in range(dim))
                items.append((off, w))
        items.sort()
        return cls(dim=dim, support=tuple(items))

    def offsets(self) -> np.ndarray:
        return np.array([off for off, _ in self.support], dtype=np.int64).reshape(
            len(self.support), self.dim
        )

    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.support], dtype=np.float64)

    def total_weight(self) -> float:
        return float(sum(w for _, w in self.support))

    def max_offset(self) -> int:
        if not self.support:
            return 0
        return max(max(abs(c) for c in off) for off, _ in self.support)

    def problems(self) -> list[str]:
        out = []
        seen = {}
        for off, w in self.support:
            if len(off) != self.dim:
                out.append(f"kernel offset {off} has wrong dimension (expected {self.dim})")
            if all(c == 0 for c in off):
                out.append("kernel stores the zero offset")
            if w <= 0:
                out.append(f"kernel weight at {off} not positive")
            if off in seen:
                out.append(f"kernel offset {off} duplicated")
            seen[off] = w
        for off, w in self.support:
            neg = tuple(-c for c in off)
            if neg not in seen:
                out.append(f"kernel asymmetric: {off} listed but {neg} missing")
            elif abs(seen[neg] - w) > KERNEL_SUM_TOL:
                out.append(f"kernel asymmetric: a{off}={w:g} but a{neg}={seen[neg]:g}")
        s = self.total_weight()
        if abs(s - 1.0) > KERNEL_SUM_TOL:
            out.append(f"kernel weights sum {s:.12g} != 1 (truncated mass {1.0 - s:.3g})")
        return out

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "support": [{"offset": list(off), "weight": w} for off, w in self.support],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatticeKernel":
        items = sorted(
            (tuple(int(c) for c in e["offset"]), float(e["weight"])) for e in d["support"]
        )
        return cls(dim=int(d["dim"]), support=tuple(items))


@dataclass(frozen=True)
class SingleSite:
    """One site, no spatial structure."""

    n_sites: int = 1

    def problems(self) -> list[str]:
        return []

    def to_dict(self) -> dict:
        return {"variant": "single"}


@dataclass(frozen=True)
class FiniteSet:
    """Finite site set with per-pair transfer rates a(x, y), zero diagonal."""

    n_sites: int
    jump_rates: tuple[tuple[float, ...], ...]
    symmetric: bool = False

    @classmethod
    def from_matrix(cls, a: np.ndarray, symmetric: bool = False) -> "FiniteSet":
        a = np.asarray(a, dtype=float)
        return cls(
            n_sites=a.shape[0],
            jump_rates=tuple(tuple(float(v) for v in row) for row in a),
            symmetric=symmetric,
        )

    def jump_matrix(self) -> np.ndarray:
        return np.array(self.jump_rates, dtype=np.float64)

    def problems(self) -> list[str]:
        out = []
        a = self.jump_matrix()
        if a.shape != (self.n_sites, self.n_sites):
            return [f"transition matrix shape {a.shape} != ({self.n_sites}, {self.n_sites})"]
        if np.any(a < 0):
            out.append("transition rate a(x,y) negative")
        if np.any(np.abs(np.diag(a)) > 0):
            out.append("transition matrix has nonzero diagonal")
        if self.symmetric and not np.allclose(a, a.T, atol=1e-12, rtol=0):
            out.append("transition matrix not symmetric although symmetric mode requested")
        row_tot = a.sum(axis=1)
        if row_tot.size and np.ptp(row_tot) > 1e-9 * (1.0 + row_tot.max()):
            out.append("transition matrix rows do not share a common total jump rate")
        return out

    def to_dict(self) -> dict:
        return {
            "variant": "finite",
            "n_sites": self.n_sites,
            "jump_rates": [list(r) for r in self.jump_rates],
            "symmetric": self.symmetric,
        }


@dataclass(frozen=True)
class Torus:
    """Periodic box of side ``side`` in each of ``dim`` dimensions, with a
    migration kernel.  Sites are indexed in row-major order; covariance lags
    are reported in the representative range (-side/2, side/2]^dim."""

    side: int
    dim: int
    kernel: LatticeKernel

    @property
    def n_sites(self) -> int:
        return self.side**self.dim

    def site_index(self, coords) -> int:
        idx = 0
        for c in coords:
            idx = idx * self.side + (int(c) % self.side)
        return idx

    def problems(self) -> list[str]:
        out = self.kernel.problems()
        if self.kernel.dim != self.dim:
            out.append(f"kernel dimension {self.kernel.dim} != torus dimension {self.dim}")
        if self.side < 3 * max(1, self.kernel.max_offset()):
            out.append(
                f"torus side {self.side} < 3 * max kernel offset {self.kernel.max_offset()}"
            )
        return out

    def to_dict(self) -> dict:
        return {
            "variant": "torus",
            "side": self.side,
            "dim": self.dim,
            "kernel": self.kernel.to_dict(),
        }


SiteSpace = Union[SingleSite, FiniteSet, Torus]


def space_from_dict(d: dict) -> SiteSpace:
    variant = d.get("variant", "single")
    if variant == "single":
        return SingleSite()
    if variant == "finite":
        return FiniteSet(
            n_sites=int(d["n_sites"]),
            jump_rates=tuple(tuple(float(v) for v in row) for row in d["jump_rates"]),
            symmetric=bool(d.get("symmetric", False)),
        )
    if variant == "torus":
        return Torus(side=int(d["side"]), dim=int(d["dim"]), kernel=LatticeKernel.from_dict(d["kernel"]))
    raise ValueError(f"unknown space variant {variant!r}")


@dataclass(frozen=True)
class PopulationState:
    """Occupation numbers over a site set, stamped with the event time."""

    time: float
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("time negative")
        if any(c < 0 for c in self.counts):
            raise ValueError("negative occupation number")

    @property
    def total(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True)
class MomentSeries:
    """A labelled curve on a time grid: estimates plus Monte Carlo standard
    errors (zero for analytic curves)."""

    grid: tuple[float, ...]
    values: tuple[float, ...]
    stderr: tuple[float, ...]
    label: str

    def __post_init__(self):
        g = np.asarray(self.grid)
        if g.size > 1 and not np.all(np.diff(g) > 0):
            raise ValueError("grid not strictly increasing")
        if len(self.values) != len(self.grid) or len(self.stderr) != len(self.grid):
            raise ValueError("values/stderr length mismatch")
        if any(s < 0 for s in self.stderr):
            raise ValueError("negative standard error")

    @classmethod
    def analytic(cls, grid, values, label: str) -> "MomentSeries":
        grid = tuple(float(t) for t in grid)
        return cls(grid=grid, values=tuple(float(v) for v in values),
                   stderr=(0.0,) * len(grid), label=label)


# ---------------------------------------------------------------------------
# Random environments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateDistribution:
    """Marginal law of one environment rate: constant, two-point, or uniform."""

    kind: str  # "constant" | "two_point" | "uniform"
    a: float
    b: float = 0.0
    p: float = 0.5  # P(value == a) for two_point

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(size, self.a)
        if self.kind == "two_point":
            return np.where(rng.random(size) < self.p, self.a, self.b)
        if self.kind == "uniform":
            return rng.uniform(self.a, self.b, size)
        raise ValueError(f"unknown distribution kind {self.kind!r}")

    def mean_log(self) -> float:
        """E[ln X], in closed form for the supported families."""
        if self.kind == "constant":
            return math.log(self.a)
        if self.kind == "two_point":
            return self.p * math.log(self.a) + (1 - self.p) * math.log(self.b)
        if self.kind == "uniform":
            lo, hi = min(self.a, self.b), max(self.a, self.b)
            if lo == hi:
                return math.log(lo)
            # int ln x dx = x ln x - x
            return (hi * math.log(hi) - hi - lo * math.log(lo) + lo) / (hi - lo)
        raise ValueError(self.kind)

    def support_bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return self.a, self.a
        return min(self.a, self.b), max(self.a, self.b)

    def is_degenerate(self) -> bool:
        lo, hi = self.support_bounds()
        return lo == hi

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "p": self.p}

    @classmethod
    def from_dict(cls, d: dict) -> "RateDistribution":
        return cls(kind=d["kind"], a=float(d["a"]), b=float(d.get("b", 0.0)),
                   p=float(d.get("p", 0.5)))


@dataclass(frozen=True)
class ByPopulationLevel:
    """Environment where (mu, beta, k) at population level n are i.i.d.
    samples, bounded into [c_minus, c_plus]."""

    beta: RateDistribution
    mu: RateDistribution
    k: RateDistribution
    c_minus: float
    c_plus: float

    def problems(self) -> list[str]:
        out = []
        if not (0 < self.c_minus <= self.c_plus < math.inf):
            out.append("environment bounds must satisfy 0 < c_minus <= c_plus < inf")
        for name in ("beta", "mu", "k"):
            lo, hi = getattr(self, name).support_bounds()
            if lo < self.c_minus - 1e-12 or hi > self.c_plus + 1e-12:
                out.append(f"environment {name} support [{lo:g}, {hi:g}] outside "
                           f"[{self.c_minus:g}, {self.c_plus:g}]")
        return out

    def to_dict(self) -> dict:
        return {
            "variant": "by_population_level",
            "beta": self.beta.to_dict(),
            "mu": self.mu.to_dict(),
            "k": self.k.to_dict(),
            "c_minus": self.c_minus,
            "c_plus": self.c_plus,
        }


@dataclass(frozen=True)
class MarkovChainEnv:
    """Environment driven by a finite Markov chain: per-state rates plus
    switch rates between states (off-diagonal generator entries)."""

    beta: tuple[float, ...]
    mu: tuple[float, ...]
    k: tuple[float, ...]
    switch_rates: tuple[tuple[float, ...], ...]

    @property
    def n_states(self) -> int:
        return len(self.beta)

    def switch_matrix(self) -> np.ndarray:
        return np.array(self.switch_rates, dtype=np.float64)

    def problems(self) -> list[str]:
        out = []
        n = self.n_states
        if not (len(self.mu) == len(self.k) == n):
            out.append("per-state rate vectors have mismatched lengths")
            return out
        q = self.switch_matrix()
        if q.shape != (n, n):
            out.append(f"switch matrix shape {q.shape} != ({n}, {n})")
            return out
        if np.any(q < 0) or np.any(np.abs(np.diag(q)) > 0):
            out.append("switch rates must be nonnegative with zero diagonal")
        for name in ("beta", "mu", "k"):
            if any(v < 0 or not math.isfinite(v) for v in getattr(self, name)):
                out.append(f"per-state {name} must be finite and nonnegative")
        return out

    def to_dict(self) -> dict:
        return {
            "variant": "markov_chain",
            "beta": list(self.beta),
            "mu": list(self.mu),
            "k": list(self.k),
            "switch_rates": [list(r) for r in self.switch_rates],
        }


@dataclass(frozen=True)
class SpatialField:
    """Torus model with per-site beta and mu and a time-dependent immigration
    field k(t, x), piecewise-constant on ``k_breaks``.  Bounds delta1 <=
    k(t,x) <= delta2 are part of the descriptor."""

    space: Torus
    beta: tuple[float, ...]
    mu: tuple[float, ...]
    k_breaks: tuple[float, ...]          # segment start times, k_breaks[0] == 0
    k_values: tuple[tuple[float, ...], ...]  # [segment][site]
    delta1: float
    delta2: float

    def problems(self) -> list[str]:
        out = self.space.problems()
        n = self.space.n_sites
        if len(self.beta) != n or len(self.mu) != n:
            out.append("per-site rate fields must have one entry per torus site")
            return out
        if not self.k_breaks or self.k_breaks[0] != 0.0:
            out.append("k segments must start at time 0")
        if list(self.k_breaks) != sorted(self.k_breaks):
            out.append("k segment times must be increasing")
        if len(self.k_values) != len(self.k_breaks):
            out.append("one k row required per segment time")
            return out
        if not (0 < self.delta1 < self.delta2 < math.inf):
            out.append("bounds must satisfy 0 < delta1 < delta2 < inf")
        kv = np.array(self.k_values, dtype=float)
        if kv.shape[1] != n:
            out.append("k rows must have one entry per site")
        elif np.any(kv < self.delta1 - 1e-12) or np.any(kv > self.delta2 + 1e-12):
            out.append("k(t,x) leaves the [delta1, delta2] band")
        return out

    def to_dict(self) -> dict:
        return {
            "variant": "spatial_field",
            "space": self.space.to_dict(),
            "beta": list(self.beta),
            "mu": list(self.mu),
            "k_breaks": list(self.k_breaks),
            "k_values": [list(r) for r in self.k_values],
            "delta1": self.delta1,
            "delta2": self.delta2,
        }


EnvironmentSpec = Union[ByPopulationLevel, MarkovChainEnv, SpatialField]


def environment_from_dict(d: dict) -> EnvironmentSpec:
    variant = d["variant"]
    if variant == "by_population_level":
        return ByPopulationLevel(
            beta=RateDistribution.from_dict(d["beta"]),
            mu=RateDistribution.from_dict(d["mu"]),
            k=RateDistribution.from_dict(d["k"]),
            c_minus=float(d["c_minus"]),
            c_plus=float(d["c_plus"]),
        )
    if variant == "markov_chain":
        return MarkovChainEnv(
            beta=tuple(float(v) for v in d["beta"]),
            mu=tuple(float(v) for v in d["mu"]),
            k=tuple(float(v) for v in d["k"]),
            switch_rates=tuple(tuple(float(v) for v in row) for row in d["switch_rates"]),
        )
    if variant == "spatial_field":
        return SpatialField(
            space=space_from_dict(d["space"]),
            beta=tuple(float(v) for v in d["beta"]),
            mu=tuple(float(v) for v in d["mu"]),
            k_breaks=tuple(float(v) for v in d["k_breaks"]),
            k_values=tuple(tuple(float(v) for v in row) for row in d["k_values"]),
            delta1=float(d["delta1"]),
            delta2=float(d["delta2"]),
        )
    raise ValueError(f"unknown environment variant {variant!r}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """List of violated invariants; empty iff the model is well formed."""

    problems: tuple[str, ...] = ()
    notes: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.problems

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return "; ".join(self.problems)


def validate(params: RateParams, space: SiteSpace) -> ValidationReport:
    """Check every structural invariant of a (rates, space) model."""
    problems = list(params.problems())
    problems.extend(space.problems())
    notes = []
    if isinstance(space, Torus):
        mass = space.kernel.total_weight()
        notes.append(f"kernel truncated mass {max(0.0, 1.0 - mass):.3g}")
    return ValidationReport(problems=tuple(problems), notes=tuple(notes))


def validate_environment(env: EnvironmentSpec) -> ValidationReport:
    return ValidationReport(problems=tuple(env.problems()))
