"""Monte Carlo orchestration, estimators and the scaling/regeneration reports."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .environment import ConditionedAt, Explicit, Stationary
from .errors import ConfigError, InvariantViolation
from .sim import (
    Cover, Hit, Regenerations, SimConfig, TimeLimit, _stop_args, replicate,
    replicate_stats, S_NREGEN,
)

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15

# Subcritical defaults per dimension (bond percolation p_c(2) = 1/2, p_c(3) ~ 0.2488).
DEFAULT_P = {1: 0.4, 2: 0.3, 3: 0.15}
N_GRIDS = {1: (8, 16, 32, 64), 2: (8, 16, 24, 32), 3: (6, 8, 12, 16)}
COVER_NORMALIZER = {1: "n^2/mu", 2: "n^2(log n)^2/mu", 3: "n^d log n/mu"}


# -- seeds -------------------------------------------------------------------


def splitmix64(x: int) -> int:
    """The splitmix64 finalizer (a bijection on 64-bit integers)."""
    x = (x + GOLDEN64) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def replication_seed(seed: int, rep: int) -> int:
    """Seed of replication ``rep``: ``splitmix64(seed + rep * golden)``.

    For a fixed base seed this is injective in ``rep``.
    """
    return splitmix64((seed + rep * GOLDEN64) & MASK64)


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic sub-seed for a labelled sub-experiment (sweep cell, arm)."""
    for lab in labels:
        seed = splitmix64((seed ^ splitmix64(lab)) & MASK64)
    return seed


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replication_seed(seed, rep)))


# -- estimates -----------------------------------------------------------------


@dataclass
class EstimateRecord:
    label: str
    reps: int
    mean: float
    std: float
    stderr: float
    ci95: tuple[float, float]
    params: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, label: str, samples, params: dict | None = None) -> "EstimateRecord":
        x = np.asarray(samples, dtype=float)
        if x.size < 2:
            raise ConfigError("an estimate needs at least 2 replications", "reps")
        mean = float(np.mean(x))
        std = float(np.std(x, ddof=1))
        se = std / math.sqrt(x.size)
        return cls(label, int(x.size), mean, std, se, (mean - 1.96 * se, mean + 1.96 * se),
                   dict(params or {}))

    @property
    def rel_stderr(self) -> float:
        return self.stderr / self.mean if self.mean else 0.0

    def to_dict(self) -> dict:
        return {"label": self.label, "reps": self.reps, "mean": self.mean, "std": self.std,
                "stderr": self.stderr, "ci95": list(self.ci95), "params": self.params}


@dataclass
class MCRun:
    """Outcome of :func:`run_mc`; iterates as ``(estimate, samples)``."""

    estimate: EstimateRecord
    samples: np.ndarray
    n_events: np.ndarray
    n_jumps: np.ndarray
    final_walker: np.ndarray
    seeds: list[int]
    config: SimConfig
    stop: object

    def __iter__(self):
        return iter((self.estimate, self.samples))


def config_params(config: SimConfig, stop) -> dict:
    return {"d": config.d, "n": config.n, "p": config.p, "mu": config.mu, "ca": config.ca,
            "mode": config.mode, "stop": str(stop)}


def run_mc(config: SimConfig, stop, reps: int, workers: int = 1, label: str | None = None
           ) -> MCRun:
    """Run ``reps`` independent replications; stream i is seeded from (config.seed, i)."""
    if reps < 2:
        raise ConfigError("reps must be >= 2", "reps")
    config.check_stop(stop)
    kind, target, T = _stop_args(stop)
    args = config.kernel_args()
    cap = target + 2 if isinstance(stop, Regenerations) else 16
    elapsed = np.empty(reps)
    events = np.empty(reps, dtype=np.int64)
    jumps = np.empty(reps, dtype=np.int64)
    final = np.empty(reps, dtype=np.int64)
    seeds = [replication_seed(config.seed, i) for i in range(reps)]

    def work(lo, hi):
        for i in range(lo, hi):
            rng = np.random.Generator(np.random.PCG64(seeds[i]))
            try:
                out = replicate_stats(*args, kind, target, T, cap, rng)
            except InvariantViolation as exc:
                err = InvariantViolation(f"replication {i}: {exc}")
                err.replication = i
                raise err from exc
            elapsed[i], events[i], jumps[i], _, final[i], _ = out

    _parallel(work, reps, workers)
    est = EstimateRecord.from_samples(label or str(stop), elapsed, config_params(config, stop))
    return MCRun(est, elapsed, events, jumps, final, seeds, config, stop)


def _parallel(work, reps: int, workers: int):
    if workers <= 1:
        work(0, reps)
        return
    bounds = np.linspace(0, reps, workers * 4 + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(work, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        for f in futures:
            f.result()


# -- harmonic numbers and Matthews' bound ---------------------------------------


def harmonic(m: int, exact: bool = False):
    """H_m = 1 + 1/2 + ... + 1/m; a Fraction when ``exact``."""
    if int(m) != m or m < 1:
        raise ValueError(f"harmonic number needs an integer m >= 1, got {m!r}")
    m = int(m)
    if exact:
        return sum((Fraction(1, k) for k in range(1, m + 1)), Fraction(0))
    return math.fsum(1.0 / k for k in range(1, m + 1))


def matthews_pairs(config: SimConfig) -> list[tuple[int, int]]:
    """Designated pairs for the hitting-time proxy: the antipode and the 2d axis antipodes."""
    torus = config.torus
    x = config.start
    cx = np.array(torus.decode(x))
    targets = [torus.antipode(x)]
    for axis in range(torus.d):
        for sign in (1, -1):
            c = cx.copy()
            c[axis] += sign * (torus.n // 2)
            targets.append(torus.encode(c))
    seen, pairs = set(), []
    for y in targets:
        if y not in seen and y != x:
            seen.add(y)
            pairs.append((x, y))
    return pairs


def displacement_classes(config: SimConfig, vertices: list[int]) -> list[int]:
    """One representative target per symmetry class of offsets from the start.

    Offsets are reduced by the torus reflections and axis permutations, which
    leave the hitting-time law invariant.
    """
    torus = config.torus
    x0 = np.array(torus.decode(config.start))
    reps = {}
    for v in vertices:
        off = (np.array(torus.decode(v)) - x0) % torus.n
        key = tuple(sorted((int(min(o, torus.n - o)) for o in off), reverse=True))
        if any(key) and key not in reps:
            reps[key] = v
    return [reps[k] for k in sorted(reps)]


@dataclass
class MatthewsReport:
    cover: dict
    cover_estimate: EstimateRecord
    hits: dict
    hit_proxy: EstimateRecord
    harmonic: float
    ratio: float
    rel_stderr: float
    tolerance: float
    passed: bool
    separated_set: list[int]
    lower_hits: dict
    lower_bound: float | None
    harmonic_lower: float | None

    def to_dict(self) -> dict:
        return {
            "cover": {k: v.to_dict() for k, v in self.cover.items()},
            "cover_estimate": self.cover_estimate.label,
            "hits": {k: v.to_dict() for k, v in self.hits.items()},
            "hit_proxy": self.hit_proxy.label,
            "harmonic": self.harmonic, "ratio": self.ratio, "rel_stderr": self.rel_stderr,
            "tolerance": self.tolerance, "passed": self.passed,
            "separated_set_size": len(self.separated_set),
            "lower_hits": {k: v.to_dict() for k, v in self.lower_hits.items()},
            "lower_bound": self.lower_bound, "harmonic_lower": self.harmonic_lower,
        }


def _start_laws(config: SimConfig):
    torus = config.torus
    return {
        "conditioned": config.with_(mode="lazy", law=ConditionedAt(config.start)),
        "all-closed": config.with_(mode="seeded-lazy", law=Explicit.all_closed(torus)),
    }


def matthews_report(config: SimConfig, reps_cover: int, reps_hit: int, workers: int = 1,
                    lower: bool = True) -> MatthewsReport:
    """Compare the cover-time estimate with hit-proxy x H(n^d).

    The hitting proxy maximizes over a small designated pair set and two
    start laws, so it is a lower proxy for the true worst-case hitting time.
    """
    torus = config.torus
    laws = _start_laws(config)
    cover = {}
    for i, (name, cfg) in enumerate(laws.items()):
        cfg = cfg.with_(seed=derive_seed(config.seed, 1, i))
        cover[name] = run_mc(cfg, Cover(), reps_cover, workers, label=f"cover[{name}]").estimate
    hits = {}
    for j, (x, y) in enumerate(matthews_pairs(config)):
        for i, (name, cfg) in enumerate(laws.items()):
            cfg = cfg.with_(seed=derive_seed(config.seed, 2, j, i))
            hits[f"hit[{name}] {x}->{y}"] = run_mc(cfg, Hit(y), reps_hit, workers,
                                                   label=f"hit[{name}] {x}->{y}").estimate
    cov = max(cover.values(), key=lambda r: r.mean)
    hit = max(hits.values(), key=lambda r: r.mean)
    h = harmonic(torus.n_vertices)
    ratio = cov.mean / (hit.mean * h)
    rel = math.hypot(cov.rel_stderr, hit.rel_stderr)
    tol = 1.0 + 5.0 * rel

    sep = torus.separated_set()
    lower_hits, lower_bound, h_lower = {}, None, None
    if lower and len(sep) >= 2:
        cfg0 = laws["conditioned"]
        for j, y in enumerate(displacement_classes(cfg0, sep)):
            cfg = cfg0.with_(seed=derive_seed(config.seed, 3, j))
            lab = f"hit[conditioned] {cfg0.start}->{y}"
            lower_hits[lab] = run_mc(cfg, Hit(y), reps_hit, workers, label=lab).estimate
        h_lower = harmonic(len(sep) - 1) if len(sep) > 1 else None
        lower_bound = min(r.mean for r in lower_hits.values()) * h_lower
    return MatthewsReport(cover, cov, hits, hit, h, ratio, rel, tol, ratio <= tol, sep,
                          lower_hits, lower_bound, h_lower)


# -- scaling ---------------------------------------------------------------------


NORMALIZERS = {
    "n^2/mu": lambda n, d: n ** 2,
    "n^2(log n)^2/mu": lambda n, d: n ** 2 * math.log(n) ** 2,
    "n^d log n/mu": lambda n, d: n ** d * math.log(n),
    "n^d/mu": lambda n, d: n ** d,
}


@dataclass
class BandResult:
    normalizer: str
    ns: list[int]
    normalized: list[float]
    ratio: float

    def to_dict(self) -> dict:
        return {"normalizer": self.normalizer, "n": self.ns, "normalized": self.normalized,
                "band_ratio": self.ratio}


def scaling_band(series, normalizer: str, d: int | None = None, mu: float | None = None
                 ) -> BandResult:
    """Divide each mean by the normalizer at its n and report max/min.

    ``series`` is a list of ``(n, EstimateRecord)``.  ``d`` and ``mu`` are
    taken from the records' params when not given.
    """
    if normalizer not in NORMALIZERS:
        raise ConfigError(f"unknown normalizer {normalizer!r}", "normalizer")
    series = sorted(series, key=lambda item: item[0])
    ns = [int(n) for n, _ in series]
    if len(set(ns)) < 3:
        raise ConfigError("a scaling band needs at least 3 distinct n", "n")
    shared = {}
    for _, rec in series:
        for key in ("d", "p", "mu", "stop", "ca", "mode"):
            if key in rec.params:
                val = rec.params[key]
                if key == "stop" and val.startswith("hit:"):
                    val = "hit"
                if shared.setdefault(key, val) != val:
                    raise ConfigError(f"series mixes different values of {key}", key)
    d = d if d is not None else shared.get("d")
    mu = mu if mu is not None else shared.get("mu", 1.0)
    if d is None:
        raise ConfigError("dimension is needed for the normalizer", "d")
    f = NORMALIZERS[normalizer]
    normalized = [rec.mean * mu / f(n, d) for n, rec in series]
    lo, hi = min(normalized), max(normalized)
    return BandResult(normalizer, ns, normalized, hi / lo if lo > 0 else math.inf)


@dataclass
class FitResult:
    slope: float
    intercept: float
    r2: float
    count: int
    slope_stderr: float = float("nan")

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "count": self.count, "slope_stderr": self.slope_stderr}


def fit_loglog(points) -> FitResult:
    """Least squares of log(value) on log(n)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ConfigError("fit needs at least 3 points", "points")
    if np.any(pts <= 0):
        raise ConfigError("log-log fit needs positive n and values", "points")
    res = stats.linregress(np.log(pts[:, 0]), np.log(pts[:, 1]))
    r2 = min(max(res.rvalue ** 2, 0.0), 1.0)
    return FitResult(float(res.slope), float(res.intercept), float(r2), int(pts.shape[0]),
                     float(res.stderr))


def mu_scaling(records: dict) -> float:
    """max/min of mean * mu over ``{mu: EstimateRecord}``."""
    vals = [rec.mean * mu for mu, rec in records.items()]
    return max(vals) / min(vals)


# -- regeneration statistics ----------------------------------------------------------


@dataclass
class TailFit:
    slope: float
    slope_ci: tuple[float, float]
    m: np.ndarray
    survival: np.ndarray


def survival_slope(counts: np.ndarray, min_count: int = 30) -> TailFit:
    """Regress log P(|R| >= m) on m, using m >= 2 while at least ``min_count`` samples remain.

    ``counts[m]`` is the number of intervals with range exactly m.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    tail = np.cumsum(counts[::-1])[::-1]  # tail[m] = #{R >= m}
    m = np.arange(len(counts))
    keep = (m >= 2) & (tail >= min_count)
    if keep.sum() < 3:
        raise ConfigError("not enough range data for a tail fit", "reps")
    x, y = m[keep], np.log(tail[keep] / total)
    res = stats.linregress(x, y)
    half = stats.t.ppf(0.975, keep.sum() - 2) * res.stderr
    return TailFit(float(res.slope), (float(res.slope - half), float(res.slope + half)),
                   x, np.exp(y))


@dataclass
class RegenStats:
    mu: float
    reps: int
    regenerations: int
    gap_mean: float
    gap_stderr: float
    gap_counts: np.ndarray
    range_mean: float
    range_counts: np.ndarray
    tail: TailFit | None
    histograms: dict
    displacement_mean: np.ndarray
    displacement_cov: np.ndarray
    displacement_stderr: np.ndarray
    sigma2: float

    @property
    def n_intervals(self) -> int:
        return int(self.range_counts.sum())

    def tv_to_uniform(self, k: int) -> float:
        h = self.histograms[k]
        return 0.5 * float(np.abs(h / h.sum() - 1.0 / h.size).sum())

    def min_cell(self, k: int) -> float:
        h = self.histograms[k]
        return float(h.min() / h.sum())

    def to_dict(self) -> dict:
        out = {
            "mu": self.mu, "reps": self.reps, "regenerations": self.regenerations,
            "gap_mean": self.gap_mean, "gap_stderr": self.gap_stderr,
            "range_mean": self.range_mean, "n_intervals": self.n_intervals,
            "displacement_mean": self.displacement_mean.tolist(),
            "displacement_cov": self.displacement_cov.tolist(),
            "sigma2": self.sigma2,
        }
        if self.tail is not None:
            out["range_tail_slope"] = self.tail.slope
            out["range_tail_slope_ci95"] = list(self.tail.slope_ci)
        out["position_law"] = {
            str(k): {"tv_to_uniform": self.tv_to_uniform(k), "min_cell": self.min_cell(k),
                     "counts": h.tolist()} for k, h in self.histograms.items()}
        return out


def _signed_offset(torus, a, b):
    off = (np.asarray(torus.coords[b]) - np.asarray(torus.coords[a])) % torus.n
    return np.where(off > torus.n // 2, off - torus.n, off)


def regen_statistics(config: SimConfig, K: int, reps: int, workers: int = 1,
                     ks: tuple[int, ...] | None = None, keep_logs: bool = False):
    """Gap, range-size and position statistics over ``reps`` runs of K regenerations.

    Runs start from the conditioned law at ``config.start`` with regeneration
    tracking on.  Returns :class:`RegenStats` (and the raw logs when
    ``keep_logs``).
    """
    torus = config.torus
    n_side = torus.n
    if ks is None:
        ks = tuple(k for k in sorted({math.ceil(n_side ** 2 / 2), n_side ** 2}) if k <= K)
    for k in ks:
        if k > K:
            raise ConfigError(f"position law at k={k} needs K >= {k}", "K")
    cfg = config.with_(law=ConditionedAt(config.start), regen_tracking=True)
    if cfg.mode == "seeded-lazy":
        cfg = cfg.with_(mode="lazy")
    stop = Regenerations(K)
    cfg.check_stop(stop)
    args = cfg.kernel_args()
    kind, target, T = _stop_args(stop)
    gap_counts = [np.zeros(0, dtype=np.int64) for _ in range(reps)]
    range_counts = [None] * reps
    positions = {k: np.empty(reps, dtype=np.int64) for k in ks}
    first = np.empty(reps, dtype=np.int64)
    logs = [None] * reps if keep_logs else None
    spacing = cfg.spacing

    def work(lo, hi):
        for i in range(lo, hi):
            rng = replication_rng(cfg.seed, i)
            s, _ = replicate(*args, kind, target, T, K + 2, rng)
            m = int(s.ints[S_NREGEN])
            t = s.regen_t[:m]
            x = s.regen_x[:m]
            gaps = np.rint(np.diff(t) / spacing).astype(np.int64)
            gap_counts[i] = np.bincount(gaps)
            range_counts[i] = np.bincount(s.regen_range[: m - 1])
            for k in ks:
                positions[k][i] = x[k]
            first[i] = x[1]
            if keep_logs:
                logs[i] = (t.copy(), x.copy(), s.regen_range[: m - 1].copy())

    _parallel(work, reps, workers)
    gc = _sum_counts(gap_counts)
    rc = _sum_counts(range_counts)
    g = np.arange(gc.size)
    n_gaps = gc.sum()
    gap_mean = float((g * gc).sum() / n_gaps)
    gap_var = float(((g - gap_mean) ** 2 * gc).sum() / (n_gaps - 1))
    r = np.arange(rc.size)
    range_mean = float((r * rc).sum() / rc.sum())
    try:
        tail = survival_slope(rc)
    except ConfigError:
        tail = None
    hist = {k: np.bincount(positions[k], minlength=torus.n_vertices) for k in ks}
    disp = _signed_offset(torus, config.start, first).reshape(reps, torus.d).astype(float)
    dmean = disp.mean(axis=0)
    dcov = np.atleast_2d(np.cov(disp, rowvar=False))
    dse = disp.std(axis=0, ddof=1) / math.sqrt(reps)
    st = RegenStats(cfg.mu, reps, K, gap_mean, math.sqrt(gap_var / n_gaps), gc, range_mean, rc,
                    tail, hist, dmean, dcov, dse, float(dcov[0, 0]))
    return (st, logs) if keep_logs else st


def _sum_counts(parts) -> np.ndarray:
    size = max(len(p) for p in parts)
    out = np.zeros(size, dtype=np.int64)
    for p in parts:
        out[: len(p)] += p
    return out


def gap_agreement(a: RegenStats, b: RegenStats) -> float:
    """|difference of mean gaps| in units of the combined standard error."""
    return abs(a.gap_mean - b.gap_mean) / math.hypot(a.gap_stderr, b.gap_stderr)


# -- lazy/eager soundness ---------------------------------------------------------------


@dataclass
class ModeValidation:
    mode_a: str
    mode_b: str
    T: float
    reps: int
    tv: float
    threshold: float
    passed: bool
    law_a: np.ndarray
    law_b: np.ndarray

    def to_dict(self) -> dict:
        return {"mode_a": self.mode_a, "mode_b": self.mode_b, "T": self.T, "reps": self.reps,
                "tv": self.tv, "threshold": self.threshold, "passed": self.passed,
                "law_a": self.law_a.tolist(), "law_b": self.law_b.tolist()}


def walker_law(config: SimConfig, T: float, reps: int, workers: int = 1) -> np.ndarray:
    run = run_mc(config, TimeLimit(T), reps, workers)
    counts = np.bincount(run.final_walker, minlength=config.torus.n_vertices)
    return counts / reps


def validate_modes(config: SimConfig, T: float, reps: int, mode_a: str = "lazy",
                   mode_b: str = "eager", threshold: float = 0.02, workers: int = 1
                   ) -> ModeValidation:
    """Compare the walker's law at time T under two representations (independent streams)."""
    if config.d != 1 or config.n > 6:
        raise ConfigError("mode validation is defined for d=1, n<=6", "n")
    a = walker_law(config.with_(mode=mode_a, seed=derive_seed(config.seed, 1)), T, reps, workers)
    b = walker_law(config.with_(mode=mode_b, seed=derive_seed(config.seed, 2)), T, reps, workers)
    tv = 0.5 * float(np.abs(a - b).sum())
    return ModeValidation(mode_a, mode_b, T, reps, tv, threshold, tv < threshold, a, b)
