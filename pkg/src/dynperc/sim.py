"""Event loop coupling the walker and the environment.

The walker attempts a move at rate 1 along a uniformly chosen incident
edge and jumps if that edge is open.  When regeneration tracking is on,
checkpoints fire on the grid ``j * C_A / mu``; a checkpoint regenerates
when the information set is exactly the 2d edges at the walker and all
of them are closed.

At exactly equal times events are processed in the order checkpoint,
refresh, attempt.
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import environment as envmod
from .environment import (
    EAGER, I_HEAP, I_INFO, Environment, EnvState, check_mode_law, check_rates,
    env_incident_covered, env_init, env_new, env_query, env_refresh_top,
    env_track_arrival,
)
from .errors import ConfigError, InvariantViolation
from .lattice import Torus

# SimState.ints slots
S_WALKER, S_CHECKPOINT, S_COVERED, S_EVENTS, S_JUMPS, S_NREGEN, S_INTERVAL, S_RANGE, \
    S_REGEN_ON, S_DEBUG = range(10)
# SimState.reals slots
S_CLOCK, S_NEXT_ATTEMPT, S_SPACING = range(3)

# event codes returned by sim_step
EV_STAY, EV_MOVE, EV_KEEP, EV_DROP, EV_CHECK, EV_REGEN = range(6)
EVENT_NAMES = ("attempt", "attempt", "refresh", "refresh", "checkpoint", "checkpoint")

STOP_HIT, STOP_COVER, STOP_TIME, STOP_REGEN = range(4)

SimState = namedtuple(
    "SimState",
    "env first_visit mark regen_t regen_x regen_range ints reals",
)


@njit(cache=True, nogil=True)
def sim_new(env, start, n_vertices, spacing, regen_on, debug, cap, rng):
    first_visit = np.full(n_vertices, -1.0)
    mark = np.full(n_vertices, -1, dtype=np.int64)
    ints = np.zeros(10, dtype=np.int64)
    reals = np.zeros(3)
    ints[S_WALKER] = start
    ints[S_COVERED] = 1
    ints[S_RANGE] = 1
    ints[S_REGEN_ON] = regen_on
    ints[S_DEBUG] = debug
    first_visit[start] = 0.0
    mark[start] = 0
    reals[S_NEXT_ATTEMPT] = rng.exponential(1.0)
    reals[S_SPACING] = spacing
    return SimState(
        env, first_visit, mark,
        np.empty(cap), np.empty(cap, dtype=np.int64), np.full(cap, -1, dtype=np.int64),
        ints, reals,
    )


@njit(cache=True, nogil=True)
def sim_grow(s):
    cap = max(2 * s.regen_t.shape[0], 8)
    rt = np.empty(cap)
    rx = np.empty(cap, dtype=np.int64)
    rr = np.full(cap, -1, dtype=np.int64)
    m = s.ints[S_NREGEN]
    rt[:m] = s.regen_t[:m]
    rx[:m] = s.regen_x[:m]
    rr[:m] = s.regen_range[:m]
    return SimState(s.env, s.first_visit, s.mark, rt, rx, rr, s.ints, s.reals)


@njit(cache=True, nogil=True, _nrt=False)
def regeneration_condition(s):
    env = s.env
    twod = env.inc.shape[1]
    if env.ints[I_INFO] != twod:
        return False
    w = s.ints[S_WALKER]
    for k in range(twod):
        if env.state[env.inc[w, k]] != 0:
            return False
    return True


@njit(cache=True, nogil=True, _nrt=False)
def sim_next_time(s):
    t = s.reals[S_NEXT_ATTEMPT]
    if s.env.ints[I_HEAP] > 0 and s.env.heap_t[0] < t:
        t = s.env.heap_t[0]
    if s.ints[S_REGEN_ON]:
        tc = s.ints[S_CHECKPOINT] * s.reals[S_SPACING]
        if tc < t:
            t = tc
    return t


@njit(cache=True, nogil=True, _nrt=False)
def sim_step(s, rng):
    """Process the next event.  Returns ``(event code, edge or -1)``."""
    env = s.env
    ints, reals = s.ints, s.reals
    t_att = reals[S_NEXT_ATTEMPT]
    t_ref = env.heap_t[0] if env.ints[I_HEAP] > 0 else np.inf
    t_chk = ints[S_CHECKPOINT] * reals[S_SPACING] if ints[S_REGEN_ON] else np.inf
    if t_chk < reals[S_CLOCK] or t_ref < reals[S_CLOCK] or t_att < reals[S_CLOCK]:
        raise InvariantViolation("event scheduled in the past")
    ints[S_EVENTS] += 1
    code = EV_STAY
    edge = -1
    if t_chk <= t_ref and t_chk <= t_att:
        reals[S_CLOCK] = t_chk
        code = EV_CHECK
        if regeneration_condition(s):
            code = EV_REGEN
            m = ints[S_NREGEN]
            if m >= s.regen_t.shape[0]:
                raise InvariantViolation("regeneration log is full")
            s.regen_t[m] = t_chk
            s.regen_x[m] = ints[S_WALKER]
            if m > 0:
                s.regen_range[m - 1] = ints[S_RANGE]
            ints[S_NREGEN] = m + 1
            ints[S_INTERVAL] += 1
            s.mark[ints[S_WALKER]] = ints[S_INTERVAL]
            ints[S_RANGE] = 1
        ints[S_CHECKPOINT] += 1
    elif t_ref <= t_att:
        reals[S_CLOCK] = t_ref
        _, edge, dropped = env_refresh_top(env, ints[S_WALKER], rng)
        code = EV_DROP if dropped else EV_KEEP
    else:
        clock = t_att
        reals[S_CLOCK] = clock
        w = ints[S_WALKER]
        k = int(rng.random() * env.inc.shape[1])
        edge = env.inc[w, k]
        if env_query(env, edge, clock) == 1:
            v = env.nbr[w, k]
            ints[S_WALKER] = v
            ints[S_JUMPS] += 1
            env_track_arrival(env, v, clock, rng)
            if s.first_visit[v] < 0.0:
                s.first_visit[v] = clock
                ints[S_COVERED] += 1
            if s.mark[v] != ints[S_INTERVAL]:
                s.mark[v] = ints[S_INTERVAL]
                ints[S_RANGE] += 1
            code = EV_MOVE
        reals[S_NEXT_ATTEMPT] = clock + rng.exponential(1.0)
    if ints[S_DEBUG]:
        if not env_incident_covered(env, ints[S_WALKER]):
            raise InvariantViolation("an edge at the walker is not tracked")
        if s.first_visit[ints[S_WALKER]] < 0.0:
            raise InvariantViolation("walker position missing from the visited map")
    return code, edge


@njit(cache=True, nogil=True, _nrt=False)
def sim_run(s, rng, stop_kind, stop_int, stop_time):
    """Advance until the stop condition holds.

    Returns ``(status, elapsed)`` with status 0 when done and 1 when the
    regeneration log must grow before continuing.
    """
    n_vertices = s.first_visit.shape[0]
    ints = s.ints
    regen_on = ints[S_REGEN_ON]
    cap = s.regen_t.shape[0]
    while True:
        if stop_kind == STOP_HIT:
            if ints[S_WALKER] == stop_int:
                return 0, s.reals[S_CLOCK]
        elif stop_kind == STOP_COVER:
            if ints[S_COVERED] == n_vertices:
                return 0, s.reals[S_CLOCK]
        elif stop_kind == STOP_REGEN:
            if ints[S_NREGEN] >= stop_int + 1:
                return 0, s.reals[S_CLOCK]
        elif sim_next_time(s) > stop_time:
            s.reals[S_CLOCK] = stop_time
            return 0, stop_time
        if regen_on and ints[S_NREGEN] >= cap:
            return 1, s.reals[S_CLOCK]
        sim_step(s, rng)


@njit(cache=True, nogil=True)
def replicate(nbr, inc, eu, ev, mode, p, mu, law_kind, law_x, bits, start, spacing,
              regen_on, debug, stop_kind, stop_int, stop_time, cap, rng):
    """One full replication inside compiled code."""
    env = env_new(nbr, inc, eu, ev, mode, p, mu)
    env_init(env, law_kind, law_x, bits, start, rng)
    s = sim_new(env, start, nbr.shape[0], spacing, regen_on, debug, cap, rng)
    while True:
        status, elapsed = sim_run(s, rng, stop_kind, stop_int, stop_time)
        if status == 0:
            return s, elapsed
        s = sim_grow(s)


@njit(cache=True, nogil=True)
def replicate_stats(nbr, inc, eu, ev, mode, p, mu, law_kind, law_x, bits, start, spacing,
                    regen_on, debug, stop_kind, stop_int, stop_time, cap, rng):
    """Like :func:`replicate` but returns only the scalar summary."""
    s, elapsed = replicate(nbr, inc, eu, ev, mode, p, mu, law_kind, law_x, bits, start,
                           spacing, regen_on, debug, stop_kind, stop_int, stop_time, cap, rng)
    ints = s.ints
    return (elapsed, ints[S_EVENTS], ints[S_JUMPS], ints[S_COVERED], ints[S_WALKER],
            ints[S_NREGEN])


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class Hit:
    target: int

    def __str__(self):
        return f"hit:{self.target}"


@dataclass(frozen=True)
class Cover:
    def __str__(self):
        return "cover"


@dataclass(frozen=True)
class TimeLimit:
    T: float

    def __post_init__(self):
        if not self.T >= 0:
            raise ConfigError(f"time limit must be >= 0, got {self.T}", "T")

    def __str__(self):
        return f"time:{self.T:g}"


@dataclass(frozen=True)
class Regenerations:
    K: int

    def __post_init__(self):
        if self.K < 0:
            raise ConfigError(f"regeneration count must be >= 0, got {self.K}", "K")

    def __str__(self):
        return f"regen:{self.K}"


def _stop_args(stop):
    if isinstance(stop, Hit):
        return STOP_HIT, int(stop.target), 0.0
    if isinstance(stop, Cover):
        return STOP_COVER, 0, 0.0
    if isinstance(stop, TimeLimit):
        return STOP_TIME, 0, float(stop.T)
    if isinstance(stop, Regenerations):
        return STOP_REGEN, int(stop.K), 0.0
    raise ConfigError(f"unknown stop condition {stop!r}", "stop")


@dataclass(frozen=True)
class SimConfig:
    """Full parameterization of one replication (apart from its RNG stream)."""

    d: int
    n: int
    p: float
    mu: float = 1.0
    ca: float = 1.0
    mode: str = "lazy"
    law: object = field(default_factory=envmod.Stationary)
    start: int = 0
    seed: int = 0
    regen_tracking: bool = False
    debug: bool = False
    allow_degenerate: bool = False

    def __post_init__(self):
        torus = Torus(self.d, self.n)
        check_rates(self.p, self.mu, self.allow_degenerate)
        if not self.ca > 0:
            raise ConfigError(f"C_A must be > 0, got {self.ca}", "ca")
        if not 0 <= self.start < torus.n_vertices:
            raise ConfigError(f"start vertex {self.start} out of range", "start")
        check_mode_law(self.mode, self.law, torus, self.start)
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer", "seed")

    @property
    def torus(self) -> Torus:
        return _torus(self.d, self.n)

    @property
    def spacing(self) -> float:
        return self.ca / self.mu

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)

    def check_stop(self, stop):
        if isinstance(stop, Hit) and not 0 <= stop.target < self.torus.n_vertices:
            raise ConfigError(f"hit target {stop.target} out of range", "target")
        if isinstance(stop, Regenerations) and not self.regen_tracking:
            raise ConfigError("regeneration stop needs regen tracking", "stop")

    def kernel_args(self):
        torus = self.torus
        mode = envmod.BROKEN_LAZY if self.mode == "broken-lazy" else envmod.MODES[self.mode]
        bits = self.law.bits if isinstance(self.law, envmod.Explicit) else np.zeros(0, np.uint8)
        return (torus.neighbors, torus.incident, torus.edge_u, torus.edge_v, mode,
                float(self.p), float(self.mu), self.law.kind, getattr(self.law, "x", -1),
                bits, int(self.start), float(self.spacing), int(self.regen_tracking),
                int(self.debug))


_TORI: dict = {}


def _torus(d, n) -> Torus:
    key = (d, n)
    if key not in _TORI:
        _TORI[key] = Torus(d, n)
    return _TORI[key]


# -- results -------------------------------------------------------------------


@dataclass
class RunResult:
    elapsed: float
    outcome: str
    n_events: int
    n_jumps: int
    covered: int
    regen_t: np.ndarray
    regen_x: np.ndarray
    regen_range: np.ndarray
    first_visit: np.ndarray | None = None
    final_walker: int = -1

    @property
    def regen_log(self) -> list[tuple[int, float, int]]:
        return [(k, float(t), int(x)) for k, (t, x) in enumerate(zip(self.regen_t, self.regen_x))]

    def ranges(self) -> list[int]:
        return range_sizes(self.regen_range)


def range_sizes(regen_range: np.ndarray) -> list[int]:
    """Completed |R[tau_k, tau_{k+1}]| values from a regeneration log."""
    return [int(r) for r in regen_range if r >= 0]


def result_from_state(s: SimState, elapsed: float, stop, keep_visits: bool) -> RunResult:
    m = int(s.ints[S_NREGEN])
    return RunResult(
        elapsed=float(elapsed),
        outcome=str(stop),
        n_events=int(s.ints[S_EVENTS]),
        n_jumps=int(s.ints[S_JUMPS]),
        covered=int(s.ints[S_COVERED]),
        regen_t=s.regen_t[:m].copy(),
        regen_x=s.regen_x[:m].copy(),
        regen_range=s.regen_range[: max(m - 1, 0)].copy(),
        first_visit=s.first_visit.copy() if keep_visits else None,
        final_walker=int(s.ints[S_WALKER]),
    )


def run_replication(config: SimConfig, stop, rng: np.random.Generator,
                    keep_visits: bool = False, cap: int = 16) -> RunResult:
    """Run one replication to ``stop`` with the given stream."""
    config.check_stop(stop)
    kind, target, T = _stop_args(stop)
    if kind == STOP_REGEN:
        cap = max(cap, target + 2)
    s, elapsed = replicate(*config.kernel_args(), kind, target, T, cap, rng)
    return result_from_state(s, elapsed, stop, keep_visits)


@dataclass(frozen=True)
class Event:
    kind: str
    time: float
    edge: int = -1
    moved: bool = False
    dropped: bool = False
    regenerated: bool = False


class Simulation:
    """Stepwise access to one replication (SimState plus its RNG stream)."""

    def __init__(self, config: SimConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.torus = config.torus
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        (nbr, inc, eu, ev, mode, p, mu, law_kind, law_x, bits, start, spacing,
         regen_on, debug) = config.kernel_args()
        env = env_new(nbr, inc, eu, ev, mode, p, mu)
        env_init(env, law_kind, law_x, bits, start, self.rng)
        self.state: SimState = sim_new(env, start, self.torus.n_vertices, spacing,
                                       regen_on, debug, 16, self.rng)
        self.env = Environment(self.torus, env)

    # -- accessors
    @property
    def clock(self) -> float:
        return float(self.state.reals[S_CLOCK])

    @property
    def walker(self) -> int:
        return int(self.state.ints[S_WALKER])

    @property
    def covered_count(self) -> int:
        return int(self.state.ints[S_COVERED])

    @property
    def n_events(self) -> int:
        return int(self.state.ints[S_EVENTS])

    @property
    def n_jumps(self) -> int:
        return int(self.state.ints[S_JUMPS])

    @property
    def checkpoint_index(self) -> int:
        return int(self.state.ints[S_CHECKPOINT])

    @property
    def visited(self) -> dict[int, float]:
        fv = self.state.first_visit
        return {int(v): float(fv[v]) for v in np.flatnonzero(fv >= 0.0)}

    @property
    def regen_log(self) -> list[tuple[int, float, int]]:
        m = int(self.state.ints[S_NREGEN])
        return [(k, float(self.state.regen_t[k]), int(self.state.regen_x[k])) for k in range(m)]

    def next_event_time(self) -> float:
        return float(sim_next_time(self.state))

    def regeneration_condition(self) -> bool:
        return bool(regeneration_condition(self.state))

    def range_between_regens(self) -> list[int]:
        m = int(self.state.ints[S_NREGEN])
        return range_sizes(self.state.regen_range[: max(m - 1, 0)])

    # -- dynamics
    def _ensure_capacity(self):
        if self.state.ints[S_NREGEN] >= self.state.regen_t.shape[0]:
            self.state = sim_grow(self.state)

    def step(self) -> Event:
        self._ensure_capacity()
        code, edge = sim_step(self.state, self.rng)
        return Event(
            kind=EVENT_NAMES[code], time=self.clock, edge=int(edge),
            moved=code == EV_MOVE, dropped=code == EV_DROP, regenerated=code == EV_REGEN,
        )

    def run_until(self, stop) -> RunResult:
        self.config.check_stop(stop)
        kind, target, T = _stop_args(stop)
        if kind == STOP_TIME and T < self.clock:
            raise ConfigError("time limit lies in the past", "T")
        while True:
            status, elapsed = sim_run(self.state, self.rng, kind, target, T)
            if status == 0:
                break
            self.state = sim_grow(self.state)
        return result_from_state(self.state, elapsed, stop, keep_visits=True)
