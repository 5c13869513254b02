"""Dynamical percolation environment.

Three representations share one array layout (:class:`EnvState`):

``eager``
    every edge is materialized and carries a scheduled refresh.
``lazy``
    only the walker's information set is materialized.  An edge that
    refreshes while not incident to the walker is forgotten; if the walker
    touches it again it gets a fresh Bernoulli(p) state.  This is exact for
    everything the walker can observe, but it cannot produce a snapshot of
    the full environment.
``seeded-lazy``
    starts fully materialized from an arbitrary initial law and then
    follows the lazy drop rule, so it decays towards the lazy footprint.

The information set ``info`` follows the same add/remove rules in every
mode.  In eager mode it is bookkeeping only (the edges stay materialized),
which is what makes regeneration detection possible there too.

Kernels are plain ``numba`` functions operating on :class:`EnvState`; they
draw from a ``numpy.random.Generator`` passed in by the caller.
"""
from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, InvariantViolation
from .lattice import Torus

EAGER, LAZY, SEEDED, BROKEN_LAZY = 0, 1, 2, 3
MODES = {"eager": EAGER, "lazy": LAZY, "seeded-lazy": SEEDED}
MODE_NAMES = {v: k for k, v in MODES.items()}
MODE_NAMES[BROKEN_LAZY] = "broken-lazy"

LAW_STATIONARY, LAW_CONDITIONED, LAW_EXPLICIT = 0, 1, 2

# EnvState.ints slots
I_MODE, I_HEAP, I_INFO = 0, 1, 2
# EnvState.reals slots
R_P, R_MU = 0, 1

EnvState = namedtuple(
    "EnvState",
    "nbr inc eu ev state info nxt heap_t heap_e ints reals",
)


# -- initial laws ----------------------------------------------------------


@dataclass(frozen=True)
class Stationary:
    """Product Bernoulli(p) law on all edges."""

    kind: int = LAW_STATIONARY


@dataclass(frozen=True)
class ConditionedAt:
    """Product Bernoulli(p) conditioned on the edges at ``x`` being closed."""

    x: int
    kind: int = LAW_CONDITIONED


@dataclass(frozen=True, eq=False)
class Explicit:
    """A fixed configuration; ``bits[k]`` is the state of canonical edge k."""

    bits: np.ndarray
    kind: int = LAW_EXPLICIT

    def __post_init__(self):
        object.__setattr__(self, "bits", np.ascontiguousarray(self.bits, dtype=np.uint8))

    def __eq__(self, other):
        return isinstance(other, Explicit) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    @classmethod
    def all_closed(cls, torus: Torus) -> "Explicit":
        return cls(np.zeros(torus.n_edges, dtype=np.uint8))

    @classmethod
    def all_open(cls, torus: Torus) -> "Explicit":
        return cls(np.ones(torus.n_edges, dtype=np.uint8))

    @classmethod
    def from_hex(cls, torus: Torus, text: str) -> "Explicit":
        """Parse a bitmap written as a hex integer; bit k is edge k.

        The string must have exactly ``ceil(E / 4)`` digits, so the last
        digit carries edges 0-3.
        """
        text = text.strip().lower().removeprefix("0x")
        want = -(-torus.n_edges // 4)
        if len(text) != want:
            raise ConfigError(f"explicit bitmap needs {want} hex digits, got {len(text)}", "law")
        try:
            value = int(text, 16)
        except ValueError:
            raise ConfigError("explicit bitmap is not valid hex", "law") from None
        if value >> torus.n_edges:
            raise ConfigError("explicit bitmap sets bits beyond the last edge", "law")
        bits = np.array([(value >> k) & 1 for k in range(torus.n_edges)], dtype=np.uint8)
        return cls(bits)

    def to_hex(self) -> str:
        value = 0
        for k in np.flatnonzero(self.bits)[::-1]:
            value |= 1 << int(k)
        return format(value, "x").zfill(-(-len(self.bits) // 4))


def law_name(law) -> str:
    if isinstance(law, Stationary):
        return "stationary"
    if isinstance(law, ConditionedAt):
        return f"conditioned:{law.x}"
    return "explicit"


def check_mode_law(mode: str, law, torus: Torus, start: int):
    if mode not in MODES and mode != "broken-lazy":
        raise ConfigError(f"unknown mode {mode!r}", "mode")
    if isinstance(law, Explicit):
        if mode in ("lazy", "broken-lazy"):
            raise ConfigError("explicit initial law requires eager or seeded-lazy mode", "mode")
        if law.bits.shape != (torus.n_edges,):
            raise ConfigError("explicit bitmap has the wrong number of edges", "law")
    elif isinstance(law, ConditionedAt):
        if not 0 <= law.x < torus.n_vertices:
            raise ConfigError(f"conditioning vertex {law.x} out of range", "law")
        if mode in ("lazy", "broken-lazy") and law.x != start:
            # untracked edges at x would not be Bernoulli(p)
            raise ConfigError("lazy mode needs the conditioning vertex to be the start", "law")
    elif not isinstance(law, Stationary):
        raise ConfigError(f"unknown initial law {law!r}", "law")


def check_rates(p: float, mu: float, allow_degenerate: bool = False):
    lo_ok = 0.0 <= p <= 1.0 if allow_degenerate else 0.0 < p < 1.0
    if not lo_ok:
        raise ConfigError(f"p must lie in (0, 1), got {p}", "p")
    if not 0.0 < mu <= 1.0:
        raise ConfigError(f"mu must lie in (0, 1], got {mu}", "mu")


# -- heap keyed by (time, edge) ----------------------------------------------


@njit(cache=True, nogil=True, _nrt=False, inline="always")
def _before(t1, e1, t2, e2):
    return t1 < t2 or (t1 == t2 and e1 < e2)


@njit(cache=True, nogil=True, _nrt=False)
def heap_push(env, t, e):
    ht, he = env.heap_t, env.heap_e
    i = env.ints[I_HEAP]
    env.ints[I_HEAP] = i + 1
    while i > 0:
        parent = (i - 1) >> 1
        if _before(t, e, ht[parent], he[parent]):
            ht[i] = ht[parent]
            he[i] = he[parent]
            i = parent
        else:
            break
    ht[i] = t
    he[i] = e


@njit(cache=True, nogil=True, _nrt=False)
def heap_pop(env):
    ht, he = env.heap_t, env.heap_e
    size = env.ints[I_HEAP] - 1
    env.ints[I_HEAP] = size
    top_t, top_e = ht[0], he[0]
    t, e = ht[size], he[size]
    i = 0
    while True:
        child = 2 * i + 1
        if child >= size:
            break
        if child + 1 < size and _before(ht[child + 1], he[child + 1], ht[child], he[child]):
            child += 1
        if _before(ht[child], he[child], t, e):
            ht[i] = ht[child]
            he[i] = he[child]
            i = child
        else:
            break
    if size > 0:
        ht[i] = t
        he[i] = e
    return top_t, top_e


# -- kernels -----------------------------------------------------------------


@njit(cache=True, nogil=True, _nrt=False)
def _draw_state(law_kind, law_x, bits, eu, ev, e, p, rng):
    if law_kind == LAW_EXPLICIT:
        return bits[e]
    if law_kind == LAW_CONDITIONED and (eu[e] == law_x or ev[e] == law_x):
        return np.uint8(0)
    return np.uint8(1) if rng.random() < p else np.uint8(0)


@njit(cache=True, nogil=True)
def env_new(nbr, inc, eu, ev, mode, p, mu):
    n_edges = eu.shape[0]
    ints = np.zeros(3, dtype=np.int64)
    ints[I_MODE] = mode
    reals = np.array([p, mu])
    return EnvState(
        nbr, inc, eu, ev,
        np.zeros(n_edges, dtype=np.uint8),
        np.zeros(n_edges, dtype=np.uint8),
        np.full(n_edges, np.inf),
        np.empty(n_edges, dtype=np.float64),
        np.empty(n_edges, dtype=np.int64),
        ints, reals,
    )


@njit(cache=True, nogil=True, _nrt=False)
def env_init(env, law_kind, law_x, bits, start, rng):
    mode = env.ints[I_MODE]
    p, mu = env.reals[R_P], env.reals[R_MU]
    scale = 1.0 / mu
    n_edges = env.eu.shape[0]
    if mode == EAGER or mode == SEEDED:
        for e in range(n_edges):
            env.state[e] = _draw_state(law_kind, law_x, bits, env.eu, env.ev, e, p, rng)
            t = rng.exponential(scale)
            env.nxt[e] = t
            heap_push(env, t, e)
        if mode == SEEDED or law_kind == LAW_EXPLICIT:
            env.info[:] = 1
            env.ints[I_INFO] = n_edges
        else:
            for k in range(env.inc.shape[1]):
                env.info[env.inc[start, k]] = 1
                if law_kind == LAW_CONDITIONED:
                    env.info[env.inc[law_x, k]] = 1
            env.ints[I_INFO] = np.sum(env.info)
    else:
        for k in range(env.inc.shape[1]):
            e = env.inc[start, k]
            env.state[e] = _draw_state(law_kind, law_x, bits, env.eu, env.ev, e, p, rng)
            env.info[e] = 1
            t = rng.exponential(scale)
            env.nxt[e] = t
            heap_push(env, t, e)
        env.ints[I_INFO] = env.inc.shape[1]


@njit(cache=True, nogil=True, _nrt=False)
def env_query(env, e, t):
    if env.ints[I_MODE] != EAGER and env.info[e] == 0:
        raise InvariantViolation("query of an untracked edge in lazy mode")
    if 0.0 <= env.nxt[e] <= t:
        raise InvariantViolation("edge queried after its scheduled refresh")
    return env.state[e]


@njit(cache=True, nogil=True, _nrt=False, inline="always")
def _incident(env, e, walker):
    return env.eu[e] == walker or env.ev[e] == walker


@njit(cache=True, nogil=True, _nrt=False)
def env_refresh_top(env, walker, rng):
    """Consume the earliest scheduled refresh.  Returns ``(t, e, dropped)``."""
    if env.ints[I_HEAP] == 0:
        raise InvariantViolation("no scheduled refresh")
    t, e = heap_pop(env)
    if env.nxt[e] != t:
        raise InvariantViolation("refresh event does not match the edge schedule")
    mode = env.ints[I_MODE]
    p, mu = env.reals[R_P], env.reals[R_MU]
    incident = _incident(env, e, walker)
    if incident or mode == EAGER:
        env.state[e] = np.uint8(1) if rng.random() < p else np.uint8(0)
        nt = t + rng.exponential(1.0 / mu)
        env.nxt[e] = nt
        heap_push(env, nt, e)
        if not incident and env.info[e] == 1:
            env.info[e] = 0
            env.ints[I_INFO] -= 1
        return t, e, False
    if mode == BROKEN_LAZY:
        # mutation: keep the stale record forever (no drop, no resample on return)
        env.nxt[e] = -1.0
        return t, e, False
    env.info[e] = 0
    env.ints[I_INFO] -= 1
    env.nxt[e] = np.inf
    return t, e, True


@njit(cache=True, nogil=True, _nrt=False)
def env_track_arrival(env, v, t, rng):
    mode = env.ints[I_MODE]
    p, mu = env.reals[R_P], env.reals[R_MU]
    added = 0
    for k in range(env.inc.shape[1]):
        e = env.inc[v, k]
        if env.info[e] == 1:
            continue
        env.info[e] = 1
        env.ints[I_INFO] += 1
        added += 1
        if mode != EAGER:
            env.state[e] = np.uint8(1) if rng.random() < p else np.uint8(0)
            nt = t + rng.exponential(1.0 / mu)
            env.nxt[e] = nt
            heap_push(env, nt, e)
    return added


@njit(cache=True, nogil=True, _nrt=False)
def env_incident_covered(env, walker):
    for k in range(env.inc.shape[1]):
        e = env.inc[walker, k]
        if env.info[e] == 0 or not env.nxt[e] < np.inf:
            return False
    return True


# -- Python facade -------------------------------------------------------------


class Environment:
    """One replication's environment.

    Wraps an :class:`EnvState` and exposes the environment operations with
    explicit RNG streams.  The event loop in :mod:`dynperc.sim` calls the
    same kernels directly.
    """

    def __init__(self, torus: Torus, state: EnvState):
        self.torus = torus
        self.state = state

    @classmethod
    def create(cls, torus: Torus, mode: str, p: float, mu: float, law, start: int,
               rng: np.random.Generator, allow_degenerate: bool = False) -> "Environment":
        check_rates(p, mu, allow_degenerate)
        check_mode_law(mode, law, torus, start)
        mode_code = BROKEN_LAZY if mode == "broken-lazy" else MODES[mode]
        st = env_new(torus.neighbors, torus.incident, torus.edge_u, torus.edge_v,
                     mode_code, float(p), float(mu))
        env_init(st, law.kind, getattr(law, "x", -1), _law_bits(law), start, rng)
        return cls(torus, st)

    @property
    def mode(self) -> str:
        return MODE_NAMES[int(self.state.ints[I_MODE])]

    @property
    def p(self) -> float:
        return float(self.state.reals[R_P])

    @property
    def mu(self) -> float:
        return float(self.state.reals[R_MU])

    def __len__(self):
        """Size of the information set."""
        return int(self.state.ints[I_INFO])

    def is_tracked(self, e: int) -> bool:
        return bool(self.state.info[e])

    def tracked_edges(self) -> np.ndarray:
        return np.flatnonzero(self.state.info)

    def records(self) -> dict[int, tuple[int, float]]:
        """Tracked edges as ``{edge: (state, next_refresh)}``."""
        s = self.state
        return {int(e): (int(s.state[e]), float(s.nxt[e])) for e in self.tracked_edges()}

    def query(self, e: int, t: float = -np.inf) -> int:
        return int(env_query(self.state, e, t))

    def next_refresh_event(self) -> tuple[float, int]:
        if self.state.ints[I_HEAP] == 0:
            raise InvariantViolation("no scheduled refresh")
        return float(self.state.heap_t[0]), int(self.state.heap_e[0])

    def refresh(self, e: int, t: float, walker: int, rng: np.random.Generator) -> bool:
        """Process the scheduled refresh of ``e`` at ``t``.  Returns True if dropped."""
        top = self.next_refresh_event()
        if top != (t, e):
            raise InvariantViolation(f"edge {e} is not due at t={t}; next event is {top}")
        _, _, dropped = env_refresh_top(self.state, walker, rng)
        return bool(dropped)

    def track_arrival(self, v: int, t: float, rng: np.random.Generator) -> int:
        """Add the edges at ``v`` to the information set; returns the count added."""
        return int(env_track_arrival(self.state, v, t, rng))

    def snapshot(self) -> np.ndarray:
        """Full edge configuration; only defined when every edge is materialized."""
        if self.mode != "eager":
            raise ConfigError("full snapshots are only available in eager mode", "mode")
        return self.state.state.copy()


def _law_bits(law) -> np.ndarray:
    if isinstance(law, Explicit):
        return law.bits
    return np.zeros(0, dtype=np.uint8)
