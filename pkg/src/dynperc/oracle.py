"""Exact expectations and transient laws for the joint chain on tiny cycles.

Supported instances are d=1, 3 <= n <= 5.  Edge k joins vertices k and
k+1 (mod n), matching the lattice codec.  States of the hitting chain are
``x * 2**n + eta``; the cover chain appends a visited-set bitmask,
``(x * 2**n + eta) * 2**n + V``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve
from scipy.stats import poisson

from .environment import ConditionedAt, Explicit, Stationary
from .errors import ConfigError, UnsupportedInstance

TAIL = 1e-12


def _check_instance(n, p, mu, d=1):
    if d != 1 or int(n) != n or not 3 <= n <= 5:
        raise UnsupportedInstance(f"exact chain supports d=1, 3<=n<=5 (got d={d}, n={n})")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must lie in [0, 1], got {p}", "p")
    if not 0.0 < mu <= 1.0:
        raise ConfigError(f"mu must lie in (0, 1], got {mu}", "mu")


@dataclass
class OracleResult:
    instance: dict
    method: str
    value: float
    residual: float
    states: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class ExactChain:
    """Sparse generator of (X, eta), optionally augmented with the visited set."""

    def __init__(self, n: int, p: float, mu: float, cover: bool = False):
        _check_instance(n, p, mu)
        self.n, self.p, self.mu, self.cover = int(n), float(p), float(mu), cover
        self.n_env = 1 << self.n
        self.n_states = self.n * self.n_env * (self.n_env if cover else 1)
        self.Q = self._build()

    # -- indexing
    def index(self, x, eta, visited=None):
        s = x * self.n_env + eta
        if self.cover:
            return s * self.n_env + visited
        return s

    def unpack(self, s):
        if self.cover:
            s, visited = divmod(s, self.n_env)
            x, eta = divmod(s, self.n_env)
            return x, eta, visited
        x, eta = divmod(s, self.n_env)
        return x, eta, None

    def rates(self):
        """List of ``(from, to, rate)`` with null refreshes omitted."""
        n, out = self.n, []
        up, down = self.mu * self.p, self.mu * (1.0 - self.p)
        vs = range(self.n_env) if self.cover else [None]
        for x in range(n):
            for eta in range(self.n_env):
                for V in vs:
                    s = self.index(x, eta, V)
                    for e in range(n):
                        if eta >> e & 1:
                            r = down
                        else:
                            r = up
                        if r > 0:
                            out.append((s, self.index(x, eta ^ (1 << e), V), r))
                    for e, y in ((x, (x + 1) % n), ((x - 1) % n, (x - 1) % n)):
                        if eta >> e & 1:
                            W = None if V is None else V | (1 << y)
                            out.append((s, self.index(y, eta, W), 0.5))
        return out

    def _build(self):
        r = self.rates()
        rows = np.array([a for a, _, _ in r], dtype=np.int64)
        cols = np.array([b for _, b, _ in r], dtype=np.int64)
        vals = np.array([c for _, _, c in r])
        off = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_states,) * 2).tocsr()
        out = np.asarray(off.sum(axis=1)).ravel()
        return (off - sp.diags(out)).tocsr()

    # -- laws
    def env_law(self, law) -> np.ndarray:
        """Probability vector over eta for an initial environment law."""
        n, p = self.n, self.p
        etas = np.arange(self.n_env)
        bits = (etas[:, None] >> np.arange(n)[None, :]) & 1
        if isinstance(law, Stationary):
            return np.prod(np.where(bits == 1, p, 1.0 - p), axis=1)
        if isinstance(law, ConditionedAt):
            if not 0 <= law.x < n:
                raise ConfigError(f"conditioning vertex {law.x} out of range", "law")
            w = np.prod(np.where(bits == 1, p, 1.0 - p), axis=1)
            closed = ((bits[:, law.x] == 0) & (bits[:, (law.x - 1) % n] == 0))
            w = np.where(closed, w, 0.0)
            return w / w.sum()
        if isinstance(law, Explicit):
            if law.bits.size != n:
                raise ConfigError(f"explicit law needs {n} edge bits", "law")
            eta = int(sum(int(b) << k for k, b in enumerate(law.bits)))
            out = np.zeros(self.n_env)
            out[eta] = 1.0
            return out
        raise ConfigError(f"unsupported initial law {law!r}", "law")

    def stationary(self) -> np.ndarray:
        """u x pi_p on the (X, eta) chain."""
        if self.cover:
            raise ValueError("the cover chain is absorbing towards full V")
        return np.tile(self.env_law(Stationary()), self.n) / self.n

    def initial(self, x, law) -> np.ndarray:
        if not 0 <= x < self.n:
            raise ConfigError(f"start vertex {x} out of range", "x")
        pi = np.zeros(self.n_states)
        w = self.env_law(law)
        for eta in np.flatnonzero(w):
            pi[self.index(x, int(eta), 1 << x if self.cover else None)] = w[eta]
        return pi

    # -- solves
    def absorption_times(self, absorbing: np.ndarray):
        """Expected time to reach ``absorbing`` from every state, and the residual."""
        trans = np.flatnonzero(~absorbing)
        h = np.zeros(self.n_states)
        if trans.size == 0:
            return h, 0.0
        A = self.Q[trans][:, trans].tocsc()
        rhs = -np.ones(trans.size)
        sol = spsolve(A, rhs)
        h[trans] = sol
        residual = float(np.max(np.abs(A @ sol - rhs)))
        return h, residual


def _instance(kind, n, p, mu, **kw):
    out = {"kind": kind, "d": 1, "n": n, "p": p, "mu": mu}
    for k, v in kw.items():
        out[k] = _law_str(v) if k == "init" else v
    return out


def _law_str(law):
    if isinstance(law, Stationary):
        return "stationary"
    if isinstance(law, ConditionedAt):
        return f"conditioned:{law.x}"
    if isinstance(law, Explicit):
        return f"explicit:{law.to_hex()}"
    return repr(law)


def hitting_vector(chain: ExactChain, y: int):
    _check_target(chain, y)
    x_of = np.arange(chain.n_states) // chain.n_env
    return chain.absorption_times(x_of == y)


def _check_target(chain, y):
    if not 0 <= y < chain.n:
        raise ConfigError(f"target {y} out of range", "y")


def exact_hitting(n, p, mu, x, y, init=None, d=1, full=False):
    """E[sigma_y] from walker at x with environment drawn from ``init``."""
    _check_instance(n, p, mu, d)
    init = Stationary() if init is None else init
    chain = ExactChain(n, p, mu)
    h, res = hitting_vector(chain, y)
    value = float(chain.initial(x, init) @ h)
    out = OracleResult(_instance("hit", n, p, mu, x=x, y=y, init=init),
                       "sparse-direct", value, res, chain.n_states)
    return out if full else out.value


def exact_cover(n, p, mu, x, init=None, d=1, full=False):
    """E[tau_cov] from walker at x with environment drawn from ``init``."""
    _check_instance(n, p, mu, d)
    init = Stationary() if init is None else init
    chain = ExactChain(n, p, mu, cover=True)
    V = np.arange(chain.n_states) % chain.n_env
    h, res = chain.absorption_times(V == chain.n_env - 1)
    value = float(chain.initial(x, init) @ h)
    out = OracleResult(_instance("cover", n, p, mu, x=x, init=init),
                       "sparse-direct", value, res, chain.n_states)
    return out if full else out.value


def transient_laws(chain: ExactChain, pi0: np.ndarray, times) -> list[np.ndarray]:
    """Distribution at each time by uniformization, Poisson tail below 1e-12."""
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise ConfigError("times must be nonnegative", "times")
    Q = chain.Q
    lam = float(np.max(-Q.diagonal()))
    if lam == 0:
        return [pi0.copy() for _ in times]
    P = (sp.identity(chain.n_states, format="csr") + Q / lam).T.tocsr()
    kmax = {t: int(poisson.isf(TAIL, lam * t)) + 1 if t > 0 else 0 for t in times}
    top = max(kmax.values())
    out = {t: np.zeros_like(pi0) for t in times}
    v = pi0.copy()
    for k in range(top + 1):
        for t in times:
            if k <= kmax[t]:
                out[t] += (poisson.pmf(k, lam * t) if t > 0 else 1.0) * v
        v = P @ v
    return [out[t] for t in times]


def exact_tv_curve(n, p, mu, x, init, times, d=1) -> list[float]:
    """TV distance between the law of (X_t, eta_t) and u x pi_p at each time."""
    _check_instance(n, p, mu, d)
    chain = ExactChain(n, p, mu)
    pi = chain.stationary()
    laws = transient_laws(chain, chain.initial(x, init), times)
    return [0.5 * float(np.abs(law - pi).sum()) for law in laws]


def walker_marginal(law: np.ndarray, chain: ExactChain) -> np.ndarray:
    """Law of X from a law on the (X, eta) chain."""
    return law.reshape(chain.n, chain.n_env).sum(axis=1)
