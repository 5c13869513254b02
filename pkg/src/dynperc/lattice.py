"""Geometry of the discrete torus Z_n^d.

Vertices are integers in ``[0, n**d)`` under a mixed-radix codec with
coordinate 0 least significant.  Edge ``(base, axis)`` joins ``base`` to
``base + e_axis`` and has canonical index ``base * d + axis``.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import ConfigError


class Torus:
    """The torus Z_n^d with precomputed neighbour and incidence tables."""

    def __init__(self, d: int, n: int):
        if int(d) != d or d < 1:
            raise ConfigError(f"d must be an integer >= 1, got {d!r}", "d")
        if int(n) != n or n < 3:
            raise ConfigError(f"n must be an integer >= 3, got {n!r}", "n")
        self.d = int(d)
        self.n = int(n)
        self.n_vertices = self.n ** self.d
        self.n_edges = self.d * self.n_vertices
        self.degree = 2 * self.d
        self._radix = self.n ** np.arange(self.d, dtype=np.int64)

    def __repr__(self):
        return f"Torus(d={self.d}, n={self.n})"

    def __eq__(self, other):
        return isinstance(other, Torus) and (self.d, self.n) == (other.d, other.n)

    def __hash__(self):
        return hash((self.d, self.n))

    # -- codec -------------------------------------------------------------

    def encode(self, coords) -> int:
        coords = np.asarray(coords, dtype=np.int64).reshape(-1)
        if coords.shape[0] != self.d:
            raise ConfigError(
                f"coordinate vector has length {coords.shape[0]}, expected d={self.d}", "coords"
            )
        return int(np.dot(np.mod(coords, self.n), self._radix))

    def decode(self, v: int) -> tuple[int, ...]:
        self._check_vertex(v)
        return tuple(int(c) for c in (v // self._radix) % self.n)

    def edge_index(self, base: int, axis: int) -> int:
        self._check_vertex(base)
        if not 0 <= axis < self.d:
            raise ConfigError(f"axis {axis} out of range for d={self.d}", "axis")
        return base * self.d + axis

    def edge_of(self, e: int) -> tuple[int, int]:
        """Inverse of :meth:`edge_index`: ``(base, axis)``."""
        if not 0 <= e < self.n_edges:
            raise ConfigError(f"edge {e} out of range", "edge")
        return e // self.d, e % self.d

    def endpoints(self, e: int) -> tuple[int, int]:
        return int(self.edge_u[e]), int(self.edge_v[e])

    def _check_vertex(self, v):
        if not 0 <= v < self.n_vertices:
            raise ConfigError(f"vertex {v} out of range [0, {self.n_vertices})", "vertex")

    # -- tables ------------------------------------------------------------

    @cached_property
    def coords(self) -> np.ndarray:
        """``(V, d)`` array of vertex coordinates."""
        v = np.arange(self.n_vertices, dtype=np.int64)
        return (v[:, None] // self._radix[None, :]) % self.n

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``(V, 2d)`` neighbour table in direction order (axis 0 +, axis 0 -, ...)."""
        c = self.coords
        out = np.empty((self.n_vertices, self.degree), dtype=np.int64)
        for axis in range(self.d):
            for k, step in ((2 * axis, 1), (2 * axis + 1, -1)):
                shifted = c.copy()
                shifted[:, axis] = (shifted[:, axis] + step) % self.n
                out[:, k] = shifted @ self._radix
        return out

    @cached_property
    def incident(self) -> np.ndarray:
        """``(V, 2d)`` table of incident edge indices, aligned with :attr:`neighbors`."""
        v = np.arange(self.n_vertices, dtype=np.int64)
        out = np.empty((self.n_vertices, self.degree), dtype=np.int64)
        for axis in range(self.d):
            out[:, 2 * axis] = v * self.d + axis
            out[:, 2 * axis + 1] = self.neighbors[:, 2 * axis + 1] * self.d + axis
        return out

    @cached_property
    def edge_u(self) -> np.ndarray:
        return np.arange(self.n_edges, dtype=np.int64) // self.d

    @cached_property
    def edge_v(self) -> np.ndarray:
        e = np.arange(self.n_edges, dtype=np.int64)
        return self.neighbors[e // self.d, 2 * (e % self.d)]

    def incident_edges(self, v: int) -> list[tuple[int, int]]:
        """The 2d ``(edge, neighbour)`` pairs at ``v``; entry k is walk direction k."""
        self._check_vertex(v)
        return [(int(e), int(w)) for e, w in zip(self.incident[v], self.neighbors[v])]

    # -- metric ------------------------------------------------------------

    def distance(self, u: int, v: int) -> int:
        self._check_vertex(u)
        self._check_vertex(v)
        delta = np.abs(self.coords[u] - self.coords[v])
        return int(np.minimum(delta, self.n - delta).sum())

    @property
    def max_distance(self) -> int:
        return self.d * (self.n // 2)

    def antipode(self, v: int) -> int:
        return self.encode(np.asarray(self.decode(v)) + self.n // 2)

    def separated_set(self) -> list[int]:
        """Vertices whose coordinates are multiples of ``floor(sqrt(n))``.

        Multiples closer than the spacing to ``n`` are left out so the set
        stays uniformly separated across the wraparound.
        """
        s = int(np.floor(np.sqrt(self.n)))
        axis_vals = [c for c in range(0, self.n, s) if c == 0 or self.n - c >= s]
        grid = np.array(np.meshgrid(*([axis_vals] * self.d), indexing="ij"))
        pts = grid.reshape(self.d, -1).T
        return sorted(int(x) for x in pts @ self._radix)


def torus_distance(torus: Torus, u: int, v: int) -> int:
    return torus.distance(u, v)
