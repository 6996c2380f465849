"""Payoff structure of the sensor-scheduling game.

The defender's joint strategy picks one orientation per sensor, so the
m = d**p rows of the payoff matrix never need to be listed: every entry is
a sum of per-sensor terms,

    A[i, j] = sum_q A^q[k_q(i), j] - r[j],
    A^q[k, j] = V^q[k, j] * log(1 - p_q) + c^q[k],

and all evaluations below work on that factorized form.  The defender
minimizes, the intruder maximizes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path as FsPath
from typing import NamedTuple, Sequence

import numpy as np

DENSE_LIMIT = 262_144
FORMAT_VERSION = 1


class DegeneratePayoffError(ValueError):
    pass


class TooLargeError(ValueError):
    pass


class JointStrategy(NamedTuple):
    orientation_indices: tuple[int, ...]
    flat_index: int


def encode_joint(orientations: Sequence[int], d: int) -> int:
    """Base-d index with sensor 1 as the most significant digit."""
    index = 0
    for k in orientations:
        k = int(k)
        if not 0 <= k < d:
            raise ValueError(f"orientation {k} out of range for d={d}")
        index = index * d + k
    return index


def decode_joint(index: int, p: int, d: int) -> tuple[int, ...]:
    index = int(index)
    if not 0 <= index < d**p:
        raise ValueError(f"joint index {index} out of range for d**p={d**p}")
    digits = []
    for _ in range(p):
        index, k = divmod(index, d)
        digits.append(k)
    return tuple(reversed(digits))


def joint_strategy(i, p: int, d: int) -> JointStrategy:
    if isinstance(i, JointStrategy):
        return i
    if isinstance(i, (int, np.integer)):
        return JointStrategy(decode_joint(i, p, d), int(i))
    ks = tuple(int(k) for k in i)
    if len(ks) != p:
        raise ValueError(f"expected {p} orientations, got {len(ks)}")
    return JointStrategy(ks, encode_joint(ks, d))


def check_simplex(w, size: int | None = None, tol: float = 1e-9, name: str = "strategy") -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or (size is not None and w.shape[0] != size):
        raise ValueError(f"{name}: expected a vector of length {size}, got shape {w.shape}")
    if np.any(w < -tol) or abs(w.sum() - 1.0) > tol:
        raise ValueError(f"{name}: not a probability vector (min={w.min()}, sum={w.sum()})")
    return w


@dataclass(frozen=True, eq=False)
class ProductStrategy:
    """Defender strategy given as independent per-sensor orientation marginals."""

    marginals: np.ndarray

    def __post_init__(self):
        m = np.array(self.marginals, dtype=float)
        if m.ndim != 2:
            raise ValueError("marginals must be a (p, d) array")
        for q, row in enumerate(m):
            check_simplex(row, name=f"marginal {q}")
        m.setflags(write=False)
        object.__setattr__(self, "marginals", m)

    @classmethod
    def uniform(cls, p: int, d: int) -> "ProductStrategy":
        return cls(np.full((p, d), 1.0 / d))

    @classmethod
    def point(cls, orientations: Sequence[int], d: int) -> "ProductStrategy":
        m = np.zeros((len(orientations), d))
        m[np.arange(len(orientations)), list(orientations)] = 1.0
        return cls(m)

    @property
    def p(self) -> int:
        return self.marginals.shape[0]

    @property
    def d(self) -> int:
        return self.marginals.shape[1]

    def joint(self) -> np.ndarray:
        """Dense distribution over all d**p joint strategies."""
        out = np.ones(1)
        for row in self.marginals:
            out = np.kron(out, row)
        return out

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        return tuple(int(rng.choice(self.d, p=row)) for row in self.marginals)


@dataclass(frozen=True, eq=False)
class GameInstance:
    coverage: np.ndarray  # V[q, k, j]
    p_detect: np.ndarray
    orientation_costs: np.ndarray  # c[q, k]
    path_costs: np.ndarray  # r[j]
    p_bounds: np.ndarray  # [q, (min, max)]
    normalization: tuple[float, float] | None = None
    name: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        V = np.array(self.coverage, dtype=np.int64)
        if V.ndim != 3:
            raise ValueError("coverage must have shape (p, d, n)")
        p, d, n = V.shape
        if np.any(V < 0):
            raise ValueError("coverage counts must be nonnegative")
        pd_ = np.array(self.p_detect, dtype=float).reshape(p)
        c = np.array(self.orientation_costs, dtype=float).reshape(p, d)
        r = np.array(self.path_costs, dtype=float).reshape(n)
        b = np.array(self.p_bounds, dtype=float).reshape(p, 2)
        if np.any((pd_ <= 0) | (pd_ >= 1)):
            raise ValueError("detection probabilities must lie in (0, 1)")
        for arr, attr in [(V, "coverage"), (pd_, "p_detect"), (c, "orientation_costs"), (r, "path_costs"), (b, "p_bounds")]:
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)

    @classmethod
    def from_sensors(cls, sensors, paths, tensor, name: str = "") -> "GameInstance":
        return cls(
            coverage=tensor.counts,
            p_detect=[s.p_true for s in sensors],
            orientation_costs=[s.orientation_costs for s in sensors],
            path_costs=[pth.cost for pth in paths],
            p_bounds=[s.p_bounds for s in sensors],
            name=name,
        )

    @property
    def p(self) -> int:
        return self.coverage.shape[0]

    @property
    def d(self) -> int:
        return self.coverage.shape[1]

    @property
    def n(self) -> int:
        return self.coverage.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.coverage.shape

    @property
    def m(self) -> int:
        return self.d**self.p

    @cached_property
    def sub_matrices(self) -> np.ndarray:
        """A^q[k, j] for every sensor, shape (p, d, n)."""
        a = self.coverage * np.log1p(-self.p_detect)[:, None, None] + self.orientation_costs[:, :, None]
        a.setflags(write=False)
        return a

    @cached_property
    def raw_bounds(self) -> tuple[float, float]:
        # min/max over i decompose per sensor for every column j
        A = self.sub_matrices
        lo = A.min(axis=1).sum(axis=0) - self.path_costs
        hi = A.max(axis=1).sum(axis=0) - self.path_costs
        return float(lo.min()), float(hi.max())

    @property
    def payoff_range(self) -> float:
        lo, hi = self.normalization or self.raw_bounds
        return hi - lo

    @property
    def is_normalized(self) -> bool:
        return self.normalization is not None

    def scale(self, values):
        """Map raw payoffs to the instance's scale (identity when unnormalized)."""
        if self.normalization is None:
            return values
        lo, hi = self.normalization
        return (np.asarray(values) - lo) / (hi - lo) if np.ndim(values) else (values - lo) / (hi - lo)

    def unscale(self, values):
        if self.normalization is None:
            return values
        lo, hi = self.normalization
        return np.asarray(values) * (hi - lo) + lo if np.ndim(values) else values * (hi - lo) + lo

    def normalized(self) -> "GameInstance":
        if self.normalization is not None:
            return self
        lo, hi = self.raw_bounds
        if not hi > lo:
            raise DegeneratePayoffError("degenerate payoff range")
        return replace(self, normalization=(lo, hi))

    def raw(self) -> "GameInstance":
        return self if self.normalization is None else replace(self, normalization=None)

    def with_p_detect(self, p_detect) -> "GameInstance":
        """Same game structure under different detection probabilities.

        The normalization is dropped because the payoff range changes.
        """
        return replace(self, p_detect=np.broadcast_to(np.asarray(p_detect, dtype=float), (self.p,)).copy(), normalization=None)

    def dense_fits(self, limit: int = DENSE_LIMIT) -> bool:
        return self.m * self.n <= limit

    def dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        """The m x n payoff matrix on the instance's scale."""
        if not self.dense_fits(limit):
            raise TooLargeError(f"{self.m} x {self.n} payoff matrix exceeds the dense limit {limit}")
        M = np.zeros((1, self.n))
        for Aq in self.sub_matrices:
            M = (M[:, None, :] + Aq[None, :, :]).reshape(-1, self.n)
        return self.scale(M - self.path_costs)

    def joint_costs(self) -> np.ndarray:
        c = np.zeros(1)
        for cq in self.orientation_costs:
            c = (c[:, None] + cq[None, :]).reshape(-1)
        return c

    def joint_coverage(self) -> np.ndarray:
        """V[i, j, q] for every joint strategy; dense, small instances only."""
        if not self.dense_fits():
            raise TooLargeError("joint coverage table too large")
        V = np.zeros((1, self.n, 0), dtype=np.int64)
        for q in range(self.p):
            Vq = self.coverage[q]  # (d, n)
            V = np.concatenate(
                [np.repeat(V, self.d, axis=0), np.tile(Vq, (V.shape[0], 1))[:, :, None]], axis=2
            )
        return V

    def to_dict(self) -> dict:
        return {
            "format": "sensorsched-instance",
            "version": FORMAT_VERSION,
            "name": self.name,
            "dims": {"p": self.p, "d": self.d, "n": self.n},
            "coverage": self.coverage.tolist(),
            "p_detect": self.p_detect.tolist(),
            "p_bounds": self.p_bounds.tolist(),
            "orientation_costs": self.orientation_costs.tolist(),
            "path_costs": self.path_costs.tolist(),
            "sub_matrices": self.sub_matrices.tolist(),
            "normalization": list(self.normalization) if self.normalization else None,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GameInstance":
        if data.get("format") != "sensorsched-instance":
            raise ValueError("not a sensorsched instance file")
        inst = cls(
            coverage=data["coverage"],
            p_detect=data["p_detect"],
            orientation_costs=data["orientation_costs"],
            path_costs=data["path_costs"],
            p_bounds=data["p_bounds"],
            normalization=tuple(data["normalization"]) if data.get("normalization") else None,
            name=data.get("name", ""),
            metadata=data.get("metadata", {}),
        )
        if "sub_matrices" in data and not np.array_equal(np.asarray(data["sub_matrices"]), inst.sub_matrices):
            raise ValueError("stored sub-game matrices disagree with coverage and detection parameters")
        return inst


def save_instance(instance: GameInstance, path) -> None:
    FsPath(path).write_text(json.dumps(instance.to_dict(), indent=1) + "\n")


def load_instance(path) -> GameInstance:
    return GameInstance.from_dict(json.loads(FsPath(path).read_text()))


def p_miss(instance: GameInstance, i, j: int) -> float:
    ks = joint_strategy(i, instance.p, instance.d).orientation_indices
    log_miss = sum(instance.coverage[q, k, j] * math.log1p(-instance.p_detect[q]) for q, k in enumerate(ks))
    return math.exp(log_miss)


def payoff_entry(instance: GameInstance, i, j: int) -> float:
    ks = joint_strategy(i, instance.p, instance.d).orientation_indices
    A = instance.sub_matrices
    value = sum(A[q, k, j] for q, k in enumerate(ks)) - instance.path_costs[j]
    return float(instance.scale(value))


def zero_sum_transform(A_entry: float, B_entry: float, c_i: float, r_j: float) -> tuple[float, float]:
    """Subtract the opponent's cost from each player's payoff.

    With ``A = log p_miss + c`` and ``B = -log p_miss + r`` the results are
    exact negatives; B' is returned as ``-A'`` after checking the inputs
    share one log p_miss up to rounding.
    """
    a = A_entry - r_j
    b = B_entry - c_i
    scale = max(abs(A_entry), abs(B_entry), abs(c_i), abs(r_j), 1.0)
    if abs(a + b) > 16 * np.finfo(float).eps * scale:
        raise ValueError("A and B do not come from a common log p_miss")
    return a, -a


def normalize(instance: GameInstance) -> GameInstance:
    return instance.normalized()


def column_payoffs(instance: GameInstance, x) -> np.ndarray:
    """x^T A e_j for every path j.

    `x` is a ProductStrategy (O(p d n)) or a dense vector over joint strategies.
    """
    if isinstance(x, ProductStrategy):
        if x.marginals.shape != (instance.p, instance.d):
            raise ValueError("product strategy shape does not match the instance")
        raw = np.einsum("qk,qkj->j", x.marginals, instance.sub_matrices) - instance.path_costs
        return instance.scale(raw)
    x = check_simplex(x, instance.m, name="x")
    return x @ instance.dense()


def expected_column_payoff(instance: GameInstance, x, j: int) -> float:
    return float(column_payoffs(instance, x)[j])


def expected_row_payoff_min(instance: GameInstance, y) -> tuple[float, JointStrategy]:
    """Exact min_i e_i^T A y and a minimizer, lowest orientation on ties."""
    y = check_simplex(y, instance.n, name="y")
    per_sensor = instance.sub_matrices @ y  # (p, d)
    ks = per_sensor.argmin(axis=1)
    raw = per_sensor.min(axis=1).sum() - instance.path_costs @ y
    ks = tuple(int(k) for k in ks)
    return float(instance.scale(raw)), JointStrategy(ks, encode_joint(ks, instance.d))


def row_payoffs(instance: GameInstance, y) -> np.ndarray:
    """Dense A y over all joint strategies (small instances)."""
    y = check_simplex(y, instance.n, name="y")
    return instance.dense() @ y


def expected_payoff(instance: GameInstance, x, y) -> float:
    return float(column_payoffs(instance, x) @ np.asarray(y, dtype=float))
