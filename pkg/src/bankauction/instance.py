"""Problem instances: horizon, buyers, and discrete per-period value distributions.

Periods are indexed 1..T in every public API; buyers are indexed 0..k-1.
A value profile for one period is a plain tuple of k floats, one per buyer,
each drawn from that buyer's support for the period.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

PROB_SUM_TOL = 1e-12


class InputError(ValueError):
    """Malformed instance data, bad period index, or off-support value."""


@dataclass(frozen=True)
class DiscreteDistribution:
    """A finite value distribution: strictly increasing support, positive probs.

    The CDF convention is inclusive, F(v_j) = P(value <= v_j), so the top
    support point has 1 - F = 0.
    """

    support: tuple
    probs: tuple

    def __post_init__(self):
        support = tuple(float(v) for v in self.support)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if len(support) == 0 or len(support) != len(probs):
            raise InputError("support and probs must be nonempty and equal length")
        if support[0] < 0:
            raise InputError("support values must be nonnegative")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise InputError("support must be strictly increasing")
        if any(p <= 0 for p in probs):
            raise InputError("all probabilities must be positive")
        if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
            raise InputError(f"probabilities sum to {sum(probs)!r}, not 1")

    @property
    def n(self):
        return len(self.support)

    def index_of(self, v) -> int:
        for j, w in enumerate(self.support):
            if w == v:
                return j
        raise InputError(f"value {v!r} not in support {self.support}")

    def prob_of(self, v) -> float:
        return self.probs[self.index_of(v)]

    def cdf(self, j) -> float:
        """Inclusive CDF at support index j."""
        return sum(self.probs[: j + 1])

    def varthetas(self) -> np.ndarray:
        """Gap-weighted inverse hazard rates per support index; zero at the top.

        vartheta_j = (1 - F(v_j)) / f(v_j) * (v_{j+1} - v_j). This is the
        information-rent kernel: E[u'] = E[vartheta * x] holds exactly for
        every allocation under the discrete envelope payment rule.
        """
        n = self.n
        out = np.zeros(n)
        tail = 1.0
        for j in range(n - 1):
            tail -= self.probs[j]
            out[j] = tail / self.probs[j] * (self.support[j + 1] - self.support[j])
        return out

    def to_dict(self):
        return {"support": list(self.support), "probs": list(self.probs)}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(tuple(d["support"]), tuple(d["probs"]))
        except (KeyError, TypeError) as e:
            raise InputError(f"bad distribution object: {e}") from e


@dataclass(frozen=True)
class Instance:
    """T periods, k buyers, one DiscreteDistribution per (period, buyer)."""

    T: int
    k: int
    dists: tuple  # tuple of T rows, each a tuple of k DiscreteDistribution

    def __post_init__(self):
        if self.T < 1 or self.k < 1:
            raise InputError("T and k must be >= 1")
        dists = tuple(tuple(row) for row in self.dists)
        object.__setattr__(self, "dists", dists)
        if len(dists) != self.T or any(len(row) != self.k for row in dists):
            raise InputError("dists must be a T x k grid")
        for row in dists:
            for d in row:
                if not isinstance(d, DiscreteDistribution):
                    raise InputError("dists entries must be DiscreteDistribution")

    def _check_period(self, t):
        if not 1 <= t <= self.T:
            raise InputError(f"period {t} outside 1..{self.T}")

    def dist(self, t, i) -> DiscreteDistribution:
        self._check_period(t)
        if not 0 <= i < self.k:
            raise InputError(f"buyer {i} outside 0..{self.k - 1}")
        return self.dists[t - 1][i]

    def supports(self, t):
        self._check_period(t)
        return [d.support for d in self.dists[t - 1]]

    def profiles(self, t):
        """All joint value profiles of period t, in buyer-major product order."""
        return list(itertools.product(*self.supports(t)))

    def joint_density(self, t, profile) -> float:
        self._check_period(t)
        if len(profile) != self.k:
            raise InputError(f"profile length {len(profile)} != k={self.k}")
        out = 1.0
        for i, v in enumerate(profile):
            out *= self.dists[t - 1][i].prob_of(v)
        return out

    def opponent_profiles(self, t, i):
        """All value profiles of buyers other than i, in buyer-major order."""
        sup = self.supports(t)
        return list(itertools.product(*(sup[j] for j in range(self.k) if j != i)))

    def opponent_density(self, t, i, v_minus) -> float:
        self._check_period(t)
        others = [j for j in range(self.k) if j != i]
        if len(v_minus) != len(others):
            raise InputError("opponent profile has wrong length")
        out = 1.0
        for j, v in zip(others, v_minus):
            out *= self.dists[t - 1][j].prob_of(v)
        return out

    def vartheta(self, t, i, v) -> float:
        d = self.dist(t, i)
        return float(d.varthetas()[d.index_of(v)])

    def max_value(self, t, i) -> float:
        return self.dist(t, i).support[-1]

    def balance_box(self) -> np.ndarray:
        """Per-buyer upper bounds on reachable balances: sum of per-period maxima."""
        return np.array([sum(self.dists[t][i].support[-1] for t in range(self.T))
                         for i in range(self.k)])

    def n_histories(self) -> int:
        """Total count of report histories over all periods (oracle LP size)."""
        total = 0
        per_period = 1
        for t in range(1, self.T + 1):
            per_period *= len(self.profiles(t))
            total += per_period
        return total

    def n_paths(self) -> int:
        out = 1
        for t in range(1, self.T + 1):
            out *= len(self.profiles(t))
        return out

    def to_dict(self):
        return {"T": self.T, "k": self.k,
                "dists": [[d.to_dict() for d in row] for row in self.dists]}

    @classmethod
    def from_dict(cls, d):
        try:
            T, k = int(d["T"]), int(d["k"])
            rows = d["dists"]
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"bad instance object: {e}") from e
        if not isinstance(rows, list):
            raise InputError("dists must be a list of per-period lists")
        dists = tuple(tuple(DiscreteDistribution.from_dict(x) for x in row) for row in rows)
        return cls(T, k, dists)

    def dump(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}") from e
        return cls.from_dict(data)


def joint_density(instance, t, profile):
    return instance.joint_density(t, profile)


def opponent_density(instance, t, i, v_minus):
    return instance.opponent_density(t, i, v_minus)


def discrete_vartheta(instance, t, i, v):
    return instance.vartheta(t, i, v)


_VALUE_GRID = [0.5 * m for m in range(1, 9)]  # 0.5 .. 4.0


def generate_instance(seed, *, force_T=None, force_k=None) -> Instance:
    """Small random instance from a seeded generator (desk-scale family).

    Horizons T <= 2, k <= 2 buyers, supports of 2..3 points on a half-integer
    grid, probabilities from small integer weights (bounded away from zero).
    """
    rng = np.random.default_rng(seed)
    T = force_T if force_T is not None else (1 if rng.random() < 0.15 else 2)
    k = force_k if force_k is not None else int(rng.integers(1, 3))
    rows = []
    for _ in range(T):
        row = []
        for _ in range(k):
            m = int(rng.integers(2, 4))
            support = tuple(sorted(rng.choice(_VALUE_GRID, size=m, replace=False)))
            weights = rng.integers(1, 7, size=m).astype(float)
            probs = tuple(weights / weights.sum())
            row.append(DiscreteDistribution(support, probs))
        rows.append(tuple(row))
    return Instance(T, k, tuple(rows))
