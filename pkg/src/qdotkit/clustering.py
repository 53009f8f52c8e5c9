"""Partition qubits into readout-noise clusters.

The objective rewards strong correlations inside clusters and penalizes
cluster size::

    F(P) = sum_C S_C - c_avg * sum_C alpha |C|^2,   S_C = sum_{k != l in C} c_{k->l}

with ``F = -inf`` as soon as a cluster exceeds ``c_max``. It is maximized by
greedy pairing followed by randomized local search over moves and swaps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ._parallel import map_ordered
from .circuits import circuit_rng
from .povm import ValidationError

log = logging.getLogger(__name__)

CLUSTER_STREAM = 2
_IMPROVE_TOL = 1e-12


def _values(corr) -> np.ndarray:
    v = np.asarray(getattr(corr, "values", corr), dtype=float)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValidationError("correlation values must be a square matrix")
    return v


@dataclass(frozen=True)
class Partition:
    num_qubits: int
    clusters: tuple

    def __post_init__(self):
        clusters = tuple(sorted(tuple(sorted(int(q) for q in c)) for c in self.clusters))
        flat = [q for c in clusters for q in c]
        if any(len(c) == 0 for c in clusters):
            raise ValidationError("empty cluster in partition")
        if sorted(flat) != list(range(self.num_qubits)):
            raise ValidationError("partition clusters must be disjoint and cover all qubits")
        object.__setattr__(self, "clusters", clusters)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(n, tuple((i,) for i in range(n)))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        groups = {}
        for q, lab in enumerate(labels):
            groups.setdefault(int(lab), []).append(q)
        return cls(len(labels), tuple(tuple(g) for g in groups.values()))

    def labels(self) -> np.ndarray:
        out = np.empty(self.num_qubits, dtype=np.int64)
        for i, c in enumerate(self.clusters):
            out[list(c)] = i
        return out

    def relabel(self, perm: Sequence[int]) -> "Partition":
        """Image of this partition under qubit map ``q -> perm[q]``."""
        return Partition(self.num_qubits, tuple(tuple(perm[q] for q in c) for c in self.clusters))

    @property
    def max_size(self) -> int:
        return max(len(c) for c in self.clusters)

    def size_penalty(self) -> int:
        return sum(len(c) ** 2 for c in self.clusters)

    def to_dict(self) -> dict:
        return {"num_qubits": self.num_qubits, "clusters": [list(c) for c in self.clusters]}

    @classmethod
    def from_dict(cls, data: dict) -> "Partition":
        return cls(int(data["num_qubits"]), tuple(tuple(c) for c in data["clusters"]))


@dataclass(frozen=True)
class ClusteringConfig:
    c_max: int
    alpha: float = 0.0
    n_runs: int = 10
    seed: int = 0
    randomized: bool = False

    def __post_init__(self):
        if self.c_max < 1:
            raise ValidationError("c_max must be >= 1")
        if self.alpha < 0:
            raise ValidationError("alpha must be >= 0")
        if self.n_runs < 1:
            raise ValidationError("n_runs must be >= 1")


def c_avg(corr, c_max: int) -> float:
    """Mean of the ``N (c_max - 1)`` largest off-diagonal coefficients.

    For ``c_max = 1`` the ``N`` largest are used instead, so the scale stays
    meaningful.
    """
    v = _values(corr)
    n = v.shape[0]
    if n < 2:
        raise ValidationError("need at least two qubits")
    off = np.sort(v[~np.eye(n, dtype=bool)])[::-1]
    n_large = n * (c_max - 1) if c_max > 1 else n
    return float(off[: min(n_large, off.size)].mean())


def objective(partition: Partition, corr, config: ClusteringConfig, scale: float = None) -> float:
    v = _values(corr)
    if partition.max_size > config.c_max:
        return -math.inf
    if scale is None:
        scale = c_avg(v, config.c_max) if config.alpha else 0.0
    inside = sum(v[np.ix_(c, c)].sum() - np.trace(v[np.ix_(c, c)]) for c in partition.clusters)
    return float(inside - scale * config.alpha * partition.size_penalty())


class _Search:
    """Mutable state for one local-search run; deltas are computed incrementally."""

    def __init__(self, w: np.ndarray, labels: np.ndarray, c_max: int, penalty: float):
        self.w = w
        self.labels = labels.copy()
        self.c_max = c_max
        self.penalty = penalty
        self.sizes = np.bincount(self.labels, minlength=len(labels))

    def _link(self, q: int, lab: int, exclude: int = -1) -> float:
        mask = self.labels == lab
        mask[q] = False
        if exclude >= 0:
            mask[exclude] = False
        return float(self.w[q, mask].sum())

    def move_delta(self, q: int, dest: int) -> float:
        src = self.labels[q]
        a, b = self.sizes[src], self.sizes[dest]
        if b + 1 > self.c_max:
            return -math.inf
        gain = self._link(q, dest) - self._link(q, src)
        size_cost = (a - 1) ** 2 + (b + 1) ** 2 - a**2 - b**2
        return gain - self.penalty * size_cost

    def swap_delta(self, i: int, j: int) -> float:
        a, b = self.labels[i], self.labels[j]
        return (self._link(j, a, exclude=i) - self._link(i, a)
                + self._link(i, b, exclude=j) - self._link(j, b))

    def move(self, q: int, dest: int):
        self.sizes[self.labels[q]] -= 1
        self.sizes[dest] += 1
        self.labels[q] = dest

    def swap(self, i: int, j: int):
        self.labels[i], self.labels[j] = self.labels[j], self.labels[i]


def initial_pairing(corr, config: ClusteringConfig) -> Partition:
    """Greedy pairs in decreasing ``c_ij = c_{i->j} + c_{j->i}``.

    A pair is formed only when both qubits are still single and pairing
    strictly increases the objective.
    """
    v = _values(corr)
    n = v.shape[0]
    w = v + v.T
    scale = c_avg(v, config.c_max) if config.alpha else 0.0
    search = _Search(w, np.arange(n), config.c_max, scale * config.alpha)
    iu, ju = np.triu_indices(n, 1)
    order = np.lexsort((ju, iu, -w[iu, ju]))
    paired = np.zeros(n, dtype=bool)
    for idx in order:
        i, j = int(iu[idx]), int(ju[idx])
        if paired[i] or paired[j]:
            continue
        if search.move_delta(j, search.labels[i]) > _IMPROVE_TOL:
            search.move(j, search.labels[i])
            paired[i] = paired[j] = True
    return Partition.from_labels(search.labels)


def _local_search(w, start: Partition, config: ClusteringConfig, penalty: float, rng) -> Partition:
    n = start.num_qubits
    search = _Search(w, start.labels(), config.c_max, penalty)
    iu, ju = np.triu_indices(n, 1)
    while True:
        updated = False
        for idx in rng.permutation(len(iu)):
            i, j = int(iu[idx]), int(ju[idx])
            li, lj = search.labels[i], search.labels[j]
            if li == lj:
                continue
            options = [
                (search.move_delta(i, lj), "move", i, lj),
                (search.move_delta(j, li), "move", j, li),
                (search.swap_delta(i, j), "swap", i, j),
            ]
            good = [o for o in options if o[0] > _IMPROVE_TOL]
            if not good:
                continue
            if config.randomized:
                pick = good[int(rng.integers(len(good)))]
            else:
                pick = max(good, key=lambda o: o[0])
            _, kind, a, b = pick
            if kind == "move":
                search.move(a, b)
            else:
                search.swap(a, b)
            updated = True
        if not updated:
            return Partition.from_labels(search.labels)


def cluster_qubits(corr, config: ClusteringConfig, threads=None) -> Partition:
    """Best partition over ``config.n_runs`` randomized local-search restarts.

    Ties between runs go to the lexicographically smallest partition, so the
    result depends only on the inputs and the seed.
    """
    v = _values(corr)
    n = v.shape[0]
    if n == 1:
        return Partition.singletons(1)
    w = v + v.T
    scale = c_avg(v, config.c_max) if config.alpha else 0.0
    penalty = scale * config.alpha
    start = initial_pairing(v, config)

    def run(r):
        return _local_search(w, start, config, penalty, circuit_rng(config.seed, r, CLUSTER_STREAM))

    results = map_ordered(run, range(config.n_runs), threads)
    scored = [(-objective(p, v, config, scale), p.clusters, p) for p in results]
    return min(scored, key=lambda t: (t[0], t[1]))[2]


def select_alpha_by_benchmark(corr, alphas: Sequence[float], score_fn: Callable[[Partition], float],
                              config: ClusteringConfig, threads=None):
    """Pick the penalty weight whose clustering scores best under ``score_fn``.

    ``score_fn(partition)`` should run the reconstruction and benchmark and
    return the median mitigation error (lower is better). Failing alphas are
    skipped. Ties go to the partition with the smaller ``sum |C|^2``, then to
    the smaller alpha. Returns ``(alpha, partition)``.
    """
    if not alphas:
        raise ValidationError("no alpha values given")
    cache = {}
    candidates = []
    for a in alphas:
        p = cluster_qubits(corr, replace(config, alpha=float(a)), threads)
        if p.clusters not in cache:
            try:
                cache[p.clusters] = float(score_fn(p))
            except Exception as exc:  # noqa: BLE001 - each alpha is allowed to fail independently
                log.warning("alpha=%s failed: %s", a, exc)
                cache[p.clusters] = None
        score = cache[p.clusters]
        log.debug("alpha=%s clusters=%s score=%s", a, p.clusters, score)
        if score is not None:
            candidates.append((score, p.size_penalty(), float(a), p))
    if not candidates:
        raise ValidationError("benchmark failed for every alpha")
    best = min(candidates, key=lambda t: t[:3])
    return best[2], best[3]
