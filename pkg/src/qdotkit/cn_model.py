"""Clusters-and-neighbors model reconstruction, marginal noise and mitigation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from ._parallel import map_ordered
from .circuits import DDOT
from .clustering import Partition
from .marginals import CoverageError, _accumulate
from .povm import StochasticMatrix, ValidationError
from .simulate import Cluster, CnModel, ExperimentRecords, index_to_bits

WITHIN_CLUSTER = "within_cluster"
CROSS_CLUSTER = "cross_cluster_product"
NEIGHBOR_AVERAGED = "neighborhood_averaged"
MAX_COND = 1e6


def reconstruct_cn(records: ExperimentRecords, partition: Partition,
                   neighborhoods: Optional[Dict[tuple, Sequence[int]]] = None,
                   min_count: int = 10, threads=None) -> CnModel:
    """Fit one conditional noise matrix per (cluster, neighborhood setting).

    Each column ``y_C`` of ``Lambda^{y_N}`` is the pooled outcome frequency on
    the cluster over circuits whose inputs on ``C`` and ``N`` match. Every
    such input combination must appear in at least ``min_count`` circuits.
    """
    if records.protocol != DDOT:
        raise ValidationError("CN reconstruction needs DDOT records")
    if partition.num_qubits != records.num_qubits:
        raise ValidationError("partition and records disagree on the number of qubits")
    neighborhoods = {tuple(k): tuple(sorted(v)) for k, v in (neighborhoods or {}).items()}
    unknown = set(neighborhoods) - set(partition.clusters)
    if unknown:
        raise ValidationError(f"neighborhoods given for unknown clusters {sorted(unknown)}")
    w = records.arrays[3].astype(float)

    def fit(cluster):
        nb = neighborhoods.get(cluster, ())
        c, m = len(cluster), len(nb)
        entry = _accumulate(records, tuple(cluster) + tuple(nb), w)
        counts = entry.counts.reshape(2**c, 2**m, 2**c, 2**m).sum(axis=1)  # x_C, y_C, y_N
        h = entry.h.reshape(2**c, 2**m)
        missing = [(cluster, index_to_bits(yn, m), index_to_bits(yc, c))
                   for yc in range(2**c) for yn in range(2**m) if h[yc, yn] < min_count]
        if missing:
            return missing
        noise = {}
        for yn in range(2**m):
            block = counts[:, :, yn]
            noise[index_to_bits(yn, m)] = StochasticMatrix(block / block.sum(axis=0, keepdims=True))
        return Cluster(cluster, nb, noise)

    fitted = map_ordered(fit, partition.clusters, threads)
    missing = [t for f in fitted if isinstance(f, list) for t in f]
    if missing:
        shown = ", ".join(f"{c}|yN={yn!r},yC={yc!r}" for c, yn, yc in missing[:20])
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        raise CoverageError(f"{len(missing)} (cluster, y_N, y_C) cells below {min_count} circuits: {shown}{more}")
    return CnModel(records.num_qubits, tuple(fitted))


def reconstruct_tpn(records: ExperimentRecords, min_count: int = 10, threads=None) -> CnModel:
    """Tensor-product model: every qubit its own cluster, no neighbors."""
    return reconstruct_cn(records, Partition.singletons(records.num_qubits), min_count=min_count, threads=threads)


def suggest_neighborhoods(corr, partition: Partition, threshold: float = 0.05, n_max: int = 2) -> Dict[tuple, tuple]:
    """Up to ``n_max`` outside qubits per cluster with the strongest influence on it.

    A qubit ``j`` qualifies when ``max_{i in C} c_{j->i}`` exceeds ``threshold``.
    """
    if not 0 < threshold < 1:
        raise ValidationError("threshold must lie in (0, 1)")
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    v = np.asarray(getattr(corr, "values", corr), dtype=float)
    out = {}
    for c in partition.clusters:
        inside = set(c)
        scores = [(float(v[j, list(c)].max()), j) for j in range(partition.num_qubits) if j not in inside]
        picked = sorted((s for s in scores if s[0] > threshold), key=lambda t: (-t[0], t[1]))[:n_max]
        out[c] = tuple(sorted(j for _, j in picked))
    return out


@dataclass(frozen=True, eq=False)
class MarginalNoiseMatrix:
    subset: tuple
    matrix: StochasticMatrix
    provenance: str

    @property
    def entries(self) -> np.ndarray:
        return self.matrix.entries


def _cluster_factor(cluster: Cluster, subset: tuple, fixed: Optional[dict] = None):
    """Noise of one cluster reduced to the qubits of ``subset``.

    Returns ``(tensor, out_qubits, in_qubits, averaged)`` where ``tensor`` has
    axes ``(x_out..., y_in...)``. Inputs outside ``subset`` are fixed from
    ``fixed`` when given there, otherwise averaged uniformly; outputs outside
    ``subset`` are summed out.
    """
    fixed = fixed or {}
    c, nb = cluster.qubits, cluster.neighborhood
    t = cluster.stack.reshape((2,) * len(nb) + (2,) * len(c) + (2,) * len(c))
    # axis labels: ('n', q) neighbor inputs, ('x', q) outputs, ('y', q) inputs
    axes = [("y", q) for q in nb] + [("x", q) for q in c] + [("y", q) for q in c]
    averaged = False
    for pos in reversed(range(len(axes))):
        kind, q = axes[pos]
        if q in subset:
            continue
        if kind == "x":
            t = t.sum(axis=pos)
        elif q in fixed:
            t = np.take(t, fixed[q], axis=pos)
        else:
            t = t.mean(axis=pos)
            averaged = averaged or q in nb
        del axes[pos]
    # merge duplicate input labels cannot happen: neighbors are disjoint from the cluster
    outs = [q for k, q in axes if k == "x"]
    ins = [q for k, q in axes if k == "y"]
    order = [axes.index(("x", q)) for q in outs] + [axes.index(("y", q)) for q in ins]
    return np.transpose(t, order), outs, ins, averaged


def _assemble(model: CnModel, subset: tuple, fixed: Optional[dict] = None):
    s = len(subset)
    pos = {q: i for i, q in enumerate(subset)}
    touched = sorted({model.cluster_of[q] for q in subset})
    lam = np.ones((2,) * (2 * s))
    any_avg = False
    letters = "abcdefghijklmnopqrstuvwxyz"
    out_idx = "".join(letters[i] for i in range(s))
    in_idx = "".join(letters[s + i] for i in range(s))
    for ci in touched:
        t, outs, ins, averaged = _cluster_factor(model.clusters[ci], subset, fixed)
        any_avg = any_avg or averaged
        sub = "".join(out_idx[pos[q]] for q in outs) + "".join(in_idx[pos[q]] for q in ins)
        lam = np.einsum(f"{out_idx}{in_idx},{sub}->{out_idx}{in_idx}", lam, t)
    return lam.reshape(2**s, 2**s), touched, any_avg


def marginal_noise(model: CnModel, subset, max_size: int = 4) -> MarginalNoiseMatrix:
    """Effective noise matrix on ``subset`` with unknown inputs averaged uniformly.

    Cluster qubits outside the subset have their inputs averaged and their
    outputs summed out. Neighbor inputs outside the subset are averaged;
    neighbors inside the subset condition the matrix.
    """
    subset = tuple(sorted(int(q) for q in getattr(subset, "qubits", subset)))
    if not subset or len(subset) > max_size:
        raise ValidationError(f"subset size must be 1..{max_size}")
    if len(set(subset)) != len(subset) or subset[0] < 0 or subset[-1] >= model.num_qubits:
        raise ValidationError(f"invalid subset {subset}")
    lam, touched, averaged = _assemble(model, subset)
    if averaged:
        prov = NEIGHBOR_AVERAGED
    elif len(touched) == 1:
        prov = WITHIN_CLUSTER
    else:
        prov = CROSS_CLUSTER
    return MarginalNoiseMatrix(subset, StochasticMatrix(lam), prov)


def conditional_marginal_column(model: CnModel, subset, setting: str) -> np.ndarray:
    """Exact outcome distribution on ``subset`` when the full input string is known."""
    subset = tuple(sorted(int(q) for q in subset))
    fixed = {q: int(b) for q, b in enumerate(setting)}
    lam, _, _ = _assemble(model, subset, fixed)
    y = int("".join(setting[q] for q in subset), 2)
    return lam[:, y]


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0)


def mitigate_marginal(p_noisy, lam, project: bool = False) -> np.ndarray:
    """Apply the inverse noise matrix to a marginal distribution.

    The result is a quasi-probability vector (sums to one, may have negative
    entries). With ``project=True`` it is replaced by its Euclidean
    projection onto the probability simplex.
    """
    m = np.asarray(getattr(lam, "entries", lam), dtype=float)
    p = np.asarray(p_noisy, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or p.shape != (m.shape[0],):
        raise ValidationError(f"shape mismatch: matrix {m.shape}, vector {p.shape}")
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise ValidationError(f"noise matrix is ill-conditioned (condition number {cond:.3g})")
    q = np.linalg.solve(m, p)
    return _project_simplex(q) if project else q
