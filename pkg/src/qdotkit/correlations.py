"""Readout-noise correlation coefficients and coherence strength.

Coefficient ``c_{j->i}`` measures how much the reduced measurement on qubit
``i`` changes when the input state of qubit ``j`` changes. Classical
coefficients only vary ``j`` over computational basis states; quantum ones
search over all pure states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from ._parallel import map_ordered
from .circuits import DDOT, SINGLE_QUBIT_STATES
from .marginals import MarginalTable, povm_from_marginal, tvd_confidence
from .povm import Povm, StochasticMatrix, ValidationError, ac_distance, kron_all, tvd

WC = "WC"
AC = "AC"
CLASSICAL = "classical"
QUANTUM = "quantum"
DEFAULT_THRESHOLD = 0.03
GRID_SIZE = 400

_PAULI = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)


def _metric(metric: str) -> str:
    m = str(metric).upper()
    if m not in (WC, AC):
        raise ValidationError(f"unknown metric {metric!r}")
    return m


def conditional_maps(lambda2, target: int = 0):
    """The two 1-qubit noise maps of ``target`` given the other qubit's input 0 or 1."""
    lam = np.asarray(lambda2, dtype=float)
    if lam.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 two-qubit noise matrix, got {lam.shape}")
    if target not in (0, 1):
        raise ValidationError("target must be 0 or 1 (position within the pair)")
    t = lam.reshape(2, 2, 2, 2)  # x0, x1, y0, y1
    if target == 0:
        m = t.sum(axis=1)
        return m[:, :, 0], m[:, :, 1]
    m = t.sum(axis=0)
    return m[:, 0, :], m[:, 1, :]


def classical_corr_wc(lambda2, target: int = 0) -> float:
    """Worst-case classical coefficient from a 2-qubit noise matrix.

    ``target`` is the position (0 or 1) of the affected qubit within the
    pair; the other qubit is the source.
    """
    a, b = conditional_maps(lambda2, target)
    return float(0.5 * np.abs(a - b).sum(axis=0).max())


def classical_corr_ac(lambda2, target: int = 0) -> float:
    """Average-case classical coefficient, as the AC distance of the two conditional diagonal POVMs."""
    a, b = conditional_maps(lambda2, target)
    return ac_distance(StochasticMatrix(a).to_povm(), StochasticMatrix(b).to_povm())


def classical_corr_ac_compact(lambda2, target: int = 0) -> float:
    """Closed-form variant ``1/2 sqrt(1/2 ||D||_HS^2 + tr(D)^2)`` with ``D`` the map difference.

    Kept for comparison only; it does not agree with :func:`classical_corr_ac`
    in general.
    """
    a, b = conditional_maps(lambda2, target)
    d = a - b
    return float(0.5 * math.sqrt(0.5 * np.sum(d**2) + np.trace(d) ** 2))


def swap_pair(povm: Povm) -> Povm:
    """Relabel a 2-qubit POVM so its qubits (and outcome bits) trade places."""
    if povm.dim != 4 or povm.num_outcomes != 4:
        raise ValidationError("expected a 2-qubit POVM with 4 outcomes")
    e = povm.effects.reshape(2, 2, 2, 2, 2, 2).transpose(1, 0, 3, 2, 5, 4)
    return Povm(e.reshape(4, 4, 4))


def _difference_effects(coarse: np.ndarray, delta: np.ndarray) -> np.ndarray:
    # coarse: (2, 4, 4) effects on A (x) B; returns tr_B(M_x (I (x) delta)) for x = 0, 1
    t = coarse.reshape(2, 2, 2, 2, 2)  # x, a, b, a', b'
    return np.einsum("xabcd,db->xac", t, delta)


def _diff_value(diff: np.ndarray, metric: str) -> float:
    if metric == WC:
        # two outcomes with D_0 = -D_1: the best subset picks the larger top eigenvalue
        return float(np.abs(np.linalg.eigvalsh(diff[0])).max())
    hs2 = np.sum(np.abs(diff) ** 2, axis=(1, 2))
    tr = np.einsum("kii->k", diff).real
    return float(np.sqrt(hs2 + tr**2).sum() / (2 * diff.shape[1]))


def _bloch(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


def fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z**2)
    phi = math.pi * (3 - math.sqrt(5)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def quantum_corr(povm2: Povm, target: int = 0, metric: str = WC, grid: int = GRID_SIZE,
                 refine: int = 3) -> float:
    """Search-based quantum correlation coefficient of a 2-qubit POVM.

    The source qubit is fed ``rho - sigma = n . sigma_vec`` for unit Bloch
    vectors ``n``. A Fibonacci grid (plus the Z axis) is scanned and the best
    few directions are polished with Nelder-Mead. The result is a lower bound
    on the true supremum and never below the value at the Z axis.
    """
    metric = _metric(metric)
    if target not in (0, 1):
        raise ValidationError("target must be 0 or 1")
    m = povm2 if target == 0 else swap_pair(povm2)
    coarse = m.effects.reshape(2, 2, 4, 4).sum(axis=1)

    def value(n):
        return _diff_value(_difference_effects(coarse, np.einsum("i,ijk->jk", n, _PAULI)), metric)

    dirs = np.vstack([[0.0, 0.0, 1.0], fibonacci_sphere(grid)])
    vals = np.array([value(n) for n in dirs])
    best = float(vals.max())
    for idx in np.argsort(vals)[::-1][:refine]:
        n = dirs[idx]
        start = [math.acos(max(-1.0, min(1.0, n[2]))), math.atan2(n[1], n[0])]
        res = minimize(lambda a: -value(_bloch(*a)), start, method="Nelder-Mead",
                       options={"xatol": 1e-8, "fatol": 1e-12, "maxiter": 400})
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """``values[j, i] = c_{j->i}``: effect of qubit ``j`` on qubit ``i``."""

    num_qubits: int
    metric: str
    kind: str
    values: np.ndarray
    epsilon: Optional[float] = None
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.num_qubits, self.num_qubits):
            raise ValidationError(f"correlation matrix must be {self.num_qubits}x{self.num_qubits}")
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValidationError("correlation coefficients must lie in [0, 1]")
        np.fill_diagonal(v, 0.0)
        v = np.clip(v, 0, 1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "metric", _metric(self.metric))
        if self.kind not in (CLASSICAL, QUANTUM):
            raise ValidationError(f"unknown kind {self.kind!r}")

    def edges(self, threshold: Optional[float] = None):
        """Directed ``(source, target, value)`` triples at or above the threshold."""
        t = self.threshold if threshold is None else threshold
        src, dst = np.nonzero(self.values >= t)
        return [(int(j), int(i), float(self.values[j, i])) for j, i in zip(src, dst)]

    def to_dot(self, threshold: Optional[float] = None) -> str:
        lines = [f"digraph correlations {{", f'  label="{self.kind} {self.metric}";']
        lines += [f"  q{i};" for i in range(self.num_qubits)]
        for j, i, v in self.edges(threshold):
            lines.append(f'  q{j} -> q{i} [label="{v:.3f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "num_qubits": self.num_qubits,
            "metric": self.metric,
            "kind": self.kind,
            "values": self.values.tolist(),
            "threshold": self.threshold,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorrelationMatrix":
        values = np.asarray(data["values"], dtype=float)
        n = int(data.get("num_qubits", values.shape[0]))
        return cls(n, data["metric"], data["kind"], values.reshape(n, n), data.get("epsilon"),
                   float(data.get("threshold", DEFAULT_THRESHOLD)))


def correlation_matrix_from_marginals(table: MarginalTable, metric: str = WC, kind: str = CLASSICAL,
                                      threshold: float = DEFAULT_THRESHOLD, p_err: float = 0.01,
                                      threads=None) -> CorrelationMatrix:
    """Pairwise coefficients from a table of 2-qubit marginals.

    DDOT tables only support ``kind="classical"``. For QDOT tables the
    reduced POVM is reconstructed first; the classical value then uses its
    diagonal part.
    """
    metric = _metric(metric)
    if kind not in (CLASSICAL, QUANTUM):
        raise ValidationError(f"unknown kind {kind!r}")
    if table.protocol == DDOT and kind == QUANTUM:
        raise ValidationError("quantum coefficients need QDOT marginals")
    pairs = [q for q in table.subsets if len(q) == 2]
    if not pairs:
        raise ValidationError("table holds no 2-qubit marginals")

    def one(pair):
        entry = table[pair]
        if table.protocol == DDOT:
            lam = entry.matrix.entries
            fn = classical_corr_wc if metric == WC else classical_corr_ac
            return fn(lam, 0), fn(lam, 1), entry.epsilon_star(p_err)
        povm = povm_from_marginal(entry)
        if kind == CLASSICAL:
            lam = np.real(np.einsum("xii->xi", povm.effects))
            fn = classical_corr_wc if metric == WC else classical_corr_ac
            return fn(lam, 0), fn(lam, 1), entry.epsilon_star(p_err)
        return quantum_corr(povm, 0, metric), quantum_corr(povm, 1, metric), entry.epsilon_star(p_err)

    results = map_ordered(one, pairs, threads)
    values = np.zeros((table.num_qubits, table.num_qubits))
    eps = 0.0
    for (a, b), (to_a, to_b, e) in zip(pairs, results):
        values[b, a] = to_a
        values[a, b] = to_b
        eps = max(eps, e)
    return CorrelationMatrix(table.num_qubits, metric, kind, values, eps, threshold)


# ---------------------------------------------------------------------------
# coherence strength

def coherence_strength_ac(m: Povm) -> float:
    """AC distance between a POVM and its dephased (diagonal) version."""
    if m.dim > 8:
        raise ValidationError("coherence strength is only supported up to dimension 8")
    return ac_distance(m, m.dephased())


_WITNESS_SYMBOLS = set("2345")


def _witness_state(setting: str) -> np.ndarray:
    if not setting or set(setting) - _WITNESS_SYMBOLS:
        raise ValidationError(f"witness states must be X/Y eigenstates (symbols 2-5), got {setting!r}")
    return kron_all([SINGLE_QUBIT_STATES[int(s)] for s in setting])


def cs_lower_bound(pr_p, pr_q, setting_p: str, setting_q: str, n_shots=None, p_err: float = 0.01):
    """Lower bound on AC coherence strength from two witness distributions.

    ``pr_p`` and ``pr_q`` are outcome probabilities (or raw counts) measured
    on product states ``setting_p`` and ``setting_q`` built from X/Y
    eigenstates. Returns ``(bound, error)``; the error is zero when exact
    probabilities are passed and ``n_shots`` is None.
    """
    rho_p, rho_q = _witness_state(setting_p), _witness_state(setting_q)
    if rho_p.shape != rho_q.shape:
        raise ValidationError("witness states act on different numbers of qubits")
    d = rho_p.shape[0]
    p, q = np.asarray(pr_p, dtype=float), np.asarray(pr_q, dtype=float)
    counts_given = np.issubdtype(np.asarray(pr_p).dtype, np.integer)
    if counts_given:
        n_p, n_q = p.sum(), q.sum()
        if n_p <= 0 or n_q <= 0:
            raise ValidationError("zero shots")
        p, q = p / n_p, q / n_q
    else:
        n_p = n_q = n_shots
    delta_hs = np.linalg.norm(rho_p - rho_q)
    if delta_hs < 1e-12:
        raise ValidationError("witness states must differ")
    bound = float(tvd(p, q) / (d * delta_hs))
    if n_p is None:
        return bound, 0.0
    if n_p <= 0 or n_q <= 0:
        raise ValidationError("zero shots")
    err = (tvd_confidence(n_p, len(p), p_err).epsilon_star + tvd_confidence(n_q, len(q), p_err).epsilon_star) / d
    return bound, err


@dataclass(frozen=True)
class CoherenceReport:
    subset: tuple
    cs_lower_bound: float
    bound_error: float
    witness_pair: tuple
    cs_ac: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "cs_ac": self.cs_ac,
            "cs_lower_bound": self.cs_lower_bound,
            "bound_error": self.bound_error,
            "witness_pair": list(self.witness_pair),
        }


def witness_pairs(k: int) -> list:
    """Setting pairs differing on one qubit (|+>/|-> or |+i>/|-i>), others in |+>."""
    out = []
    for i in range(k):
        for a, b in (("2", "3"), ("4", "5")):
            base = ["2"] * k
            p, q = list(base), list(base)
            p[i], q[i] = a, b
            out.append(("".join(p), "".join(q)))
    return out


def coherence_report(entry, p_err: float = 0.01, povm: Optional[Povm] = None) -> CoherenceReport:
    """Best witness lower bound for one QDOT marginal entry.

    ``entry`` is a QDOT :class:`~qdotkit.marginals.MarginalEntry`. If
    ``povm`` is None the reduced POVM is reconstructed from the entry to
    report the direct coherence strength as well.
    """
    if entry.protocol == DDOT:
        raise ValidationError("coherence witnesses need QDOT data")
    k = entry.k
    best = None
    for sp, sq in witness_pairs(k):
        yp, yq = int(sp, 6), int(sq, 6)
        cp, cq = entry.counts[:, yp], entry.counts[:, yq]
        if cp.sum() <= 0 or cq.sum() <= 0:
            continue
        b, e = cs_lower_bound(np.rint(cp).astype(np.int64), np.rint(cq).astype(np.int64), sp, sq, p_err=p_err)
        if best is None or b > best[0]:
            best = (b, e, (sp, sq))
    if best is None:
        raise ValidationError(f"subset {entry.qubits}: no witness settings were measured")
    if povm is None and entry.covered:
        povm = povm_from_marginal(entry)
    cs = coherence_strength_ac(povm) if povm is not None else None
    return CoherenceReport(entry.qubits, best[0], best[1], best[2], cs)


def cs_tensor_upper_bound(reports: Sequence[CoherenceReport]) -> float:
    """Sum of block coherence strengths; bounds the strength of the tensor product."""
    seen = set()
    total = 0.0
    for r in reports:
        if r.cs_ac is None:
            raise ValidationError(f"block {r.subset} has no direct coherence strength")
        if seen & set(r.subset):
            raise ValidationError("blocks must be disjoint")
        seen |= set(r.subset)
        total += r.cs_ac
    return total
