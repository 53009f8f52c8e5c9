"""Energy prediction and readout-error mitigation benchmarks.

Hamiltonians are diagonal 2-local Ising forms ``E(s) = sum J_ij s_i s_j +
sum h_i s_i`` with spins ``s = 1 - 2 * bit``. A benchmark prepares each
ground string, reads it out through a noisy device, and compares raw,
predicted and mitigated energies against the exact value.
"""

from __future__ import annotations

import csv
import functools
import io
import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from ._parallel import map_ordered
from .circuits import circuit_rng
from .cn_model import conditional_marginal_column, marginal_noise, mitigate_marginal
from .povm import ValidationError
from .simulate import CnModel, sample_counts

BENCH_STREAM = 3
HAM_STREAM = 4
MAX_EXHAUSTIVE = 24
MARGINAL = "marginal"
CLUSTER = "cluster"
COLUMNS = ("E_TH", "E_EST", "E_PRED", "E_MIT_cn", "E_MIT_tpn", "dE_pred", "dE_est", "dE_mit_cn", "dE_mit_tpn")


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    num_qubits: int
    h: Dict[int, float] = field(default_factory=dict)
    J: Dict[tuple, float] = field(default_factory=dict)

    def __post_init__(self):
        n = self.num_qubits
        h = {int(i): float(v) for i, v in self.h.items()}
        J = {}
        for key, v in self.J.items():
            i, j = (int(t) for t in key)
            if not i < j:
                raise ValidationError(f"coupling ({i},{j}) must have i < j")
            J[(i, j)] = float(v)
        for q in list(h) + [q for e in J for q in e]:
            if not 0 <= q < n:
                raise ValidationError(f"qubit {q} out of range")
        object.__setattr__(self, "h", dict(sorted(h.items())))
        object.__setattr__(self, "J", dict(sorted(J.items())))

    def terms(self):
        """``(subset, coefficient)`` pairs for every nonzero term."""
        out = [((i,), v) for i, v in self.h.items() if v != 0]
        out += [(e, v) for e, v in self.J.items() if v != 0]
        return out

    def energies(self, bits: np.ndarray) -> np.ndarray:
        """Energies of the rows of a 0/1 array of shape ``(m, N)``."""
        s = 1.0 - 2.0 * np.asarray(bits, dtype=float)
        e = np.zeros(s.shape[0])
        for i, v in self.h.items():
            e += v * s[:, i]
        for (i, j), v in self.J.items():
            e += v * s[:, i] * s[:, j]
        return e

    def energy(self, bitstring: str) -> float:
        return float(self.energies(_bits(bitstring)[None, :])[0])

    def scaled(self, c: float) -> "Hamiltonian":
        return Hamiltonian(self.num_qubits, {i: c * v for i, v in self.h.items()}, {e: c * v for e, v in self.J.items()})

    def to_dict(self) -> dict:
        return {
            "h": {str(i): v for i, v in self.h.items()},
            "J": {f"{i},{j}": v for (i, j), v in self.J.items()},
        }

    @classmethod
    def from_dict(cls, data: dict, num_qubits: int) -> "Hamiltonian":
        J = {tuple(int(t) for t in k.split(",")): v for k, v in data.get("J", {}).items()}
        return cls(num_qubits, {int(k): v for k, v in data.get("h", {}).items()}, J)


def _bits(bitstring: str) -> np.ndarray:
    return np.frombuffer(bitstring.encode(), dtype=np.uint8) - ord("0")


def hamiltonians_to_dict(hams: Sequence[Hamiltonian]) -> dict:
    if not hams:
        raise ValidationError("no Hamiltonians")
    return {"num_qubits": hams[0].num_qubits, "instances": [h.to_dict() for h in hams]}


def hamiltonians_from_dict(data: dict) -> list:
    n = int(data["num_qubits"])
    return [Hamiltonian.from_dict(d, n) for d in data["instances"]]


def random_hamiltonians(n_instances: int, num_qubits: int, coupling_graph=None, seed: int = 0,
                        max_edges: Optional[int] = None) -> list:
    """Random 2-local instances with fields and couplings uniform in [-1, 1].

    Without ``coupling_graph`` all pairs are coupled as long as there are at
    most ``max_edges`` of them (default ``4 N``); otherwise each instance
    draws ``max_edges`` distinct pairs at random. Pass ``[]`` for
    field-only instances.
    """
    if n_instances < 1 or num_qubits < 1:
        raise ValidationError("need n_instances >= 1 and num_qubits >= 1")
    all_pairs = list(itertools.combinations(range(num_qubits), 2))
    cap = 4 * num_qubits if max_edges is None else int(max_edges)
    if coupling_graph is not None:
        graph = [tuple(sorted(map(int, e))) for e in coupling_graph]
        for i, j in graph:
            if i == j or not (0 <= i < num_qubits and 0 <= j < num_qubits):
                raise ValidationError(f"bad edge ({i},{j})")
    out = []
    for k in range(n_instances):
        rng = circuit_rng(seed, k, HAM_STREAM)
        if coupling_graph is not None:
            edges = graph
        elif len(all_pairs) <= cap:
            edges = all_pairs
        else:
            pick = np.sort(rng.choice(len(all_pairs), size=cap, replace=False))
            edges = [all_pairs[p] for p in pick]
        h = dict(enumerate(rng.uniform(-1, 1, num_qubits)))
        J = dict(zip(edges, rng.uniform(-1, 1, len(edges))))
        out.append(Hamiltonian(num_qubits, h, J))
    return out


def ground_state(ham: Hamiltonian, max_qubits: int = MAX_EXHAUSTIVE):
    """Exhaustive minimizer ``(bitstring, energy)``; ties go to the smallest bitstring."""
    n = ham.num_qubits
    if n > max_qubits:
        raise ValidationError(f"{n} qubits is too many for exhaustive search; supply the ground state")
    best_val, best_e = 0, math.inf
    chunk = 1 << min(n, 18)
    shifts = np.arange(n - 1, -1, -1)
    for start in range(0, 1 << n, chunk):
        vals = np.arange(start, min(start + chunk, 1 << n))
        e = ham.energies((vals[:, None] >> shifts) & 1)
        i = int(np.argmin(e))
        if e[i] < best_e:
            best_val, best_e = int(vals[i]), float(e[i])
    return format(best_val, f"0{n}b"), best_e


def _parity(positions: Sequence[int], width: int) -> np.ndarray:
    x = np.arange(2**width)
    sign = np.ones(2**width)
    for p in positions:
        sign *= 1 - 2 * ((x >> (width - 1 - p)) & 1)
    return sign


@functools.lru_cache(maxsize=4096)
def _noise_for(model: CnModel, subset: tuple, mode: str):
    if mode == MARGINAL:
        return subset, marginal_noise(model, subset).entries
    if mode == CLUSTER:
        union = tuple(sorted(q for ci in {model.cluster_of[q] for q in subset} for q in model.clusters[ci].qubits))
        return union, marginal_noise(model, union, max_size=12).entries
    raise ValidationError(f"unknown mitigation mode {mode!r}")


class _Counts:
    def __init__(self, counts: Mapping[str, int]):
        if not counts:
            raise ValidationError("empty counts")
        keys = list(counts)
        n = len(keys[0])
        self.bits = (np.frombuffer("".join(keys).encode(), dtype=np.uint8) - ord("0")).reshape(len(keys), n)
        self.weights = np.array([counts[k] for k in keys], dtype=float)
        if self.weights.sum() <= 0:
            raise ValidationError("counts sum to zero")
        self.total = self.weights.sum()

    def marginal(self, subset: Sequence[int]) -> np.ndarray:
        idx = np.zeros(len(self.bits), dtype=np.int64)
        for q in subset:
            idx = idx * 2 + self.bits[:, q]
        return np.bincount(idx, weights=self.weights, minlength=2 ** len(subset)) / self.total


def energy_from_counts(ham: Hamiltonian, counts: Mapping[str, int], mitigator: Optional[CnModel] = None,
                       mode: str = CLUSTER) -> float:
    """Energy estimate from readout counts, optionally with noise mitigation.

    With a ``mitigator`` each term's expectation is taken from a mitigated
    quasi-probability. ``mode="marginal"`` inverts the averaged noise matrix
    of the term's own qubits. ``mode="cluster"`` inverts the noise of every
    cluster the term touches and marginalizes afterwards, which stays exact
    when a cluster partner sits in a definite state.
    """
    c = _Counts(counts)
    if c.bits.shape[1] != ham.num_qubits:
        raise ValidationError("counts and Hamiltonian act on different numbers of qubits")
    if mitigator is None:
        return float(ham.energies(c.bits) @ c.weights / c.total)
    if mitigator.num_qubits != ham.num_qubits:
        raise ValidationError("mitigator and Hamiltonian act on different numbers of qubits")
    total = 0.0
    for subset, coef in ham.terms():
        try:
            support, lam = _noise_for(mitigator, tuple(subset), mode)
            q = mitigate_marginal(c.marginal(support), lam)
        except ValidationError as exc:
            raise ValidationError(f"term {subset}: {exc}") from exc
        total += coef * float(_parity([support.index(s) for s in subset], len(support)) @ q)
    return total


def predict_energy(ham: Hamiltonian, ground: str, model: CnModel, mode: str = CLUSTER) -> float:
    """Noisy energy expected when ``ground`` is read out through ``model``.

    ``mode="cluster"`` conditions every cluster on the known input string and
    is exact for CN devices. ``mode="marginal"`` pushes the term's input
    through the neighbor-averaged marginal noise matrix instead.
    """
    if len(ground) != ham.num_qubits or model.num_qubits != ham.num_qubits:
        raise ValidationError("ground string, model and Hamiltonian disagree on size")
    total = 0.0
    for subset, coef in ham.terms():
        if mode == CLUSTER:
            p = conditional_marginal_column(model, subset, ground)
        elif mode == MARGINAL:
            y = int("".join(ground[q] for q in subset), 2)
            p = marginal_noise(model, subset).entries[:, y]
        else:
            raise ValidationError(f"unknown mode {mode!r}")
        total += coef * float(_parity(range(len(subset)), len(subset)) @ p)
    return total


@dataclass
class BenchReport:
    num_qubits: int
    rows: list

    @property
    def medians(self) -> dict:
        return {c: float(np.median([r[c] for r in self.rows])) for c in COLUMNS if c.startswith("dE")}

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("instance", "ground") + COLUMNS)
        for r in self.rows:
            w.writerow([r["instance"], r["ground"]] + [repr(float(r[c])) for c in COLUMNS])
        for name, v in self.medians.items():
            buf.write(f"# median {name} {v!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, num_qubits: int) -> "BenchReport":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = []
        for r in csv.DictReader(lines):
            row = {"instance": int(r["instance"]), "ground": r["ground"]}
            row.update({c: float(r[c]) for c in COLUMNS})
            rows.append(row)
        return cls(num_qubits, rows)


def run_benchmark(models: Mapping[str, CnModel], hamiltonians: Sequence[Hamiltonian], device: CnModel,
                  shots: int, seed: int, mode: str = CLUSTER, threads=None,
                  grounds: Optional[Sequence[str]] = None) -> BenchReport:
    """Prediction and mitigation errors of the ``"cn"`` and ``"tpn"`` models.

    Each ground string is read out ``shots`` times through ``device``.
    ``mode`` selects the mitigation path (see :func:`energy_from_counts`);
    predictions always condition on the prepared string. All energy
    differences are divided by the number of qubits.
    """
    if not hamiltonians:
        raise ValidationError("no Hamiltonians")
    for key in ("cn", "tpn"):
        if key not in models:
            raise ValidationError(f"models must include {key!r}")
    n = device.num_qubits
    if any(h.num_qubits != n for h in hamiltonians) or any(m.num_qubits != n for m in models.values()):
        raise ValidationError("device, models and Hamiltonians disagree on the number of qubits")
    if grounds is not None and len(grounds) != len(hamiltonians):
        raise ValidationError("need one ground string per Hamiltonian")

    def one(i):
        ham = hamiltonians[i]
        if grounds is None:
            g, e_th = ground_state(ham)
        else:
            g, e_th = grounds[i], ham.energy(grounds[i])
        counts = sample_counts(device, g, shots, circuit_rng(seed, i, BENCH_STREAM))
        e_est = energy_from_counts(ham, counts)
        e_pred = predict_energy(ham, g, models["cn"])
        e_cn = energy_from_counts(ham, counts, models["cn"], mode)
        e_tpn = energy_from_counts(ham, counts, models["tpn"], mode)
        return {
            "instance": i, "ground": g,
            "E_TH": e_th, "E_EST": e_est, "E_PRED": e_pred, "E_MIT_cn": e_cn, "E_MIT_tpn": e_tpn,
            "dE_pred": abs(e_pred - e_est) / n, "dE_est": abs(e_est - e_th) / n,
            "dE_mit_cn": abs(e_cn - e_th) / n, "dE_mit_tpn": abs(e_tpn - e_th) / n,
        }

    return BenchReport(n, map_ordered(one, range(len(hamiltonians)), threads))
