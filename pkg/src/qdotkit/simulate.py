"""Synthetic noisy-readout device.

Two device descriptions are supported:

* :class:`CnModel` - classical clusters-and-neighbors noise. Each cluster
  carries one left-stochastic matrix per setting of its neighborhood.
* :class:`QuantumDeviceSpec` - a tensor product of small explicit POVMs,
  used when coherent (non-diagonal) readout effects matter.

Sampling is deterministic given a seed. Every circuit gets its own generator
stream, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from ._parallel import map_ordered
from .circuits import DDOT, QDOT, CircuitCollection, circuit_rng, normalize_protocol, setting_string_to_state
from .povm import Povm, StochasticMatrix, ValidationError, born_probabilities

SIM_STREAM = 1


class UnsupportedProtocolError(ValidationError):
    pass


def bits_to_index(bits: Sequence[int]) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def index_to_bits(index: int, width: int) -> str:
    return format(index, f"0{width}b") if width else ""


def _bit_rows_to_index(rows: np.ndarray) -> np.ndarray:
    """Rows of 0/1 values to integers, first column most significant."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.shape[-1] == 0:
        return np.zeros(rows.shape[:-1], dtype=np.int64)
    weights = 1 << np.arange(rows.shape[-1] - 1, -1, -1, dtype=np.int64)
    return rows @ weights


@dataclass(frozen=True, eq=False)
class Cluster:
    """A cluster of qubits with noise matrices conditioned on its neighborhood.

    ``noise`` maps a neighborhood bitstring (``""`` when there is no
    neighborhood) to a ``2^|C| x 2^|C|`` stochastic matrix whose indices run
    over the cluster qubits in increasing order.
    """

    qubits: tuple
    neighborhood: tuple = ()
    noise: Dict[str, StochasticMatrix] = field(default_factory=dict)

    def __post_init__(self):
        q = tuple(sorted(int(i) for i in self.qubits))
        nb = tuple(sorted(int(i) for i in self.neighborhood))
        if not q:
            raise ValidationError("empty cluster")
        if len(set(q)) != len(q) or len(set(nb)) != len(nb):
            raise ValidationError("repeated qubit in cluster or neighborhood")
        if set(q) & set(nb):
            raise ValidationError(f"cluster {q} overlaps its own neighborhood {nb}")
        noise = {}
        for key, mat in self.noise.items():
            m = mat if isinstance(mat, StochasticMatrix) else StochasticMatrix(np.asarray(mat, dtype=float))
            if m.shape != (2 ** len(q), 2 ** len(q)):
                raise ValidationError(f"cluster {q}: noise matrix has shape {m.shape}")
            if len(key) != len(nb) or set(key) - {"0", "1"}:
                raise ValidationError(f"cluster {q}: bad neighborhood key {key!r}")
            noise[key] = m
        expected = {index_to_bits(i, len(nb)) for i in range(2 ** len(nb))}
        if set(noise) != expected:
            raise ValidationError(f"cluster {q}: needs exactly {len(expected)} neighborhood settings")
        object.__setattr__(self, "qubits", q)
        object.__setattr__(self, "neighborhood", nb)
        object.__setattr__(self, "noise", dict(sorted(noise.items())))

    @functools.cached_property
    def stack(self) -> np.ndarray:
        """Noise matrices stacked by neighborhood index: ``(2^|N|, 2^|C|, 2^|C|)``."""
        return np.stack([self.noise[index_to_bits(i, len(self.neighborhood))].entries
                         for i in range(2 ** len(self.neighborhood))])

    def averaged(self) -> np.ndarray:
        """Noise matrix averaged uniformly over neighborhood settings."""
        return self.stack.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "qubits": list(self.qubits),
            "neighborhood": list(self.neighborhood),
            "noise": {k: v.to_dict() for k, v in self.noise.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Cluster":
        return cls(
            tuple(data["qubits"]),
            tuple(data.get("neighborhood", ())),
            {k: StochasticMatrix.from_dict(v) for k, v in data["noise"].items()},
        )


@dataclass(frozen=True, eq=False)
class CnModel:
    """Clusters-and-neighbors readout noise model on ``num_qubits`` qubits."""

    num_qubits: int
    clusters: tuple

    def __post_init__(self):
        clusters = tuple(sorted(self.clusters, key=lambda c: c.qubits))
        seen = [q for c in clusters for q in c.qubits]
        if len(seen) != len(set(seen)):
            raise ValidationError("clusters are not pairwise disjoint")
        if sorted(seen) != list(range(self.num_qubits)):
            raise ValidationError("clusters do not cover all qubits")
        for c in clusters:
            if c.neighborhood and (min(c.neighborhood) < 0 or max(c.neighborhood) >= self.num_qubits):
                raise ValidationError(f"neighborhood {c.neighborhood} out of range")
        object.__setattr__(self, "clusters", clusters)

    @functools.cached_property
    def cluster_of(self) -> Dict[int, int]:
        return {q: i for i, c in enumerate(self.clusters) for q in c.qubits}

    @property
    def has_neighborhoods(self) -> bool:
        return any(c.neighborhood for c in self.clusters)

    def partition(self) -> list:
        return [list(c.qubits) for c in self.clusters]

    def global_matrix(self, max_qubits: int = 10) -> np.ndarray:
        """Materialize the full ``2^N x 2^N`` noise matrix (small N only)."""
        n = self.num_qubits
        if n > max_qubits:
            raise ValidationError(f"refusing to materialize a {n}-qubit noise matrix")
        bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)) & 1
        lam = np.ones((2**n, 2**n))
        for c in self.clusters:
            xc = _bit_rows_to_index(bits[:, list(c.qubits)])
            yn = _bit_rows_to_index(bits[:, list(c.neighborhood)])
            lam *= c.stack[yn[None, :], xc[:, None], xc[None, :]]
        return lam

    def to_dict(self) -> dict:
        return {"num_qubits": self.num_qubits, "clusters": [c.to_dict() for c in self.clusters]}

    @classmethod
    def from_dict(cls, data: dict) -> "CnModel":
        return cls(int(data["num_qubits"]), tuple(Cluster.from_dict(c) for c in data["clusters"]))


@dataclass(frozen=True)
class Record:
    setting: str
    shots: int
    counts: Dict[str, int]

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in self.counts.items()}
        if any(v < 0 for v in counts.values()):
            raise ValidationError("negative count")
        if sum(counts.values()) != self.shots:
            raise ValidationError(f"counts sum to {sum(counts.values())}, expected {self.shots} shots")
        object.__setattr__(self, "counts", dict(sorted(counts.items())))


@dataclass(frozen=True, eq=False)
class ExperimentRecords:
    """Outcome counts for every circuit of a collection."""

    protocol: str
    num_qubits: int
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "protocol", normalize_protocol(self.protocol))
        recs = tuple(r if isinstance(r, Record) else Record(**r) for r in self.records)
        for r in recs:
            if len(r.setting) != self.num_qubits:
                raise ValidationError(f"setting {r.setting!r} has wrong length")
            for key in r.counts:
                if len(key) != self.num_qubits:
                    raise ValidationError(f"outcome {key!r} has wrong length")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    @functools.cached_property
    def arrays(self):
        """Flattened view ``(settings, record_index, outcomes, counts)``.

        ``settings`` has one row per record; the other three arrays have one
        row per distinct (record, outcome) pair.
        """
        n = self.num_qubits
        settings = np.array([[int(c) for c in r.setting] for r in self.records], dtype=np.uint8).reshape(-1, n)
        keys = [k for r in self.records for k in r.counts]
        rec_idx = np.repeat(np.arange(len(self.records)), [len(r.counts) for r in self.records])
        counts = np.array([v for r in self.records for v in r.counts.values()], dtype=np.int64)
        if keys:
            outcomes = (np.frombuffer("".join(keys).encode(), dtype=np.uint8) - ord("0")).reshape(-1, n)
        else:
            outcomes = np.zeros((0, n), dtype=np.uint8)
        return settings, rec_idx, outcomes, counts

    @property
    def shots(self) -> np.ndarray:
        return np.array([r.shots for r in self.records], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "num_qubits": self.num_qubits,
            "records": [{"setting": r.setting, "shots": r.shots, "counts": r.counts} for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentRecords":
        return cls(data["protocol"], int(data["num_qubits"]), tuple(Record(**r) for r in data["records"]))


def _counts_from_bits(bits: np.ndarray) -> Dict[str, int]:
    n = bits.shape[1]
    if n <= 62:
        # packing into int64 is much faster than a row-wise unique
        vals, cnt = np.unique(_bit_rows_to_index(bits), return_counts=True)
        return {format(int(v), f"0{n}b"): int(c) for v, c in zip(vals, cnt)}
    rows, cnt = np.unique(bits, axis=0, return_counts=True)
    text = (rows.astype(np.uint8) + ord("0")).tobytes().decode()
    return {text[i * n : (i + 1) * n]: int(c) for i, c in enumerate(cnt)}


def _sample_categorical(rng: np.random.Generator, p: np.ndarray, size: int) -> np.ndarray:
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


def _spread_bits(values: np.ndarray, width: int) -> np.ndarray:
    return ((values[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)


def sample_counts(model: CnModel, setting: str, shots: int, rng: np.random.Generator) -> Dict[str, int]:
    """Outcome counts of ``shots`` readouts of one classical input string."""
    y = np.frombuffer(setting.encode(), dtype=np.uint8) - ord("0")
    bits = np.empty((shots, model.num_qubits), dtype=np.uint8)
    for c in model.clusters:
        qubits, nb = list(c.qubits), list(c.neighborhood)
        col = c.stack[bits_to_index(y[nb]), :, bits_to_index(y[qubits])]
        bits[:, qubits] = _spread_bits(_sample_categorical(rng, col, shots), len(qubits))
    return _counts_from_bits(bits)


def sample_cn(model: CnModel, circuits: CircuitCollection, shots: int, seed: int, threads=None) -> ExperimentRecords:
    """Simulate ``shots`` readouts of every DDOT circuit through a CN model."""
    if circuits.protocol != DDOT:
        raise UnsupportedProtocolError("CN model defines classical action only; use sample_quantum")
    if model.num_qubits != circuits.num_qubits:
        raise ValidationError("model and circuits act on different numbers of qubits")
    if shots < 1:
        raise ValidationError("shots must be >= 1")

    def run(i):
        setting = circuits.circuits[i]
        return Record(setting, shots, sample_counts(model, setting, shots, circuit_rng(seed, i, SIM_STREAM)))

    records = map_ordered(run, range(len(circuits)), threads)
    return ExperimentRecords(DDOT, model.num_qubits, tuple(records))


@dataclass(frozen=True, eq=False)
class QuantumBlock:
    qubits: tuple
    povm: Povm

    def __post_init__(self):
        q = tuple(sorted(int(i) for i in self.qubits))
        if self.povm.dim != 2 ** len(q) or self.povm.num_outcomes != self.povm.dim:
            raise ValidationError(f"block {q}: POVM does not match {len(q)} qubits")
        object.__setattr__(self, "qubits", q)


@dataclass(frozen=True, eq=False)
class QuantumDeviceSpec:
    """Device whose global POVM is a tensor product of block POVMs."""

    blocks: tuple
    max_block_qubits: int = 3

    def __post_init__(self):
        blocks = tuple(b if isinstance(b, QuantumBlock) else QuantumBlock(*b) for b in self.blocks)
        seen = [q for b in blocks for q in b.qubits]
        if len(seen) != len(set(seen)) or sorted(seen) != list(range(len(seen))):
            raise ValidationError("blocks must be disjoint and cover qubits 0..N-1")
        for b in blocks:
            if len(b.qubits) > self.max_block_qubits:
                raise ValidationError(f"block {b.qubits} too large (max {self.max_block_qubits} qubits)")
        object.__setattr__(self, "blocks", blocks)

    @property
    def num_qubits(self) -> int:
        return sum(len(b.qubits) for b in self.blocks)

    def to_dict(self) -> dict:
        return {"blocks": [{"qubits": list(b.qubits), "povm": b.povm.to_dict()} for b in self.blocks]}

    @classmethod
    def from_dict(cls, data: dict) -> "QuantumDeviceSpec":
        return cls(tuple(QuantumBlock(tuple(b["qubits"]), Povm.from_dict(b["povm"])) for b in data["blocks"]))

    def global_povm(self, max_qubits: int = 4) -> Povm:
        """Materialize the global POVM in natural qubit order (small N only)."""
        from .povm import tensor_povm

        n = self.num_qubits
        if n > max_qubits:
            raise ValidationError(f"refusing to materialize a {n}-qubit POVM")
        t = tensor_povm(*[b.povm for b in self.blocks])
        order = [q for b in self.blocks for q in b.qubits]
        inv = [order.index(q) for q in range(n)]
        perm = inv + [n + i for i in inv] + [2 * n + i for i in inv]
        e = t.effects.reshape((2,) * (3 * n)).transpose(perm).reshape(2**n, 2**n, 2**n)
        return Povm(e)


def sample_quantum(spec: QuantumDeviceSpec, circuits: CircuitCollection, shots: int, seed: int,
                   threads=None) -> ExperimentRecords:
    """Simulate ``shots`` readouts per circuit through a product of block POVMs."""
    if spec.num_qubits != circuits.num_qubits:
        raise ValidationError("device and circuits act on different numbers of qubits")
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    settings = circuits.settings_array()

    @functools.lru_cache(maxsize=None)
    def probs(block_index: int, local: tuple) -> np.ndarray:
        b = spec.blocks[block_index]
        return born_probabilities(b.povm, setting_string_to_state(local))

    def run(i):
        rng = circuit_rng(seed, i, SIM_STREAM)
        y = settings[i]
        bits = np.empty((shots, spec.num_qubits), dtype=np.uint8)
        for j, b in enumerate(spec.blocks):
            p = probs(j, tuple(int(s) for s in y[list(b.qubits)]))
            bits[:, list(b.qubits)] = _spread_bits(_sample_categorical(rng, p, shots), len(b.qubits))
        return Record(circuits.circuits[i], shots, _counts_from_bits(bits))

    records = map_ordered(run, range(len(circuits)), threads)
    return ExperimentRecords(circuits.protocol, spec.num_qubits, tuple(records))


# ---------------------------------------------------------------------------
# planted fixtures

def flip_matrix(p01: float, p10: Optional[float] = None) -> np.ndarray:
    """Single-qubit noise with ``Pr(1|0) = p01`` and ``Pr(0|1) = p10``."""
    p10 = p01 if p10 is None else p10
    return np.array([[1 - p01, p10], [p01, 1 - p10]])


def conditional_pair_matrix(flip_a, flip_b, joint: float = 0.0) -> np.ndarray:
    """4x4 noise matrix on qubits (a, b) with input-dependent flips.

    ``flip_a(ya, yb)`` and ``flip_b(ya, yb)`` give each qubit's flip
    probability; with probability ``joint`` both bits flip together instead.
    """
    lam = np.zeros((4, 4))
    for ya in (0, 1):
        for yb in (0, 1):
            fa, fb = flip_a(ya, yb), flip_b(ya, yb)
            y = 2 * ya + yb
            for xa in (0, 1):
                for xb in (0, 1):
                    pa = fa if xa != ya else 1 - fa
                    pb = fb if xb != yb else 1 - fb
                    lam[2 * xa + xb, y] += (1 - joint) * pa * pb
            lam[2 * (1 - ya) + (1 - yb), y] += joint
    return lam


def _single(q, p01, p10):
    return Cluster((q,), (), {"": flip_matrix(p01, p10)})


def _uncorrelated_n10() -> CnModel:
    return CnModel(10, tuple(_single(i, 0.01 + 0.004 * i, 0.03 + 0.006 * i) for i in range(10)))


def _two_pair_clusters_n6() -> CnModel:
    pair01 = conditional_pair_matrix(
        lambda ya, yb: (0.02, 0.05)[ya] + 0.15 * yb,
        lambda ya, yb: (0.03, 0.06)[yb] + 0.10 * ya,
        joint=0.04,
    )
    pair23 = conditional_pair_matrix(
        lambda ya, yb: (0.015, 0.04)[ya] + 0.12 * yb,
        lambda ya, yb: (0.025, 0.05)[yb] + 0.20 * ya,
        joint=0.05,
    )
    return CnModel(6, (
        Cluster((0, 1), (), {"": pair01}),
        Cluster((2, 3), (), {"": pair23}),
        _single(4, 0.02, 0.05),
        _single(5, 0.03, 0.07),
    ))


def _neighbor_chain_n8() -> CnModel:
    noise = {
        str(y2): conditional_pair_matrix(
            lambda ya, yb, y2=y2: (0.02, 0.04)[ya] + 0.05 * yb + 0.15 * y2,
            lambda ya, yb: (0.03, 0.05)[yb] + 0.08 * ya,
        )
        for y2 in (0, 1)
    }
    singles = tuple(_single(i, 0.01 + 0.005 * i, 0.02 + 0.005 * i) for i in range(2, 8))
    return CnModel(8, (Cluster((0, 1), (2,), noise),) + singles)


PLANTED_MODELS = {
    "uncorrelated_n10": _uncorrelated_n10,
    "two_pair_clusters_n6": _two_pair_clusters_n6,
    "neighbor_chain_n8": _neighbor_chain_n8,
}


def planted_model_library(name: str) -> CnModel:
    """Named ground-truth CN models used by tests and demos.

    * ``uncorrelated_n10`` - ten singleton clusters with asymmetric flips.
    * ``two_pair_clusters_n6`` - clusters {0,1}, {2,3}, {4}, {5}; each pair
      has input-dependent flips plus a joint two-bit flip.
    * ``neighbor_chain_n8`` - cluster {0,1} whose qubit-0 flip rate rises by
      0.15 when neighbor qubit 2 is prepared in 1; qubits 2..7 singletons.
    """
    try:
        return PLANTED_MODELS[name]()
    except KeyError:
        raise ValidationError(f"unknown planted model {name!r}; known: {sorted(PLANTED_MODELS)}") from None


def identity_model(num_qubits: int) -> CnModel:
    return CnModel(num_qubits, tuple(Cluster((i,), (), {"": np.eye(2)}) for i in range(num_qubits)))
