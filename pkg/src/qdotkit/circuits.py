"""Random single-layer circuit collections for detector overlapping tomography.

A circuit is a string of per-qubit preparation symbols. DDOT uses ``0``/``1``
(computational basis states), QDOT uses ``0``..``5`` for the Pauli
eigenstates in the order Z+, Z-, X+, X-, Y+, Y-.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .povm import ValidationError, ket_to_dm, kron_all

DDOT = "DDOT"
QDOT = "QDOT"
PROTOCOLS = (DDOT, QDOT)
ALPHABET_SIZE = {DDOT: 2, QDOT: 6}
MAX_LOCALITY = 12

_S = 1 / math.sqrt(2)
_KETS = (
    np.array([1, 0]),
    np.array([0, 1]),
    np.array([_S, _S]),
    np.array([_S, -_S]),
    np.array([_S, 1j * _S]),
    np.array([_S, -1j * _S]),
)
SINGLE_QUBIT_STATES = tuple(ket_to_dm(k) for k in _KETS)
SYMBOL_NAMES = ("Z+", "Z-", "X+", "X-", "Y+", "Y-")
GATE_LABELS = ("I", "X", "Ry(pi/2)", "Ry(-pi/2)", "Rx(-pi/2)", "Rx(pi/2)")


def normalize_protocol(protocol: str) -> str:
    p = str(protocol).upper()
    if p not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    return p


def circuit_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one work item, keyed by (seed, stream, index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class CircuitCollection:
    protocol: str
    num_qubits: int
    circuits: tuple
    seed: int = 0

    def __post_init__(self):
        proto = normalize_protocol(self.protocol)
        object.__setattr__(self, "protocol", proto)
        object.__setattr__(self, "circuits", tuple(self.circuits))
        allowed = set("012345"[: ALPHABET_SIZE[proto]])
        for c in self.circuits:
            if len(c) != self.num_qubits:
                raise ValidationError(f"circuit {c!r} does not have length {self.num_qubits}")
            if not set(c) <= allowed:
                raise ValidationError(f"circuit {c!r} has symbols outside the {proto} alphabet")

    def __len__(self):
        return len(self.circuits)

    def settings_array(self) -> np.ndarray:
        """Circuits as a ``(num_circuits, num_qubits)`` uint8 array."""
        if not self.circuits:
            return np.zeros((0, self.num_qubits), dtype=np.uint8)
        raw = np.frombuffer("".join(self.circuits).encode(), dtype=np.uint8)
        return (raw - ord("0")).reshape(len(self.circuits), self.num_qubits)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "num_qubits": self.num_qubits,
            "seed": self.seed,
            "circuits": list(self.circuits),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CircuitCollection":
        return cls(data["protocol"], int(data["num_qubits"]), tuple(data["circuits"]), int(data.get("seed", 0)))

    def gate_lines(self) -> list:
        """One line of single-qubit gate labels per circuit, qubit 0 first."""
        return [" ".join(GATE_LABELS[int(s)] for s in c) for c in self.circuits]


def generate_collection(protocol: str, num_qubits: int, num_circuits: int, seed: int) -> CircuitCollection:
    """Draw ``num_circuits`` i.i.d. uniform setting strings.

    Circuit ``i`` comes from its own generator stream, so the collection does
    not depend on how (or in what order) the circuits are produced.
    """
    proto = normalize_protocol(protocol)
    if num_circuits < 1:
        raise ValidationError("num_circuits must be >= 1")
    if num_qubits < 1:
        raise ValidationError("num_qubits must be >= 1")
    m = ALPHABET_SIZE[proto]
    rows = [circuit_rng(seed, i).integers(0, m, size=num_qubits, dtype=np.uint8) for i in range(num_circuits)]
    arr = np.stack(rows) + ord("0")
    text = arr.astype(np.uint8).tobytes().decode()
    circuits = tuple(text[i * num_qubits : (i + 1) * num_qubits] for i in range(num_circuits))
    return CircuitCollection(proto, num_qubits, circuits, int(seed))


@dataclass(frozen=True)
class ComplexityQuery:
    protocol: str
    k: int
    num_qubits: int
    epsilon: float
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "protocol", normalize_protocol(self.protocol))
        if not 1 <= self.k <= self.num_qubits:
            raise ValidationError(f"need 1 <= k <= N, got k={self.k}, N={self.num_qubits}")
        if self.k > MAX_LOCALITY:
            raise ValidationError(f"k={self.k} exceeds the overflow guard ({MAX_LOCALITY})")
        if not 0 < self.epsilon <= 1:
            raise ValidationError("epsilon must lie in (0, 1]")
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")


def matrix_elements_bound(q: ComplexityQuery) -> float:
    """Real-valued circuit count for entrywise accuracy of all k-qubit marginals."""
    base = ALPHABET_SIZE[q.protocol] ** q.k
    bracket = (q.k + 1) * math.log(2) + math.log(math.comb(q.num_qubits, q.k)) + math.log(1 / q.delta)
    return base / (1 - math.exp(-2 * q.epsilon**2)) * bracket


def required_circuits_matrix_elements(q: ComplexityQuery) -> int:
    return math.ceil(matrix_elements_bound(q))


def choi_bound(q: ComplexityQuery) -> float:
    """Real-valued circuit count for Hilbert-Schmidt accuracy of all reduced Choi states."""
    if q.protocol != QDOT:
        raise ValidationError("Choi reconstruction needs informationally complete (QDOT) inputs")
    bracket = math.log(math.comb(q.num_qubits, q.k)) + 2 * q.k * math.log(2) + math.log(1 / q.delta)
    return 6**q.k / q.epsilon**2 * (64 / 3) * bracket


def required_circuits_choi(q: ComplexityQuery) -> int:
    return math.ceil(choi_bound(q))


def setting_to_state(symbol) -> np.ndarray:
    """Single-qubit density matrix prepared by a setting symbol (0..5)."""
    s = str(symbol)
    if len(s) != 1 or s not in "012345":
        raise ValidationError(f"invalid setting symbol {symbol!r}")
    return SINGLE_QUBIT_STATES[int(s)].copy()


def setting_string_to_state(setting: Sequence) -> np.ndarray:
    """Product state for a whole setting string, qubit 0 as the first factor."""
    return kron_all([SINGLE_QUBIT_STATES[int(s)] for s in setting])
