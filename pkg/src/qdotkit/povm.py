"""Measurement-theory primitives: POVMs, stochastic matrices and distances.

Conventions used throughout the package:

* Qubit 0 is the most significant bit of every outcome / input index, and
  the first tensor factor of every operator.
* Stochastic matrices are left-stochastic, ``entries[x, y] = Pr(x | y)``:
  columns are inputs and sum to one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce
from typing import Optional, Sequence

import numpy as np

HERMITIAN_TOL = 1e-10
PSD_TOL = -1e-9
SUM_TOL = 1e-9
DEFAULT_MAX_OUTCOMES = 8


class ValidationError(ValueError):
    """Raised when an object violates its structural invariants."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def num_qubits_for_dim(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if dim < 1 or 2**n != dim:
        raise ValidationError(f"dimension {dim} is not a power of 2")
    return n


@dataclass(frozen=True, eq=False)
class Povm:
    """A POVM given by ``num_outcomes`` effects of size ``dim x dim``.

    ``effects`` is stored as a read-only complex array of shape
    ``(num_outcomes, dim, dim)``.
    """

    effects: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.effects, dtype=complex)
        if e.ndim != 3 or e.shape[1] != e.shape[2]:
            raise ValidationError(f"effects must have shape (m, d, d), got {e.shape}")
        num_qubits_for_dim(e.shape[1])
        herm = np.max(np.abs(e - e.conj().transpose(0, 2, 1))) if e.size else 0.0
        if herm > HERMITIAN_TOL:
            raise ValidationError(f"effect not Hermitian (max deviation {herm:.3g})")
        e = 0.5 * (e + e.conj().transpose(0, 2, 1))
        min_eig = min(np.linalg.eigvalsh(x)[0] for x in e)
        if min_eig < PSD_TOL:
            raise ValidationError(f"effect not positive semidefinite (min eigenvalue {min_eig:.3g})")
        dev = np.max(np.abs(e.sum(axis=0) - np.eye(e.shape[1])))
        if dev > SUM_TOL:
            raise ValidationError(f"effects do not sum to identity (max deviation {dev:.3g})")
        object.__setattr__(self, "effects", _readonly(e))

    @property
    def num_outcomes(self) -> int:
        return self.effects.shape[0]

    @property
    def dim(self) -> int:
        return self.effects.shape[1]

    @property
    def num_qubits(self) -> int:
        return num_qubits_for_dim(self.dim)

    def __len__(self):
        return self.num_outcomes

    def __getitem__(self, i):
        return self.effects[i]

    def dephased(self) -> "Povm":
        """Return the POVM with every effect replaced by its diagonal part."""
        diag = np.einsum("kii->ki", self.effects)
        return Povm(np.einsum("ki,ij->kij", diag, np.eye(self.dim)))

    def is_diagonal(self, tol: float = 1e-12) -> bool:
        off = self.effects - self.dephased().effects
        return bool(np.max(np.abs(off)) <= tol)

    def to_dict(self) -> dict:
        flat = self.effects.reshape(self.num_outcomes, -1)
        return {
            "dim": self.dim,
            "effects": [[[float(z.real), float(z.imag)] for z in row] for row in flat],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Povm":
        d = int(data["dim"])
        eff = np.array(
            [[complex(re, im) for re, im in row] for row in data["effects"]], dtype=complex
        )
        return cls(eff.reshape(-1, d, d))


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Left-stochastic matrix with ``entries[x, y] = Pr(x | y)``."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2:
            raise ValidationError(f"stochastic matrix must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("stochastic matrix has non-finite entries")
        if a.size and (a.min() < -SUM_TOL or a.max() > 1 + SUM_TOL):
            raise ValidationError("stochastic matrix entries outside [0, 1]")
        dev = np.max(np.abs(a.sum(axis=0) - 1.0)) if a.size else 0.0
        if dev > SUM_TOL:
            raise ValidationError(f"columns do not sum to 1 (max deviation {dev:.3g})")
        object.__setattr__(self, "entries", _readonly(np.clip(a, 0.0, 1.0)))

    @property
    def dim_out(self) -> int:
        return self.entries.shape[0]

    @property
    def dim_in(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def to_povm(self) -> Povm:
        """Diagonal POVM ``M_x = sum_y entries[x, y] |y><y|``."""
        if self.dim_out != self.dim_in:
            raise ValidationError("only square stochastic matrices induce a POVM")
        return Povm(np.einsum("xy,yz->xyz", self.entries, np.eye(self.dim_in)))

    def to_dict(self) -> dict:
        return {
            "dim_out": self.dim_out,
            "dim_in": self.dim_in,
            "entries": [float(v) for v in self.entries.ravel()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StochasticMatrix":
        a = np.asarray(data["entries"], dtype=float)
        return cls(a.reshape(int(data["dim_out"]), int(data["dim_in"])))


@dataclass(frozen=True)
class QubitSubset:
    """Strictly increasing qubit indices ``qubits`` out of ``num_qubits``."""

    qubits: tuple
    num_qubits: int

    def __post_init__(self):
        q = tuple(int(i) for i in self.qubits)
        if any(b <= a for a, b in zip(q, q[1:])):
            raise ValidationError(f"subset {q} is not strictly increasing")
        if q and (q[0] < 0 or q[-1] >= self.num_qubits):
            raise ValidationError(f"subset {q} out of range for {self.num_qubits} qubits")
        object.__setattr__(self, "qubits", q)

    def __len__(self):
        return len(self.qubits)

    def __iter__(self):
        return iter(self.qubits)

    def complement(self) -> "QubitSubset":
        s = set(self.qubits)
        return QubitSubset(tuple(i for i in range(self.num_qubits) if i not in s), self.num_qubits)


def check_density_matrix(rho, dim: Optional[int] = None) -> np.ndarray:
    """Validate a density matrix and return it as a complex array."""
    r = np.asarray(rho, dtype=complex)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValidationError(f"density matrix must be square, got shape {r.shape}")
    if dim is not None and r.shape[0] != dim:
        raise ValidationError(f"density matrix has dimension {r.shape[0]}, expected {dim}")
    if np.max(np.abs(r - r.conj().T)) > HERMITIAN_TOL:
        raise ValidationError("density matrix not Hermitian")
    if abs(np.trace(r) - 1) > HERMITIAN_TOL:
        raise ValidationError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(r)[0] < PSD_TOL:
        raise ValidationError("density matrix not positive semidefinite")
    return r


def ket_to_dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(np.kron, mats, np.ones((1, 1), dtype=complex))


def ideal_povm(num_qubits: int) -> Povm:
    """Computational-basis projective measurement on ``num_qubits`` qubits."""
    d = 2**num_qubits
    return Povm(np.einsum("xy,yz->xyz", np.eye(d), np.eye(d)))


def tensor_povm(*povms: Povm) -> Povm:
    """Tensor product of POVMs; outcome index follows the factor order."""
    eff = np.ones((1, 1, 1), dtype=complex)
    for p in povms:
        eff = np.einsum("aij,bkl->abikjl", eff, p.effects).reshape(
            eff.shape[0] * p.num_outcomes, eff.shape[1] * p.dim, eff.shape[2] * p.dim
        )
    return Povm(eff)


def _as_probability_vector(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if abs(p.sum() - 1.0) > 1e-6:
        raise ValidationError(f"{name} is not normalized (sum {p.sum():.8g})")
    return p


def tvd(p, q) -> float:
    """Total variation distance ``0.5 * sum |p_i - q_i|``."""
    p = _as_probability_vector(p, "p")
    q = _as_probability_vector(q, "q")
    if p.shape != q.shape:
        raise ValidationError(f"length mismatch: {p.size} vs {q.size}")
    return float(0.5 * np.abs(p - q).sum())


def reduce_povm(m: Povm, subset, complement_state=None) -> Povm:
    """Reduced POVM on ``subset`` with a fixed state on the complement.

    Effects are ``sum_{x_c} tr_c[M_{x_a x_c} (I_a (x) sigma_c)]``; the default
    complement state is maximally mixed.
    """
    n = m.num_qubits
    if m.num_outcomes != m.dim:
        raise ValidationError("reduction needs one outcome bit per qubit (num_outcomes == dim)")
    a = subset if isinstance(subset, QubitSubset) else QubitSubset(tuple(subset), n)
    if a.num_qubits != n:
        raise ValidationError(f"subset refers to {a.num_qubits} qubits, POVM acts on {n}")
    comp = a.complement().qubits
    k, dc = len(a), 2 ** (n - len(a))
    if complement_state is None:
        sigma = np.eye(dc, dtype=complex) / dc
    else:
        sigma = check_density_matrix(complement_state, dc)
    order = list(a.qubits) + list(comp)
    e = m.effects.reshape((2,) * (3 * n))
    # axes: outcome bits, row bits, column bits
    perm = order + [n + q for q in order] + [2 * n + q for q in order]
    e = e.transpose(perm).reshape(2**k, dc, 2**k, dc, 2**k, dc)
    red = np.einsum("xyaibj,ji->xab", e, sigma)
    return Povm(red)


def _check_pair(m: Povm, n: Povm):
    if m.dim != n.dim or m.num_outcomes != n.num_outcomes:
        raise ValidationError(
            f"shape mismatch: ({m.num_outcomes}, {m.dim}) vs ({n.num_outcomes}, {n.dim})"
        )


def wc_distance(m: Povm, n: Povm, max_outcomes: int = DEFAULT_MAX_OUTCOMES) -> float:
    """Worst-case (operational) distance, exact by subset enumeration.

    ``sup_rho TVD = max_S lambda_max(sum_{i in S} (M_i - N_i))``.
    """
    _check_pair(m, n)
    if m.num_outcomes > max_outcomes:
        raise ValidationError(
            f"exponential subset enumeration exceeded: {m.num_outcomes} outcomes > cap {max_outcomes}"
        )
    diff = m.effects - n.effects
    best = 0.0
    for r in range(1, m.num_outcomes):
        for s in itertools.combinations(range(m.num_outcomes), r):
            best = max(best, float(np.linalg.eigvalsh(diff[list(s)].sum(axis=0))[-1]))
    return max(best, 0.0)


def wc_distance_stochastic(a, b) -> float:
    """Half the maximal column L1 norm of ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(0.5 * np.abs(a - b).sum(axis=0).max())


def ac_distance(m: Povm, n: Povm) -> float:
    """Average-case distance ``(1/2d) sum_i sqrt(||D_i||_HS^2 + tr(D_i)^2)``."""
    _check_pair(m, n)
    diff = m.effects - n.effects
    hs2 = np.sum(np.abs(diff) ** 2, axis=(1, 2))
    tr = np.einsum("kii->k", diff).real
    return float(np.sqrt(hs2 + tr**2).sum() / (2 * m.dim))


def measurement_choi(m: Povm) -> np.ndarray:
    """Choi matrix ``(1/d) sum_i |i><i| (x) M_i^T`` of the measurement channel."""
    k, d = m.num_outcomes, m.dim
    j = np.zeros((k * d, k * d), dtype=complex)
    for i in range(k):
        j[i * d : (i + 1) * d, i * d : (i + 1) * d] = m.effects[i].T / d
    return j


def born_probabilities(m: Povm, rho) -> np.ndarray:
    """Outcome probabilities ``tr(M_x rho)``, clamped and renormalized."""
    rho = check_density_matrix(rho, m.dim)
    p = np.einsum("kij,ji->k", m.effects, rho).real
    if p.min() < PSD_TOL:
        raise ValidationError(f"negative probability {p.min():.3g}")
    p = np.clip(p, 0.0, 1.0)
    return p / p.sum()
