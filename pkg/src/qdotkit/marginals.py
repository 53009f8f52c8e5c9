"""Reduced noise matrices and POVMs estimated from experiment records."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from ._parallel import map_ordered
from .circuits import ALPHABET_SIZE, DDOT, QDOT, SINGLE_QUBIT_STATES, normalize_protocol
from .povm import Povm, StochasticMatrix, ValidationError, kron_all
from .simulate import ExperimentRecords

DEFAULT_MAX_K = {DDOT: 4, QDOT: 2}
MAX_WORK = 10**8
CPTP_TOL = 1e-9
CPTP_MAX_ITER = 10_000


class CoverageError(ValidationError):
    """Raised when an estimate needs input settings that were never prepared."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


def _setting_label(index: int, k: int, base: int) -> str:
    digits = []
    for _ in range(k):
        index, r = divmod(index, base)
        digits.append(str(r))
    return "".join(reversed(digits))


@dataclass(frozen=True, eq=False)
class MarginalEntry:
    """Estimated ``Pr(x_A | y_A)`` for one qubit subset ``A``.

    ``counts[x, y]`` are pooled outcome counts, ``h[y]`` the number of
    circuits whose restriction to ``A`` equals ``y``. Columns with no data
    are reported in :attr:`uncovered` and hold NaN in :attr:`frequencies`.
    """

    qubits: tuple
    protocol: str
    counts: np.ndarray
    h: np.ndarray
    frequencies: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        counts = np.asarray(self.counts, dtype=float)
        h = np.asarray(self.h, dtype=np.int64)
        if counts.shape != (2**self.k, ALPHABET_SIZE[self.protocol] ** self.k) or h.shape != (counts.shape[1],):
            raise ValidationError(f"subset {self.qubits}: inconsistent table shapes")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "h", h)
        if self.frequencies is None:
            tot = counts.sum(axis=0)
            with np.errstate(invalid="ignore", divide="ignore"):
                freq = np.where(tot > 0, counts / np.where(tot > 0, tot, 1), np.nan)
            object.__setattr__(self, "frequencies", freq)

    @property
    def k(self) -> int:
        return len(self.qubits)

    @property
    def column_shots(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def uncovered(self) -> list:
        base = ALPHABET_SIZE[self.protocol]
        bad = np.flatnonzero(np.isnan(self.frequencies).any(axis=0))
        return [_setting_label(int(i), self.k, base) for i in bad]

    @property
    def covered(self) -> bool:
        return not np.isnan(self.frequencies).any()

    @property
    def matrix(self) -> StochasticMatrix:
        """The estimate as a stochastic matrix; raises if any column is uncovered."""
        if not self.covered:
            raise CoverageError(f"subset {self.qubits}: uncovered input settings {self.uncovered}")
        return StochasticMatrix(self.frequencies)

    def epsilon_star(self, p_err: float = 0.01, per: str = "circuits") -> float:
        """Worst-case-distance confidence radius using the least-sampled column.

        Shots of one circuit share the inputs of every qubit outside the
        subset, so by default the sample count is the number of circuits
        ``h``. ``per="shots"`` counts pooled shots instead, which is only
        valid when the marginal does not depend on the other inputs.
        """
        if per not in ("circuits", "shots"):
            raise ValidationError(f"per must be 'circuits' or 'shots', got {per!r}")
        n = float((self.h if per == "circuits" else self.column_shots).min())
        if n <= 0:
            return math.inf
        return noise_matrix_confidence(self.k, n, p_err)

    def to_dict(self) -> dict:
        base = ALPHABET_SIZE[self.protocol]
        out = {
            "qubits": list(self.qubits),
            "lambda": self.matrix.to_dict() if self.covered else None,
            "h": {_setting_label(i, self.k, base): int(v) for i, v in enumerate(self.h)},
            "shots": {_setting_label(i, self.k, base): int(v) for i, v in enumerate(self.column_shots)},
        }
        if not self.covered:
            out["uncovered"] = self.uncovered
            out["partial"] = [None if np.isnan(v) else float(v) for v in self.frequencies.ravel()]
        return out

    @classmethod
    def from_dict(cls, data: dict, protocol: str) -> "MarginalEntry":
        qubits = tuple(data["qubits"])
        k, base = len(qubits), ALPHABET_SIZE[protocol]
        labels = [_setting_label(i, k, base) for i in range(base**k)]
        h = np.array([data["h"].get(lab, 0) for lab in labels])
        shots = np.array([data.get("shots", {}).get(lab, 0) for lab in labels], dtype=float)
        if data.get("lambda") is not None:
            freq = StochasticMatrix.from_dict(data["lambda"]).entries.copy()
        else:
            freq = np.array([np.nan if v is None else v for v in data["partial"]], dtype=float)
            freq = freq.reshape(2**k, base**k)
        counts = np.nan_to_num(freq) * shots[None, :]
        return cls(qubits, protocol, counts, h, freq)


@dataclass(frozen=True, eq=False)
class MarginalTable:
    protocol: str
    num_qubits: int
    k: int
    entries: Dict[tuple, MarginalEntry] = field(default_factory=dict)

    def __getitem__(self, qubits) -> MarginalEntry:
        return self.entries[tuple(qubits)]

    def __contains__(self, qubits):
        return tuple(qubits) in self.entries

    def __len__(self):
        return len(self.entries)

    @property
    def subsets(self) -> list:
        return list(self.entries)

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "num_qubits": self.num_qubits,
            "k": self.k,
            "subsets": [e.to_dict() for e in self.entries.values()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MarginalTable":
        proto = normalize_protocol(data.get("protocol", DDOT))
        entries = {}
        for s in data["subsets"]:
            e = MarginalEntry.from_dict(s, proto)
            entries[e.qubits] = e
        return cls(proto, int(data["num_qubits"]), int(data["k"]), entries)


def _resolve_subsets(records: ExperimentRecords, k: int, subsets, max_k) -> list:
    n = records.num_qubits
    if subsets is None:
        cap = DEFAULT_MAX_K[records.protocol] if max_k is None else max_k
        if not 1 <= k <= min(cap, n):
            raise ValidationError(f"k={k} outside 1..{min(cap, n)} for {records.protocol}")
        work = k * math.comb(n, k) * 2**k
        if work > MAX_WORK:
            raise ValidationError(f"estimating all {math.comb(n, k)} subsets needs ~{work:.2e} updates; pass subsets explicitly")
        return list(itertools.combinations(range(n), k))
    out = []
    for s in subsets:
        q = tuple(sorted(int(i) for i in s))
        if len(q) != len(set(q)) or (q and (q[0] < 0 or q[-1] >= n)):
            raise ValidationError(f"invalid subset {tuple(s)}")
        if len(q) > 6:
            raise ValidationError(f"subset {q} too large")
        out.append(q)
    return out


def _accumulate(records: ExperimentRecords, qubits: tuple, weights: np.ndarray) -> MarginalEntry:
    settings, rec_idx, outcomes, _ = records.arrays
    base = ALPHABET_SIZE[records.protocol]
    k = len(qubits)
    ny = base**k
    y = np.zeros(len(settings), dtype=np.int64)
    x = np.zeros(len(outcomes), dtype=np.int64)
    for q in qubits:
        y = y * base + settings[:, q]
        x = x * 2 + outcomes[:, q]
    h = np.bincount(y, minlength=ny)
    flat = np.bincount(x * ny + y[rec_idx], weights=weights, minlength=(2**k) * ny)
    return MarginalEntry(qubits, records.protocol, flat.reshape(2**k, ny), h)


def estimate_marginals(records: ExperimentRecords, k: int, subsets: Optional[Iterable] = None,
                       threads=None, max_k: Optional[int] = None) -> MarginalTable:
    """Pooled conditional frequencies ``Pr(x_A | y_A)`` for every subset ``A``.

    By default all ``k``-subsets are estimated; pass ``subsets`` to pick
    specific ones (their sizes may differ from ``k``).
    """
    chosen = _resolve_subsets(records, k, subsets, max_k)
    _, _, _, counts = records.arrays
    w = counts.astype(float)
    entries = map_ordered(lambda q: _accumulate(records, q, w), chosen, threads)
    return MarginalTable(records.protocol, records.num_qubits, k, {e.qubits: e for e in entries})


def estimate_marginals_multishot(records: ExperimentRecords, k: int, subsets: Optional[Iterable] = None,
                                 threads=None, max_k: Optional[int] = None) -> MarginalTable:
    """Average of per-round frequencies, one round per record.

    Each record contributes its own conditional frequency with equal weight,
    so rounds with more shots do not dominate. With equal shots per record
    this equals :func:`estimate_marginals`.
    """
    chosen = _resolve_subsets(records, k, subsets, max_k)
    _, rec_idx, _, counts = records.arrays
    w = counts / records.shots[rec_idx]
    entries = map_ordered(lambda q: _accumulate(records, q, w), chosen, threads)
    return MarginalTable(records.protocol, records.num_qubits, k, {e.qubits: e for e in entries})


# ---------------------------------------------------------------------------
# Choi reconstruction

def _dual_frame(k: int) -> np.ndarray:
    """Dual operators ``(3 rho_y - I)^T / 3`` per qubit, tensored over ``k`` qubits."""
    single = np.stack([(3 * r - np.eye(2)).T / 3 for r in SINGLE_QUBIT_STATES])
    out = np.ones((1, 1, 1), dtype=complex)
    for _ in range(k):
        out = np.einsum("aij,bkl->abikjl", out, single).reshape(out.shape[0] * 6, out.shape[1] * 2, out.shape[2] * 2)
    return out


def choi_from_probabilities(probs: np.ndarray) -> np.ndarray:
    """Linear-inversion Choi estimate from a ``2^k x 6^k`` table of ``Pr(x|y)``."""
    probs = np.asarray(probs, dtype=float)
    d = probs.shape[0]
    k = int(round(math.log2(d)))
    if probs.shape != (2**k, 6**k):
        raise ValidationError(f"expected a {2**k}x{6**k} probability table, got {probs.shape}")
    frame = _dual_frame(k)
    blocks = np.einsum("xy,yij->xij", probs, frame) / d
    j = np.zeros((d * d, d * d), dtype=complex)
    for x in range(d):
        j[x * d : (x + 1) * d, x * d : (x + 1) * d] = blocks[x]
    return 0.5 * (j + j.conj().T)


def estimate_choi_ls(records: ExperimentRecords, subset) -> np.ndarray:
    """Unbiased Choi-state estimate of the reduced measurement on ``subset``."""
    if records.protocol != QDOT:
        raise ValidationError("Choi reconstruction needs QDOT records")
    qubits = tuple(subset.qubits) if hasattr(subset, "qubits") else tuple(subset)
    entry = estimate_marginals(records, len(qubits), [qubits])[qubits]
    if not entry.covered:
        raise CoverageError(f"subset {entry.qubits}: uncovered input settings {entry.uncovered}")
    return choi_from_probabilities(entry.frequencies)


def _partial_trace_out(j: np.ndarray, d_out: int, d_in: int) -> np.ndarray:
    return np.einsum("aiaj->ij", j.reshape(d_out, d_in, d_out, d_in))


def _project_psd(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * np.clip(w, 0, None)) @ v.conj().T


def _project_tp(a: np.ndarray, d_out: int, d_in: int) -> np.ndarray:
    gap = np.eye(d_in) / d_in - _partial_trace_out(a, d_out, d_in)
    return a + np.kron(np.eye(d_out), gap) / d_out


def project_cptp(choi, dims, tol: float = CPTP_TOL, max_iter: int = CPTP_MAX_ITER) -> np.ndarray:
    """Nearest (HS) PSD matrix whose output partial trace is ``I/d_in``.

    ``dims = (d_out, d_in)``, output factor first. Uses Dykstra's alternating
    projections between the PSD cone and the trace-preserving affine set.
    """
    d_out, d_in = (int(d) for d in dims)
    a = np.asarray(choi, dtype=complex)
    if a.shape != (d_out * d_in, d_out * d_in):
        raise ValidationError(f"Choi matrix shape {a.shape} does not match dims {dims}")
    if np.max(np.abs(a - a.conj().T), initial=0) > 1e-8:
        raise ValidationError("Choi matrix must be Hermitian")
    a = 0.5 * (a + a.conj().T)
    x = a
    p = np.zeros_like(a)
    q = np.zeros_like(a)
    for it in range(max_iter):
        y = _project_psd(x + p)
        p = x + p - y
        x_new = _project_tp(y + q, d_out, d_in)
        q = y + q - x_new
        step = np.linalg.norm(x_new - x)
        x = x_new
        if step < tol:
            break
    else:
        raise ConvergenceError(
            f"CPTP projection did not converge in {max_iter} iterations",
            {"last_step": float(step), "min_eig": float(np.linalg.eigvalsh(x).min())},
        )
    x = 0.5 * (x + x.conj().T)
    # pull the last affine iterate back into the PSD cone along the maximally mixed direction
    lo = float(np.linalg.eigvalsh(x).min())
    if lo < 0:
        c = 1.0 / (d_out * d_in)
        t = -lo / (c - lo)
        x = (1 - t) * x + t * c * np.eye(d_out * d_in)
    return x


def povm_from_choi(choi, num_outcomes: int) -> Povm:
    """Effects ``M_x = d (<x| (x) I) J (|x> (x) I)^T``, diagonal blocks only."""
    j = np.asarray(choi, dtype=complex)
    d = j.shape[0] // num_outcomes
    eff = np.stack([d * j[x * d : (x + 1) * d, x * d : (x + 1) * d].T for x in range(num_outcomes)])
    # renormalize tiny sum-to-identity drift left by the projection
    s = eff.sum(axis=0)
    w, v = np.linalg.eigh(s)
    fix = (v / np.sqrt(w)) @ v.conj().T
    return Povm(np.einsum("ij,xjk,kl->xil", fix, eff, fix))


def povm_from_marginal(entry: MarginalEntry, project: bool = True) -> Povm:
    """POVM implied by an estimated marginal.

    DDOT entries give the diagonal POVM of the noise matrix. QDOT entries go
    through the Choi estimate, projected onto CPTP maps first.
    """
    if not entry.covered:
        raise CoverageError(f"subset {entry.qubits}: uncovered input settings {entry.uncovered}")
    if entry.protocol == DDOT:
        return entry.matrix.to_povm()
    d = 2**entry.k
    j = choi_from_probabilities(entry.frequencies)
    if project:
        j = project_cptp(j, (d, d))
    return povm_from_choi(j, d)


# ---------------------------------------------------------------------------
# confidence radii

@dataclass(frozen=True)
class TvdBound:
    epsilon_star: float
    p_err: float
    n_shots: int
    dim: int


def _check_p_err(p_err):
    if not 0 < p_err < 1:
        raise ValidationError("p_err must lie in (0, 1)")


def tvd_confidence(n_shots, dim: int, p_err: float) -> TvdBound:
    """TVD radius holding with probability ``1 - p_err`` for ``dim`` outcomes."""
    _check_p_err(p_err)
    if dim < 2:
        raise ValidationError("dim must be >= 2")
    if n_shots <= 0:
        raise ValidationError("n_shots must be positive")
    eps = math.sqrt((math.log(2.0**dim - 2) - math.log(p_err)) / (2 * n_shots))
    return TvdBound(eps, p_err, int(n_shots), dim)


def noise_matrix_confidence(k: int, n_shots, p_err: float) -> float:
    """Worst-case-distance radius for an estimated ``k``-qubit noise matrix."""
    _check_p_err(p_err)
    if n_shots <= 0 or k < 1:
        raise ValidationError("need k >= 1 and n_shots > 0")
    log_count = k * math.log(2) + math.log(2.0 ** (2**k) - 2)
    return math.sqrt((log_count - math.log(p_err)) / (2 * n_shots))


def entry_probabilities_from_povm(povm: Povm, protocol: str = QDOT) -> np.ndarray:
    """Exact ``Pr(x|y)`` table of a POVM over all input settings of ``protocol``."""
    k = povm.num_qubits
    base = ALPHABET_SIZE[normalize_protocol(protocol)]
    cols = []
    for y in range(base**k):
        lab = _setting_label(y, k, base)
        rho = kron_all([SINGLE_QUBIT_STATES[int(s)] for s in lab])
        cols.append(np.einsum("kij,ji->k", povm.effects, rho).real)
    return np.stack(cols, axis=1)

