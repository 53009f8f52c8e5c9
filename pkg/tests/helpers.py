"""Random objects shared by the test modules."""

import numpy as np

from qdotkit.povm import Povm


def haar_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def haar_states(rng, d, n):
    """``n`` Haar-random pure states as kets, shape ``(n, d)``."""
    v = rng.normal(size=(n, d)) + 1j * rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_povm(rng, m, d):
    """Random ``m``-outcome POVM from normalized Wishart matrices."""
    g = rng.normal(size=(m, d, d)) + 1j * rng.normal(size=(m, d, d))
    w = np.einsum("kij,klj->kil", g, g.conj())
    s = w.sum(axis=0)
    vals, vecs = np.linalg.eigh(s)
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.conj().T
    return Povm(np.einsum("ij,kjl,lm->kim", inv_sqrt, w, inv_sqrt))


def random_stochastic(rng, d, d_in=None):
    a = rng.random((d, d if d_in is None else d_in))
    return a / a.sum(axis=0, keepdims=True)


def x_dependent_povm(s=0.3):
    """2-qubit POVM where qubit 1 affects qubit 0 only through its X component.

    Qubit 0 reads out ideally unless qubit 1 projects onto |-> (strength ``s``),
    in which case outcome 0 flips to 1. Qubit 1 is read out in Z afterwards.
    """
    minus = np.array([[1, -1], [-1, 1]]) / 2
    e1 = np.kron(np.diag([0.0, 1.0]), np.eye(2)) + np.kron(np.diag([1.0, 0.0]), s * minus)
    e0 = np.eye(4) - e1
    effects = []
    for xa, e in ((0, e0), (1, e1)):
        w, v = np.linalg.eigh(e)
        root = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
        for xb in (0, 1):
            proj = np.kron(np.eye(2), np.diag([1.0 - xb, float(xb)]))
            effects.append(root @ proj @ root)
    return Povm(np.stack(effects))
