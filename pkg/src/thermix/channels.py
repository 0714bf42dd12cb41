"""Kraus-operator utilities for channels between qubit registers.

Kraus operators are stored stacked as an array of shape ``(k, d_out, d_in)``.
States and operators on labelled sites carry an explicit list of site labels
giving the order of their tensor factors.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dense import reorder_sites

__all__ = [
    "as_kraus", "tp_defect", "apply_kraus", "choi_matrix", "minimal_kraus",
    "stinespring_isometry", "channel_from_isometry", "apply_channel_labeled",
    "apply_operator_labeled", "depolarizing_kraus", "identity_kraus",
]


def as_kraus(kraus) -> np.ndarray:
    k = np.asarray(kraus, dtype=complex)
    if k.ndim == 2:
        k = k[None]
    if k.ndim != 3:
        raise ValueError("Kraus operators must be stacked as (k, d_out, d_in)")
    return k


def identity_kraus(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=complex)[None]


def depolarizing_kraus() -> np.ndarray:
    """Completely depolarizing qubit channel, ``X -> Tr[X] I/2``."""
    paulis = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]),
              np.diag([1, -1])]
    return np.array(paulis, dtype=complex) / 2


def tp_defect(kraus) -> float:
    """``max |sum_k K_k^dag K_k - I|`` entrywise."""
    k = as_kraus(kraus)
    s = np.einsum("koi,koj->ij", k.conj(), k)
    return float(np.max(np.abs(s - np.eye(s.shape[0]))))


def apply_kraus(rho: np.ndarray, kraus) -> np.ndarray:
    k = as_kraus(kraus)
    return np.einsum("koi,ij,kpj->op", k, rho, k.conj(), optimize=True)


def choi_matrix(kraus) -> np.ndarray:
    """``J = sum_ij |i><j| (x) Lambda(|i><j|)`` with the input factor first."""
    k = as_kraus(kraus)
    _, dout, din = k.shape
    # vectors v_k[(i, o)] = K_k[o, i]
    vecs = k.transpose(0, 2, 1).reshape(k.shape[0], din * dout)
    return vecs.T @ vecs.conj()


def minimal_kraus(kraus, rel_tol: float = 1e-12) -> np.ndarray:
    """Equivalent Kraus set of minimal length (the Choi rank).

    Uses an SVD of the stacked, vectorized operators, which is the Choi
    eigendecomposition without forming the Choi matrix.
    """
    k = as_kraus(kraus)
    num, dout, din = k.shape
    m = k.reshape(num, dout * din).T
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((1, dout, din), dtype=complex)
    keep = s > rel_tol * s[0]
    out = (u[:, keep] * s[keep]).T.reshape(-1, dout, din)
    return out


def stinespring_isometry(kraus) -> np.ndarray:
    """``V = sum_k K_k (x) |k>_env`` with the output register before the
    environment; shape ``(d_out * k, d_in)``."""
    k = as_kraus(kraus)
    num, dout, din = k.shape
    return k.transpose(1, 0, 2).reshape(dout * num, din)


def channel_from_isometry(v: np.ndarray, dout: int, rho: np.ndarray) -> np.ndarray:
    """``Tr_env[V rho V^dag]`` for an isometry laid out as in
    :func:`stinespring_isometry`."""
    denv = v.shape[0] // dout
    full = (v @ rho @ v.conj().T).reshape(dout, denv, dout, denv)
    return np.einsum("aebe->ab", full)


def apply_channel_labeled(rho: np.ndarray, sites: Sequence[int], kraus,
                          in_sites: Sequence[int], out_sites: Sequence[int]):
    """Apply a channel on the factors ``in_sites`` of ``rho`` (labelled by
    ``sites``). Returns ``(rho', sites')`` where the untouched factors come first
    followed by ``out_sites``."""
    k = as_kraus(kraus)
    sites, in_sites, out_sites = list(sites), list(in_sites), list(out_sites)
    rest = [s for s in sites if s not in in_sites]
    if len(rest) + len(in_sites) != len(sites):
        raise ValueError("channel input sites not present in state")
    if set(out_sites) & set(rest):
        raise ValueError("channel output collides with untouched sites")
    if k.shape[2] != 2 ** len(in_sites) or k.shape[1] != 2 ** len(out_sites):
        raise ValueError("Kraus dimensions do not match site lists")
    r = reorder_sites(rho, sites, rest + in_sites)
    dr, di, do = 2 ** len(rest), 2 ** len(in_sites), 2 ** len(out_sites)
    r4 = r.reshape(dr, di, dr, di)
    out = np.zeros((dr, do, dr, do), dtype=complex)
    for kk in k:
        x = np.einsum("oi,aibj->aobj", kk, r4, optimize=True)
        out += np.einsum("aobj,pj->aobp", x, kk.conj(), optimize=True)
    return out.reshape(dr * do, dr * do), rest + out_sites


def apply_operator_labeled(vec: np.ndarray, sites: Sequence[int], op: np.ndarray,
                           in_sites: Sequence[int], out_sites: Sequence[int]):
    """Apply ``op`` (``d_out x d_in``) to a labelled state vector. Returns
    ``(vec', sites')`` with the untouched factors first."""
    sites, in_sites, out_sites = list(sites), list(in_sites), list(out_sites)
    rest = [s for s in sites if s not in in_sites]
    v = reorder_sites(vec, sites, rest + in_sites) if sites else vec
    m = v.reshape(2 ** len(rest), 2 ** len(in_sites))
    return (m @ op.T).reshape(-1), rest + out_sites
