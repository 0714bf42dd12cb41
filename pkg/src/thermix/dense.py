"""Exact dense reference computations on at most ``MAX_DENSE_SITES`` qubits.

Density matrices are plain complex ``ndarray`` objects of shape
``(2**n, 2**n)``; site 0 is the most significant tensor factor. All entropies
use the natural logarithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .hamiltonian import (MAX_DENSE_SITES, PAULI_X, PAULI_Y, PAULI_Z,
                          HamiltonianError, SpinChainHamiltonian, assemble_dense)

__all__ = [
    "EIG_CLAMP", "DimensionError", "RegionSplit", "CorrelationProfile",
    "num_sites", "hermitian_function", "matrix_sqrt", "matrix_inv_sqrt",
    "gibbs_state", "gibbs_from_matrix", "log_partition_function", "thermal_energy",
    "is_density_matrix", "trace_distance", "partial_trace", "reorder_sites",
    "von_neumann_entropy", "mutual_information", "conditional_mutual_information",
    "correlation_decay_profile", "purify", "embed_operator",
]

EIG_CLAMP = 1e-14


class DimensionError(ValueError):
    """Raised for mismatched or unsupported dimensions."""


def num_sites(op: np.ndarray) -> int:
    dim = op.shape[0]
    n = int(round(np.log2(dim))) if dim > 0 else -1
    if n < 0 or 2 ** n != dim:
        raise DimensionError(f"dimension {dim} is not a power of two")
    return n


def _herm(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def hermitian_function(m: np.ndarray, f, clamp: Optional[float] = None) -> np.ndarray:
    """Apply ``f`` to the eigenvalues of the Hermitian matrix ``m``.

    With ``clamp`` set, eigenvalues are raised to at least ``clamp`` first
    (used before log, inverse and inverse square root).
    """
    w, v = np.linalg.eigh(_herm(m))
    if clamp is not None:
        w = np.maximum(w, clamp)
    return (v * f(w)) @ v.conj().T


def matrix_sqrt(m: np.ndarray) -> np.ndarray:
    return hermitian_function(m, np.sqrt, clamp=0.0)


def matrix_inv_sqrt(m: np.ndarray) -> np.ndarray:
    return hermitian_function(m, lambda w: 1.0 / np.sqrt(w), clamp=EIG_CLAMP)


def gibbs_from_matrix(hmat: np.ndarray, T: float) -> np.ndarray:
    """Normalized ``exp(-hmat/T)`` for a dense Hermitian matrix."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    w, v = np.linalg.eigh(_herm(hmat))
    boltz = np.exp(-(w - w.min()) / T)
    boltz /= boltz.sum()
    return (v * boltz) @ v.conj().T


def gibbs_state(h: SpinChainHamiltonian, T: float) -> np.ndarray:
    """Thermal state ``exp(-H/T)/Z`` of ``h``."""
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if h.n > MAX_DENSE_SITES:
        raise DimensionError(f"dense limit is n <= {MAX_DENSE_SITES}")
    return gibbs_from_matrix(assemble_dense(h), T)


def log_partition_function(h: SpinChainHamiltonian, beta: float) -> float:
    w = np.linalg.eigvalsh(assemble_dense(h))
    shift = w.min()
    return float(-beta * shift + np.log(np.sum(np.exp(-beta * (w - shift)))))


def thermal_energy(h: SpinChainHamiltonian, T: float) -> float:
    hmat = assemble_dense(h)
    return float(np.real(np.trace(gibbs_from_matrix(hmat, T) @ hmat)))


def is_density_matrix(rho: np.ndarray, tol: float = 1e-10) -> bool:
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        return False
    if abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh(_herm(rho)).min() >= -tol)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Trace norm ``||rho - sigma||_1`` (sum of absolute eigenvalues); lies in
    [0, 2] for density matrices."""
    if rho.shape != sigma.shape:
        raise DimensionError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    return float(np.sum(np.abs(np.linalg.eigvalsh(_herm(rho - sigma)))))


def reorder_sites(op: np.ndarray, sites: Sequence[int], new_sites: Sequence[int]) -> np.ndarray:
    """Permute the tensor factors of ``op`` (labelled ``sites``) into the order
    ``new_sites``. Works for vectors and square operators."""
    sites = list(sites)
    new_sites = list(new_sites)
    if sorted(sites) != sorted(new_sites):
        raise DimensionError("site label sets differ")
    k = len(sites)
    perm = [sites.index(s) for s in new_sites]
    if op.ndim == 1:
        return op.reshape((2,) * k).transpose(perm).reshape(-1) if k else op
    if k == 0:
        return op
    full = perm + [k + p for p in perm]
    return op.reshape((2,) * (2 * k)).transpose(full).reshape(2 ** k, 2 ** k)


def partial_trace(rho: np.ndarray, keep: Sequence[int], n: Optional[int] = None) -> np.ndarray:
    """Reduced state on the sites ``keep`` (output factors in the order given)."""
    if n is None:
        n = num_sites(rho)
    keep = list(keep)
    if len(set(keep)) != len(keep) or any(not 0 <= s < n for s in keep):
        raise DimensionError(f"invalid kept sites {keep} for n={n}")
    traced = [s for s in range(n) if s not in keep]
    t = rho.reshape((2,) * (2 * n))
    # bring kept ket axes, traced ket axes, kept bra axes, traced bra axes
    perm = keep + traced + [n + s for s in keep] + [n + s for s in traced]
    t = t.transpose(perm)
    dk, dt = 2 ** len(keep), 2 ** len(traced)
    t = t.reshape(dk, dt, dk, dt)
    return np.einsum("ajbj->ab", t)


def embed_operator(op: np.ndarray, sites: Sequence[int], n: int) -> np.ndarray:
    """Dense ``op`` on ``sites`` tensored with identity elsewhere."""
    sites = list(sites)
    rest = [s for s in range(n) if s not in sites]
    full = np.kron(op, np.eye(2 ** len(rest)))
    return reorder_sites(full, sites + rest, list(range(n)))


def von_neumann_entropy(rho: np.ndarray) -> float:
    w = np.linalg.eigvalsh(_herm(rho))
    w = w[w > EIG_CLAMP]
    return float(-np.sum(w * np.log(w)))


def _entropy_of(rho, sites, n):
    if not sites:
        return 0.0
    return von_neumann_entropy(partial_trace(rho, sorted(sites), n))


def mutual_information(rho: np.ndarray, region_a: Sequence[int],
                       region_b: Optional[Sequence[int]] = None) -> float:
    """``I(A:B) = S(A) + S(B) - S(AB)``; ``region_b`` defaults to the complement."""
    n = num_sites(rho)
    a = list(region_a)
    b = [s for s in range(n) if s not in a] if region_b is None else list(region_b)
    if set(a) & set(b):
        raise DimensionError("regions overlap")
    return _entropy_of(rho, a, n) + _entropy_of(rho, b, n) - _entropy_of(rho, a + b, n)


@dataclass(frozen=True)
class RegionSplit:
    """Tripartition ``(alpha, beta, gamma)`` of site labels ``0..n-1``.

    ``alpha`` and ``gamma`` may be empty. Regions need not be contiguous
    (the block construction recovers into a region sandwiched between the two
    halves of its buffer); see :attr:`contiguous`.
    """
    alpha: tuple
    beta: tuple
    gamma: tuple
    n: int

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            object.__setattr__(self, name, tuple(sorted(int(s) for s in getattr(self, name))))
        allsites = self.alpha + self.beta + self.gamma
        if len(set(allsites)) != len(allsites):
            raise DimensionError("regions are not disjoint")
        if sorted(allsites) != list(range(self.n)):
            raise DimensionError("regions do not cover the chain")

    @classmethod
    def from_sizes(cls, n: int, a: int, b: int) -> "RegionSplit":
        if a < 0 or b < 0 or a + b > n:
            raise DimensionError("region sizes exceed the chain")
        return cls(tuple(range(a)), tuple(range(a, a + b)), tuple(range(a + b, n)), n)

    @classmethod
    def centered(cls, n: int, b: int) -> "RegionSplit":
        """Buffer of size ``b`` with ``alpha`` and ``gamma`` as equal as possible."""
        return cls.from_sizes(n, (n - b) // 2, b)

    @property
    def contiguous(self) -> bool:
        def run(r):
            return list(r) == list(range(r[0], r[-1] + 1)) if r else True
        order = [r for r in (self.alpha, self.beta, self.gamma) if r]
        return all(run(r) for r in order) and all(
            order[k][-1] + 1 == order[k + 1][0] for k in range(len(order) - 1))


def conditional_mutual_information(rho: np.ndarray, split: RegionSplit) -> float:
    """``I(alpha:gamma|beta) = S(ab) + S(bg) - S(b) - S(abg)``."""
    n = num_sites(rho)
    if n != split.n:
        raise DimensionError("split does not match state size")
    a, b, g = list(split.alpha), list(split.beta), list(split.gamma)
    return (_entropy_of(rho, a + b, n) + _entropy_of(rho, b + g, n)
            - _entropy_of(rho, b, n) - _entropy_of(rho, a + b + g, n))


@dataclass
class CorrelationProfile:
    distances: np.ndarray
    correlations: np.ndarray
    correlation_length: float
    fit_r2: float


def _linear_fit(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def correlation_decay_profile(rho: np.ndarray, observables=None, floor: float = 1e-13) -> CorrelationProfile:
    """Maximum connected two-point correlation at each distance.

    For every distance ``d`` the value is the maximum over site pairs
    ``(i, i+d)`` and observable pairs of ``|<O_i P_j> - <O_i><P_j>|``. The
    correlation length comes from a least-squares fit of ``log C(d)`` against
    ``d`` over distances where ``C(d) > floor``; it is NaN if fewer than two
    such points exist.
    """
    n = num_sites(rho)
    if n - 1 < 3:
        raise DimensionError("need at least three distances (n >= 4)")
    if observables is None:
        observables = [PAULI_X, PAULI_Y, PAULI_Z]
    one = [partial_trace(rho, [i], n) for i in range(n)]
    singles = [[np.trace(r @ o) for o in observables] for r in one]
    dists = np.arange(1, n)
    corr = np.zeros(len(dists))
    for k, d in enumerate(dists):
        best = 0.0
        for i in range(n - d):
            r2 = partial_trace(rho, [i, i + d], n)
            for a, oa in enumerate(observables):
                for b, ob in enumerate(observables):
                    c = np.trace(r2 @ np.kron(oa, ob)) - singles[i][a] * singles[i + d][b]
                    best = max(best, abs(c))
        corr[k] = best
    mask = corr > floor
    xi, r2fit = float("nan"), float("nan")
    if mask.sum() >= 2:
        slope, _, r2fit = _linear_fit(dists[mask].astype(float), np.log(corr[mask]))
        xi = -1.0 / slope if slope < 0 else float("inf")
    return CorrelationProfile(dists, corr, xi, r2fit)


def purify(rho: np.ndarray, tol: float = EIG_CLAMP) -> np.ndarray:
    """Purification of ``rho`` as a ``(dim, r)`` matrix ``psi[s, k]``.

    ``r`` is the number of eigenvalues above ``tol``; the reference register
    is the eigenbasis of ``rho``, so ``psi @ psi.conj().T == rho``.
    """
    w, v = np.linalg.eigh(_herm(rho))
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    keep = w > tol
    if not keep.any():
        raise ValueError("state has no support above tolerance")
    return v[:, keep] * np.sqrt(w[keep])
