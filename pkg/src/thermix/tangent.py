"""Tangent-space calculus for small MPS and ensemble quench dynamics.

Every tensor entry of an open-boundary MPS is a complex parameter. The state
is linear in each entry, so first and second parameter derivatives are
obtained exactly by substituting unit tensors. Everything here materializes
dense vectors and is meant for chains of at most eight sites.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dense import DimensionError, embed_operator, gibbs_from_matrix
from .hamiltonian import SpinChainHamiltonian, assemble_dense, PAULI_X, PAULI_Z
from .metts import estimate_from_values
from .mps import (MatrixProductState, MPSEnsemble, MPSError, apply_local_unitary, canonicalize,
                  expectation, to_dense)
from .trotter import evolve_time

__all__ = [
    "TangentError", "TangentFrame", "HamiltonianActionDecomposition", "DiffusionSummary",
    "TrajectoryRow", "tangent_frame", "double_tangents", "finite_difference_check",
    "decompose_action", "drift_field", "tdvp_drift_step", "tdvp_evolve",
    "diffusion_matrix_check", "quench_protocol", "dense_quench_reference",
]

MAX_TANGENT_SITES = 8
PINV_RCOND = 1e-10
OBSERVABLES = {"Z": PAULI_Z, "X": PAULI_X}


class TangentError(RuntimeError):
    pass


def _envs(tensors):
    """Dense left environments ``L[k]`` of shape ``(2**k, Dl_k)`` and right
    environments ``R[k]`` of shape ``(Dr_k, 2**(n-k-1))``."""
    n = len(tensors)
    left = [np.ones((1, 1), dtype=complex)]
    for k in range(n - 1):
        a = tensors[k]
        left.append(np.einsum("xa,asb->xsb", left[k], a).reshape(-1, a.shape[2]))
    right = [None] * n
    right[n - 1] = np.ones((1, 1), dtype=complex)
    for k in range(n - 1, 0, -1):
        a = tensors[k]
        right[k - 1] = np.einsum("asb,by->asy", a, right[k]).reshape(a.shape[0], -1)
    return left, right


@dataclass
class TangentFrame:
    """Tangent vectors of ``psi`` with respect to every tensor entry.

    ``index[i] = (site, (a, s, b))`` maps flat parameter ``i`` to its tensor
    entry; ``vectors`` has one column per parameter and ``metric`` is their
    Gram matrix ``g = T^dag T``.
    """
    psi: MatrixProductState
    index: list
    offsets: list
    vectors: np.ndarray
    metric: np.ndarray
    rank: int
    cutoff: float

    @property
    def num_params(self) -> int:
        return self.vectors.shape[1]

    @property
    def gauge_nullity(self) -> int:
        return self.num_params - self.rank

    def pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.vectors, rcond=self.cutoff)


def _check_size(psi: MatrixProductState):
    if psi.boundary != "open":
        raise MPSError("tangent calculus requires open boundary")
    if psi.n > MAX_TANGENT_SITES:
        raise DimensionError(f"tangent calculus limited to n <= {MAX_TANGENT_SITES}")


def tangent_frame(psi: MatrixProductState, cutoff: float = PINV_RCOND) -> TangentFrame:
    _check_size(psi)
    ts = psi.tensors
    left, right = _envs(ts)
    cols, index, offsets = [], [], []
    count = 0
    eye = np.eye(ts[0].shape[1])
    for k, a in enumerate(ts):
        blk = np.einsum("xa,st,by->xsyatb", left[k], eye, right[k])
        cols.append(blk.reshape(-1, a.size))
        offsets.append(count)
        count += a.size
        index.extend((k, idx) for idx in np.ndindex(*a.shape))
    t = np.concatenate(cols, axis=1)
    g = t.conj().T @ t
    sv = np.linalg.svd(t, compute_uv=False)
    rank = int(np.sum(sv > cutoff * sv[0])) if sv.size and sv[0] > 0 else 0
    return TangentFrame(psi, index, offsets, t, g, rank, cutoff)


def double_tangents(psi: MatrixProductState):
    """Second derivatives ``d_i d_j psi`` for parameters on distinct sites.

    Returns ``(vectors, pairs)``; ``pairs[q] = (i, j)`` with ``i < j`` flat
    parameter indices. Derivatives within one tensor vanish identically.
    """
    _check_size(psi)
    ts = psi.tensors
    n = len(ts)
    d = ts[0].shape[1]
    left, right = _envs(ts)
    eye = np.eye(d)
    offsets = np.cumsum([0] + [a.size for a in ts])
    cols, pairs = [], []
    for k in range(n):
        for m in range(k + 1, n):
            # middle block between sites k and m, shape (Dr_k, 2**(m-k-1), Dl_m)
            mid = np.eye(ts[k].shape[2], dtype=complex)[:, None, :]
            for q in range(k + 1, m):
                mid = np.einsum("bzc,csd->bzsd", mid, ts[q]).reshape(mid.shape[0], -1,
                                                                     ts[q].shape[2])
            blk = np.einsum("xa,su,bzc,tv,ey->xsztyaubcve", left[k], eye, mid, eye, right[m])
            pk, pm = ts[k].size, ts[m].size
            cols.append(blk.reshape(-1, pk * pm))
            ii = offsets[k] + np.arange(pk)
            jj = offsets[m] + np.arange(pm)
            pairs.extend((int(i), int(j)) for i in ii for j in jj)
    if not cols:
        return np.zeros((d ** n, 0), dtype=complex), []
    return np.concatenate(cols, axis=1), pairs


def _amplitudes_with(ts, k, tensor):
    ts = list(ts)
    ts[k] = tensor
    return to_dense(MatrixProductState(tuple(ts)))


def finite_difference_check(psi: MatrixProductState, frame: Optional[TangentFrame] = None,
                            step: float = 1e-6) -> float:
    """Largest relative deviation between tangent vectors and central
    differences of the amplitudes."""
    frame = frame or tangent_frame(psi)
    worst = 0.0
    for i, (k, idx) in enumerate(frame.index):
        a = np.array(psi.tensors[k], dtype=complex)
        e = np.zeros_like(a)
        e[idx] = step
        fd = (_amplitudes_with(psi.tensors, k, a + e) - _amplitudes_with(psi.tensors, k, a - e)) / (2 * step)
        col = frame.vectors[:, i]
        scale = max(np.linalg.norm(col), 1e-300)
        worst = max(worst, float(np.linalg.norm(fd - col) / scale))
    return worst


@dataclass
class HamiltonianActionDecomposition:
    """``H psi = E psi + h^i d_i psi + h^{ij} d_i d_j psi + remainder``.

    ``h2`` holds one coefficient per unordered pair in ``pairs``.
    ``residual`` is the norm of ``H psi`` minus its orthogonal projection onto
    ``span{psi, d_i psi, d_i d_j psi}``; ``tangent_residual`` uses
    ``span{psi, d_i psi}`` only; ``expansion_residual`` is the norm of
    ``H psi - E psi - T h1 - T2 h2`` with the coefficients as defined.
    """
    energy: complex
    h1: np.ndarray
    h2: np.ndarray
    pairs: list
    residual: float
    tangent_residual: float
    expansion_residual: float
    action_norm: float
    metric_rank: int
    double_rank: int


def _projection_residual(vec: np.ndarray, basis: np.ndarray, rcond: float) -> float:
    if basis.shape[1] == 0:
        return float(np.linalg.norm(vec))
    u, s, _ = np.linalg.svd(basis, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return float(np.linalg.norm(vec))
    u = u[:, s > rcond * s[0]]
    return float(np.linalg.norm(vec - u @ (u.conj().T @ vec)))


def _hamiltonian_matrix(h) -> np.ndarray:
    return assemble_dense(h) if isinstance(h, SpinChainHamiltonian) else np.asarray(h)


def decompose_action(psi: MatrixProductState, h, cutoff: float = PINV_RCOND,
                     second_order: bool = True) -> HamiltonianActionDecomposition:
    """Project ``H psi`` on the tangent and double-tangent spaces.

    ``h`` is a :class:`SpinChainHamiltonian` or a dense matrix. ``h^i`` uses
    the metric pseudo-inverse; ``h^{ij}`` uses the double-tangent Gram
    pseudo-inverse applied to
    ``<d_k d_l psi|H-E|psi> - <d_k psi|H-E|psi><d_l psi|psi> - <d_l psi|H-E|psi><d_k psi|psi>``.
    """
    hmat = _hamiltonian_matrix(h)
    vec = to_dense(psi)
    nrm = np.linalg.norm(vec)
    if abs(nrm - 1) > 1e-8:
        raise TangentError("state must be normalized")
    hv = hmat @ vec
    e = complex(np.vdot(vec, hv))
    r = hv - e * vec
    frame = tangent_frame(psi, cutoff)
    if frame.rank == 0:
        raise TangentError("metric cutoff removed the entire tangent space")
    t = frame.vectors
    h1 = frame.pinv() @ r
    tr = t.conj().T @ r
    tpsi = t.conj().T @ vec
    base = np.column_stack([vec, t])
    tangent_res = _projection_residual(hv, base, cutoff)
    if second_order:
        t2, pairs = double_tangents(psi)
        rhs = t2.conj().T @ r
        ii = np.array([p[0] for p in pairs], dtype=int)
        jj = np.array([p[1] for p in pairs], dtype=int)
        if len(pairs):
            rhs = rhs - tr[ii] * tpsi[jj] - tr[jj] * tpsi[ii]
            g2 = t2.conj().T @ t2
            h2 = np.linalg.pinv(g2, rcond=cutoff, hermitian=True) @ rhs
            sv = np.linalg.svd(t2, compute_uv=False)
            rank2 = int(np.sum(sv > cutoff * sv[0])) if sv[0] > 0 else 0
        else:
            h2, rank2 = np.zeros(0, dtype=complex), 0
        residual = _projection_residual(hv, np.column_stack([base, t2]), cutoff)
        expansion = float(np.linalg.norm(hv - e * vec - t @ h1 - t2 @ h2))
    else:
        pairs, h2, rank2 = [], np.zeros(0, dtype=complex), 0
        residual = tangent_res
        expansion = float(np.linalg.norm(hv - e * vec - t @ h1))
    return HamiltonianActionDecomposition(e, h1, h2, pairs, residual, tangent_res, expansion,
                                          float(np.linalg.norm(hv)), frame.rank, rank2)


# ------------------------------------------------------------------ drift (TDVP)

def _flatten(psi: MatrixProductState) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=complex).reshape(-1) for a in psi.tensors])


def _unflatten(x: np.ndarray, like: MatrixProductState) -> MatrixProductState:
    out, pos = [], 0
    for a in like.tensors:
        out.append(x[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    return MatrixProductState(tuple(out))


def drift_field(psi: MatrixProductState, hmat: np.ndarray, cutoff: float = PINV_RCOND) -> np.ndarray:
    """``dA/dt = -i h^i`` with ``h^i = g^+ T^dag (H - E) psi``."""
    vec = to_dense(psi)
    nrm2 = float(np.vdot(vec, vec).real)
    hv = hmat @ vec
    e = np.vdot(vec, hv) / nrm2
    frame = tangent_frame(psi, cutoff)
    if frame.rank == 0:
        raise TangentError("metric numerically unusable")
    return -1j * (frame.pinv() @ (hv - e * vec))


def _renormalize(psi: MatrixProductState) -> MatrixProductState:
    nrm = np.linalg.norm(to_dense(psi))
    ts = list(psi.tensors)
    ts[-1] = ts[-1] / nrm
    return MatrixProductState(tuple(ts))


def tdvp_drift_step(psi: MatrixProductState, h, dt: float, integrator: str = "rk4",
                    cutoff: float = PINV_RCOND) -> MatrixProductState:
    """One step of the projected (drift-only) Schroedinger flow.

    The state is brought to left-canonical gauge first, which keeps the
    metric well conditioned, then integrated with explicit ``midpoint`` or
    ``rk4`` over the parameters and renormalized.
    """
    hmat = _hamiltonian_matrix(h)
    psi = canonicalize(psi, psi.n - 1)
    x0 = _flatten(psi)

    def f(x):
        return drift_field(_unflatten(x, psi), hmat, cutoff)

    if integrator == "midpoint":
        x1 = x0 + dt * f(x0 + 0.5 * dt * f(x0))
    elif integrator == "rk4":
        k1 = f(x0)
        k2 = f(x0 + 0.5 * dt * k1)
        k3 = f(x0 + 0.5 * dt * k2)
        k4 = f(x0 + dt * k3)
        x1 = x0 + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError("integrator must be 'midpoint' or 'rk4'")
    return _renormalize(_unflatten(x1, psi))


def tdvp_evolve(psi: MatrixProductState, h, total: float, dt: float, integrator: str = "rk4",
                observe=None):
    """Repeated drift steps; ``observe(t, psi)`` is called at every step
    including ``t = 0``. Returns the final state."""
    steps = max(1, int(np.ceil(total / dt - 1e-12))) if total > 0 else 0
    tau = total / steps if steps else 0.0
    if observe:
        observe(0.0, psi)
    for k in range(steps):
        psi = tdvp_drift_step(psi, h, tau, integrator)
        if observe:
            observe((k + 1) * tau, psi)
    return psi


# ------------------------------------------------------------------ diffusion

@dataclass
class DiffusionSummary:
    min_eigenvalue: float
    max_eigenvalue: float
    is_psd: bool
    norm: float
    matrix: np.ndarray = field(repr=False)


def diffusion_matrix_check(psi: MatrixProductState, h, tol: float = 1e-10,
                           decomposition: Optional[HamiltonianActionDecomposition] = None
                           ) -> DiffusionSummary:
    """Second-order coefficient matrix in real coordinates.

    With ``h^{ij} = a + i b`` (symmetrized over ordered pairs) and complex
    parameters ``A = x + i y``, the term
    ``-i [d_i d_j (h^{ij} mu) - c.c.]`` reads
    ``sum D_{uv} d_u d_v mu`` over ``u, v in (x, y)`` with
    ``D = 1/2 [[b, -a], [-a, -b]]``.
    """
    dec = decomposition or decompose_action(psi, h, second_order=True)
    p = sum(a.size for a in psi.tensors)
    hij = np.zeros((p, p), dtype=complex)
    for c, (i, j) in zip(dec.h2, dec.pairs):
        hij[i, j] += c / 2
        hij[j, i] += c / 2
    a, b = hij.real, hij.imag
    dmat = 0.5 * np.block([[b, -a], [-a, -b]])
    w = np.linalg.eigvalsh(dmat)
    return DiffusionSummary(float(w.min()), float(w.max()), bool(w.min() >= -tol),
                            float(np.linalg.norm(dmat)), dmat)


# ------------------------------------------------------------------ quench

@dataclass(frozen=True)
class TrajectoryRow:
    time: float
    site: int
    observable: str
    mean: float
    stderr: float
    method: str
    dmax: Optional[int]


def _observe(states, weights, walkers, t, n, observables, method, dmax):
    rows = []
    for name in observables:
        op = OBSERVABLES[name]
        for k in range(n):
            vals = np.array([expectation(s, op, [k]).real for s in states])
            est = estimate_from_values(vals, weights, walkers)
            se = est.stderr if est.stderr is not None else float("nan")
            rows.append(TrajectoryRow(float(t), k, name, est.mean, se, method, dmax))
    return rows


def quench_protocol(ensemble: MPSEnsemble, u: np.ndarray, sites: Sequence[int],
                    h: SpinChainHamiltonian, times: Sequence[float], method: str = "tebd",
                    dmax: Optional[int] = 32, dt: float = 0.05,
                    observables: Sequence[str] = ("Z",)) -> list:
    """Apply ``U^dag`` to every term, evolve each term and average observables.

    ``times`` must be non-decreasing and start at or after zero. Standard
    errors come from the ensemble weights and walker labels.
    """
    times = [float(t) for t in times]
    if any(t < 0 for t in times) or any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be non-negative and non-decreasing")
    if method not in ("tebd", "tdvp"):
        raise ValueError("method must be 'tebd' or 'tdvp'")
    udag = np.asarray(u).conj().T
    states = [apply_local_unitary(s, udag, sites) for s in ensemble.states]
    walkers = ensemble.metadata.get("walkers")
    n = h.n
    hmat = assemble_dense(h) if method == "tdvp" else None
    rows, now = [], 0.0
    for t in times:
        span = t - now
        if span > 0:
            if method == "tebd":
                states = [evolve_time(s, h, span, dt, dmax=dmax).state for s in states]
            else:
                states = [tdvp_evolve(s, hmat, span, dt) for s in states]
            now = t
        rows.extend(_observe(states, ensemble.weights, walkers, t, n, observables, method,
                             dmax if method == "tebd" else None))
    return rows


def dense_quench_reference(rho: np.ndarray, u: np.ndarray, sites: Sequence[int],
                           h: SpinChainHamiltonian, times: Sequence[float],
                           observables: Sequence[str] = ("Z",)) -> list:
    """Exact ``<O_k(t)>`` for ``rho' = U^dag rho U`` evolved with ``exp(-iHt)``."""
    n = h.n
    ufull = embed_operator(np.asarray(u), list(sites), n)
    rho = ufull.conj().T @ rho @ ufull
    w, v = np.linalg.eigh(assemble_dense(h))
    rho_e = v.conj().T @ rho @ v
    ops = {(name, k): v.conj().T @ embed_operator(OBSERVABLES[name], [k], n) @ v
           for name in observables for k in range(n)}
    rows = []
    for t in times:
        ph = np.exp(-1j * w * t)
        rt = ph[:, None] * rho_e * ph.conj()[None, :]
        for name in observables:
            for k in range(n):
                val = float(np.sum(ops[(name, k)].T * rt).real)
                rows.append(TrajectoryRow(float(t), k, name, val, 0.0, "dense", None))
    return rows
