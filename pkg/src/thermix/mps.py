"""Matrix product states with open (computational) or periodic (amplitude-only)
boundaries.

Each site tensor has legs ``(left bond, physical, right bond)``. Open-boundary
states carry bond dimension one at both ends. States are treated as immutable:
every operation returns a new object.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .dense import MAX_DENSE_SITES, DimensionError

__all__ = [
    "MPSError", "MatrixProductState", "MPSEnsemble", "SchmidtData",
    "product_state", "random_mps", "amplitude", "to_dense", "mps_from_dense",
    "canonicalize", "truncate", "schmidt_spectrum", "expectation", "overlap", "norm",
    "normalize", "apply_local_unitary", "apply_local_operator", "energy",
    "save_mps", "load_mps", "svd_truncate", "ZERO_TOL",
]

# singular values below ZERO_TOL * s_max are numerical zeros and always dropped
ZERO_TOL = 1e-14


class MPSError(ValueError):
    pass


@dataclass(frozen=True)
class MatrixProductState:
    tensors: tuple
    boundary: str = "open"
    form: Union[None, str, int] = None

    def __post_init__(self):
        ts = tuple(np.asarray(t, dtype=complex) for t in self.tensors)
        object.__setattr__(self, "tensors", ts)
        if not ts:
            raise MPSError("empty MPS")
        for k, t in enumerate(ts):
            if t.ndim != 3:
                raise MPSError(f"site {k}: tensor must have 3 legs, got {t.ndim}")
        for k in range(len(ts) - 1):
            if ts[k].shape[2] != ts[k + 1].shape[0]:
                raise MPSError(f"bond mismatch between sites {k} and {k + 1}")
        if self.boundary == "open":
            if ts[0].shape[0] != 1 or ts[-1].shape[2] != 1:
                raise MPSError("open-boundary MPS needs unit outer bonds")
        elif self.boundary == "periodic":
            if ts[0].shape[0] != ts[-1].shape[2]:
                raise MPSError("periodic MPS needs matching outer bonds")
        else:
            raise MPSError(f"unknown boundary {self.boundary!r}")

    @property
    def n(self) -> int:
        return len(self.tensors)

    @property
    def bonds(self) -> list[int]:
        return [self.tensors[0].shape[0]] + [t.shape[2] for t in self.tensors]

    @property
    def max_bond(self) -> int:
        return max(self.bonds)

    def _require_open(self):
        if self.boundary != "open":
            raise MPSError("operation defined for open-boundary MPS only")


@dataclass(frozen=True)
class SchmidtData:
    cut: int
    values: np.ndarray
    rank: int


@dataclass
class MPSEnsemble:
    """Finite convex combination ``sum_j p_j |phi_j><phi_j|``."""
    weights: np.ndarray
    states: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.weights) != len(self.states):
            raise MPSError("weights and states differ in length")

    def __len__(self):
        return len(self.states)

    def validate(self, weight_tol: float = 1e-10, norm_tol: float = 1e-8):
        if np.any(self.weights < 0):
            raise MPSError("negative ensemble weight")
        if abs(self.weights.sum() - 1.0) > weight_tol:
            raise MPSError(f"weights sum to {self.weights.sum()}")
        for s in self.states:
            if abs(norm(s) - 1.0) > norm_tol:
                raise MPSError("ensemble state not normalized")

    def to_density_matrix(self) -> np.ndarray:
        n = self.states[0].n
        if n > MAX_DENSE_SITES:
            raise DimensionError("ensemble too large for dense reconstruction")
        rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for p, s in zip(self.weights, self.states):
            v = to_dense(s)
            rho += p * np.outer(v, v.conj())
        return rho


# ---------------------------------------------------------------- constructors

def product_state(local: Sequence, d: int = 2) -> MatrixProductState:
    """Product MPS from basis indices (ints) or local state vectors."""
    tensors = []
    for x in local:
        if np.isscalar(x):
            v = np.zeros(d, dtype=complex)
            v[int(x)] = 1.0
        else:
            v = np.asarray(x, dtype=complex)
        tensors.append(v.reshape(1, -1, 1))
    return MatrixProductState(tuple(tensors), "open", "left")


def random_mps(n: int, D: int, rng: np.random.Generator, d: int = 2,
               normalized: bool = True) -> MatrixProductState:
    """Random complex open-boundary MPS with bonds ``min(D, d**k, d**(n-k))``."""
    bonds = [min(D, d ** k, d ** (n - k)) for k in range(n + 1)]
    tensors = [
        rng.standard_normal((bonds[k], d, bonds[k + 1]))
        + 1j * rng.standard_normal((bonds[k], d, bonds[k + 1]))
        for k in range(n)
    ]
    psi = MatrixProductState(tuple(tensors))
    return normalize(psi) if normalized else psi


# ---------------------------------------------------------------- contraction

def amplitude(psi: MatrixProductState, bits: Sequence[int]) -> complex:
    """``<i_1 ... i_n|psi>``: bond-1 contraction for open boundaries, matrix
    trace for periodic ones."""
    if isinstance(bits, str):
        bits = [int(c) for c in bits]
    if len(bits) != psi.n:
        raise MPSError("basis string length differs from site count")
    m = psi.tensors[0][:, bits[0], :]
    for t, b in zip(psi.tensors[1:], bits[1:]):
        m = m @ t[:, b, :]
    return complex(np.trace(m))


def to_dense(psi: MatrixProductState) -> np.ndarray:
    if psi.n > MAX_DENSE_SITES:
        raise DimensionError(f"dense conversion limited to n <= {MAX_DENSE_SITES}")
    t0 = psi.tensors[0]
    # acc[l, s, r] over left boundary bond, physical multi-index, current bond
    acc = t0
    for t in psi.tensors[1:]:
        acc = np.einsum("lsm,mtr->lstr", acc, t)
        acc = acc.reshape(acc.shape[0], -1, acc.shape[-1])
    return np.einsum("lsl->s", acc).copy()


def _transfer(env: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # env[l, l'] with bra tensor a and ket tensor b
    return np.einsum("ab,asc,bsd->cd", env, a.conj(), b, optimize=True)


def overlap(psi: MatrixProductState, phi: MatrixProductState) -> complex:
    """``<psi|phi>``."""
    psi._require_open()
    phi._require_open()
    if psi.n != phi.n:
        raise MPSError("site count mismatch")
    env = np.ones((1, 1), dtype=complex)
    for a, b in zip(psi.tensors, phi.tensors):
        env = _transfer(env, a, b)
    return complex(env[0, 0])


def norm(psi: MatrixProductState) -> float:
    return float(np.sqrt(max(overlap(psi, psi).real, 0.0)))


def normalize(psi: MatrixProductState) -> MatrixProductState:
    nrm = norm(psi)
    if not np.isfinite(nrm) or nrm == 0:
        raise MPSError("cannot normalize a zero or non-finite state")
    # put the factor where it does not spoil isometries
    k = psi.form if isinstance(psi.form, int) else (psi.n - 1 if psi.form in ("left", None) else 0)
    ts = list(psi.tensors)
    ts[k] = ts[k] / nrm
    return MatrixProductState(tuple(ts), psi.boundary, psi.form)


def expectation(psi: MatrixProductState, op: np.ndarray, sites: Sequence[int]) -> complex:
    """Normalized ``<psi|O|psi>/<psi|psi>`` for ``O`` on one or two adjacent sites."""
    psi._require_open()
    sites = list(sites)
    if len(sites) not in (1, 2) or (len(sites) == 2 and sites[1] != sites[0] + 1):
        raise MPSError("window must be one site or two adjacent sites")
    op = np.asarray(op, dtype=complex)
    i = sites[0]
    env = np.ones((1, 1), dtype=complex)
    for k in range(i):
        env = _transfer(env, psi.tensors[k], psi.tensors[k])
    if len(sites) == 1:
        a = psi.tensors[i]
        env = np.einsum("ab,asc,st,btd->cd", env, a.conj(), op, a, optimize=True)
        nxt = i + 1
    else:
        th = np.einsum("asb,btc->astc", psi.tensors[i], psi.tensors[i + 1])
        o4 = op.reshape(2, 2, 2, 2)
        env = np.einsum("ab,astc,stuv,buvd->cd", env, th.conj(), o4, th, optimize=True)
        nxt = i + 2
    for k in range(nxt, psi.n):
        env = _transfer(env, psi.tensors[k], psi.tensors[k])
    return complex(env[0, 0]) / overlap(psi, psi)


def energy(psi: MatrixProductState, h) -> float:
    """``<H>`` for a nearest-neighbour :class:`SpinChainHamiltonian` on open bonds."""
    e = 0.0
    for t in h.terms:
        if t.first_site + t.width > psi.n:
            raise MPSError("wrapping terms need dense evaluation")
        e += expectation(psi, t.matrix, range(t.first_site, t.first_site + t.width)).real
    return float(e)


# ---------------------------------------------------------------- factorizations

def _svd(m: np.ndarray):
    try:
        return np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        import scipy.linalg
        return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def _keep_count(s: np.ndarray, dmax: Optional[int], tol: float) -> int:
    if s.size == 0 or s[0] == 0:
        return 1
    keep = int(np.sum(s > ZERO_TOL * s[0]))
    if tol > 0:
        w = s ** 2
        total = w.sum()
        # tail[k] = weight discarded when keeping k values
        tail = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
        ok = np.nonzero(np.sqrt(tail / total) <= tol)[0]
        keep = min(keep, int(ok[0]))
    if dmax is not None:
        keep = min(keep, dmax)
    return max(keep, 1)


def svd_truncate(m: np.ndarray, dmax: Optional[int] = None, tol: float = 0.0):
    """SVD with truncation. Returns ``(u, s, vh, discarded_weight)`` where the
    discarded weight is the sum of squared dropped singular values. Ties at the
    cutoff keep the earlier index."""
    if dmax is not None and dmax < 1:
        raise MPSError("Dmax must be >= 1")
    u, s, vh = _svd(m)
    k = _keep_count(s, dmax, tol)
    disc = float(np.sum(s[k:] ** 2))
    return u[:, :k], s[:k], vh[:k], disc


def mps_from_dense(vec: np.ndarray, dmax: Optional[int] = None, tol: float = 0.0,
                   return_error: bool = False):
    """Left-to-right sequential SVD of a state vector.

    The reported truncation error is ``sqrt(sum of discarded s**2)`` of the
    sweep; the returned state is normalized to the input norm.
    """
    vec = np.asarray(vec, dtype=complex).ravel()
    n = int(round(np.log2(vec.size))) if vec.size else -1
    if n < 1 or 2 ** n != vec.size:
        raise DimensionError(f"length {vec.size} is not a power of two")
    if n > MAX_DENSE_SITES:
        raise DimensionError(f"n={n} exceeds dense limit")
    nrm = np.linalg.norm(vec)
    tensors = []
    rest = vec.reshape(1, -1)
    disc = 0.0
    for _ in range(n - 1):
        dl = rest.shape[0]
        m = rest.reshape(dl * 2, -1)
        u, s, vh, dw = svd_truncate(m, dmax, tol)
        disc += dw
        tensors.append(u.reshape(dl, 2, -1))
        rest = s[:, None] * vh
    tensors.append(rest.reshape(rest.shape[0], 2, 1))
    psi = MatrixProductState(tuple(tensors), "open", "left")
    if disc > 0 and nrm > 0:
        psi = normalize(psi)
        ts = list(psi.tensors)
        ts[-1] = ts[-1] * nrm
        psi = MatrixProductState(tuple(ts), "open", "left")
    err = float(np.sqrt(disc))
    return (psi, err) if return_error else psi


def _qr_left(t: np.ndarray):
    dl, d, dr = t.shape
    q, r = np.linalg.qr(t.reshape(dl * d, dr))
    return q.reshape(dl, d, -1), r


def _qr_right(t: np.ndarray):
    dl, d, dr = t.shape
    q, r = np.linalg.qr(t.reshape(dl, d * dr).T)
    # t = r.T @ q.T
    return q.T.reshape(-1, d, dr), r.T


def _left_sweep(ts: list, upto: int):
    for k in range(upto):
        q, r = _qr_left(ts[k])
        ts[k] = q
        ts[k + 1] = np.einsum("ab,bsc->asc", r, ts[k + 1])


def _right_sweep(ts: list, downto: int):
    for k in range(len(ts) - 1, downto, -1):
        q, r = _qr_right(ts[k])
        ts[k] = q
        ts[k - 1] = np.einsum("asb,bc->asc", ts[k - 1], r)


def canonicalize(psi: MatrixProductState, form: Union[str, int] = "left") -> MatrixProductState:
    """Bring ``psi`` into left, right or mixed form (``form`` = centre site).
    The represented vector is unchanged."""
    psi._require_open()
    ts = list(psi.tensors)
    n = psi.n
    if form == "left":
        centre = n - 1
    elif form == "right":
        centre = 0
    elif isinstance(form, (int, np.integer)) and 0 <= form < n:
        centre = int(form)
    else:
        raise MPSError(f"invalid canonical form {form!r}")
    _left_sweep(ts, centre)
    _right_sweep(ts, centre)
    flag = form if isinstance(form, str) else centre
    return MatrixProductState(tuple(ts), "open", flag)


def is_left_isometry(t: np.ndarray, tol: float = 1e-10) -> bool:
    m = t.reshape(-1, t.shape[2])
    return bool(np.allclose(m.conj().T @ m, np.eye(m.shape[1]), atol=tol))


def is_right_isometry(t: np.ndarray, tol: float = 1e-10) -> bool:
    m = t.reshape(t.shape[0], -1)
    return bool(np.allclose(m @ m.conj().T, np.eye(m.shape[0]), atol=tol))


def truncate(psi: MatrixProductState, dmax: Optional[int] = None, tol: float = 0.0):
    """Compress bonds to at most ``dmax`` (and/or relative tolerance ``tol``).

    Sweeps right to left on a left-canonical copy. Returns the normalized
    compressed state and ``sqrt(sum of discarded weights)`` relative to the
    input norm. For a single truncated cut this equals ``||psi - psi'||``
    where ``psi'`` is the un-renormalized projection; otherwise it is an upper
    bound for it.
    """
    psi._require_open()
    if dmax is not None and dmax < 1:
        raise MPSError("Dmax must be >= 1")
    ts = list(canonicalize(psi, "left").tensors)
    nrm = np.linalg.norm(ts[-1])
    if nrm == 0:
        raise MPSError("zero state")
    ts[-1] = ts[-1] / nrm
    disc = 0.0
    for k in range(psi.n - 1, 0, -1):
        dl, d, dr = ts[k].shape
        u, s, vh, dw = svd_truncate(ts[k].reshape(dl, d * dr), dmax, tol)
        disc += dw
        ts[k] = vh.reshape(-1, d, dr)
        ts[k - 1] = np.einsum("asb,bc->asc", ts[k - 1], u * s)
    out = MatrixProductState(tuple(ts), "open", 0)
    out = normalize(out)
    return out, float(np.sqrt(disc))


def schmidt_spectrum(psi: MatrixProductState, cut: int, rank_tol: float = 1e-10) -> SchmidtData:
    """Schmidt values across the bond between sites ``cut-1`` and ``cut``,
    normalized so that their squares sum to one."""
    psi._require_open()
    if not 1 <= cut < psi.n:
        raise MPSError(f"cut must lie in 1..{psi.n - 1}")
    ts = list(canonicalize(psi, cut).tensors)
    c = ts[cut]
    s = np.linalg.svd(c.reshape(c.shape[0], -1), compute_uv=False)
    s = s / np.linalg.norm(s)
    return SchmidtData(cut, s, int(np.sum(s > rank_tol)))


# ---------------------------------------------------------------- local updates

def apply_local_operator(psi: MatrixProductState, op: np.ndarray, sites: Sequence[int],
                         dmax: Optional[int] = None, tol: float = 0.0):
    """Apply a one- or two-site operator; two-site results are split by SVD.
    Returns ``(state, discarded_weight)``; the state is not renormalized."""
    psi._require_open()
    sites = list(sites)
    op = np.asarray(op, dtype=complex)
    ts = list(psi.tensors)
    if len(sites) == 1:
        if op.shape != (2, 2):
            raise MPSError("one-site operator must be 2x2")
        i = sites[0]
        ts[i] = np.einsum("st,atb->asb", op, ts[i])
        return MatrixProductState(tuple(ts), "open", None), 0.0
    if len(sites) != 2 or sites[1] != sites[0] + 1 or not 0 <= sites[0] < psi.n - 1:
        raise MPSError("two-site window must be adjacent and inside the chain")
    if op.shape != (4, 4):
        raise MPSError("two-site operator must be 4x4")
    i = sites[0]
    disc = _apply_gate_inplace(ts, i, op, dmax, tol, centre_right=True)
    return MatrixProductState(tuple(ts), "open", None), disc


def _apply_gate_inplace(ts: list, i: int, gate: np.ndarray, dmax, tol, centre_right: bool) -> float:
    a, b = ts[i], ts[i + 1]
    dl, dr = a.shape[0], b.shape[2]
    th = np.einsum("asb,btc->astc", a, b)
    th = np.einsum("stuv,auvc->astc", gate.reshape(2, 2, 2, 2), th)
    u, s, vh, dw = svd_truncate(th.reshape(dl * 2, 2 * dr), dmax, tol)
    if centre_right:
        ts[i] = u.reshape(dl, 2, -1)
        ts[i + 1] = (s[:, None] * vh).reshape(-1, 2, dr)
    else:
        ts[i] = (u * s).reshape(dl, 2, -1)
        ts[i + 1] = vh.reshape(-1, 2, dr)
    return dw


def apply_local_unitary(psi: MatrixProductState, u: np.ndarray, sites: Sequence[int],
                        dmax: Optional[int] = None, tol: float = 0.0,
                        unitary_tol: float = 1e-10) -> MatrixProductState:
    u = np.asarray(u, dtype=complex)
    if not np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=unitary_tol):
        raise MPSError("operator is not unitary")
    out, _ = apply_local_operator(psi, u, sites, dmax, tol)
    if dmax is not None or tol > 0:
        out = normalize(out)
    return out


# ---------------------------------------------------------------- serialization

def save_mps(psi: MatrixProductState, path: Union[str, Path]) -> None:
    """Write a JSON header line followed by little-endian complex64 tensors."""
    header = {"n": psi.n, "bonds": psi.bonds, "boundary": psi.boundary, "d": 2,
              "dtype": "<c8", "shapes": [list(t.shape) for t in psi.tensors]}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for t in psi.tensors:
            fh.write(np.ascontiguousarray(t, dtype="<c8").tobytes())


def load_mps(path: Union[str, Path]) -> MatrixProductState:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        payload = fh.read()
    tensors = []
    off = 0
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<c8", count=count, offset=off)
        tensors.append(arr.reshape(shape).astype(complex))
        off += count * 8
    if off != len(payload):
        raise MPSError("payload size does not match header")
    return MatrixProductState(tuple(tensors), header["boundary"])
