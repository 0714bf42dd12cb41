"""Suzuki-Trotter time evolution of open-boundary MPS (TEBD)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .hamiltonian import SpinChainHamiltonian, bond_hamiltonians
from .mps import MatrixProductState, MPSError, canonicalize, svd_truncate, _qr_left, _qr_right

__all__ = ["TrotterGateSet", "EvolveResult", "EvolutionError", "trotter_gates",
           "bond_gate", "evolve", "evolve_time"]


class EvolutionError(RuntimeError):
    pass


def bond_gate(hb: np.ndarray, dt: float, imaginary: bool) -> np.ndarray:
    """``exp(-i hb dt)`` or ``exp(-hb dt)`` via the eigendecomposition."""
    w, v = np.linalg.eigh(0.5 * (hb + hb.conj().T))
    phase = np.exp(-w * dt) if imaginary else np.exp(-1j * w * dt)
    return (v * phase) @ v.conj().T


@dataclass(frozen=True)
class TrotterGateSet:
    """One Trotter step as a sequence of layers of commuting two-site gates.

    ``layers`` is a tuple of tuples ``(site, 4x4 gate)``. For ``order == 2``
    the step is even(dt/2) odd(dt) even(dt/2); ``fused_even`` holds the
    even(dt) layer used to join consecutive steps.
    """
    n: int
    dt: float
    order: int
    imaginary: bool
    layers: tuple
    fused_even: tuple = ()

    @property
    def gates(self):
        return [g for layer in self.layers for g in layer]


def trotter_gates(h: SpinChainHamiltonian, dt: float, order: int = 2,
                  imaginary: bool = False) -> TrotterGateSet:
    if order not in (1, 2):
        raise ValueError("only first and second order splittings are supported")
    bonds = bond_hamiltonians(h)
    even = [b for b in range(len(bonds)) if b % 2 == 0]
    odd = [b for b in range(len(bonds)) if b % 2 == 1]

    def layer(idx, tau):
        return tuple((b, bond_gate(bonds[b], tau, imaginary)) for b in idx)

    if order == 1:
        layers = (layer(even, dt), layer(odd, dt))
        fused = ()
    else:
        layers = (layer(even, dt / 2), layer(odd, dt), layer(even, dt / 2))
        fused = layer(even, dt)
    return TrotterGateSet(h.n, dt, order, imaginary, layers, fused)


class EvolveResult(NamedTuple):
    state: MatrixProductState
    truncation_error: float
    log_norm: float


def _layer_sequence(gates: TrotterGateSet, steps: int):
    if steps == 0:
        return []
    if gates.order == 1 or not gates.fused_even:
        return list(gates.layers) * steps
    first, odd, last = gates.layers
    seq = [first]
    for k in range(steps):
        seq.append(odd)
        seq.append(last if k == steps - 1 else gates.fused_even)
    return seq


class _Sweeper:
    """Mutable tensor list with a tracked orthogonality centre."""

    def __init__(self, psi: MatrixProductState):
        self.ts = list(canonicalize(psi, 0).tensors)
        nrm = np.linalg.norm(self.ts[0])
        self.log_norm = float(np.log(nrm)) if nrm > 0 else -np.inf
        if nrm == 0:
            raise EvolutionError("zero initial state")
        self.ts[0] = self.ts[0] / nrm
        self.centre = 0

    def move(self, target: int):
        ts = self.ts
        while self.centre < target:
            k = self.centre
            q, r = _qr_left(ts[k])
            ts[k] = q
            ts[k + 1] = np.einsum("ab,bsc->asc", r, ts[k + 1])
            self.centre += 1
        while self.centre > target:
            k = self.centre
            q, r = _qr_right(ts[k])
            ts[k] = q
            ts[k - 1] = np.einsum("asb,bc->asc", ts[k - 1], r)
            self.centre -= 1

    def apply(self, i: int, gate: np.ndarray, dmax, tol, rightward: bool,
              imaginary: bool) -> float:
        self.move(i if rightward else i + 1)
        ts = self.ts
        a, b = ts[i], ts[i + 1]
        dl, dr = a.shape[0], b.shape[2]
        th = np.einsum("asb,btc->astc", a, b)
        th = np.einsum("stuv,auvc->astc", gate.reshape(2, 2, 2, 2), th)
        u, s, vh, dw = svd_truncate(th.reshape(dl * 2, 2 * dr), dmax, tol)
        total = float(np.sum(s ** 2)) + dw
        if not np.isfinite(total) or total == 0:
            raise EvolutionError("evolution diverged (non-finite or vanishing amplitudes)")
        kept = np.linalg.norm(s)
        rel = dw / total
        if imaginary:
            self.log_norm += float(np.log(kept))
            s = s / kept
        elif dw > 0:
            s = s / kept
        if rightward:
            ts[i] = u.reshape(dl, 2, -1)
            ts[i + 1] = (s[:, None] * vh).reshape(-1, 2, dr)
            self.centre = i + 1
        else:
            ts[i] = (u * s).reshape(dl, 2, -1)
            ts[i + 1] = vh.reshape(-1, 2, dr)
            self.centre = i
        return rel


def evolve(psi: MatrixProductState, gates: TrotterGateSet, steps: int,
           dmax: Optional[int] = None, tol: float = 0.0) -> EvolveResult:
    """Apply ``steps`` Trotter steps, truncating after every two-site gate.

    Imaginary-time runs renormalize after each gate and return the
    accumulated ``log ||exp(-tau H) psi||`` (relative to the input norm being
    one). Real-time runs renormalize only after a truncation. The cumulative
    truncation error is ``sqrt(sum of relative discarded weights)``.
    """
    if dmax is not None and dmax < 1:
        raise MPSError("Dmax must be >= 1")
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if psi.n != gates.n:
        raise MPSError("gate set and state differ in size")
    if steps == 0:
        return EvolveResult(psi, 0.0, 0.0)
    sw = _Sweeper(psi)
    start_log = sw.log_norm
    disc = 0.0
    for li, layer in enumerate(_layer_sequence(gates, steps)):
        rightward = li % 2 == 0
        seq = layer if rightward else tuple(reversed(layer))
        for site, g in seq:
            disc += sw.apply(site, g, dmax, tol, rightward, gates.imaginary)
    ts = sw.ts
    if gates.imaginary:
        log_norm = sw.log_norm - start_log
    else:
        log_norm = 0.0
        # restore the input norm for unitary evolution
        ts[sw.centre] = ts[sw.centre] * np.exp(start_log)
    out = MatrixProductState(tuple(ts), "open", sw.centre)
    if not all(np.all(np.isfinite(t)) for t in ts):
        raise EvolutionError("non-finite amplitudes after evolution")
    return EvolveResult(out, float(np.sqrt(disc)), float(log_norm))


def evolve_time(psi: MatrixProductState, h: SpinChainHamiltonian, total: float, dt: float,
                imaginary: bool = False, order: int = 2, dmax: Optional[int] = None,
                tol: float = 0.0) -> EvolveResult:
    """Evolve for ``total`` time units with ``ceil(total/dt)`` equal steps."""
    if total == 0:
        return EvolveResult(psi, 0.0, 0.0)
    steps = max(1, int(np.ceil(total / dt - 1e-12)))
    gates = trotter_gates(h, total / steps, order, imaginary)
    return evolve(psi, gates, steps, dmax, tol)
