"""Minimally entangled typical thermal states (METTS).

A chain alternates imaginary-time evolution of a product state by ``beta/2``
with a sequential projective collapse back onto a product state. The
post-burn-in states, with equal weights, form an ensemble whose average
approximates the Gibbs state.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .dense import DimensionError, gibbs_from_matrix, trace_distance
from .hamiltonian import SpinChainHamiltonian, assemble_dense
from .mps import (MatrixProductState, MPSEnsemble, canonicalize, energy, expectation,
                  product_state)
from .trotter import TrotterGateSet, evolve, trotter_gates

__all__ = [
    "BASES", "CollapseError", "ChainConfig", "MettsSample", "ObservableEstimate",
    "walker_rng", "collapse_to_product", "metts_step", "run_chain", "run_walkers",
    "merge_ensembles", "verify_metts_identity", "estimate_observable",
    "estimate_from_values", "integrated_autocorrelation_time",
]

_SQ = 1 / np.sqrt(2)
BASES = {
    "Z": np.eye(2, dtype=complex),
    "X": np.array([[_SQ, _SQ], [_SQ, -_SQ]], dtype=complex),
}

NO_CONVERGENCE_CAVEAT = ("METTS chains carry no general convergence guarantee; "
                         "stationarity is only checked empirically")


class CollapseError(RuntimeError):
    pass


def walker_rng(seed: int, walker: int) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by ``(seed, walker)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(walker),))
    return np.random.Generator(np.random.Philox(ss))


def _basis_matrix(basis: Union[str, np.ndarray]) -> np.ndarray:
    if isinstance(basis, str):
        return BASES[basis.upper()]
    return np.asarray(basis, dtype=complex)


@dataclass
class ChainConfig:
    beta: float
    steps: int
    burn_in: int = 10
    dmax: Optional[int] = None
    tol: float = 0.0
    schedule: str = "alternating"
    seed: int = 0
    dtau: float = 0.05
    order: int = 2

    def validate(self):
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 <= self.burn_in < self.steps:
            raise ValueError("need steps > burn_in >= 0")
        if self.schedule not in ("alternating", "fixed-z"):
            raise ValueError(f"unknown basis schedule {self.schedule!r}")
        if self.dmax is not None and self.dmax < 1:
            raise ValueError("Dmax must be >= 1")
        if not self.dtau > 0:
            raise ValueError("dtau must be positive")

    def basis_at(self, step: int) -> str:
        if self.schedule == "fixed-z":
            return "Z"
        return "Z" if step % 2 == 0 else "X"


@dataclass
class MettsSample:
    bits: tuple
    prepared_basis: str
    state: MatrixProductState
    log_weight: float
    measured_basis: str
    step: int
    energy: float = float("nan")


def collapse_to_product(psi: MatrixProductState, basis: Union[str, np.ndarray],
                        rng: np.random.Generator):
    """Measure every site in turn in ``basis`` (columns are the basis vectors).

    Returns the outcome tuple and its Born probability ``|<i|psi>|^2``.
    """
    b = _basis_matrix(basis)
    ts = canonicalize(psi, "right").tensors
    nrm0 = np.linalg.norm(ts[0])
    if not nrm0 > 1e-300:
        raise CollapseError("state has zero norm")
    v = np.ones(1, dtype=complex) / nrm0
    bits = []
    prob = 1.0
    for t in ts:
        # chi[s, r] = sum_{a, sigma} conj(b[sigma, s]) v[a] t[a, sigma, r]
        chi = np.einsum("ps,a,apr->sr", b.conj(), v, t)
        p = np.sum(np.abs(chi) ** 2, axis=1)
        total = p.sum()
        if not total > 1e-300:
            raise CollapseError("all outcome amplitudes vanish during collapse")
        p = p / total
        s = int(rng.random() >= p[0])
        prob *= p[s]
        bits.append(s)
        v = chi[s] / np.linalg.norm(chi[s])
    return tuple(bits), float(prob)


def _prepare(bits, basis: str) -> MatrixProductState:
    b = BASES[basis]
    return product_state([b[:, s] for s in bits])


def metts_step(bits: Sequence[int], prepared_basis: str, cfg: ChainConfig,
               h: SpinChainHamiltonian, rng: np.random.Generator, step: int = 0,
               gates: Optional[TrotterGateSet] = None):
    """One chain transition.

    Evolves ``|bits>`` (in ``prepared_basis``) by ``exp(-beta H / 2)``,
    normalizes, then collapses in the scheduled basis for ``step + 1``.
    Returns ``(sample, next_bits)``.
    """
    psi0 = _prepare(bits, prepared_basis)
    if cfg.beta == 0:
        phi, log_norm = psi0, 0.0
    else:
        if gates is None:
            nsteps = max(1, int(np.ceil(cfg.beta / 2 / cfg.dtau - 1e-12)))
            gates = trotter_gates(h, cfg.beta / 2 / nsteps, cfg.order, imaginary=True)
        nsteps = int(round(cfg.beta / 2 / gates.dt))
        phi, _, log_norm = evolve(psi0, gates, nsteps, cfg.dmax, cfg.tol)
    measured = cfg.basis_at(step + 1)
    nxt, _ = collapse_to_product(phi, measured, rng)
    sample = MettsSample(tuple(bits), prepared_basis, phi, 2.0 * log_norm, measured, step,
                         energy(phi, h))
    return sample, nxt


def run_chain(cfg: ChainConfig, h: SpinChainHamiltonian, walker: int = 0) -> MPSEnsemble:
    """Run one chain; keep samples after ``burn_in`` with uniform weights."""
    cfg.validate()
    rng = walker_rng(cfg.seed, walker)
    gates = None
    if cfg.beta > 0:
        nsteps = max(1, int(np.ceil(cfg.beta / 2 / cfg.dtau - 1e-12)))
        gates = trotter_gates(h, cfg.beta / 2 / nsteps, cfg.order, imaginary=True)
    bits = tuple(int(x) for x in rng.integers(0, 2, size=h.n))
    basis = cfg.basis_at(0)
    states, records = [], []
    for step in range(cfg.steps):
        sample, nxt = metts_step(bits, basis, cfg, h, rng, step, gates)
        records.append({
            "step": step, "basis": basis, "basis_string": "".join(map(str, bits)),
            "energy": sample.energy, "log_weight": sample.log_weight,
            "bond_max": sample.state.max_bond,
        })
        if step >= cfg.burn_in:
            states.append(sample.state)
        bits, basis = nxt, sample.measured_basis
    m = len(states)
    meta = {
        "generator": "metts", "seed": cfg.seed, "walker": walker, "beta": cfg.beta,
        "temperature": (1.0 / cfg.beta) if cfg.beta > 0 else float("inf"),
        "walkers": np.full(m, walker), "energies": np.array([r["energy"] for r in records[cfg.burn_in:]]),
        "records": records, "caveat": NO_CONVERGENCE_CAVEAT, "hamiltonian": h,
    }
    return MPSEnsemble(np.full(m, 1.0 / m), states, meta)


def merge_ensembles(parts: Sequence[MPSEnsemble]) -> MPSEnsemble:
    """Concatenate walker ensembles (sorted by walker id) with uniform weights."""
    parts = sorted(parts, key=lambda e: e.metadata.get("walker", 0))
    states = [s for e in parts for s in e.states]
    m = len(states)
    meta = dict(parts[0].metadata)
    meta["walker"] = None
    meta["walkers"] = np.concatenate([e.metadata["walkers"] for e in parts])
    meta["energies"] = np.concatenate([e.metadata["energies"] for e in parts])
    meta["records"] = {int(e.metadata["walker"]): e.metadata["records"] for e in parts}
    return MPSEnsemble(np.full(m, 1.0 / m), states, meta)


def _chain_job(args):
    cfg, h, walker = args
    return run_chain(cfg, h, walker)


def max_workers() -> int:
    env = os.environ.get("THERMIX_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, os.cpu_count() or 1))


def run_walkers(cfg: ChainConfig, h: SpinChainHamiltonian, walkers: int,
                workers: Optional[int] = None) -> MPSEnsemble:
    """Independent chains with per-walker RNG streams; the merged result does
    not depend on how the chains were scheduled."""
    workers = max_workers() if workers is None else workers
    jobs = [(cfg, h, w) for w in range(walkers)]
    if workers > 1 and walkers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, walkers)) as pool:
            parts = list(pool.map(_chain_job, jobs))
    else:
        parts = [_chain_job(j) for j in jobs]
    return merge_ensembles(parts)


def verify_metts_identity(h: SpinChainHamiltonian, beta: float, max_sites: int = 6) -> float:
    """Trace distance between ``sum_i p(i)|phi_i><phi_i|`` over all Z-basis
    product states and the Gibbs state at ``T = 1/beta`` (dense, exact)."""
    if h.n > max_sites:
        raise DimensionError(f"exact enumeration limited to n <= {max_sites}")
    hmat = assemble_dense(h)
    w, v = np.linalg.eigh(hmat)
    half = (v * np.exp(-0.5 * beta * (w - w.min()))) @ v.conj().T
    dim = 2 ** h.n
    weights = np.empty(dim)
    rho = np.zeros((dim, dim), dtype=complex)
    cols = []
    for i in range(dim):
        col = half[:, i]
        weights[i] = np.vdot(col, col).real
        cols.append(col)
    z = weights.sum()
    for i in range(dim):
        phi = cols[i] / np.sqrt(weights[i])
        rho += (weights[i] / z) * np.outer(phi, phi.conj())
    gibbs = gibbs_from_matrix(hmat, 1.0 / beta) if beta > 0 else np.eye(dim) / dim
    return trace_distance(rho, gibbs)


# ---------------------------------------------------------------- statistics

@dataclass
class ObservableEstimate:
    mean: float
    stderr: Optional[float]
    tau: Optional[float]
    samples: int
    notes: list = field(default_factory=list)


def integrated_autocorrelation_time(x: np.ndarray, c: float = 5.0) -> Optional[float]:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    m = len(x)
    if m < 2:
        return None
    y = x - x.mean()
    var = np.dot(y, y) / m
    if var <= 1e-300:
        return None
    f = np.fft.rfft(y, n=2 * m)
    acf = np.fft.irfft(f * np.conj(f))[:m] / (m * var)
    tau = 1.0
    for w in range(1, m):
        tau = 1.0 + 2.0 * np.sum(acf[1:w + 1])
        if w >= c * tau:
            break
    return float(max(tau, 1e-12))


def _batch_means(series: Sequence[np.ndarray], n_batches: int) -> np.ndarray:
    means = []
    for x in series:
        nb = min(n_batches, len(x))
        size = len(x) // nb
        for b in range(nb):
            means.append(np.mean(x[b * size:(b + 1) * size]))
    return np.array(means)


def estimate_from_values(values: np.ndarray, weights: Optional[np.ndarray] = None,
                         walkers: Optional[np.ndarray] = None,
                         n_batches: int = 20) -> ObservableEstimate:
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m == 0:
        raise ValueError("empty ensemble")
    if weights is None:
        weights = np.full(m, 1.0 / m)
    weights = np.asarray(weights, dtype=float)
    mean = float(np.dot(weights, values) / weights.sum())
    if m == 1:
        return ObservableEstimate(mean, None, None, 1, ["single sample: stderr undefined"])
    spread = float(np.max(values) - np.min(values))
    if spread <= 1e-14 * max(1.0, abs(mean)):
        return ObservableEstimate(float(values[0]), 0.0, None, m)
    if walkers is None:
        walkers = np.zeros(m, dtype=int)
    uniform = np.allclose(weights, weights[0])
    chains = [values[walkers == w] for w in np.unique(walkers)]
    taus = [integrated_autocorrelation_time(c) for c in chains]
    taus = [t for t in taus if t is not None]
    tau = float(np.mean(taus)) if taus else None
    if uniform:
        bm = _batch_means(chains, n_batches)
        if len(bm) < 2:
            return ObservableEstimate(mean, None, tau, m, ["too few batches"])
        se = float(np.std(bm, ddof=1) / np.sqrt(len(bm)))
    else:
        p = weights / weights.sum()
        m_eff = 1.0 / np.sum(p ** 2)
        se = float(np.sqrt(np.dot(p, (values - mean) ** 2) / m_eff))
    return ObservableEstimate(mean, se, tau, m)


def estimate_observable(ensemble: MPSEnsemble, operator, window: Optional[Sequence[int]] = None,
                        n_batches: int = 20) -> ObservableEstimate:
    """Ensemble mean, batch-means standard error and autocorrelation time.

    ``operator`` is either a :class:`SpinChainHamiltonian` (energy) or a
    one-/two-site matrix together with ``window``.
    """
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    if isinstance(operator, SpinChainHamiltonian):
        cached = ensemble.metadata.get("energies")
        if cached is not None and len(cached) == len(ensemble) and \
                ensemble.metadata.get("hamiltonian") is operator:
            values = np.asarray(cached)
        else:
            values = np.array([energy(s, operator) for s in ensemble.states])
    else:
        if window is None:
            raise ValueError("window required for a local operator")
        values = np.array([expectation(s, operator, window).real for s in ensemble.states])
    return estimate_from_values(values, ensemble.weights, ensemble.metadata.get("walkers"),
                                n_batches)
