"""Explicit convex combination of MPS approximating a Gibbs state.

The chain is tiled as ``A_1 B_1 C_1 ... A_I B_I C_I``. Each block marginal
``rho_{A_i B_i}`` is purified, the Petz recovery channel
``Lambda^i: B_i A_{i+1} -> B_i A_{i+1} C_i`` is dilated, and conditioning on
basis states of every purifying and dilation register yields pure branches
``(K^1_{e_1} (x) ... (x) K^I_{e_I}) (zeta^1_{r_1} (x) ... (x) zeta^I_{r_I})``.
All bounds of the construction are evaluated exactly on the dense state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channels import apply_channel_labeled, apply_operator_labeled
from .dense import (DimensionError, RegionSplit, gibbs_state, partial_trace, purify,
                    reorder_sites, trace_distance)
from .hamiltonian import SpinChainHamiltonian
from .mps import MPSEnsemble, mps_from_dense
from .recovery import MAX_RECOVERY_SITES, petz_channel

__all__ = [
    "PlanError", "Block", "BlockingPlan", "MixtureAudit", "RankRecord", "SlocResult",
    "plan_blocks", "asymptotic_block_size", "build_mixture", "telescoping_bound",
    "schmidt_rank", "schmidt_rank_audit", "verify_sloc_monotonicity",
]

BRANCH_DROP = 1e-14
RANK_TOL = 1e-10
VACUOUS_NOTE = "bound vacuous at this scale"


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    a: tuple
    b: tuple
    c: tuple


@dataclass(frozen=True)
class BlockingPlan:
    """Tiling of an ``n``-site chain into ``I`` blocks ``A_i B_i C_i``.

    ``l`` is the number of qubits in each ``A_i`` and ``B_i``. Register sizes
    are in qubits: purifiers ``Abar_i``, ``Bbar_i`` have ``l`` each, the
    dilation registers ``Ahat_i``, ``Bhat_i`` ``2l`` each and ``Chat_i``
    ``c_width``. ``metadata`` echoes the asymptotic sizing prescription.
    """
    n: int
    l: int
    c_width: int
    blocks: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def registers(self) -> dict:
        return {"Abar": self.l, "Bbar": self.l, "Ahat": 2 * self.l, "Bhat": 2 * self.l,
                "Chat": self.c_width}

    def channel_sites(self, i: int):
        """``(inputs, outputs)`` of the i-th recovery channel."""
        blk = self.blocks[i]
        nxt = self.blocks[i + 1].a if i + 1 < self.num_blocks else ()
        return blk.b + nxt, blk.b + nxt + blk.c

    def ranges(self):
        return [r for blk in self.blocks for r in (blk.a, blk.b, blk.c)]


def asymptotic_block_size(n: int, eps: float) -> int:
    """``l = ceil(log2(n / eps)**2)``, the asymptotic block-size prescription."""
    if not 0 < eps < n:
        raise ValueError("need 0 < eps < n")
    return int(math.ceil(math.log2(n / eps) ** 2))


def plan_blocks(n: int, l: int, c_width: int, eps: Optional[float] = None,
                xi: Optional[float] = None) -> BlockingPlan:
    """Deterministic tiling with ``|A_i| = |B_i| = l`` qubits and ``|C_i| = c_width``.

    ``eps`` and ``xi`` only feed the reported asymptotic sizing (block size
    ``l``, C-width ``5 xi l`` and bond-dimension bound ``2**(l (8 + 10 xi))``);
    they are never enforced.
    """
    if l < 1 or c_width < 0:
        raise PlanError("need l >= 1 and c_width >= 0")
    period = 2 * l + c_width
    if n % period:
        raise PlanError(f"{n} sites cannot be tiled by blocks of {period}")
    if n > MAX_RECOVERY_SITES:
        raise PlanError(f"dense mixture build limited to n <= {MAX_RECOVERY_SITES}")
    blocks = []
    for i in range(n // period):
        s = i * period
        blocks.append(Block(tuple(range(s, s + l)), tuple(range(s + l, s + 2 * l)),
                            tuple(range(s + 2 * l, s + period))))
    meta = {}
    if eps is not None:
        lp = asymptotic_block_size(n, eps)
        meta["asymptotic_l"] = lp
        if xi is not None:
            meta["asymptotic_c_width"] = 5 * xi * lp
            log2_d = lp * (8 + 10 * xi)
            meta["asymptotic_log2_bond_dimension"] = log2_d
            if log2_d >= n / 2:
                meta["asymptotic_bond_dimension_note"] = VACUOUS_NOTE
    return BlockingPlan(n, l, c_width, tuple(blocks), meta)


def telescoping_bound(recovery_errors: Sequence[float], decoupling_errors: Sequence[float]) -> float:
    """``sum_i (eps_i + delta_i)``."""
    return float(np.sum(recovery_errors) + np.sum(decoupling_errors))


def schmidt_rank(vec: np.ndarray, cut: int, n: int, tol: float = RANK_TOL) -> int:
    """Number of Schmidt values above ``tol`` times the largest."""
    if cut <= 0 or cut >= n:
        return 1
    s = np.linalg.svd(vec.reshape(2 ** cut, 2 ** (n - cut)), compute_uv=False)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass
class RankRecord:
    term: int
    cut: int
    rank: int
    bound: int


@dataclass
class MixtureAudit:
    trace_distance: float
    recovery_errors: list
    decoupling_errors: list
    telescoping_bound: float
    max_rank: int
    rank_bound: int
    rank_ok: bool
    num_terms: int
    weight_sum: float
    reconstruction_error: float
    purification_errors: list
    kraus_ranks: list
    records: list = field(default_factory=list, repr=False)
    notes: list = field(default_factory=list)

    @property
    def bound_holds(self) -> bool:
        return self.trace_distance <= self.telescoping_bound + 1e-8

    def summary(self) -> dict:
        return {"trace_distance": self.trace_distance,
                "recovery_errors": list(self.recovery_errors),
                "decoupling_errors": list(self.decoupling_errors),
                "telescoping_bound": self.telescoping_bound,
                "bound_holds": self.bound_holds,
                "max_rank": self.max_rank, "rank_bound": self.rank_bound,
                "rank_ok": self.rank_ok, "num_terms": self.num_terms,
                "weight_sum": self.weight_sum,
                "reconstruction_error": self.reconstruction_error,
                "purification_errors": list(self.purification_errors),
                "kraus_ranks": list(self.kraus_ranks), "notes": list(self.notes)}


def _cut_bounds(plan: BlockingPlan, kraus_ranks: Sequence[int]) -> list:
    """Rank bound for every cut ``c`` (between sites ``c-1`` and ``c``).

    The purified blocks contribute ``2**min(left, right)`` when a cut splits
    ``A_i B_i``; the channel whose span ``B_i C_i A_{i+1}`` the cut crosses
    contributes ``|B_i| |C_i| |A_{i+1}| * (Kraus rank)``.
    """
    bounds = [1] * (plan.n + 1)
    for c in range(1, plan.n):
        d = 1
        for blk in plan.blocks:
            span = blk.a + blk.b
            left = sum(1 for s in span if s < c)
            if 0 < left < len(span):
                d *= 2 ** min(left, len(span) - left)
        for i in range(plan.num_blocks):
            ins, outs = plan.channel_sites(i)
            if not plan.blocks[i].c:
                continue
            lo, hi = min(outs), max(outs)
            if lo < c <= hi:
                d *= 2 ** len(outs) * kraus_ranks[i]
        bounds[c] = d
    return bounds


def schmidt_rank_audit(states: Sequence, plan: BlockingPlan, kraus_ranks: Sequence[int],
                       tol: float = RANK_TOL):
    """Check every term at every cut against the propagated rank bound.

    ``states`` may be dense vectors or :class:`MatrixProductState` objects.
    Returns ``(records, max_rank, max_bound, ok)``.
    """
    from .mps import MatrixProductState, to_dense
    bounds = _cut_bounds(plan, kraus_ranks)
    records, ok, max_rank = [], True, 0
    for j, s in enumerate(states):
        vec = to_dense(s) if isinstance(s, MatrixProductState) else np.asarray(s)
        for c in range(1, plan.n):
            r = schmidt_rank(vec, c, plan.n, tol)
            records.append(RankRecord(j, c, r, bounds[c]))
            max_rank = max(max_rank, r)
            ok &= r <= bounds[c]
    return records, max_rank, max(bounds[1:plan.n], default=1), bool(ok)


def _channel_errors(rho: np.ndarray, plan: BlockingPlan, channels: list):
    """Exact ``eps_i`` and ``delta_{i+1}`` of the telescoping chain.

    With ``X_i = A_1 B_1 C_1 ... A_i B_i C_i``:
    ``eps_i = || Lambda^i(rho_{X_{i-1} A_i B_i A_{i+1} B_{i+1}}) - rho_{X_i A_{i+1} B_{i+1}} ||_1``,
    ``delta_{i+1} = || rho_{X_{i-1} A_i B_i A_{i+1} B_{i+1}} - rho_{X_{i-1} A_i B_i} (x) rho_{A_{i+1} B_{i+1}} ||_1``.
    """
    n = plan.n
    eps, delta = [], []
    blocks = plan.blocks
    for i, blk in enumerate(blocks):
        prefix = [s for bb in blocks[:i] for s in bb.a + bb.b + bb.c]
        nxt = blocks[i + 1].a + blocks[i + 1].b if i + 1 < len(blocks) else ()
        before = prefix + list(blk.a + blk.b)
        source = before + list(nxt)
        target = sorted(source + list(blk.c))
        r_src = partial_trace(rho, source, n)
        r_tgt = partial_trace(rho, target, n)
        ch = channels[i]
        if ch is None:
            out, labels = r_src, source
        else:
            out, labels = apply_channel_labeled(r_src, source, ch.kraus, ch.in_sites,
                                                ch.out_sites)
        eps.append(trace_distance(reorder_sites(out, labels, target), r_tgt))
        if nxt:
            prod = np.kron(partial_trace(rho, before, n), partial_trace(rho, list(nxt), n))
            delta.append(trace_distance(r_src, prod))
    return eps, delta


def build_mixture(h: SpinChainHamiltonian, T: float, plan: BlockingPlan,
                  rho: Optional[np.ndarray] = None):
    """Build ``{p_j, |phi_j>}`` and audit it against the Gibbs state.

    Returns ``(MPSEnsemble, MixtureAudit)``. Terms are converted to MPS
    without truncation; branches with ``p_j < 1e-14`` are dropped.
    """
    if h.n != plan.n:
        raise DimensionError("plan does not match chain")
    n = plan.n
    if rho is None:
        rho = gibbs_state(h, T)
    blocks = plan.blocks
    # (i) purifications of block marginals
    zetas, pur_err = [], []
    for blk in blocks:
        sites = list(blk.a + blk.b)
        marg = partial_trace(rho, sites, n)
        psi = purify(marg)
        zetas.append(psi)
        pur_err.append(float(np.max(np.abs(psi @ psi.conj().T - marg))))
    # recovery channels; an empty C block means the identity channel
    channels = []
    for i, blk in enumerate(blocks):
        ins, outs = plan.channel_sites(i)
        if not blk.c:
            channels.append(None)
            continue
        alpha = tuple(s for s in range(n) if s not in outs)
        split = RegionSplit(alpha, ins, blk.c, n)
        ch = petz_channel(rho, split)
        ch.temperature = T
        channels.append(ch)
    kraus_ranks = [1 if ch is None else ch.kraus.shape[0] for ch in channels]
    # (ii)+(iii) enumerate branches over purifier and dilation basis states
    base_sites = [s for blk in blocks for s in blk.a + blk.b]
    vectors = [np.ones(1, dtype=complex)]
    for psi in zetas:
        vectors = [np.kron(v, psi[:, r]) for v in vectors for r in range(psi.shape[1])]
    for i, ch in enumerate(channels):
        if ch is None:
            continue
        new = []
        for v in vectors:
            for k in ch.kraus:
                w, lab = apply_operator_labeled(v, base_sites, k, ch.in_sites, ch.out_sites)
                new.append((w, lab))
        labels = new[0][1]
        vectors = [w for w, _ in new]
        base_sites = labels
    order = list(range(n))
    weights, states, dense_terms = [], [], []
    for v in vectors:
        p = float(np.vdot(v, v).real)
        if p < BRANCH_DROP:
            continue
        v = reorder_sites(v, base_sites, order) / np.sqrt(p)
        weights.append(p)
        dense_terms.append(v)
        states.append(mps_from_dense(v))
    weights = np.array(weights)
    # channel-composed state computed directly, for the consistency check
    composed = np.ones((1, 1), dtype=complex)
    labels = []
    for blk in blocks:
        composed = np.kron(composed, partial_trace(rho, list(blk.a + blk.b), n))
        labels += list(blk.a + blk.b)
    for ch in channels:
        if ch is not None:
            composed, labels = apply_channel_labeled(composed, labels, ch.kraus, ch.in_sites,
                                                     ch.out_sites)
    composed = reorder_sites(composed, labels, order)
    mixture = np.zeros_like(composed)
    for p, v in zip(weights, dense_terms):
        mixture += p * np.outer(v, v.conj())
    eps, delta = _channel_errors(rho, plan, channels)
    records, max_rank, max_bound, rank_ok = schmidt_rank_audit(dense_terms, plan, kraus_ranks)
    notes = []
    if plan.metadata.get("asymptotic_bond_dimension_note"):
        notes.append(f"asymptotic bond-dimension formula: {VACUOUS_NOTE}")
    audit = MixtureAudit(
        trace_distance=trace_distance(mixture, rho), recovery_errors=eps,
        decoupling_errors=delta, telescoping_bound=telescoping_bound(eps, delta),
        max_rank=max_rank, rank_bound=max_bound, rank_ok=rank_ok, num_terms=len(states),
        weight_sum=float(weights.sum()),
        reconstruction_error=float(np.max(np.abs(mixture - composed))),
        purification_errors=pur_err, kraus_ranks=kraus_ranks, records=records, notes=notes)
    ensemble = MPSEnsemble(weights / weights.sum(), states,
                           {"plan": plan, "temperature": T, "weight_sum": float(weights.sum())})
    return ensemble, audit


# ------------------------------------------------------------- SLOCC property

@dataclass
class SlocResult:
    trials: int
    violations: int
    max_ratio: float

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _random_state(dims: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Random vector on ``dims`` qubits as a random MPS of bond ``rank``."""
    from .mps import random_mps, to_dense
    if dims == 0:
        return np.ones(1, dtype=complex)
    v = to_dense(random_mps(dims, rank, rng))
    return v / np.linalg.norm(v)


def _random_channel(d_in: int, num: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(num * d_in, d_in)) + 1j * rng.normal(size=(num * d_in, d_in))
    q, _ = np.linalg.qr(g)
    return q.reshape(num, d_in, d_in)


def verify_sloc_monotonicity(trials: int = 1000, seed: int = 0, max_sites: int = 6) -> SlocResult:
    """Randomized check of the small-dilation rank bound.

    Each trial draws ``|phi> = |phi>_{a2 a1} (x) |phi>_{b1 b2}`` on at most
    ``max_sites`` qubits, a random channel on ``a1 b1`` with ``I`` Kraus
    operators and its dilation ``V = sum_i K_i (x) |i>_g`` with ``g`` placed
    between ``a1`` and ``b1``. At every cut of ``a2 a1 g b1 b2`` the rank of
    ``V |phi>`` must be at most ``d |a1| |b1| I`` (``d`` inside ``a2``/``b2``),
    and every post-selected branch ``K_i |phi>`` at most ``d |a1| |b1|``.
    """
    rng = np.random.default_rng(seed)
    violations, worst = 0, 0.0
    for _ in range(trials):
        n = int(rng.integers(2, max_sites + 1))
        m = int(rng.integers(1, n))
        k1 = int(rng.integers(1, min(m, 2) + 1))
        k2 = int(rng.integers(1, min(n - m, 2) + 1))
        num = int(rng.integers(1, 4))
        left = _random_state(m, int(rng.integers(1, 3)), rng)
        right = _random_state(n - m, int(rng.integers(1, 3)), rng)
        phi = np.kron(left, right)
        d = max([schmidt_rank(left, c, m) for c in range(1, m)] +
                [schmidt_rank(right, c, n - m) for c in range(1, n - m)] + [1])
        kraus = _random_channel(2 ** (k1 + k2), num, rng)
        sites = list(range(n))
        a1 = list(range(m - k1, m))
        b1 = list(range(m, m + k2))
        dim_a1, dim_b1 = 2 ** k1, 2 ** k2
        env_q = int(np.ceil(np.log2(num))) if num > 1 else 0
        # branch checks
        for k in kraus:
            w, lab = apply_operator_labeled(phi, sites, k, a1 + b1, a1 + b1)
            w = reorder_sites(w, lab, sites)
            for c in range(1, n):
                bound = d if (c <= m - k1 or c >= m + k2) else d * dim_a1 * dim_b1
                r = schmidt_rank(w, c, n)
                worst = max(worst, r / bound)
                violations += r > bound
        # dilated state with the environment padded to qubits
        if env_q:
            padded = np.zeros((2 ** env_q,) + kraus.shape[1:], dtype=complex)
            padded[:num] = kraus
            env = [n + q for q in range(env_q)]
            w = sum(np.kron(apply_operator_labeled(phi, sites, padded[e], a1 + b1, a1 + b1)[0],
                            np.eye(2 ** env_q)[e]) for e in range(2 ** env_q))
            lab = [s for s in sites if s not in a1 + b1] + a1 + b1 + env
            layout = list(range(m)) + env + list(range(m, n))
            w = reorder_sites(w, lab, layout)
            total = n + env_q
            for c in range(1, total):
                inner = (m - k1) < c < (m + env_q + k2)
                bound = d * dim_a1 * dim_b1 * num if inner else d
                r = schmidt_rank(w, c, total)
                worst = max(worst, r / bound)
                violations += r > bound
    return SlocResult(trials, int(violations), float(worst))
