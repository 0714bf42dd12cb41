"""Markov-recovery machinery for Gibbs states, computed densely.

Covers the bridge operator that factorizes ``exp(-H/T)`` across a cut, its
truncation to a window around the cut, the recovery map built from it, the
Petz recovery channel, recovery errors and their decay with buffer size, and
Stinespring dilations of the resulting channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .channels import (apply_channel_labeled, as_kraus, choi_matrix, minimal_kraus,
                       stinespring_isometry, tp_defect)
from .dense import (EIG_CLAMP, DimensionError, RegionSplit, _linear_fit,
                    conditional_mutual_information, embed_operator, gibbs_state,
                    matrix_inv_sqrt, matrix_sqrt, partial_trace,
                    reorder_sites, trace_distance)
from .hamiltonian import SpinChainHamiltonian, assemble_dense, restrict

__all__ = [
    "RecoveryError", "BridgeOperator", "RecoveryChannel", "RecoveryProfile",
    "StinespringDilation", "bridge_operator", "truncate_bridge", "k_map",
    "petz_channel", "petz_recovery", "recovery_error", "recovery_profile", "stinespring",
    "max_bridge_window", "raw_k_map",
]

MAX_RECOVERY_SITES = 10


class RecoveryError(RuntimeError):
    pass


@dataclass
class BridgeOperator:
    """``P`` with ``exp(-H/T) ~ P (exp(-H_{alpha beta_L}/T) (x) exp(-H_{beta_R gamma}/T)) P^dag``.

    ``local`` acts on the sites in ``window`` (the whole chain when
    untruncated). ``factors`` and ``gibbs`` hold the energy-shifted
    ``exp(-H_L/T) (x) exp(-H_R/T)`` and ``exp(-H/T)``; the common shift cancels in
    ``P`` and in the normalized defect.
    """
    local: np.ndarray
    window: tuple
    split: RegionSplit
    temperature: float
    cut: int
    factors: np.ndarray = field(repr=False)
    gibbs: np.ndarray = field(repr=False)
    defect: float = float("nan")
    condition_number: float = float("nan")
    clamped: int = 0

    @property
    def t(self) -> int:
        return len(self.window)

    @property
    def full(self) -> np.ndarray:
        n = self.split.n
        if len(self.window) == n:
            return self.local
        return embed_operator(self.local, self.window, n)


def _shifted_exp(hmat: np.ndarray, T: float):
    w, v = np.linalg.eigh(hmat)
    shift = w.min()
    return (v * np.exp(-(w - shift) / T)) @ v.conj().T, shift


def _split_halves(split: RegionSplit):
    b = list(split.beta)
    half = len(b) // 2
    return b[:half], b[half:]


def _check_ordered(split: RegionSplit):
    if not split.contiguous:
        raise RecoveryError("bridge construction needs contiguous regions")
    a, b, g = split.alpha, split.beta, split.gamma
    if (a and b and a[-1] > b[0]) or (b and g and b[-1] > g[0]) or (a and g and a[-1] > g[0]):
        raise RecoveryError("regions must be ordered alpha | beta | gamma")


def bridge_operator(h: SpinChainHamiltonian, split: RegionSplit, T: float) -> BridgeOperator:
    """Exact bridge ``P = exp(-H/2T) (exp(-H_L/T) (x) exp(-H_R/T))^(-1/2)``.

    The cut sits between the two halves of ``beta``; ``H_L``/``H_R`` keep the
    terms entirely left/right of it (the crossing terms are dropped).
    """
    if not T > 0:
        raise ValueError("temperature must be positive")
    if h.n > MAX_RECOVERY_SITES:
        raise DimensionError(f"recovery constructions limited to n <= {MAX_RECOVERY_SITES}")
    if split.n != h.n:
        raise DimensionError("split does not match chain")
    _check_ordered(split)
    if not split.beta:
        raise RecoveryError("beta must be non-empty")
    _, right = _split_halves(split)
    cut = right[0]
    n = h.n
    hl = assemble_dense(restrict(h, range(0, cut))) if cut > 0 else np.zeros((1, 1))
    hr = assemble_dense(restrict(h, range(cut, n)))
    gl, sl = _shifted_exp(hl, T)
    gr, sr = _shifted_exp(hr, T)
    factors = np.kron(gl, gr)
    hfull = assemble_dense(h) - (sl + sr) * np.eye(2 ** n)
    w, v = np.linalg.eigh(hfull)
    half = (v * np.exp(-w / (2 * T))) @ v.conj().T
    gibbs = (v * np.exp(-w / T)) @ v.conj().T
    fw = np.linalg.eigvalsh(factors)
    clamped = int(np.sum(fw < EIG_CLAMP))
    p = half @ matrix_inv_sqrt(factors)
    sv = np.linalg.svd(p, compute_uv=False)
    bridge = BridgeOperator(p, tuple(range(n)), split, T, cut, factors, gibbs,
                            condition_number=float(sv[0] / sv[-1]), clamped=clamped)
    bridge.defect = _bridge_defect(bridge)
    return bridge


def _bridge_defect(bridge: BridgeOperator) -> float:
    z = np.trace(bridge.gibbs).real
    p = bridge.full
    return trace_distance(bridge.gibbs / z, p @ bridge.factors @ p.conj().T / z)


def max_bridge_window(split: RegionSplit) -> int:
    """Largest even window centred on the cut that stays inside ``beta``."""
    left, right = _split_halves(split)
    return 2 * min(len(left), len(right))


def truncate_bridge(bridge: BridgeOperator, t: int):
    """Project ``P`` onto operators supported on the ``t`` sites centred on the
    cut (normalized partial trace over the rest). Returns ``(P_t, defect)``."""
    if t < 0 or t % 2:
        raise ValueError("window width must be even and non-negative")
    n = bridge.split.n
    lo, hi = bridge.cut - t // 2, bridge.cut + t // 2
    if lo < 0 or hi > n:
        raise DimensionError(f"window [{lo}, {hi}) exceeds the chain")
    window = tuple(range(lo, hi))
    full = bridge.full
    if t == 0:
        local = np.array([[np.trace(full) / full.shape[0]]])
    else:
        local = partial_trace(full, window, n) / 2 ** (n - t)
    out = replace(bridge, local=local, window=window)
    sv = np.linalg.svd(local, compute_uv=False)
    out.condition_number = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    out.defect = _bridge_defect(out)
    return out, out.defect


@dataclass
class RecoveryChannel:
    """CPTP map from ``in_sites`` to ``out_sites``.

    ``kraus`` holds stacked operators of shape ``(k, 2**len(out_sites),
    2**len(in_sites))``. An optional measure-and-prepare branch
    ``X -> Tr[effect X] prepared`` is kept in structured form because its Kraus
    rank (``rank(effect) * rank(prepared)``) is large; :meth:`full_kraus`
    expands it.
    """
    kraus: np.ndarray
    in_sites: tuple
    out_sites: tuple
    flavor: str
    split: Optional[RegionSplit] = None
    temperature: Optional[float] = None
    meta: dict = field(default_factory=dict)
    effect: Optional[np.ndarray] = None
    prepared: Optional[np.ndarray] = None

    @property
    def d_in(self) -> int:
        return self.kraus.shape[2]

    @property
    def d_out(self) -> int:
        return self.kraus.shape[1]

    def full_kraus(self) -> np.ndarray:
        if self.effect is None:
            return self.kraus
        ew, ev = np.linalg.eigh(self.effect)
        pw, pv = np.linalg.eigh(self.prepared)
        extra = [np.sqrt(pw[k] * ew[j]) * np.outer(pv[:, k], ev[:, j].conj())
                 for k in range(len(pw)) if pw[k] > EIG_CLAMP
                 for j in range(len(ew)) if ew[j] > 1e-14]
        if not extra:
            return self.kraus
        return np.concatenate([self.kraus, np.array(extra)])

    @property
    def kraus_rank(self) -> int:
        if self.effect is None:
            return self.kraus.shape[0]
        return minimal_kraus(self.full_kraus()).shape[0]

    def tp_defect(self) -> float:
        s = np.einsum("koi,koj->ij", self.kraus.conj(), self.kraus)
        if self.effect is not None:
            s = s + self.effect
        return float(np.max(np.abs(s - np.eye(s.shape[0]))))

    def choi_min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(choi_matrix(self.full_kraus())).min())

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.einsum("koi,ij,kpj->op", self.kraus, x, self.kraus.conj(), optimize=True)
        if self.effect is not None:
            out = out + np.trace(self.effect @ x) * self.prepared
        return out

    def apply_labeled(self, rho: np.ndarray, sites: Sequence[int]):
        """Act on the ``in_sites`` factors of a labelled operator; returns
        ``(rho', labels)`` with untouched factors first."""
        out, labels = apply_channel_labeled(rho, sites, self.kraus, self.in_sites,
                                            self.out_sites)
        if self.effect is not None:
            rest = [s for s in sites if s not in self.in_sites]
            r = reorder_sites(rho, sites, rest + list(self.in_sites))
            dr, di = 2 ** len(rest), self.d_in
            red = np.einsum("aibj,ji->ab", r.reshape(dr, di, dr, di), self.effect)
            out = out + np.kron(red, self.prepared)
        return out, labels


def petz_channel(rho: np.ndarray, split: RegionSplit, clamp: float = EIG_CLAMP) -> RecoveryChannel:
    """Petz map ``X -> rho_bg^(1/2) (rho_b^(-1/2) X rho_b^(-1/2) (x) I_g) rho_bg^(1/2)``.

    Output factors are ordered ``beta`` then ``gamma``. Kraus operators
    ``rho_bg^(1/2) (rho_b^(-1/2) (x) |g>)`` are reduced to the Choi rank.
    """
    b, g = list(split.beta), list(split.gamma)
    if not b:
        raise RecoveryError("beta must be non-empty")
    n = split.n
    rho_b = partial_trace(rho, b, n)
    wmin = np.linalg.eigvalsh(rho_b).min()
    if wmin < clamp:
        raise RecoveryError(f"rho_beta is rank deficient (min eigenvalue {wmin:.3e})")
    db, dg = 2 ** len(b), 2 ** len(g)
    if not g:
        kraus = np.eye(db, dtype=complex)[None]
    else:
        rho_bg = partial_trace(rho, b + g, n)
        sq = matrix_sqrt(rho_bg)
        a = matrix_inv_sqrt(rho_b)
        # (a (x) |g>) has shape (db*dg, db); column block for each g
        ops = []
        for k in range(dg):
            e = np.zeros((dg, 1))
            e[k, 0] = 1.0
            ops.append(sq @ np.kron(a, e))
        kraus = minimal_kraus(np.array(ops))
    return RecoveryChannel(kraus, tuple(b), tuple(b + g), "petz", split,
                           meta={"rho_beta_min_eig": float(wmin)})


def petz_recovery(h: SpinChainHamiltonian, split: RegionSplit, T: float) -> RecoveryChannel:
    if h.n > MAX_RECOVERY_SITES:
        raise DimensionError(f"recovery constructions limited to n <= {MAX_RECOVERY_SITES}")
    ch = petz_channel(gibbs_state(h, T), split)
    ch.temperature = T
    return ch


def k_map(bridge: BridgeOperator, h: SpinChainHamiltonian, T: float,
          rho: Optional[np.ndarray] = None) -> RecoveryChannel:
    """Recovery map ``X -> P (Tr_{beta_R}[P^-1 X P^-dag] (x) sigma_{beta_R gamma}) P^dag``.

    ``bridge`` must be truncated to a window inside ``beta``; ``sigma`` is the
    Gibbs state of the terms on ``beta_R gamma``. The raw map is generally not
    trace preserving: it is divided by the largest eigenvalue of
    ``sum K^dag K`` when that exceeds one and completed by a branch that
    prepares the Gibbs marginal on ``beta gamma``. The raw Kraus set and the
    scale are kept in ``meta``.
    """
    split = bridge.split
    b, g = list(split.beta), list(split.gamma)
    if not set(bridge.window) <= set(b):
        raise RecoveryError("bridge must be truncated to a window inside beta")
    left, right = _split_halves(split)
    n = split.n
    local = bridge.local
    if np.linalg.cond(local) > 1e12:
        raise RecoveryError("bridge operator is numerically singular")
    # P and P^-1 as operators on beta
    if bridge.window:
        offset = [s - b[0] for s in bridge.window]
        p_b = embed_operator(local, offset, len(b))
        q_b = embed_operator(np.linalg.inv(local), offset, len(b))
    else:
        c = local[0, 0]
        p_b = c * np.eye(2 ** len(b))
        q_b = np.eye(2 ** len(b)) / c
    rg = right + g
    sigma = gibbs_state(restrict(h, range(rg[0], rg[-1] + 1)), T)
    sw, sv = np.linalg.eigh(sigma)
    dl, dr, dg = 2 ** len(left), 2 ** len(right), 2 ** len(g)
    p_bg = np.kron(p_b, np.eye(dg))
    eye_l = np.eye(dl)
    ops = []
    for r in range(dr):
        bra = np.zeros((1, dr))
        bra[0, r] = 1.0
        for k in range(len(sw)):
            if sw[k] <= EIG_CLAMP:
                continue
            mid = np.kron(eye_l, sv[:, k:k + 1] @ bra)
            ops.append(np.sqrt(sw[k]) * p_bg @ mid @ q_b)
    raw = minimal_kraus(np.array(ops))
    s = np.einsum("koi,koj->ij", raw.conj(), raw)
    lam = float(np.linalg.eigvalsh(s).max())
    scale = max(lam, 1.0)
    kraus = raw / np.sqrt(scale)
    comp = np.eye(s.shape[0]) - s / scale
    comp = 0.5 * (comp + comp.conj().T)
    completion = float(max(np.linalg.eigvalsh(comp).max(), 0.0))
    effect = prepared = None
    if completion > 1e-12:
        if rho is None:
            rho = gibbs_state(h, T)
        effect, prepared = comp, partial_trace(rho, b + g, n)
    meta = {"raw_kraus": raw, "scale": scale, "completion_weight": completion,
            "window": bridge.window}
    return RecoveryChannel(kraus, tuple(b), tuple(b + g), "k-map-completed", split, T, meta,
                           effect, prepared)


def raw_k_map(channel: RecoveryChannel) -> RecoveryChannel:
    """The unscaled, uncompleted recovery map (trace non-increasing in general)."""
    return RecoveryChannel(channel.meta["raw_kraus"], channel.in_sites, channel.out_sites,
                           "k-map-raw", channel.split, channel.temperature, dict(channel.meta))


def recovery_error(rho: np.ndarray, channel: RecoveryChannel,
                   split: Optional[RegionSplit] = None) -> float:
    """``|| rho - (id_alpha (x) Lambda)(rho_{alpha beta}) ||_1``."""
    split = split or channel.split
    n = split.n
    if rho.shape != (2 ** n, 2 ** n):
        raise DimensionError("state does not match split")
    keep = list(split.alpha) + list(split.beta)
    marg = partial_trace(rho, keep, n)
    out, labels = channel.apply_labeled(marg, keep)
    if sorted(labels) != list(range(n)):
        raise DimensionError("channel output does not restore the full chain")
    return trace_distance(rho, reorder_sites(out, labels, list(range(n))))


@dataclass
class RecoveryProfile:
    buffer_sizes: np.ndarray
    petz_errors: np.ndarray
    kmap_errors: np.ndarray
    cmi: np.ndarray
    bridge_defects: np.ndarray
    monotone: bool
    fit_linear: dict
    fit_sqrt: dict

    def rows(self):
        for k in range(len(self.buffer_sizes)):
            yield {"buffer_width": int(self.buffer_sizes[k]),
                   "trace_error_petz": float(self.petz_errors[k]),
                   "trace_error_kmap": float(self.kmap_errors[k]),
                   "cmi": float(self.cmi[k]),
                   "bridge_defect": float(self.bridge_defects[k])}


def _decay_fit(x: np.ndarray, y: np.ndarray) -> dict:
    mask = y > 1e-300
    if mask.sum() < 2:
        return {"rate": float("nan"), "intercept": float("nan"), "r2": float("nan")}
    slope, intercept, r2 = _linear_fit(x[mask], np.log(y[mask]))
    return {"rate": -slope, "intercept": intercept, "r2": r2}


def recovery_profile(h: SpinChainHamiltonian, T: float, buffer_sizes: Sequence[int],
                     with_kmap: bool = True) -> RecoveryProfile:
    """Petz (and optionally bridge-based) recovery error versus buffer size.

    Each buffer is centred in the chain. Decay is fitted both as
    ``exp(-a |beta|)`` and ``exp(-a sqrt|beta|)``; neither form is assumed.
    """
    sizes = np.array(sorted(set(int(b) for b in buffer_sizes)))
    if len(sizes) < 3:
        raise ValueError("need at least three buffer sizes")
    if h.n > MAX_RECOVERY_SITES:
        raise DimensionError(f"recovery constructions limited to n <= {MAX_RECOVERY_SITES}")
    rho = gibbs_state(h, T)
    petz, kmap, cmi, defects = [], [], [], []
    for b in sizes:
        split = RegionSplit.centered(h.n, int(b))
        petz.append(recovery_error(rho, petz_channel(rho, split)))
        cmi.append(conditional_mutual_information(rho, split))
        if with_kmap:
            bridge = bridge_operator(h, split, T)
            trunc, defect = truncate_bridge(bridge, max_bridge_window(split))
            defects.append(defect)
            kmap.append(recovery_error(rho, k_map(trunc, h, T, rho)))
        else:
            defects.append(float("nan"))
            kmap.append(float("nan"))
    petz = np.array(petz)
    monotone = bool(np.all(np.diff(petz) <= 1e-12))
    x = sizes.astype(float)
    return RecoveryProfile(sizes, petz, np.array(kmap), np.array(cmi), np.array(defects),
                           monotone, _decay_fit(x, petz), _decay_fit(np.sqrt(x), petz))


@dataclass
class StinespringDilation:
    isometry: np.ndarray
    d_in: int
    d_out: int
    d_env: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        v = self.isometry
        full = (v @ x @ v.conj().T).reshape(self.d_out, self.d_env, self.d_out, self.d_env)
        return np.einsum("aebe->ab", full)


def stinespring(channel) -> StinespringDilation:
    """Minimal dilation: environment dimension equals the Kraus (Choi) rank."""
    kraus = channel.full_kraus() if isinstance(channel, RecoveryChannel) else as_kraus(channel)
    kraus = minimal_kraus(kraus)
    v = stinespring_isometry(kraus)
    return StinespringDilation(v, kraus.shape[2], kraus.shape[1], kraus.shape[0])
