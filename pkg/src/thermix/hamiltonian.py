"""Local spin-1/2 chain Hamiltonians built from one- and two-site terms."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PAULI_I", "PAULI_X", "PAULI_Y", "PAULI_Z",
    "HamiltonianError", "HamiltonianSpec", "LocalTerm", "SpinChainHamiltonian",
    "build_hamiltonian", "assemble_dense", "restrict", "bond_hamiltonians",
    "spec_from_json", "spec_to_json", "MAX_DENSE_SITES",
]

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)

MAX_DENSE_SITES = 12
_HERM_TOL = 1e-12


class HamiltonianError(ValueError):
    """Raised for invalid Hamiltonian specifications or unsupported terms."""


@dataclass(frozen=True)
class LocalTerm:
    """A term acting on ``width`` consecutive sites starting at ``first_site``."""
    first_site: int
    width: int
    matrix: np.ndarray

    def sites(self, n: int) -> tuple[int, ...]:
        return tuple((self.first_site + k) % n for k in range(self.width))


@dataclass(frozen=True)
class HamiltonianSpec:
    preset: str
    n: int
    J: float = 1.0
    g: float = 1.0
    boundary: str = "open"
    terms: tuple = ()
    normalize: bool = True

    def validate(self):
        if self.preset not in ("tfim", "heisenberg", "custom"):
            raise HamiltonianError(f"unknown preset {self.preset!r}")
        if int(self.n) != self.n or self.n < 2:
            raise HamiltonianError("n must be an integer >= 2")
        if self.boundary not in ("open", "periodic"):
            raise HamiltonianError(f"unknown boundary {self.boundary!r}")
        if not (np.isfinite(self.J) and np.isfinite(self.g)):
            raise HamiltonianError("couplings must be finite")


@dataclass(frozen=True)
class SpinChainHamiltonian:
    """Sum of local terms on an ``n``-site spin-1/2 chain.

    ``scale`` is the factor that was divided out of every term during
    normalization; physical energies are ``scale`` times the stored ones, and
    a physical temperature ``T_phys`` corresponds to ``T_phys / scale`` here.
    """
    n: int
    terms: tuple[LocalTerm, ...]
    boundary: str = "open"
    scale: float = 1.0
    label: Optional[str] = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def max_term_norm(self) -> float:
        if not self.terms:
            return 0.0
        return max(np.linalg.norm(t.matrix, 2) for t in self.terms)

    def is_nearest_neighbour(self) -> bool:
        return all(t.width <= 2 for t in self.terms)

    def wraps(self) -> bool:
        return any(t.first_site + t.width > self.n for t in self.terms)


def _pair(a, b):
    return np.kron(a, b)


def _preset_terms(spec: HamiltonianSpec) -> list[LocalTerm]:
    n = spec.n
    nbonds = n if spec.boundary == "periodic" else n - 1
    terms = []
    if spec.preset == "tfim":
        # H = -J sum Z Z - g sum X
        for i in range(nbonds):
            terms.append(LocalTerm(i, 2, -spec.J * _pair(PAULI_Z, PAULI_Z)))
        for i in range(n):
            terms.append(LocalTerm(i, 1, -spec.g * PAULI_X))
    elif spec.preset == "heisenberg":
        hb = _pair(PAULI_X, PAULI_X) + _pair(PAULI_Y, PAULI_Y) + _pair(PAULI_Z, PAULI_Z)
        for i in range(nbonds):
            terms.append(LocalTerm(i, 2, spec.J * hb))
    else:
        for t in spec.terms:
            if isinstance(t, LocalTerm):
                terms.append(t)
            else:
                first, width, mat = t
                terms.append(LocalTerm(int(first), int(width), np.asarray(mat, dtype=complex)))
    return terms


def _check_term(term: LocalTerm, n: int, boundary: str):
    if term.width not in (1, 2):
        raise HamiltonianError(f"unsupported interaction range: width {term.width} > 2")
    dim = 2 ** term.width
    if term.matrix.shape != (dim, dim):
        raise HamiltonianError(f"term matrix shape {term.matrix.shape} does not match width {term.width}")
    if not np.all(np.isfinite(term.matrix)):
        raise HamiltonianError("term has non-finite entries")
    if np.max(np.abs(term.matrix - term.matrix.conj().T), initial=0.0) > _HERM_TOL:
        raise HamiltonianError("term is not Hermitian")
    if not 0 <= term.first_site < n:
        raise HamiltonianError(f"term support starts outside the chain: {term.first_site}")
    if term.first_site + term.width > n and boundary != "periodic":
        raise HamiltonianError("term wraps around the chain but boundary is open")


def build_hamiltonian(spec: HamiltonianSpec) -> SpinChainHamiltonian:
    """Build the term list for ``spec`` and rescale so that every term has
    operator norm at most one.

    The rescale is a single global factor (relative couplings are kept). If
    the largest term already satisfies the bound the factor is 1.
    """
    spec.validate()
    terms = _preset_terms(spec)
    for t in terms:
        _check_term(t, spec.n, spec.boundary)
    norms = [np.linalg.norm(t.matrix, 2) for t in terms]
    max_norm = max(norms, default=0.0)
    scale = 1.0
    if max_norm > 1.0:
        if not spec.normalize:
            raise HamiltonianError(
                f"largest term norm {max_norm:.6g} exceeds 1 and normalization is disabled")
        scale = float(max_norm)
        terms = [LocalTerm(t.first_site, t.width, t.matrix / scale) for t in terms]
    label = spec.preset
    return SpinChainHamiltonian(spec.n, tuple(terms), spec.boundary, scale, label,
                                meta={"J": spec.J, "g": spec.g})


def _embed(n: int, sites: Sequence[int], op: np.ndarray) -> np.ndarray:
    """Embed ``op`` acting on ``sites`` (in the op's own index order) into the
    full 2**n space."""
    k = len(sites)
    full = np.kron(op, np.eye(2 ** (n - k), dtype=complex))
    order = list(sites) + [s for s in range(n) if s not in sites]
    # axes of `full` are (order..., order...); move them to (0..n-1, 0..n-1)
    full = full.reshape((2,) * (2 * n))
    inv = np.argsort(order)
    perm = list(inv) + [n + i for i in inv]
    return full.transpose(perm).reshape(2 ** n, 2 ** n)


def assemble_dense(h: SpinChainHamiltonian) -> np.ndarray:
    """Dense 2**n x 2**n matrix of ``h``."""
    if h.n > MAX_DENSE_SITES:
        raise HamiltonianError(f"dense assembly limited to n <= {MAX_DENSE_SITES}, got {h.n}")
    dim = 2 ** h.n
    out = np.zeros((dim, dim), dtype=complex)
    for t in h.terms:
        sites = t.sites(h.n)
        if sites == tuple(range(t.first_site, t.first_site + t.width)):
            left = np.eye(2 ** t.first_site)
            right = np.eye(2 ** (h.n - t.first_site - t.width))
            out += np.kron(np.kron(left, t.matrix), right)
        else:
            out += _embed(h.n, sites, t.matrix)
    return out


def restrict(h: SpinChainHamiltonian, window: Sequence[int]) -> SpinChainHamiltonian:
    """Keep only the terms fully supported inside the contiguous ``window``
    and re-index them to window-local sites."""
    window = list(window)
    if not window:
        return SpinChainHamiltonian(0, (), "open", h.scale, h.label)
    lo, hi = window[0], window[-1] + 1
    if window != list(range(lo, hi)):
        raise HamiltonianError("restriction window must be contiguous")
    kept = []
    for t in h.terms:
        sites = t.sites(h.n)
        if all(lo <= s < hi for s in sites) and list(sites) == sorted(sites):
            kept.append(LocalTerm(t.first_site - lo, t.width, t.matrix))
    return SpinChainHamiltonian(hi - lo, tuple(kept), "open", h.scale, h.label)


def bond_hamiltonians(h: SpinChainHamiltonian) -> list[np.ndarray]:
    """Split an open nearest-neighbour chain into ``n-1`` two-site bond
    operators. One-site terms are shared between the bonds touching the site
    (the end sites give their full weight to their only bond)."""
    if h.wraps():
        raise HamiltonianError("bond decomposition requires open boundary terms")
    if not h.is_nearest_neighbour():
        raise HamiltonianError("bond decomposition requires terms of width <= 2")
    n = h.n
    if n < 2:
        raise HamiltonianError("need at least two sites")
    bonds = [np.zeros((4, 4), dtype=complex) for _ in range(n - 1)]
    for t in h.terms:
        i = t.first_site
        if t.width == 2:
            bonds[i] += t.matrix
            continue
        if i == 0:
            shares = [(0, 1.0)]
        elif i == n - 1:
            shares = [(n - 2, 1.0)]
        else:
            shares = [(i - 1, 0.5), (i, 0.5)]
        for b, w in shares:
            if b == i:
                bonds[b] += w * np.kron(t.matrix, PAULI_I)
            else:
                bonds[b] += w * np.kron(PAULI_I, t.matrix)
    return bonds


def _decode_matrix(entries, width: int) -> np.ndarray:
    arr = np.asarray(entries, dtype=float)
    dim = 2 ** width
    if arr.shape != (dim * dim, 2):
        raise HamiltonianError(f"custom term needs {dim * dim} [re, im] pairs")
    return (arr[:, 0] + 1j * arr[:, 1]).reshape(dim, dim)


def spec_from_json(data) -> HamiltonianSpec:
    """Parse a spec from a JSON string or an already decoded dict."""
    if isinstance(data, str):
        data = json.loads(data)
    try:
        preset = str(data["preset"]).lower()
        n = data["n"]
    except KeyError as exc:
        raise HamiltonianError(f"missing field {exc.args[0]!r}") from None
    terms = ()
    if preset == "custom":
        terms = tuple(
            LocalTerm(int(t["first_site"]), int(t["width"]),
                      _decode_matrix(t["matrix"], int(t["width"])))
            for t in data.get("terms", [])
        )
    spec = HamiltonianSpec(
        preset=preset, n=n, J=float(data.get("J", 1.0)), g=float(data.get("g", 1.0)),
        boundary=data.get("boundary", "open"), terms=terms,
        normalize=bool(data.get("normalize", True)),
    )
    spec.validate()
    return spec


def spec_to_json(spec: HamiltonianSpec) -> dict:
    out = {"preset": spec.preset, "n": spec.n, "boundary": spec.boundary,
           "normalize": spec.normalize}
    if spec.preset == "custom":
        out["terms"] = [
            {"first_site": t.first_site, "width": t.width,
             "matrix": [[float(z.real), float(z.imag)] for z in np.asarray(t.matrix).ravel()]}
            for t in spec.terms
        ]
    else:
        out["J"] = spec.J
        if spec.preset == "tfim":
            out["g"] = spec.g
    return out


def tfim(n: int, J: float = 1.0, g: float = 1.0, boundary: str = "open") -> SpinChainHamiltonian:
    return build_hamiltonian(HamiltonianSpec("tfim", n, J=J, g=g, boundary=boundary))


def heisenberg(n: int, J: float = 1.0, boundary: str = "open") -> SpinChainHamiltonian:
    return build_hamiltonian(HamiltonianSpec("heisenberg", n, J=J, boundary=boundary))


def custom(n: int, terms, boundary: str = "open") -> SpinChainHamiltonian:
    return build_hamiltonian(HamiltonianSpec("custom", n, boundary=boundary, terms=tuple(terms)))
