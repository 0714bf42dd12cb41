import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from conftest import random_density, random_state
from oracle import entropy, gibbs, ptrace, tfim_matrix
from thermix.dense import (DimensionError, RegionSplit, conditional_mutual_information,
                           correlation_decay_profile, embed_operator, gibbs_state,
                           is_density_matrix, log_partition_function, matrix_inv_sqrt,
                           matrix_sqrt, mutual_information, partial_trace, purify,
                           reorder_sites, thermal_energy, trace_distance,
                           von_neumann_entropy)
from thermix.hamiltonian import LocalTerm, PAULI_X, PAULI_Z, custom, tfim

# frozen from the scipy oracle in tests/oracle.py
TFIM6_ENERGY_T1 = -6.302594477953509
TFIM9_CMI = {1: 0.0070977458722119025, 3: 1.172433423768382e-05, 5: 2.8692670461794023e-08}

BELL = np.array([1, 0, 0, 1]) / np.sqrt(2)
GHZ = np.zeros(8)
GHZ[0] = GHZ[7] = 1 / np.sqrt(2)


def proj(v):
    return np.outer(v, v.conj())


class TestGibbs:
    def test_zero_hamiltonian_is_maximally_mixed(self):
        h = custom(3, [])
        for T in (0.1, 1.0, 7.0):
            assert_allclose(gibbs_state(h, T), np.eye(8) / 8, atol=1e-14)

    @pytest.mark.parametrize("T", [0.3, 1.0, 4.0])
    def test_zz_closed_form(self, T):
        h = custom(2, [LocalTerm(0, 2, -np.kron(PAULI_Z, PAULI_Z))])
        z = 2 * np.exp(1 / T) + 2 * np.exp(-1 / T)
        diag = np.array([np.exp(1 / T), np.exp(-1 / T), np.exp(-1 / T), np.exp(1 / T)]) / z
        assert_allclose(gibbs_state(h, T), np.diag(diag), atol=1e-14)

    def test_tfim_energy_oracle(self):
        assert_allclose(thermal_energy(tfim(6), 1.0), TFIM6_ENERGY_T1, rtol=1e-12)
        assert_allclose(gibbs_state(tfim(6), 1.0), gibbs(tfim_matrix(6), 1.0), atol=1e-13)

    def test_log_partition(self):
        w = np.linalg.eigvalsh(tfim_matrix(5))
        assert_allclose(log_partition_function(tfim(5), 0.7), np.log(np.sum(np.exp(-0.7 * w))),
                        rtol=1e-12)

    @pytest.mark.parametrize("T", [0.0, -1.0])
    def test_bad_temperature(self, T):
        with pytest.raises(ValueError):
            gibbs_state(tfim(3), T)

    def test_energy_and_entropy_monotone_in_T(self):
        h = tfim(5, 1.0, 0.8)
        grid = np.linspace(0.2, 5.0, 15)
        energies = [thermal_energy(h, T) for T in grid]
        entropies = [von_neumann_entropy(gibbs_state(h, T)) for T in grid]
        assert np.all(np.diff(energies) > 0)
        assert np.all(np.diff(entropies) > 0)


class TestTraceDistance:
    def test_identical(self, rng):
        r = random_density(8, rng)
        assert trace_distance(r, r) == pytest.approx(0, abs=1e-14)

    def test_orthogonal_pure(self):
        assert trace_distance(proj(np.array([1, 0])), proj(np.array([0, 1]))) == pytest.approx(2)

    def test_pure_vs_mixed_qubit(self):
        assert trace_distance(proj(np.array([1, 0])), np.eye(2) / 2) == pytest.approx(1)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            trace_distance(np.eye(2), np.eye(4))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_metric_axioms(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_density(4, rng, rank=int(rng.integers(1, 5))) for _ in range(3))
        assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-9
        assert 0 <= trace_distance(a, b) <= 2 + 1e-12


class TestPartialTrace:
    def test_trace_nothing(self, rng):
        r = random_density(8, rng)
        assert_allclose(partial_trace(r, [0, 1, 2]), r)

    def test_product_factor(self, rng):
        a, b = random_density(2, rng), random_density(4, rng)
        assert_allclose(partial_trace(np.kron(a, b), [1, 2], 3), b, atol=1e-14)
        assert_allclose(partial_trace(np.kron(a, b), [0], 3), a, atol=1e-14)

    def test_bell(self):
        assert_allclose(partial_trace(proj(BELL), [1]), np.eye(2) / 2)

    @pytest.mark.parametrize("keep", [[0], [2], [0, 2], [1, 3], [3, 0]])
    def test_against_index_oracle(self, rng, keep):
        r = random_density(16, rng)
        ref = ptrace(r, keep, 4)
        got = partial_trace(r, sorted(keep), 4)
        assert_allclose(got, ref, atol=1e-14)
        # output order follows the keep list
        assert_allclose(partial_trace(r, keep, 4), reorder_sites(got, sorted(keep), keep))

    def test_invalid_sites(self):
        with pytest.raises(DimensionError):
            partial_trace(np.eye(4) / 4, [2])

    def test_embed_and_reorder(self, rng):
        op = rng.normal(size=(4, 4))
        full = embed_operator(op, [2, 0], 3)
        # op's first factor sits on site 2, its second on site 0
        ref = reorder_sites(np.kron(op, np.eye(2)), [2, 0, 1], [0, 1, 2])
        assert_allclose(full, ref)


class TestEntropies:
    def test_product_mutual_information(self, rng):
        r = np.kron(random_density(2, rng), random_density(4, rng))
        assert mutual_information(r, [0]) == pytest.approx(0, abs=1e-12)

    def test_bell_mutual_information(self):
        assert mutual_information(proj(BELL), [0], [1]) == pytest.approx(2 * np.log(2), abs=1e-12)

    def test_infinite_temperature(self):
        rho = gibbs_state(tfim(4), 1e9)
        assert abs(mutual_information(rho, [0, 1])) <= 1e-8

    def test_ghz_cmi(self):
        split = RegionSplit((0,), (1,), (2,), 3)
        assert conditional_mutual_information(proj(GHZ), split) == pytest.approx(np.log(2), abs=1e-12)

    def test_product_cmi(self, rng):
        r = np.kron(np.kron(random_density(2, rng), random_density(2, rng)), random_density(2, rng))
        assert abs(conditional_mutual_information(r, RegionSplit((0,), (1,), (2,), 3))) < 1e-12

    def test_tfim_cmi_oracle(self):
        rho = gibbs_state(tfim(9), 1.0)
        values = [conditional_mutual_information(rho, RegionSplit.centered(9, b)) for b in (1, 3, 5)]
        assert_allclose(values, [TFIM9_CMI[b] for b in (1, 3, 5)], rtol=1e-6, atol=1e-12)
        assert values[0] > values[1] > values[2]

    def test_entropy_matches_oracle(self, rng):
        r = random_density(8, rng, rank=3)
        assert von_neumann_entropy(r) == pytest.approx(entropy(r), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.integers(3, 5))
    def test_strong_subadditivity(self, seed, n):
        rng = np.random.default_rng(seed)
        r = random_density(2 ** n, rng, rank=int(rng.integers(1, 2 ** n + 1)))
        labels = rng.permutation(n)
        a = int(rng.integers(1, n - 1))
        b = int(rng.integers(1, n - a))
        split = RegionSplit(tuple(labels[:a]), tuple(labels[a:a + b]), tuple(labels[a + b:]), n)
        assert conditional_mutual_information(r, split) >= -1e-9


class TestRegionSplit:
    def test_centered(self):
        s = RegionSplit.centered(9, 3)
        assert (s.alpha, s.beta, s.gamma) == ((0, 1, 2), (3, 4, 5), (6, 7, 8))
        assert s.contiguous

    def test_non_contiguous(self):
        s = RegionSplit((0, 2), (1, 4), (3,), 5)
        assert not s.contiguous

    @pytest.mark.parametrize("args", [((0,), (0,), (1,), 2), ((0,), (1,), (), 3)])
    def test_invalid(self, args):
        with pytest.raises(DimensionError):
            RegionSplit(*args)


class TestCorrelations:
    def test_field_only_is_uncorrelated(self):
        h = custom(5, [LocalTerm(k, 1, -0.7 * PAULI_X) for k in range(5)])
        prof = correlation_decay_profile(gibbs_state(h, 1.0))
        assert np.all(prof.correlations <= 1e-12)

    def test_infinite_temperature(self):
        prof = correlation_decay_profile(np.eye(32) / 32)
        assert np.all(prof.correlations <= 1e-12)

    def test_tfim_decay(self):
        prof = correlation_decay_profile(gibbs_state(tfim(10), 1.0))
        assert len(prof.distances) == 9
        assert prof.correlation_length > 0
        assert np.all(np.diff(prof.correlations[:6]) < 0)

    def test_too_short(self):
        with pytest.raises(DimensionError):
            correlation_decay_profile(np.eye(8) / 8)


class TestPurify:
    def test_pure_input(self, rng):
        v = random_state(4, rng)
        psi = purify(proj(v))
        assert psi.shape == (4, 1)
        assert_allclose(psi @ psi.conj().T, proj(v), atol=1e-12)

    def test_maximally_mixed_gives_bell(self):
        psi = purify(np.eye(2) / 2)
        vec = psi.reshape(-1)
        # (2,2) matrix of a maximally entangled state has singular values 1/sqrt(2)
        assert_allclose(np.linalg.svd(psi, compute_uv=False), [1 / np.sqrt(2)] * 2)
        assert np.linalg.norm(vec) == pytest.approx(1)

    def test_gibbs_round_trip(self):
        rho = gibbs_state(tfim(4), 0.8)
        psi = purify(rho)
        assert np.max(np.abs(psi @ psi.conj().T - rho)) <= 1e-10
        assert is_density_matrix(rho)


def test_matrix_functions(rng):
    r = random_density(6, rng)
    s = matrix_sqrt(r)
    assert_allclose(s @ s, r, atol=1e-12)
    assert_allclose(matrix_inv_sqrt(r) @ r @ matrix_inv_sqrt(r), np.eye(6), atol=1e-9)
