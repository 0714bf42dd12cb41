import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy.stats import unitary_group

from conftest import random_state
from oracle import X, Z, site_op
from thermix.dense import DimensionError
from thermix.mps import (MatrixProductState, MPSEnsemble, MPSError, amplitude, apply_local_operator,
                         apply_local_unitary, canonicalize, energy, expectation,
                         is_left_isometry, is_right_isometry, load_mps, mps_from_dense, norm,
                         overlap, product_state, random_mps, save_mps, schmidt_spectrum,
                         svd_truncate, to_dense, truncate)
from thermix.hamiltonian import assemble_dense, tfim

BELL = np.array([1, 0, 0, 1]) / np.sqrt(2)


def ghz(n):
    v = np.zeros(2 ** n)
    v[0] = v[-1] = 1 / np.sqrt(2)
    return v


def w_state(n):
    v = np.zeros(2 ** n)
    for k in range(n):
        v[1 << k] = 1 / np.sqrt(n)
    return v


class TestConstruction:
    def test_product_amplitudes(self):
        psi = product_state([0, 1])
        assert amplitude(psi, "01") == 1
        assert amplitude(psi, "00") == 0

    def test_bell_amplitudes(self):
        psi = mps_from_dense(BELL)
        for bits, val in [("00", 1), ("01", 0), ("10", 0), ("11", 1)]:
            assert_allclose(amplitude(psi, bits), val / np.sqrt(2), atol=1e-15)

    @pytest.mark.parametrize("n", [3, 5, 8])
    def test_ghz_and_w_bonds(self, n):
        assert mps_from_dense(ghz(n)).max_bond == 2
        assert mps_from_dense(w_state(n)).max_bond == 2

    @pytest.mark.parametrize("n", [1, 2, 5, 9])
    def test_dense_round_trip(self, n, rng):
        v = random_state(2 ** n, rng)
        assert_allclose(to_dense(mps_from_dense(v)), v, atol=1e-12)

    def test_bad_length(self):
        with pytest.raises(DimensionError):
            mps_from_dense(np.ones(6))

    def test_bond_mismatch(self):
        with pytest.raises(MPSError):
            MatrixProductState((np.ones((1, 2, 2)), np.ones((3, 2, 1))))

    def test_open_boundary_requires_unit_ends(self):
        with pytest.raises(MPSError):
            MatrixProductState((np.ones((2, 2, 1)),))

    def test_periodic_amplitude_is_trace(self, rng):
        a = rng.normal(size=(3, 2, 3))
        b = rng.normal(size=(3, 2, 3))
        psi = MatrixProductState((a, b), "periodic")
        assert_allclose(amplitude(psi, "10"), np.trace(a[:, 1] @ b[:, 0]), rtol=1e-14)
        with pytest.raises(MPSError):
            norm(psi)

    def test_random_mps_bonds(self, rng):
        psi = random_mps(8, 16, rng)
        assert psi.bonds == [1, 2, 4, 8, 16, 8, 4, 2, 1]
        assert_allclose(norm(psi), 1.0, rtol=1e-12)


class TestTruncation:
    def test_bell_to_bond_one(self):
        psi, err = mps_from_dense(BELL, dmax=1, return_error=True)
        assert psi.max_bond == 1
        assert_allclose(err ** 2, 0.5, rtol=1e-12)
        assert_allclose(norm(psi), 1.0, rtol=1e-12)

    def test_error_monotone_in_dmax(self, rng):
        v = random_state(2 ** 8, rng)
        errs = [mps_from_dense(v, dmax=d, return_error=True)[1] for d in (1, 2, 4, 8, 16)]
        assert all(a >= b - 1e-14 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-12

    def test_truncate_single_cut_error_exact(self, rng):
        # only the central bond exceeds 2 for n=4, so one cut is truncated
        psi = random_mps(4, 4, rng)
        v = to_dense(psi)
        out, err = truncate(psi, dmax=2)
        m = v.reshape(4, 4)
        s = np.linalg.svd(m, compute_uv=False)
        assert_allclose(err, np.sqrt(np.sum(s[2:] ** 2)), rtol=1e-10)
        assert out.max_bond <= 2
        assert_allclose(np.abs(np.vdot(to_dense(out), v)) ** 2, np.sum(s[:2] ** 2), rtol=1e-10)

    def test_truncate_random_vs_dense(self, rng):
        psi = random_mps(8, 16, rng)
        out, err = truncate(psi, dmax=16)
        assert err < 1e-12
        assert_allclose(abs(overlap(out, psi)), 1.0, atol=1e-12)

    def test_svd_truncate_tolerance(self):
        m = np.diag([1.0, 1e-3, 1e-9])
        _, s, _, dw = svd_truncate(m, tol=1e-6)
        assert len(s) == 2
        assert_allclose(dw, 1e-18, rtol=1e-6)

    def test_invalid_dmax(self):
        with pytest.raises(MPSError):
            svd_truncate(np.eye(2), dmax=0)


class TestCanonical:
    @pytest.mark.parametrize("form", ["left", "right", 3])
    def test_preserves_vector(self, form, rng):
        psi = random_mps(6, 4, rng)
        out = canonicalize(psi, form)
        assert_allclose(to_dense(out), to_dense(psi), atol=1e-12)

    def test_isometries(self, rng):
        psi = canonicalize(random_mps(6, 4, rng), 2)
        assert all(is_left_isometry(t) for t in psi.tensors[:2])
        assert all(is_right_isometry(t) for t in psi.tensors[3:])

    def test_schmidt_spectrum_matches_svd(self, rng):
        v = random_state(2 ** 6, rng)
        psi = mps_from_dense(v)
        for cut in range(1, 6):
            s = np.linalg.svd(v.reshape(2 ** cut, -1), compute_uv=False)
            data = schmidt_spectrum(psi, cut)
            assert_allclose(data.values, s, atol=1e-12)

    def test_schmidt_bell_and_product(self):
        assert schmidt_spectrum(mps_from_dense(BELL), 1).rank == 2
        assert schmidt_spectrum(product_state([0, 1, 0]), 2).rank == 1


class TestExpectation:
    def test_z_on_zero(self):
        assert_allclose(expectation(product_state([0]), Z, [0]), 1.0)

    def test_zz_on_bell(self):
        assert_allclose(expectation(mps_from_dense(BELL), np.kron(Z, Z), [0, 1]), 1.0, atol=1e-14)

    def test_energy_matches_dense(self, rng):
        h = tfim(6, 1.0, 0.7)
        psi = random_mps(6, 4, rng)
        v = to_dense(psi)
        assert_allclose(energy(psi, h), np.vdot(v, assemble_dense(h) @ v).real, rtol=1e-12)

    def test_unnormalized_state(self, rng):
        psi = random_mps(4, 2, rng, normalized=False)
        v = to_dense(psi)
        op = site_op(X, 2, 4)
        assert_allclose(expectation(psi, X, [2]), np.vdot(v, op @ v) / np.vdot(v, v), rtol=1e-12)


class TestLocalUpdates:
    def test_identity_gate(self, rng):
        psi = random_mps(5, 4, rng)
        out = apply_local_unitary(psi, np.eye(4), [1, 2])
        assert_allclose(to_dense(out), to_dense(psi), atol=1e-12)

    def test_x_flip(self):
        out = apply_local_unitary(product_state([0, 0, 0]), X, [1])
        assert_allclose(amplitude(out, "010"), 1.0)

    @pytest.mark.parametrize("sites", [[0, 1], [3, 4], [2]])
    def test_random_unitary_vs_dense(self, sites, rng):
        n = 5
        psi = random_mps(n, 4, rng)
        u = unitary_group.rvs(2 ** len(sites), random_state=1)
        out = apply_local_unitary(psi, u, sites)
        full = np.kron(np.kron(np.eye(2 ** sites[0]), u), np.eye(2 ** (n - sites[-1] - 1)))
        assert_allclose(to_dense(out), full @ to_dense(psi), atol=1e-12)

    def test_rejects_non_unitary(self, rng):
        with pytest.raises(MPSError):
            apply_local_unitary(random_mps(3, 2, rng), np.diag([1, 2]), [0])

    def test_non_adjacent(self, rng):
        with pytest.raises(MPSError):
            apply_local_operator(random_mps(4, 2, rng), np.eye(4), [0, 2])


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        psi = random_mps(6, 4, rng)
        save_mps(psi, tmp_path / "s.mps")
        back = load_mps(tmp_path / "s.mps")
        assert back.bonds == psi.bonds
        # complex64 payload
        assert_allclose(to_dense(back), to_dense(psi), atol=1e-6)

    def test_corrupt_payload(self, tmp_path, rng):
        save_mps(random_mps(3, 2, rng), tmp_path / "s.mps")
        with open(tmp_path / "s.mps", "ab") as fh:
            fh.write(b"\x00" * 8)
        with pytest.raises(MPSError):
            load_mps(tmp_path / "s.mps")


class TestEnsemble:
    def test_density_matrix(self):
        ens = MPSEnsemble([0.5, 0.5], [product_state([0]), product_state([1])])
        ens.validate()
        assert_allclose(ens.to_density_matrix(), np.eye(2) / 2)

    def test_validate_rejects(self):
        with pytest.raises(MPSError):
            MPSEnsemble([0.7, 0.7], [product_state([0]), product_state([1])]).validate()
        with pytest.raises(MPSError):
            MPSEnsemble([1.0], [])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_overlap_matches_dense(n, d, seed):
    r = np.random.default_rng(seed)
    a, b = random_mps(n, d, r), random_mps(n, d, r)
    assert_allclose(overlap(a, b), np.vdot(to_dense(a), to_dense(b)), atol=1e-12)
